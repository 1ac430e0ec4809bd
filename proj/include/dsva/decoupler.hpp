#pragma once

#include <cstdint>
#include <vector>

#include "dsva/tensor.hpp"

namespace dsva {

// Three affine heads over the fused hidden state: two decoupling heads and
// one for real text. All share the output dimension H.
struct DecouplerParams {
  Tensor w_text, b_text;            // {D_in, H}, {H}
  Tensor w_vision, b_vision;
  Tensor w_real_text, b_real_text;
  static DecouplerParams init(std::size_t d_in, std::size_t h,
                              std::uint64_t seed);
  std::vector<Tensor> all();
  std::size_t input_dim() const { return w_text.dim(0); }
  std::size_t output_dim() const { return w_text.dim(1); }
};

struct DecoupledState {
  Tensor h_text;    // {B, H}
  Tensor h_vision;  // {B, H}
};

// x_fused rows through the text and vision heads.
DecoupledState decouple(Tape& tape, const Tensor& x_fused,
                        const DecouplerParams& params);

// Real-text branch; drives the text decoder in phase 1 and the
// orthogonality reference in phase 2.
Tensor encode_real_text(Tape& tape, const Tensor& label_embedding,
                        const DecouplerParams& params);

// Squared Frobenius norm of H_label^T * H_gt over batch-stacked rows.
Tensor ortho_loss(Tape& tape, const Tensor& h_label_mask,
                  const Tensor& h_gt_mask);

}  // namespace dsva
