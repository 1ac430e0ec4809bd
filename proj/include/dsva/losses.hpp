#pragma once

#include <string>

#include "dsva/tensor.hpp"

namespace dsva {

enum class CeVariant { bce, paper_squared_error };

CeVariant ce_variant_from_string(const std::string& s);
std::string to_string(CeVariant v);

struct LossWeights {
  double lambda_adv = 0.1;
  double lambda_club = 0.1;
  double lambda_ortho = 0.01;
  CeVariant ce_variant = CeVariant::bce;
  double epsilon_dice = 1e-6;
  void validate() const;
};

// `pred` holds probabilities. bce clamps them to [1e-7, 1-1e-7];
// paper_squared_error is the mean squared difference.
Tensor ce_loss(Tape& tape, const Tensor& pred, const Tensor& target,
               CeVariant variant);

// 1 - (2*sum(y*p) + eps) / (sum(y) + sum(p) + eps)
Tensor dice_loss(Tape& tape, const Tensor& pred, const Tensor& target,
                 double epsilon);

// ce + dice on sigmoid(logits); the per-mask supervision unit.
Tensor mask_loss(Tape& tape, const Tensor& logits, const Tensor& target,
                 const LossWeights& w);

// Per-pixel gate over the two logit maps: sigmoid(w0*text + w1*visual + b).
struct FusionGate {
  Tensor w;  // {2}
  Tensor b;  // {1}
  bool learned = true;
  double fixed_g = 0.5;
  static FusionGate init(std::uint64_t seed);
  std::vector<Tensor> params();
};

Tensor fuse_masks(Tape& tape, const Tensor& text_logits,
                  const Tensor& visual_logits, const FusionGate& gate);

struct TripleBreakdown {
  double visual_masks = 0, text_masks = 0, fused_masks = 0;
  double adv = 0, club = 0, ortho = 0;  // raw aux values
  double weighted_adv = 0, weighted_club = 0, weighted_ortho = 0;
  double text_external = 0;  // stand-in for an external language-model loss
  double total = 0;
};

struct TripleResult {
  Tensor total;
  TripleBreakdown breakdown;
};

// Triple supervision: visual vs gt_mask, text vs label_mask, fused vs
// gt_mask, plus the weighted auxiliary scalars. Aux tensors may be
// undefined, in which case they contribute nothing.
TripleResult triple_supervision(Tape& tape, const Tensor& text_logits,
                                const Tensor& visual_logits,
                                const Tensor& fused_logits,
                                const Tensor& label_mask,
                                const Tensor& gt_mask, const Tensor& adv,
                                const Tensor& club, const Tensor& ortho,
                                const LossWeights& w,
                                double external_text_loss = 0.0);

}  // namespace dsva
