#include "dsva/decoupler.hpp"

#include "dsva/errors.hpp"
#include "dsva/init.hpp"

namespace dsva {

DecouplerParams DecouplerParams::init(std::size_t d_in, std::size_t h,
                                      std::uint64_t seed) {
  DecouplerParams p;
  p.w_text = xavier_uniform({d_in, h}, param_seed(seed, "decoupler.w_text"));
  p.b_text = zeros_param({h});
  p.w_vision =
      xavier_uniform({d_in, h}, param_seed(seed, "decoupler.w_vision"));
  p.b_vision = zeros_param({h});
  p.w_real_text =
      xavier_uniform({d_in, h}, param_seed(seed, "decoupler.w_real_text"));
  p.b_real_text = zeros_param({h});
  return p;
}

std::vector<Tensor> DecouplerParams::all() {
  return {w_text, b_text, w_vision, b_vision, w_real_text, b_real_text};
}

namespace {
void check_input(const Tensor& x, const DecouplerParams& p, const char* who) {
  if (x.rank() != 2 || x.dim(1) != p.w_text.dim(0))
    throw ShapeError(std::string(who) + ": input " + shape_str(x.shape()) +
                     " does not match head input dim " +
                     std::to_string(p.w_text.dim(0)));
}
}  // namespace

DecoupledState decouple(Tape& tape, const Tensor& x_fused,
                        const DecouplerParams& params) {
  check_input(x_fused, params, "decouple");
  DecoupledState s;
  s.h_text = tape.affine(x_fused, params.w_text, params.b_text);
  s.h_vision = tape.affine(x_fused, params.w_vision, params.b_vision);
  return s;
}

Tensor encode_real_text(Tape& tape, const Tensor& label_embedding,
                        const DecouplerParams& params) {
  check_input(label_embedding, params, "encode_real_text");
  return tape.affine(label_embedding, params.w_real_text, params.b_real_text);
}

Tensor ortho_loss(Tape& tape, const Tensor& h_label_mask,
                  const Tensor& h_gt_mask) {
  if (h_label_mask.rank() != 2 || h_gt_mask.rank() != 2 ||
      h_label_mask.shape() != h_gt_mask.shape())
    throw ShapeError("ortho_loss: expected equal B x H matrices, got " +
                     shape_str(h_label_mask.shape()) + " and " +
                     shape_str(h_gt_mask.shape()));
  if (h_label_mask.dim(0) < 1)
    throw ShapeError("ortho_loss: empty batch");
  Tensor cross = tape.matmul(tape.transpose(h_label_mask), h_gt_mask);
  return tape.sum(tape.square(cross));
}

}  // namespace dsva
