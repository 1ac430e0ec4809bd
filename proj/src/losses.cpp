#include "dsva/losses.hpp"

#include <cmath>

#include "dsva/errors.hpp"
#include "dsva/init.hpp"

namespace dsva {

CeVariant ce_variant_from_string(const std::string& s) {
  if (s == "bce") return CeVariant::bce;
  if (s == "paper_squared_error") return CeVariant::paper_squared_error;
  throw ContractError("unknown ce variant '" + s + "'");
}

std::string to_string(CeVariant v) {
  return v == CeVariant::bce ? "bce" : "paper_squared_error";
}

void LossWeights::validate() const {
  if (lambda_adv < 0 || lambda_club < 0 || lambda_ortho < 0)
    throw ContractError("loss weights must be >= 0");
  if (epsilon_dice <= 0) throw ContractError("epsilon_dice must be > 0");
}

Tensor ce_loss(Tape& tape, const Tensor& pred, const Tensor& target,
               CeVariant variant) {
  if (pred.shape() != target.shape())
    throw ShapeError("ce_loss: pred " + shape_str(pred.shape()) +
                     " vs target " + shape_str(target.shape()));
  if (variant == CeVariant::paper_squared_error)
    return tape.mean(tape.square(tape.subtract(pred, target)));
  Tensor p = tape.clamp(pred, 1e-7, 1.0 - 1e-7);
  Tensor one = Tensor::scalar(1.0);
  Tensor pos = tape.multiply(target, tape.log(p));
  Tensor neg = tape.multiply(tape.subtract(one, target),
                             tape.log(tape.subtract(one, p)));
  return tape.negate(tape.mean(tape.add(pos, neg)));
}

Tensor dice_loss(Tape& tape, const Tensor& pred, const Tensor& target,
                 double epsilon) {
  if (pred.shape() != target.shape())
    throw ShapeError("dice_loss: pred " + shape_str(pred.shape()) +
                     " vs target " + shape_str(target.shape()));
  Tensor eps = Tensor::scalar(epsilon);
  Tensor num = tape.add(
      tape.scalar_mul(tape.sum(tape.multiply(pred, target)), 2.0), eps);
  Tensor den = tape.add(tape.add(tape.sum(target), tape.sum(pred)), eps);
  return tape.subtract(Tensor::scalar(1.0), tape.divide(num, den));
}

Tensor mask_loss(Tape& tape, const Tensor& logits, const Tensor& target,
                 const LossWeights& w) {
  Tensor p = tape.sigmoid(logits);
  return tape.add(ce_loss(tape, p, target, w.ce_variant),
                  dice_loss(tape, p, target, w.epsilon_dice));
}

FusionGate FusionGate::init(std::uint64_t seed) {
  FusionGate g;
  g.w = xavier_uniform({2}, param_seed(seed, "gate.w"));
  g.b = zeros_param({1});
  return g;
}

std::vector<Tensor> FusionGate::params() { return {w, b}; }

Tensor fuse_masks(Tape& tape, const Tensor& text_logits,
                  const Tensor& visual_logits, const FusionGate& gate) {
  if (text_logits.shape() != visual_logits.shape())
    throw ShapeError("fuse_masks: " + shape_str(text_logits.shape()) +
                     " vs " + shape_str(visual_logits.shape()));
  Tensor g;
  if (gate.learned) {
    Tensor w0 = tape.broadcast(tape.slice(gate.w, 0, 0, 1),
                               text_logits.shape());
    Tensor w1 = tape.broadcast(tape.slice(gate.w, 0, 1, 2),
                               text_logits.shape());
    Tensor lin = tape.add(tape.add(tape.multiply(w0, text_logits),
                                   tape.multiply(w1, visual_logits)),
                          tape.broadcast(gate.b, text_logits.shape()));
    g = tape.sigmoid(lin);
  } else {
    if (gate.fixed_g < 0.0 || gate.fixed_g > 1.0)
      throw ContractError("fuse_masks: fixed gate must lie in [0,1]");
    g = Tensor::full(text_logits.shape(), gate.fixed_g);
  }
  Tensor one = Tensor::scalar(1.0);
  return tape.add(tape.multiply(g, text_logits),
                  tape.multiply(tape.subtract(one, g), visual_logits));
}

TripleResult triple_supervision(Tape& tape, const Tensor& text_logits,
                                const Tensor& visual_logits,
                                const Tensor& fused_logits,
                                const Tensor& label_mask,
                                const Tensor& gt_mask, const Tensor& adv,
                                const Tensor& club, const Tensor& ortho,
                                const LossWeights& w,
                                double external_text_loss) {
  w.validate();
  TripleResult r;
  Tensor visual_term = mask_loss(tape, visual_logits, gt_mask, w);
  Tensor text_term = mask_loss(tape, text_logits, label_mask, w);
  Tensor fused_term = mask_loss(tape, fused_logits, gt_mask, w);
  Tensor total = tape.add(tape.add(visual_term, text_term), fused_term);

  auto take = [&](const char* name, const Tensor& t) {
    const double v = t.value();
    if (!std::isfinite(v))
      throw NumericError(std::string("triple_supervision: term '") + name +
                         "' is not finite");
    return v;
  };
  r.breakdown.visual_masks = take("visual_masks", visual_term);
  r.breakdown.text_masks = take("text_masks", text_term);
  r.breakdown.fused_masks = take("fused_masks", fused_term);

  if (adv.defined() && w.lambda_adv > 0.0) {
    Tensor t = tape.scalar_mul(adv, w.lambda_adv);
    r.breakdown.adv = take("adv", adv);
    r.breakdown.weighted_adv = take("weighted_adv", t);
    total = tape.add(total, t);
  } else if (adv.defined()) {
    r.breakdown.adv = take("adv", adv);
  }
  if (club.defined() && w.lambda_club > 0.0) {
    Tensor t = tape.scalar_mul(club, w.lambda_club);
    r.breakdown.club = take("club", club);
    r.breakdown.weighted_club = take("weighted_club", t);
    total = tape.add(total, t);
  } else if (club.defined()) {
    r.breakdown.club = take("club", club);
  }
  if (ortho.defined() && w.lambda_ortho > 0.0) {
    Tensor t = tape.scalar_mul(ortho, w.lambda_ortho);
    r.breakdown.ortho = take("ortho", ortho);
    r.breakdown.weighted_ortho = take("weighted_ortho", t);
    total = tape.add(total, t);
  } else if (ortho.defined()) {
    r.breakdown.ortho = take("ortho", ortho);
  }
  if (external_text_loss != 0.0) {
    total = tape.add(total, Tensor::scalar(external_text_loss));
  }
  r.breakdown.text_external = external_text_loss;
  r.total = total;
  r.breakdown.total = take("total", total);
  return r;
}

}  // namespace dsva
