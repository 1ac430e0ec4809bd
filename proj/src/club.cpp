#include "dsva/club.hpp"

#include <cmath>

#include "dsva/errors.hpp"
#include "dsva/init.hpp"

namespace dsva {

VariationalQ VariationalQ::init(std::size_t h, std::size_t hidden,
                                std::size_t mixture, std::uint64_t seed) {
  if (mixture < 1) throw ContractError("VariationalQ: mixture must be >= 1");
  VariationalQ q;
  q.mixture = mixture;
  q.h_dim = h;
  q.w_h = xavier_uniform({h, hidden}, param_seed(seed, "q.w_h"));
  q.b_h = zeros_param({hidden});
  q.w_mu = xavier_uniform({hidden, mixture * h}, param_seed(seed, "q.w_mu"));
  q.b_mu = zeros_param({mixture * h});
  q.w_lv = xavier_uniform({hidden, mixture * h}, param_seed(seed, "q.w_lv"));
  q.b_lv = zeros_param({mixture * h});
  q.mix_logits = zeros_param({mixture});
  return q;
}

std::vector<Tensor> VariationalQ::params() {
  std::vector<Tensor> p = {w_h, b_h, w_mu, b_mu, w_lv, b_lv};
  if (mixture > 1) p.push_back(mix_logits);
  return p;
}

void VariationalQ::set_requires_grad(bool v) {
  for (Tensor& t : params()) t.set_requires_grad(v);
}

namespace {
constexpr double kLn2Pi = 1.8378770664093454835606594728112;

// Gaussian log density of h_t rows under (mu, lv) slices -> {B}
Tensor component_log_prob(Tape& tape, const Tensor& h_t, const Tensor& mu,
                          const Tensor& lv) {
  const double h = static_cast<double>(h_t.dim(1));
  Tensor diff2 = tape.square(tape.subtract(h_t, mu));
  Tensor quad = tape.sum(tape.multiply(diff2, tape.exp(tape.negate(lv))), 1);
  Tensor lvs = tape.sum(lv, 1);
  Tensor inner = tape.add(tape.add(quad, lvs), Tensor::scalar(h * kLn2Pi));
  return tape.scalar_mul(inner, -0.5);
}
}  // namespace

Tensor q_log_prob(Tape& tape, const VariationalQ& q, const Tensor& h_t,
                  const Tensor& h_v) {
  if (h_t.rank() != 2 || h_v.rank() != 2 || h_t.shape() != h_v.shape())
    throw ShapeError("q_log_prob: expected matching B x H batches, got " +
                     shape_str(h_t.shape()) + " and " +
                     shape_str(h_v.shape()));
  if (h_t.dim(1) != q.h_dim)
    throw ShapeError("q_log_prob: H mismatch with the variational model");
  const std::size_t b = h_t.dim(0), h = q.h_dim;
  Tensor hidden = tape.leaky_relu(tape.affine(h_v, q.w_h, q.b_h), q.slope);
  Tensor mu = tape.affine(hidden, q.w_mu, q.b_mu);
  Tensor lv = tape.clamp(tape.affine(hidden, q.w_lv, q.b_lv), -kLogVarClamp,
                         kLogVarClamp);
  if (q.mixture == 1) return component_log_prob(tape, h_t, mu, lv);

  // mixture: logsumexp over components with a mean shift for stability
  const auto m = q.mixture;
  Tensor shift_logits =
      tape.subtract(q.mix_logits, tape.broadcast(tape.mean(q.mix_logits),
                                                 Shape{m}));
  Tensor log_norm = tape.log(tape.sum(tape.exp(shift_logits)));
  std::vector<Tensor> cols;
  cols.reserve(m);
  for (std::size_t c = 0; c < m; ++c) {
    Tensor mu_c = tape.slice(mu, 1, c * h, (c + 1) * h);
    Tensor lv_c = tape.slice(lv, 1, c * h, (c + 1) * h);
    Tensor lp = component_log_prob(tape, h_t, mu_c, lv_c);
    Tensor prior =
        tape.subtract(tape.slice(shift_logits, 0, c, c + 1), log_norm);
    Tensor joint = tape.add(lp, tape.broadcast(prior, Shape{b}));
    cols.push_back(tape.reshape(joint, {b, 1}));
  }
  Tensor a = tape.concat(cols, 1);  // {B, M}
  Tensor c = tape.mean(a, 1);       // {B}
  Tensor shifted =
      tape.subtract(a, tape.broadcast(tape.reshape(c, {b, 1}), {b, m}));
  Tensor lse = tape.log(tape.sum(tape.exp(shifted), 1));
  return tape.add(c, lse);
}

Tensor club_estimate(Tape& tape, const VariationalQ& q, const Tensor& h_t,
                     const Tensor& h_v) {
  if (h_t.rank() != 2 || h_t.dim(0) < 2)
    throw ContractError("club_estimate: need a batch of at least 2");
  const std::size_t b = h_t.dim(0);
  Tensor pos = tape.mean(q_log_prob(tape, q, h_t, h_v));
  // negatives: pair h_t[i] with h_v[(i+1) mod B]
  Tensor shifted = tape.concat(
      {tape.slice(h_v, 0, 1, b), tape.slice(h_v, 0, 0, 1)}, 0);
  Tensor neg = tape.mean(q_log_prob(tape, q, h_t, shifted));
  return tape.subtract(pos, neg);
}

double fit_q_step(VariationalQ& q, const Tensor& h_t, const Tensor& h_v,
                  Optimizer& opt) {
  // snapshot: gradients must stop at the batch
  Tensor ht = Tensor::from_data(h_t.shape(),
                                {h_t.data().begin(), h_t.data().end()});
  Tensor hv = Tensor::from_data(h_v.shape(),
                                {h_v.data().begin(), h_v.data().end()});
  Tape tape;
  Tensor nll = tape.negate(tape.mean(q_log_prob(tape, q, ht, hv)));
  tape.backward(nll);
  auto params = q.params();
  opt.step(params);
  return nll.value();
}

void ClubSchedule::validate() const {
  if (k < 1) throw ContractError("club schedule: k must be >= 1");
  if (lambda_club < 0)
    throw ContractError("club schedule: lambda_club must be >= 0");
}

ClubPhase alternate(const ClubSchedule& schedule, std::uint64_t global_step) {
  schedule.validate();
  return global_step % schedule.k == 0 ? ClubPhase::update_q
                                       : ClubPhase::update_main;
}

}  // namespace dsva
