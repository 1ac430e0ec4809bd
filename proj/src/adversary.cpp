#include "dsva/adversary.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "dsva/errors.hpp"
#include "dsva/init.hpp"

namespace dsva {

AdvWiring adv_wiring_from_string(const std::string& s) {
  if (s == "paper") return AdvWiring::paper;
  if (s == "confusion") return AdvWiring::confusion;
  throw ContractError("unknown adv wiring '" + s + "'");
}

std::string to_string(AdvWiring w) {
  return w == AdvWiring::paper ? "paper" : "confusion";
}

Discriminator Discriminator::init(std::size_t h, std::size_t hidden,
                                  std::uint64_t seed,
                                  const std::string& role) {
  Discriminator d;
  d.w1 = xavier_uniform({h, hidden}, param_seed(seed, role + ".w1"));
  d.b1 = zeros_param({hidden});
  d.w2 = xavier_uniform({hidden, 1}, param_seed(seed, role + ".w2"));
  d.b2 = zeros_param({1});
  return d;
}

std::vector<Tensor> Discriminator::params() { return {w1, b1, w2, b2}; }

Tensor Discriminator::prob(Tape& tape, const Tensor& h) const {
  if (h.rank() != 2 || h.dim(1) != w1.dim(0))
    throw ShapeError("discriminator: input " + shape_str(h.shape()) +
                     " does not match " + shape_str(w1.shape()));
  Tensor hid = tape.leaky_relu(tape.affine(h, w1, b1), slope);
  Tensor out = tape.sigmoid(tape.affine(hid, w2, b2));
  return tape.clamp(out, kProbEps, 1.0 - kProbEps);
}

AdvBatchLoss adv_objective(Tape& tape, const Tensor& h_t_batch,
                           const Tensor& h_v_batch, const Discriminator& d_t,
                           const Discriminator& d_v, double lambda_adv,
                           AdvWiring wiring) {
  if (h_t_batch.rank() != 2 || h_v_batch.rank() != 2 ||
      h_t_batch.dim(0) == 0 || h_v_batch.dim(0) == 0)
    throw ContractError("adv_objective: batches must be non-empty B x H");
  if (h_t_batch.dim(1) != h_v_batch.dim(1))
    throw ShapeError("adv_objective: feature dims differ");

  Tensor ht = tape.gradient_reversal(h_t_batch, lambda_adv);
  Tensor hv = tape.gradient_reversal(h_v_batch, lambda_adv);
  Tensor one = Tensor::scalar(1.0);

  AdvBatchLoss out;
  Tensor j;
  if (wiring == AdvWiring::paper) {
    // J = E[log D_v(h_t) + log(1 - D_t(h_v))]
    Tensor dv_t = d_v.prob(tape, ht);
    Tensor dt_v = d_t.prob(tape, hv);
    j = tape.add(tape.mean(tape.log(dv_t)),
                 tape.mean(tape.log(tape.subtract(one, dt_v))));
    out.mean_d_v_on_t = tape.mean(dv_t).value();
    out.mean_d_t_on_v = tape.mean(dt_v).value();
  } else {
    // own-modality classification: each discriminator labels its own
    // modality 1 and the other 0; the GRL turns this into confusion
    Tensor dt_t = d_t.prob(tape, ht);
    Tensor dt_v = d_t.prob(tape, hv);
    Tensor dv_v = d_v.prob(tape, hv);
    Tensor dv_t = d_v.prob(tape, ht);
    Tensor jt = tape.add(tape.mean(tape.log(dt_t)),
                         tape.mean(tape.log(tape.subtract(one, dt_v))));
    Tensor jv = tape.add(tape.mean(tape.log(dv_v)),
                         tape.mean(tape.log(tape.subtract(one, dv_t))));
    j = tape.scalar_mul(tape.add(jt, jv), 0.5);
    out.mean_d_v_on_t = tape.mean(dv_t).value();
    out.mean_d_t_on_v = tape.mean(dt_v).value();
  }
  out.objective = j;
  out.generator_loss = j.value();
  out.discriminator_loss = -j.value();
  return out;
}

namespace {
constexpr int kBins = 32;

double discrete_jsd(const std::vector<double>& p, const std::vector<double>& q) {
  double acc = 0.0;
  for (int i = 0; i < kBins; ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0) acc += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0) acc += 0.5 * q[i] * std::log(q[i] / m);
  }
  return acc;
}
}  // namespace

JsdResult jsd_diagnostic(const std::vector<std::vector<double>>& samples_p,
                         const std::vector<std::vector<double>>& samples_q) {
  if (samples_p.size() < 50 || samples_q.size() < 50)
    throw ContractError("jsd_diagnostic: need at least 50 samples per side");
  const std::size_t dim = samples_p.front().size();
  for (const auto& s : samples_p)
    if (s.size() != dim) throw ShapeError("jsd_diagnostic: ragged samples");
  for (const auto& s : samples_q)
    if (s.size() != dim) throw ShapeError("jsd_diagnostic: ragged samples");

  // Fisher discriminant direction as the learned 1-D projection
  const auto np = static_cast<Eigen::Index>(samples_p.size());
  const auto nq = static_cast<Eigen::Index>(samples_q.size());
  const auto d = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXd P(np, d), Q(nq, d);
  for (Eigen::Index i = 0; i < np; ++i)
    for (Eigen::Index j = 0; j < d; ++j) P(i, j) = samples_p[i][j];
  for (Eigen::Index i = 0; i < nq; ++i)
    for (Eigen::Index j = 0; j < d; ++j) Q(i, j) = samples_q[i][j];
  const Eigen::RowVectorXd mp = P.colwise().mean();
  const Eigen::RowVectorXd mq = Q.colwise().mean();
  const Eigen::MatrixXd Pc = P.rowwise() - mp;
  const Eigen::MatrixXd Qc = Q.rowwise() - mq;
  Eigen::MatrixXd scatter =
      Pc.transpose() * Pc / static_cast<double>(np) +
      Qc.transpose() * Qc / static_cast<double>(nq) +
      1e-6 * Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd w = scatter.ldlt().solve((mp - mq).transpose());
  if (w.norm() == 0.0) w = Eigen::VectorXd::Unit(d, 0);

  const Eigen::VectorXd zp = P * w;
  const Eigen::VectorXd zq = Q * w;
  const double lo = std::min(zp.minCoeff(), zq.minCoeff());
  const double hi = std::max(zp.maxCoeff(), zq.maxCoeff());
  if (hi - lo <= 0.0) return {0.0, true};  // all projections identical

  auto histogram = [&](const Eigen::VectorXd& z) {
    std::vector<double> h(kBins, 0.0);
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      int b = static_cast<int>((z(i) - lo) / (hi - lo) * kBins);
      b = std::clamp(b, 0, kBins - 1);
      h[static_cast<std::size_t>(b)] += 1.0;
    }
    for (double& v : h) v /= static_cast<double>(z.size());
    return h;
  };
  return {discrete_jsd(histogram(zp), histogram(zq)), false};
}

}  // namespace dsva
