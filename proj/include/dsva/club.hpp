#pragma once

#include <cstdint>
#include <vector>

#include "dsva/optim.hpp"
#include "dsva/tensor.hpp"

namespace dsva {

// Variational conditional q(h_t | h_v): a small MLP producing a diagonal
// Gaussian (or an M-component mixture) over h_t. log-variances are clamped
// to [-8, 8] so densities stay finite.
struct VariationalQ {
  Tensor w_h, b_h;    // {H, hidden}
  Tensor w_mu, b_mu;  // {hidden, M*H}
  Tensor w_lv, b_lv;  // {hidden, M*H}
  Tensor mix_logits;  // {M}; only meaningful when mixture > 1
  std::size_t mixture = 1;
  std::size_t h_dim = 0;
  double slope = 0.2;
  static VariationalQ init(std::size_t h, std::size_t hidden,
                           std::size_t mixture, std::uint64_t seed);
  std::vector<Tensor> params();
  void set_requires_grad(bool v);
};

inline constexpr double kLogVarClamp = 8.0;

// log q(h_t | h_v) per row: {B, H} x {B, H} -> {B}
Tensor q_log_prob(Tape& tape, const VariationalQ& q, const Tensor& h_t,
                  const Tensor& h_v);

// positive-pair mean log-density minus shifted-pair mean log-density;
// negatives pair h_t[i] with h_v[(i+1) mod B].
Tensor club_estimate(Tape& tape, const VariationalQ& q, const Tensor& h_t,
                     const Tensor& h_v);

// One maximum-likelihood step on positive pairs. Inputs are snapshotted, so
// no gradient can reach whatever produced them. Returns the NLL.
double fit_q_step(VariationalQ& q, const Tensor& h_t, const Tensor& h_v,
                  Optimizer& opt);

enum class ClubPhase { update_q, update_main };

struct ClubSchedule {
  std::size_t k = 5;                 // q-update interval in steps
  std::size_t q_steps_per_update = 5;
  double lambda_club = 0.1;
  void validate() const;
};

// Steps with global_step % k == 0 start with q_steps_per_update q fits (main
// model frozen); every step then updates the main model with q frozen.
ClubPhase alternate(const ClubSchedule& schedule, std::uint64_t global_step);

}  // namespace dsva
