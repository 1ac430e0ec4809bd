#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsva/tensor.hpp"

namespace dsva {

// Discriminator outputs are clamped to [kProbEps, 1 - kProbEps] so the log
// terms stay finite no matter how saturated the MLP gets.
inline constexpr double kProbEps = 1e-6;

enum class AdvWiring { paper, confusion };
AdvWiring adv_wiring_from_string(const std::string& s);
std::string to_string(AdvWiring w);

// MLP H -> hidden -> 1 with LeakyReLU and sigmoid squashing.
struct Discriminator {
  Tensor w1, b1, w2, b2;
  double slope = 0.2;
  static Discriminator init(std::size_t h, std::size_t hidden,
                            std::uint64_t seed, const std::string& role);
  std::vector<Tensor> params();
  // {B, H} -> {B, 1} probabilities in [kProbEps, 1 - kProbEps]
  Tensor prob(Tape& tape, const Tensor& h) const;
};

struct AdvBatchLoss {
  Tensor objective;          // J on the tape, inputs wrapped in GRL(lambda)
  double discriminator_loss = 0.0;  // -J
  double generator_loss = 0.0;      // J
  double mean_d_v_on_t = 0.0;
  double mean_d_t_on_v = 0.0;
};

// The min-max objective. `paper` wiring scores h_t with the visual
// discriminator and h_v with the text discriminator, exactly as written;
// `confusion` is the standard own-modality classification game. Backward on
// -objective ascends the discriminators and, through the GRL, descends the
// decoupler on lambda_adv * J in the same pass.
AdvBatchLoss adv_objective(Tape& tape, const Tensor& h_t_batch,
                           const Tensor& h_v_batch, const Discriminator& d_t,
                           const Discriminator& d_v, double lambda_adv,
                           AdvWiring wiring = AdvWiring::paper);

struct JsdResult {
  double value = 0.0;
  bool degenerate = false;
};

// Nonparametric JSD estimate between two empirical sample sets: both sides
// are projected onto a Fisher-discriminant direction and histogrammed over
// 32 shared bins. Diagnostic only; no gradients flow.
JsdResult jsd_diagnostic(const std::vector<std::vector<double>>& samples_p,
                         const std::vector<std::vector<double>>& samples_q);

}  // namespace dsva
