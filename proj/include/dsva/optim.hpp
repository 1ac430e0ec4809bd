#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "dsva/tensor.hpp"

namespace dsva {

enum class OptimizerKind { sgd, adam };

// Per-parameter-group optimizer state. Moment buffers are keyed by parameter
// storage, so the same state object can be reused across steps while the
// parameter set stays fixed.
class Optimizer {
public:
  static Optimizer sgd(double learning_rate);
  static Optimizer adam(double learning_rate, double beta1 = 0.9,
                        double beta2 = 0.999, double epsilon = 1e-8);

  // Applies one update to every parameter and zeroes their grads.
  // Parameters without a populated grad are a contract error.
  void step(std::vector<Tensor>& params);

  OptimizerKind kind() const { return kind_; }
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  std::uint64_t step_count() const { return step_count_; }

private:
  struct Moments {
    std::vector<double> m, v;
  };
  OptimizerKind kind_ = OptimizerKind::sgd;
  double lr_ = 0.0, beta1_ = 0.9, beta2_ = 0.999, epsilon_ = 1e-8;
  std::uint64_t step_count_ = 0;
  std::unordered_map<const detail::TensorImpl*, Moments> moments_;
};

}  // namespace dsva
