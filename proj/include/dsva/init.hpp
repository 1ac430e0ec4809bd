#pragma once

#include <cmath>
#include <string_view>

#include "dsva/rng.hpp"
#include "dsva/tensor.hpp"

namespace dsva {

// Name-keyed parameter seeding: initialization does not depend on the order
// parameters are created in.
inline std::uint64_t param_seed(std::uint64_t master, std::string_view name) {
  return mix_seed(master, fnv1a(name));
}

// Xavier-uniform over the last two dims (vectors count as fan-in 1).
inline Tensor xavier_uniform(Shape shape, std::uint64_t seed) {
  const std::size_t r = shape.size();
  const std::size_t fan_in = r >= 2 ? shape[r - 2] : 1;
  const std::size_t fan_out = r >= 1 ? shape[r - 1] : 1;
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t = Tensor::zeros(std::move(shape), true);
  Rng rng(seed);
  for (auto& v : t.data()) v = rng.uniform(-limit, limit);
  return t;
}

inline Tensor zeros_param(Shape shape) {
  return Tensor::zeros(std::move(shape), true);
}

}  // namespace dsva
