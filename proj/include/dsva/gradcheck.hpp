#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dsva/tensor.hpp"

namespace dsva {

// Builds a scalar loss on the given tape from the fixed parameter set.
// Must be a pure function of the parameter values.
using GraphBuilder = std::function<Tensor(Tape&, std::vector<Tensor>&)>;

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  bool pass = true;
  double max_rel_err() const;
};

// Compares backward() gradients against central finite differences
// (h = 1e-5 by default) for every entry of every parameter. Relative error
// uses a 1e-8 absolute floor so near-zero gradients do not blow up the ratio.
GradCheckReport grad_check(const GraphBuilder& builder,
                           std::vector<Tensor> params,
                           std::vector<std::string> names, double tolerance,
                           double h = 1e-5);

}  // namespace dsva
