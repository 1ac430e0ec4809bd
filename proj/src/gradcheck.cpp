#include "dsva/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dsva/errors.hpp"

namespace dsva {

double GradCheckReport::max_rel_err() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_err);
  return m;
}

GradCheckReport grad_check(const GraphBuilder& builder,
                           std::vector<Tensor> params,
                           std::vector<std::string> names, double tolerance,
                           double h) {
  if (params.size() != names.size())
    throw ContractError("grad_check: params/names size mismatch");
  GradCheckReport report;
  report.tolerance = tolerance;

  for (Tensor& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tape tape;
  Tensor loss = builder(tape, params);
  tape.backward(loss);

  auto eval = [&]() {
    Tape t;
    return builder(t, params).value();
  };

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    GradCheckEntry entry;
    entry.name = names[pi];
    auto analytic = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.at(i);
      p.set(i, saved + h);
      const double up = eval();
      p.set(i, saved - h);
      const double down = eval();
      p.set(i, saved);
      const double numeric = (up - down) / (2.0 * h);
      const double denom =
          std::max(std::abs(analytic[i]), std::abs(numeric)) + 1e-8;
      entry.max_rel_err =
          std::max(entry.max_rel_err, std::abs(analytic[i] - numeric) / denom);
    }
    entry.pass = entry.max_rel_err < tolerance;
    report.entries.push_back(entry);
    report.pass = report.pass && entry.pass;
  }
  return report;
}

}  // namespace dsva
