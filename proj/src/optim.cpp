#include "dsva/optim.hpp"

#include <cmath>

#include "dsva/errors.hpp"

namespace dsva {

Optimizer Optimizer::sgd(double learning_rate) {
  Optimizer o;
  o.kind_ = OptimizerKind::sgd;
  o.lr_ = learning_rate;
  return o;
}

Optimizer Optimizer::adam(double learning_rate, double beta1, double beta2,
                          double epsilon) {
  Optimizer o;
  o.kind_ = OptimizerKind::adam;
  o.lr_ = learning_rate;
  o.beta1_ = beta1;
  o.beta2_ = beta2;
  o.epsilon_ = epsilon;
  return o;
}

void Optimizer::step(std::vector<Tensor>& params) {
  for (Tensor& p : params)
    if (!p.has_grad())
      throw ContractError("optimizer step: parameter has no gradient");
  ++step_count_;
  for (Tensor& p : params) {
    auto data = p.data();
    auto grad = p.grad();
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < data.size(); ++i)
        data[i] -= lr_ * grad[i];
    } else {
      Moments& mo = moments_[p.impl()];
      if (mo.m.empty()) {
        mo.m.assign(data.size(), 0.0);
        mo.v.assign(data.size(), 0.0);
      }
      const double bc1 =
          1.0 - std::pow(beta1_, static_cast<double>(step_count_));
      const double bc2 =
          1.0 - std::pow(beta2_, static_cast<double>(step_count_));
      for (std::size_t i = 0; i < data.size(); ++i) {
        mo.m[i] = beta1_ * mo.m[i] + (1.0 - beta1_) * grad[i];
        mo.v[i] = beta2_ * mo.v[i] + (1.0 - beta2_) * grad[i] * grad[i];
        const double mhat = mo.m[i] / bc1;
        const double vhat = mo.v[i] / bc2;
        data[i] -= lr_ * mhat / (std::sqrt(vhat) + epsilon_);
      }
    }
    p.zero_grad();
  }
}

}  // namespace dsva
