#pragma once

// Test-only reference implementations, kept independent of the library's
// computation paths on purpose.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

// naive triple-loop matmul, (m x k) * (k x n), row-major
inline std::vector<double> matmul(const std::vector<double>& a,
                                  const std::vector<double>& b, std::size_t m,
                                  std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t l = 0; l < k; ++l)
        c[i * n + j] += a[i * k + l] * b[l * n + j];
  return c;
}

// analytic MI of a bivariate standard Gaussian with correlation rho
inline double gaussian_mi(double rho) { return -0.5 * std::log(1.0 - rho * rho); }

// trapezoid quadrature of the JSD integral between two 1-D densities
template <typename F, typename G>
double jsd_quadrature(F p, G q, double lo, double hi, int n = 200000) {
  auto integrand = [&](double x) {
    const double px = p(x), qx = q(x), m = 0.5 * (px + qx);
    double t = 0.0;
    if (px > 0.0) t += 0.5 * px * std::log(px / m);
    if (qx > 0.0) t += 0.5 * qx * std::log(qx / m);
    return t;
  };
  const double h = (hi - lo) / n;
  double acc = 0.5 * (integrand(lo) + integrand(hi));
  for (int i = 1; i < n; ++i) acc += integrand(lo + h * i);
  return acc * h;
}

inline double normal_pdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI));
}

}  // namespace oracle
