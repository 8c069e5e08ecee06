#pragma once

#include "mvf/coefficients.hpp"
#include "mvf/test_function.hpp"

#include <random>

namespace mvf::testing {

inline Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

inline Vec fd_grad(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-5) {
  Vec g(x.size());
  for (int i = 0; i < x.size(); ++i) {
    Vec p = x, m = x;
    p(i) += h;
    m(i) -= h;
    g(i) = (f(p) - f(m)) / (2 * h);
  }
  return g;
}

inline Mat fd_hess(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-4) {
  Mat out(x.size(), x.size());
  for (int i = 0; i < x.size(); ++i)
    for (int j = 0; j < x.size(); ++j) {
      auto at = [&](double si, double sj) {
        Vec y = x;
        y(i) += si * h;
        y(j) += sj * h;
        return f(y);
      };
      out(i, j) = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4 * h * h);
    }
  return out;
}

inline EmpiricalMeasure gaussian_cloud(int dim, std::size_t count, std::uint64_t seed, double spread = 1.0,
                                       double shift = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> pts(count * static_cast<std::size_t>(dim));
  for (double& p : pts) p = shift + spread * g(rng);
  return EmpiricalMeasure::uniform(dim, std::move(pts));
}

/// Scalar system with constant noise loadings and caller-supplied drifts.
inline CoefficientSet scalar_system(VectorField b1, double s0, double s1, VectorField b2, double s2 = 1.0) {
  CoefficientSet c;
  c.name = "test";
  c.b1 = std::move(b1);
  c.sigma0 = [s0](double, const Vec&, const EmpiricalMeasure&) { return scalar_mat(s0); };
  c.sigma1 = [s1](double, const Vec&, const EmpiricalMeasure&) { return scalar_mat(s1); };
  c.b2 = std::move(b2);
  c.sigma2 = [s2](double) { return scalar_mat(s2); };
  c.finalize();
  return c;
}

}  // namespace mvf::testing
