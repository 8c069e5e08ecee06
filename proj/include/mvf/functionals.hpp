#pragma once

#include "mvf/empirical_measure.hpp"
#include "mvf/errors.hpp"
#include "mvf/linalg.hpp"
#include "mvf/test_function.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace mvf {

/// Outer function g: R^k -> R with analytic gradient and Hessian.
struct OuterFunction {
  std::function<double(const Coords&)> value;
  std::function<Coords(const Coords&)> grad;
  std::function<CoordMat(const Coords&)> hess;
  std::string label;

  double operator()(const Coords& z) const { return value(z); }
};

/// g(z) = a.z + b
inline OuterFunction outer_affine(Coords a, double b = 0.0) {
  OuterFunction g;
  g.label = "affine";
  g.value = [=](const Coords& z) { return a.dot(z) + b; };
  g.grad = [=](const Coords&) -> Coords { return a; };
  g.hess = [=](const Coords& z) -> CoordMat { return CoordMat::Zero(z.size(), z.size()); };
  return g;
}

/// g(z) = z'Qz/2 + a.z (Q symmetrized).
inline OuterFunction outer_quadratic(const CoordMat& q, Coords a) {
  const CoordMat qs = 0.5 * (q + q.transpose());
  OuterFunction g;
  g.label = "quadratic";
  g.value = [=](const Coords& z) { return 0.5 * z.dot(qs * z) + a.dot(z); };
  g.grad = [=](const Coords& z) -> Coords { return qs * z + a; };
  g.hess = [=](const Coords&) -> CoordMat { return qs; };
  return g;
}

/// g(z) = c * tanh(a.z + b), bounded with bounded derivatives.
inline OuterFunction outer_tanh(Coords a, double b = 0.0, double c = 1.0) {
  OuterFunction g;
  g.label = "tanh";
  g.value = [=](const Coords& z) { return c * std::tanh(a.dot(z) + b); };
  g.grad = [=](const Coords& z) -> Coords {
    const double t = std::tanh(a.dot(z) + b);
    return c * (1.0 - t * t) * a;
  };
  g.hess = [=](const Coords& z) -> CoordMat {
    const double t = std::tanh(a.dot(z) + b);
    return c * (-2.0 * t * (1.0 - t * t)) * (a * a.transpose());
  };
  return g;
}

/// g(z) = c * exp(-|z - m|^2 / (2 s)), a bounded windowed quadratic.
inline OuterFunction outer_gauss(Coords m, double s, double c = 1.0) {
  OuterFunction g;
  g.label = "gauss";
  g.value = [=](const Coords& z) { return c * std::exp(-(z - m).squaredNorm() / (2.0 * s)); };
  g.grad = [=](const Coords& z) -> Coords {
    const Coords y = z - m;
    return -c * std::exp(-y.squaredNorm() / (2.0 * s)) / s * y;
  };
  g.hess = [=](const Coords& z) -> CoordMat {
    const Coords y = z - m;
    const double e = c * std::exp(-y.squaredNorm() / (2.0 * s));
    CoordMat h = (e / (s * s)) * (y * y.transpose());
    h.diagonal().array() -= e / s;
    return h;
  };
  return g;
}

inline Coords coordinates(const EmpiricalMeasure& nu, const std::vector<TestFunction>& phis) {
  Coords z = Coords::Zero(static_cast<Eigen::Index>(phis.size()));
  for (std::size_t i = 0; i < nu.size(); ++i) {
    const double w = nu.weight(i);
    if (w == 0.0) continue;
    const Vec x = nu.point(i);
    for (std::size_t u = 0; u < phis.size(); ++u) z(static_cast<Eigen::Index>(u)) += w * phis[u].value(x);
  }
  return z;
}

/**
 * @brief Cylindrical functional on M(R^n): G(nu) = g(<nu,phi_1>, ..., <nu,phi_k>).
 */
struct MeasureFunctional {
  std::vector<TestFunction> phis;
  OuterFunction g;
  std::string id;

  Coords coords(const EmpiricalMeasure& nu) const { return coordinates(nu, phis); }
  double operator()(const EmpiricalMeasure& nu) const { return g.value(coords(nu)); }
  int arity() const { return static_cast<int>(phis.size()); }
};

/**
 * @brief F(x, mu) = f(x, <mu,psi_1>, ..., <mu,psi_k>) on R^n x P_2(R^n).
 *
 * The L-derivative is available in closed form:
 *   d_mu F(x,mu)(y)     = sum_j d_{z_j} f * grad psi_j(y)
 *   d_y d_mu F(x,mu)(y) = sum_j d_{z_j} f * hess psi_j(y)
 */
struct CylindricalStateFunctional {
  std::vector<TestFunction> inner;
  std::function<double(const Vec&, const Coords&)> f;
  std::function<Vec(const Vec&, const Coords&)> f_x;
  std::function<Mat(const Vec&, const Coords&)> f_xx;
  std::function<Coords(const Vec&, const Coords&)> f_z;
  std::string id;

  bool has_derivatives() const { return f && f_x && f_xx && (inner.empty() || f_z); }

  Coords coords(const EmpiricalMeasure& mu) const { return coordinates(mu, inner); }

  double operator()(const Vec& x, const EmpiricalMeasure& mu) const { return f(x, coords(mu)); }

  Vec mu_derivative(const Vec& x, const EmpiricalMeasure& mu, const Vec& y) const {
    const Coords z = coords(mu);
    const Coords fz = f_z(x, z);
    Vec out = Vec::Zero(y.size());
    for (std::size_t j = 0; j < inner.size(); ++j) out += fz(static_cast<Eigen::Index>(j)) * inner[j].grad(y);
    return out;
  }

  Mat mu_derivative_grad(const Vec& x, const EmpiricalMeasure& mu, const Vec& y) const {
    const Coords z = coords(mu);
    const Coords fz = f_z(x, z);
    Mat out = Mat::Zero(y.size(), y.size());
    for (std::size_t j = 0; j < inner.size(); ++j) out += fz(static_cast<Eigen::Index>(j)) * inner[j].hess(y);
    return out;
  }
};

/// F(x, mu) = a(x) * g(<mu, psi>).
inline CylindricalStateFunctional product_form(const TestFunction& a, const OuterFunction& g,
                                               std::vector<TestFunction> inner, std::string id = {}) {
  CylindricalStateFunctional F;
  F.inner = std::move(inner);
  F.id = std::move(id);
  F.f = [=](const Vec& x, const Coords& z) { return a.value(x) * g.value(z); };
  F.f_x = [=](const Vec& x, const Coords& z) -> Vec { return g.value(z) * a.grad(x); };
  F.f_xx = [=](const Vec& x, const Coords& z) -> Mat { return g.value(z) * a.hess(x); };
  F.f_z = [=](const Vec& x, const Coords& z) -> Coords { return a.value(x) * g.grad(z); };
  return F;
}

/// F(x, mu) = a(x), independent of the measure.
inline CylindricalStateFunctional measure_free(const TestFunction& a, std::string id = {}) {
  CylindricalStateFunctional F;
  F.id = std::move(id);
  F.f = [=](const Vec& x, const Coords&) { return a.value(x); };
  F.f_x = [=](const Vec& x, const Coords&) -> Vec { return a.grad(x); };
  F.f_xx = [=](const Vec& x, const Coords&) -> Mat { return a.hess(x); };
  F.f_z = [=](const Vec&, const Coords& z) -> Coords { return Coords::Zero(z.size()); };
  return F;
}

}  // namespace mvf
