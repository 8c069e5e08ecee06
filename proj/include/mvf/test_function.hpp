#pragma once

#include "mvf/errors.hpp"
#include "mvf/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>

namespace mvf {

/**
 * @brief Smooth scalar test function with analytic first and second derivatives.
 *
 * `c2_norm` bounds sup|phi|, sup|grad phi| and sup|hess phi| simultaneously.
 * When `support_radius` is set the function vanishes outside the ball of that
 * radius around `center`.
 */
struct TestFunction {
  std::function<double(const Vec&)> value;
  std::function<Vec(const Vec&)> grad;
  std::function<Mat(const Vec&)> hess;
  std::optional<double> support_radius;
  Vec center = Vec::Zero(1);
  double c2_norm = 0.0;
  std::string label;

  double operator()(const Vec& x) const { return value(x); }
  int dim() const { return static_cast<int>(center.size()); }
};

namespace detail {

/// Radial bump profile g(s) = e * exp(-1/(1-s)) for s = r^2/R^2 < 1, with g(0) = 1.
struct BumpProfile {
  double g = 0, dg = 0, d2g = 0;
};

inline BumpProfile bump_profile(double s) {
  if (s >= 1.0) return {};
  const double u = 1.0 / (1.0 - s);
  const double g = std::exp(1.0 - u);
  return {g, -g * u * u, g * (u * u * u * u - 2.0 * u * u * u)};
}

/// exp(-1/t) for t > 0 and its first two derivatives.
struct FlatExp {
  double f = 0, df = 0, d2f = 0;
};

inline FlatExp flat_exp(double t) {
  if (t <= 0.0) return {};
  const double f = std::exp(-1.0 / t);
  const double it = 1.0 / t;
  return {f, f * it * it, f * (it * it * it * it - 2.0 * it * it * it)};
}

/// C-infinity step equal to 1 for tau <= 0 and 0 for tau >= 1.
struct SmoothStep {
  double s = 0, ds = 0, d2s = 0;
};

inline SmoothStep smooth_step(double tau) {
  if (tau <= 0.0) return {1.0, 0.0, 0.0};
  if (tau >= 1.0) return {0.0, 0.0, 0.0};
  const FlatExp a = flat_exp(1.0 - tau);
  const FlatExp b = flat_exp(tau);
  // A(tau) = f(1 - tau), B(tau) = f(tau)
  const double A = a.f, dA = -a.df, d2A = a.d2f;
  const double B = b.f, dB = b.df, d2B = b.d2f;
  const double D = A + B;
  const double N = dA * B - A * dB;
  const double dN = d2A * B - A * d2B;
  const double dD = dA + dB;
  return {A / D, N / (D * D), dN / (D * D) - 2.0 * N * dD / (D * D * D)};
}

inline double sup_radial_profile(const std::function<double(double)>& f, double r_max) {
  double best = 0.0;
  constexpr int kSamples = 4000;
  for (int i = 0; i <= kSamples; ++i) best = std::max(best, std::abs(f(r_max * i / kSamples)));
  return best;
}

}  // namespace detail

/// Smooth compactly supported bump: 1 at `center`, 0 outside radius R.
inline TestFunction bump(const Vec& center, double radius, double amplitude = 1.0) {
  if (!(radius > 0.0)) throw InvalidArgument("bump: radius must be positive");
  const double inv_r2 = 1.0 / (radius * radius);
  TestFunction f;
  f.center = center;
  f.support_radius = radius;
  f.label = "bump";
  f.value = [=](const Vec& x) {
    return amplitude * detail::bump_profile((x - center).squaredNorm() * inv_r2).g;
  };
  f.grad = [=](const Vec& x) -> Vec {
    const Vec y = x - center;
    const auto p = detail::bump_profile(y.squaredNorm() * inv_r2);
    return amplitude * p.dg * 2.0 * inv_r2 * y;
  };
  f.hess = [=](const Vec& x) -> Mat {
    const Vec y = x - center;
    const auto p = detail::bump_profile(y.squaredNorm() * inv_r2);
    const double c = 2.0 * inv_r2;
    Mat h = p.d2g * c * c * (y * y.transpose());
    h.diagonal().array() += p.dg * c;
    return amplitude * h;
  };
  // sup of |g|, |g'| r-scaled and |g''| along the radial profile
  auto prof = [=](double r) {
    const double s = r * r * inv_r2;
    const auto p = detail::bump_profile(s);
    const double c = 2.0 * inv_r2;
    return std::max({std::abs(p.g), std::abs(p.dg) * c * r,
                     std::abs(p.d2g) * c * c * r * r + std::abs(p.dg) * c});
  };
  f.c2_norm = std::abs(amplitude) * detail::sup_radial_profile(prof, radius);
  return f;
}

/**
 * @brief Radial plateau window: 1 on |x - c| <= inner, 0 beyond outer, C-infinity between.
 */
inline TestFunction plateau(const Vec& center, double inner, double outer) {
  if (!(outer > inner && inner >= 0.0)) throw InvalidArgument("plateau: need 0 <= inner < outer");
  const double width = outer - inner;
  TestFunction f;
  f.center = center;
  f.support_radius = outer;
  f.label = "plateau";
  f.value = [=](const Vec& x) { return detail::smooth_step(((x - center).norm() - inner) / width).s; };
  f.grad = [=](const Vec& x) -> Vec {
    const Vec y = x - center;
    const double r = y.norm();
    if (r <= inner || r >= outer) return Vec::Zero(x.size());
    const auto st = detail::smooth_step((r - inner) / width);
    return (st.ds / width / r) * y;
  };
  f.hess = [=](const Vec& x) -> Mat {
    const Vec y = x - center;
    const double r = y.norm();
    const auto n = x.size();
    if (r <= inner || r >= outer) return Mat::Zero(n, n);
    const auto st = detail::smooth_step((r - inner) / width);
    const double d1 = st.ds / width;
    const double d2 = st.d2s / (width * width);
    const Mat yy = (y * y.transpose()) / (r * r);
    Mat h = d2 * yy;
    h += (d1 / r) * (Mat::Identity(n, n) - yy);
    return h;
  };
  auto prof = [=](double r) {
    const auto st = detail::smooth_step((r - inner) / width);
    const double d1 = std::abs(st.ds) / width;
    const double d2 = std::abs(st.d2s) / (width * width);
    return std::max({std::abs(st.s), d1, d2 + (r > 0 ? d1 / r : 0.0)});
  };
  f.c2_norm = detail::sup_radial_profile(prof, outer);
  return f;
}

/// Gaussian a * exp(-|x - c|^2 / (2 s)). Not compactly supported.
inline TestFunction gaussian_fn(const Vec& center, double variance, double amplitude = 1.0) {
  if (!(variance > 0.0)) throw InvalidArgument("gaussian_fn: variance must be positive");
  TestFunction f;
  f.center = center;
  f.label = "gaussian";
  f.value = [=](const Vec& x) { return amplitude * std::exp(-(x - center).squaredNorm() / (2.0 * variance)); };
  f.grad = [=](const Vec& x) -> Vec {
    const Vec y = x - center;
    return -amplitude * std::exp(-y.squaredNorm() / (2.0 * variance)) / variance * y;
  };
  f.hess = [=](const Vec& x) -> Mat {
    const Vec y = x - center;
    const double g = amplitude * std::exp(-y.squaredNorm() / (2.0 * variance));
    Mat h = (g / (variance * variance)) * (y * y.transpose());
    h.diagonal().array() -= g / variance;
    return h;
  };
  f.c2_norm = std::abs(amplitude) * std::max({1.0, 1.0 / std::sqrt(variance), 2.0 / variance});
  return f;
}

/// Affine function a.x + b (unbounded; combine with a window for compact support).
inline TestFunction affine_fn(const Vec& a, double b) {
  TestFunction f;
  f.center = Vec::Zero(a.size());
  f.label = "affine";
  f.value = [=](const Vec& x) { return a.dot(x) + b; };
  f.grad = [=](const Vec&) -> Vec { return a; };
  f.hess = [=](const Vec& x) -> Mat { return Mat::Zero(x.size(), x.size()); };
  f.c2_norm = std::numeric_limits<double>::infinity();
  return f;
}

/// Quadratic x'Qx/2 + a.x + b with symmetric Q (unbounded).
inline TestFunction quadratic_fn(const Mat& q, const Vec& a, double b) {
  const Mat qs = 0.5 * (q + q.transpose());
  TestFunction f;
  f.center = Vec::Zero(a.size());
  f.label = "quadratic";
  f.value = [=](const Vec& x) { return 0.5 * x.dot(qs * x) + a.dot(x) + b; };
  f.grad = [=](const Vec& x) -> Vec { return qs * x + a; };
  f.hess = [=](const Vec&) -> Mat { return qs; };
  f.c2_norm = std::numeric_limits<double>::infinity();
  return f;
}

inline TestFunction constant_fn(int dim, double c) {
  TestFunction f;
  f.center = Vec::Zero(dim);
  f.label = "constant";
  f.value = [=](const Vec&) { return c; };
  f.grad = [=](const Vec& x) -> Vec { return Vec::Zero(x.size()); };
  f.hess = [=](const Vec& x) -> Mat { return Mat::Zero(x.size(), x.size()); };
  f.c2_norm = std::abs(c);
  return f;
}

/// Pointwise product with the Leibniz rule for derivatives.
inline TestFunction product(const TestFunction& a, const TestFunction& b) {
  TestFunction f;
  f.center = a.support_radius ? a.center : b.center;
  if (a.support_radius && b.support_radius)
    f.support_radius = std::min(*a.support_radius + (a.center - f.center).norm(),
                                *b.support_radius + (b.center - f.center).norm());
  else if (a.support_radius)
    f.support_radius = a.support_radius;
  else if (b.support_radius)
    f.support_radius = b.support_radius;
  f.label = a.label + "*" + b.label;
  f.value = [=](const Vec& x) { return a.value(x) * b.value(x); };
  f.grad = [=](const Vec& x) -> Vec { return a.grad(x) * b.value(x) + a.value(x) * b.grad(x); };
  f.hess = [=](const Vec& x) -> Mat {
    const Vec ga = a.grad(x), gb = b.grad(x);
    return a.hess(x) * b.value(x) + ga * gb.transpose() + gb * ga.transpose() + a.value(x) * b.hess(x);
  };
  f.c2_norm = 4.0 * a.c2_norm * b.c2_norm;
  return f;
}

inline TestFunction scaled(const TestFunction& a, double c) {
  TestFunction f = a;
  f.value = [=](const Vec& x) { return c * a.value(x); };
  f.grad = [=](const Vec& x) -> Vec { return c * a.grad(x); };
  f.hess = [=](const Vec& x) -> Mat { return c * a.hess(x); };
  f.c2_norm = std::abs(c) * a.c2_norm;
  return f;
}

inline TestFunction sum(const TestFunction& a, const TestFunction& b) {
  TestFunction f = a;
  if (!(a.support_radius && b.support_radius)) f.support_radius.reset();
  else
    f.support_radius = std::max(*a.support_radius + (a.center - f.center).norm(),
                                *b.support_radius + (b.center - f.center).norm());
  f.label = a.label + "+" + b.label;
  f.value = [=](const Vec& x) { return a.value(x) + b.value(x); };
  f.grad = [=](const Vec& x) -> Vec { return a.grad(x) + b.grad(x); };
  f.hess = [=](const Vec& x) -> Mat { return a.hess(x) + b.hess(x); };
  f.c2_norm = a.c2_norm + b.c2_norm;
  return f;
}

/// The i-th coordinate x_i, windowed by a plateau so that it is compactly supported.
inline TestFunction windowed_coordinate(int dim, int i, double inner, double outer) {
  Vec a = Vec::Zero(dim);
  a(i) = 1.0;
  const TestFunction window = plateau(Vec::Zero(dim), inner, outer);
  TestFunction f = product(affine_fn(a, 0.0), window);
  const double c = window.c2_norm;
  f.c2_norm = std::max({outer, 1.0 + outer * c, 2.0 * c + outer * c});
  f.label = "windowed-x" + std::to_string(i);
  return f;
}

}  // namespace mvf
