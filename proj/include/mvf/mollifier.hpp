#pragma once

#include "mvf/empirical_measure.hpp"
#include "mvf/errors.hpp"
#include "mvf/linalg.hpp"
#include "mvf/test_function.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace mvf {

/**
 * @brief Gaussian mollifier S_eps together with the grid on which H = L^2 is discretized.
 *
 * The grid is the box [-L, L]^n with M nodes per axis and spacing
 * 2L / (M - 1) <= dx. Atoms must stay 6 sqrt(eps) inside the box; the kernel
 * is truncated at `kernel_cutoff` standard deviations.
 */
struct MollifierConfig {
  int n = 1;
  double epsilon = 0.05;
  double L = 5.0;
  double dx = 0.05;
  double kernel_cutoff = 10.0;
  double margin_sd = 6.0;
  std::size_t max_nodes = 20'000'000;

  double sd() const { return std::sqrt(epsilon); }
  std::size_t axis_nodes() const { return static_cast<std::size_t>(std::ceil(2.0 * L / dx - 1e-9)) + 1; }
  double spacing() const { return 2.0 * L / static_cast<double>(axis_nodes() - 1); }
  double node(std::size_t j) const { return -L + static_cast<double>(j) * spacing(); }
  double cell_volume() const { return std::pow(spacing(), n); }
  std::size_t total_nodes() const {
    std::size_t t = 1;
    for (int a = 0; a < n; ++a) t *= axis_nodes();
    return t;
  }

  void validate() const {
    if (n < 1 || n > kMaxDim) throw InvalidArgument("MollifierConfig: unsupported dimension");
    if (!(epsilon > 0.0)) throw InvalidArgument("MollifierConfig: epsilon must be positive");
    if (!(L > 0.0) || !(dx > 0.0)) throw InvalidArgument("MollifierConfig: box and spacing must be positive");
    if (dx > sd() / 4.0 * (1.0 + 1e-12))
      throw InvalidArgument("MollifierConfig: spacing must not exceed sqrt(eps)/4");
    if (total_nodes() > max_nodes) throw InvalidArgument("MollifierConfig: grid too large");
  }

  /// Default rule: eps = 0.05 * (cloud std)^2, dx = sqrt(eps)/4, box covering the cloud plus `pad`.
  static MollifierConfig for_cloud(const EmpiricalMeasure& mu, double pad = 0.0) {
    const EmpiricalMeasure p = mu.as_probability();
    const double var = std::max(p.second_moment() - p.mean().squaredNorm(), 1e-12) / p.dim();
    MollifierConfig cfg;
    cfg.n = p.dim();
    cfg.epsilon = 0.05 * var;
    cfg.dx = cfg.sd() / 4.0;
    double reach = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) reach = std::max(reach, p.point(i).cwiseAbs().maxCoeff());
    cfg.L = reach + cfg.margin_sd * cfg.sd() + pad;
    return cfg;
  }
};

/// Values on the nodes of a MollifierConfig grid, axis 0 fastest.
struct GridFunction {
  MollifierConfig grid;
  std::vector<double> values;

  explicit GridFunction(const MollifierConfig& g) : grid(g), values(g.total_nodes(), 0.0) {}

  double inner(const GridFunction& o) const {
    if (o.values.size() != values.size()) throw DimensionMismatch("GridFunction: grids differ");
    double acc = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) acc += values[i] * o.values[i];
    return acc * grid.cell_volume();
  }
  double norm2() const { return inner(*this); }
  double norm() const { return std::sqrt(norm2()); }

  GridFunction& operator+=(const GridFunction& o) {
    if (o.values.size() != values.size()) throw DimensionMismatch("GridFunction: grids differ");
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += o.values[i];
    return *this;
  }
  GridFunction& operator*=(double a) {
    for (double& v : values) v *= a;
    return *this;
  }
  friend GridFunction operator+(GridFunction a, const GridFunction& b) { return a += b; }
  friend GridFunction operator-(GridFunction a, const GridFunction& b) {
    GridFunction nb = b;
    nb *= -1.0;
    return a += nb;
  }
  friend GridFunction operator*(double s, GridFunction a) { return a *= s; }

  /// Coordinates of node `flat`.
  Vec point(std::size_t flat) const {
    Vec x(grid.n);
    const std::size_t M = grid.axis_nodes();
    for (int a = 0; a < grid.n; ++a) {
      x(a) = grid.node(flat % M);
      flat /= M;
    }
    return x;
  }

  double sum() const {
    double acc = 0.0;
    for (double v : values) acc += v;
    return acc;
  }
};

namespace detail {

inline void require_coverage(const MollifierConfig& cfg, const Vec& x) {
  const double limit = cfg.L - cfg.margin_sd * cfg.sd();
  if (x.cwiseAbs().maxCoeff() > limit + 1e-12 * cfg.L)
    throw CoverageError("mollifier grid [-" + std::to_string(cfg.L) + ", " + std::to_string(cfg.L) +
                        "] does not cover an atom with the required 6 sqrt(eps) margin");
}

/// Adds w * prod_a g(node_a - x_a) over the nodes inside the kernel cutoff box.
inline void splat(GridFunction& out, const Vec& x, double w) {
  const MollifierConfig& g = out.grid;
  const std::size_t M = g.axis_nodes();
  const double h = g.spacing();
  const double reach = g.kernel_cutoff * g.sd();
  const double norm1 = 1.0 / std::sqrt(2.0 * std::numbers::pi * g.epsilon);
  std::size_t lo[kMaxDim], hi[kMaxDim];
  std::vector<double> fac[kMaxDim];
  for (int a = 0; a < g.n; ++a) {
    const double l = std::max(0.0, std::ceil((x(a) - reach + g.L) / h));
    const double u = std::min(static_cast<double>(M - 1), std::floor((x(a) + reach + g.L) / h));
    lo[a] = static_cast<std::size_t>(l);
    hi[a] = static_cast<std::size_t>(std::max(l, u));
    fac[a].resize(hi[a] - lo[a] + 1);
    for (std::size_t j = lo[a]; j <= hi[a]; ++j) {
      const double r = g.node(j) - x(a);
      fac[a][j - lo[a]] = norm1 * std::exp(-r * r / (2.0 * g.epsilon));
    }
  }
  // odometer over the tensor box
  std::size_t idx[kMaxDim];
  for (int a = 0; a < g.n; ++a) idx[a] = lo[a];
  while (true) {
    double v = w;
    std::size_t flat = 0, stride = 1;
    for (int a = 0; a < g.n; ++a) {
      v *= fac[a][idx[a] - lo[a]];
      flat += idx[a] * stride;
      stride *= M;
    }
    out.values[flat] += v;
    int a = 0;
    while (a < g.n && ++idx[a] > hi[a]) {
      idx[a] = lo[a];
      ++a;
    }
    if (a == g.n) break;
  }
}

}  // namespace detail

/// (S_eps mu)(x) = sum_i w_i (2 pi eps)^{-n/2} exp(-|x - x_i|^2 / (2 eps)) at every node.
inline GridFunction smooth_measure(const EmpiricalMeasure& mu, const MollifierConfig& cfg) {
  cfg.validate();
  if (mu.dim() != cfg.n) throw DimensionMismatch("smooth_measure: dimension");
  GridFunction out(cfg);
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double w = mu.weight(i);
    if (w == 0.0) continue;
    const Vec x = mu.point(i);
    detail::require_coverage(cfg, x);
    detail::splat(out, x, w);
  }
  return out;
}

/// phi sampled on the grid nodes.
inline GridFunction sample_function(const TestFunction& phi, const MollifierConfig& cfg) {
  cfg.validate();
  GridFunction out(cfg);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = phi.value(out.point(i));
  return out;
}

/**
 * @brief S_eps phi on the grid, by separable discrete convolution of the sampled phi.
 *
 * phi is treated as zero outside the box, so values within a kernel width of
 * the boundary are only meaningful when phi is negligible there.
 */
inline GridFunction smooth_function(const TestFunction& phi, const MollifierConfig& cfg) {
  GridFunction cur = sample_function(phi, cfg);
  const std::size_t M = cfg.axis_nodes();
  const double h = cfg.spacing();
  const auto half = static_cast<std::ptrdiff_t>(std::floor(cfg.kernel_cutoff * cfg.sd() / h));
  std::vector<double> ker(static_cast<std::size_t>(2 * half + 1));
  const double norm1 = h / std::sqrt(2.0 * std::numbers::pi * cfg.epsilon);
  for (std::ptrdiff_t q = -half; q <= half; ++q) {
    const double r = static_cast<double>(q) * h;
    ker[static_cast<std::size_t>(q + half)] = norm1 * std::exp(-r * r / (2.0 * cfg.epsilon));
  }
  std::size_t stride = 1;
  for (int a = 0; a < cfg.n; ++a) {
    GridFunction next(cfg);
    const std::size_t total = cur.values.size();
    for (std::size_t flat = 0; flat < total; ++flat) {
      const auto j = static_cast<std::ptrdiff_t>((flat / stride) % M);
      const std::size_t base = flat - static_cast<std::size_t>(j) * stride;
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, j - half);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(M) - 1, j + half);
      double acc = 0.0;
      for (std::ptrdiff_t q = lo; q <= hi; ++q)
        acc += ker[static_cast<std::size_t>(q - j + half)] * cur.values[base + static_cast<std::size_t>(q) * stride];
      next.values[flat] = acc;
    }
    cur = std::move(next);
    stride *= M;
  }
  return cur;
}

namespace detail {

/// Gauss-Hermite nodes/weights for the standard normal (Golub-Welsch), weights sum to 1.
inline std::pair<std::vector<double>, std::vector<double>> gauss_hermite_normal(int order) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(order, order);
  for (int i = 1; i < order; ++i) J(i, i - 1) = J(i - 1, i) = std::sqrt(static_cast<double>(i));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  std::vector<double> x(static_cast<std::size_t>(order)), w(static_cast<std::size_t>(order));
  for (int i = 0; i < order; ++i) {
    x[static_cast<std::size_t>(i)] = es.eigenvalues()(i);
    const double v = es.eigenvectors()(0, i);
    w[static_cast<std::size_t>(i)] = v * v;
  }
  return {x, w};
}

/// (S_eps phi)(x) = E phi(x + sqrt(eps) Z), tensor Gauss-Hermite rule.
inline double smoothed_at(const TestFunction& phi, const Vec& x, double eps, const std::vector<double>& nodes,
                          const std::vector<double>& weights) {
  const int n = static_cast<int>(x.size());
  const std::size_t q = nodes.size();
  std::size_t idx[kMaxDim] = {};
  const double s = std::sqrt(eps);
  double acc = 0.0;
  while (true) {
    Vec y = x;
    double w = 1.0;
    for (int a = 0; a < n; ++a) {
      y(a) += s * nodes[idx[a]];
      w *= weights[idx[a]];
    }
    acc += w * phi.value(y);
    int a = 0;
    while (a < n && ++idx[a] == q) {
      idx[a] = 0;
      ++a;
    }
    if (a == n) break;
  }
  return acc;
}

}  // namespace detail

struct AdjointCheck {
  double lhs = 0.0;  // <mu, S_eps phi>, Gauss-Hermite at the atoms
  double rhs = 0.0;  // <S_eps mu, phi>_H, grid quadrature
  double residual = 0.0;
};

/**
 * @brief |<mu, S_eps phi> - <S_eps mu, phi>_H| with the two sides computed independently.
 */
inline AdjointCheck adjoint_identity_check(const EmpiricalMeasure& mu, const TestFunction& phi,
                                           const MollifierConfig& cfg, int hermite_order = 48) {
  const auto [nodes, weights] = detail::gauss_hermite_normal(hermite_order);
  AdjointCheck out;
  out.lhs = mu.integrate([&](const Vec& x) { return detail::smoothed_at(phi, x, cfg.epsilon, nodes, weights); });
  out.rhs = smooth_measure(mu, cfg).inner(sample_function(phi, cfg));
  out.residual = std::abs(out.lhs - out.rhs);
  return out;
}

/// ||S_eps (mu - nu)||_H on the grid.
inline double smoothed_distance(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, const MollifierConfig& cfg) {
  return (smooth_measure(mu, cfg) - smooth_measure(nu, cfg)).norm();
}

struct EnergyCurve {
  std::vector<double> times;
  std::vector<double> mean;
  std::vector<double> stderr_;
};

/**
 * @brief Monte-Carlo estimate of t -> E ||S_eps mu_t||_H^2 from per-run squared norms.
 *
 * `norms2[j][k]` is the squared norm of run j at grid step k.
 */
inline EnergyCurve energy_curve(const std::vector<std::vector<double>>& norms2, double dt) {
  if (norms2.size() < 2) throw InvalidArgument("energy_curve: need at least two runs");
  const std::size_t K = norms2.front().size();
  for (const auto& r : norms2)
    if (r.size() != K) throw DimensionMismatch("energy_curve: runs have different lengths");
  EnergyCurve c;
  const double M = static_cast<double>(norms2.size());
  for (std::size_t k = 0; k < K; ++k) {
    double s = 0.0, s2 = 0.0;
    for (const auto& r : norms2) {
      s += r[k];
      s2 += r[k] * r[k];
    }
    const double mean = s / M;
    const double var = std::max(0.0, (s2 - M * mean * mean) / (M - 1.0));
    c.times.push_back(static_cast<double>(k) * dt);
    c.mean.push_back(mean);
    c.stderr_.push_back(std::sqrt(var / M));
  }
  return c;
}

/// Per-state helper: ||S_eps mu||_H^2 for each state of a recorded sequence.
template <class StateRange>
std::vector<double> energy_series(const StateRange& states, const MollifierConfig& cfg) {
  std::vector<double> out;
  for (const auto& s : states) out.push_back(smooth_measure(s.measure(), cfg).norm2());
  return out;
}

struct GronwallFit {
  double C_hat = 0.0;
  bool violated = false;
};

/**
 * @brief Smallest C >= 0 with curve(t) <= curve(0) e^{Ct} (1 + 3 se(t)/curve(t)) on the window.
 *
 * `window` restricts the times considered (inclusive); violated when C exceeds `cap`
 * or the curve is not finite.
 */
inline GronwallFit gronwall_check(const EnergyCurve& curve, std::optional<std::pair<double, double>> window = {},
                                  double cap = 50.0) {
  GronwallFit fit;
  if (curve.mean.empty() || !(curve.mean[0] > 0.0)) {
    fit.violated = true;
    return fit;
  }
  const double c0 = curve.mean[0];
  for (std::size_t k = 1; k < curve.mean.size(); ++k) {
    const double t = curve.times[k];
    if (window && (t < window->first || t > window->second)) continue;
    const double v = curve.mean[k];
    if (!std::isfinite(v)) {
      fit.violated = true;
      fit.C_hat = std::numeric_limits<double>::infinity();
      return fit;
    }
    if (!(t > 0.0) || v <= 0.0) continue;
    const double slack = std::log1p(3.0 * curve.stderr_[k] / v);
    fit.C_hat = std::max(fit.C_hat, (std::log(v / c0) - slack) / t);
  }
  fit.violated = !(fit.C_hat <= cap);
  return fit;
}

}  // namespace mvf
