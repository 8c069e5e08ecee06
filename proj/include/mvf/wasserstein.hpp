#pragma once

#include "mvf/empirical_measure.hpp"
#include "mvf/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace mvf {

enum class W2Method { quantile_1d, assignment, sliced };

inline const char* to_string(W2Method m) {
  switch (m) {
    case W2Method::quantile_1d: return "quantile-1d";
    case W2Method::assignment: return "assignment";
    case W2Method::sliced: return "sliced";
  }
  return "unknown";
}

struct W2Options {
  /// Largest cloud solved by exact assignment in n >= 2.
  std::size_t assignment_cap = 512;
  int projections = 256;
  std::uint64_t seed = 0x5eed5eedULL;
};

struct W2Result {
  double value = 0.0;
  W2Method method = W2Method::quantile_1d;
  int projections = 0;
};

namespace detail {

/// Squared W2 between two weighted 1-D clouds (weights already normalized).
inline double w2_squared_1d(std::vector<std::pair<double, double>> a,
                            std::vector<std::pair<double, double>> b) {
  auto by_pos = [](const auto& l, const auto& r) { return l.first < r.first; };
  std::sort(a.begin(), a.end(), by_pos);
  std::sort(b.begin(), b.end(), by_pos);
  std::size_t i = 0, j = 0;
  double ra = a.empty() ? 0.0 : a[0].second;
  double rb = b.empty() ? 0.0 : b[0].second;
  double acc = 0.0;
  while (i < a.size() && j < b.size()) {
    const double step = std::min(ra, rb);
    const double diff = a[i].first - b[j].first;
    acc += step * diff * diff;
    ra -= step;
    rb -= step;
    // Exhausted atoms advance; the tolerance absorbs rounding in the running remainders.
    constexpr double kEps = 1e-15;
    if (ra <= kEps) {
      if (++i < a.size()) ra += a[i].second;
    }
    if (rb <= kEps) {
      if (++j < b.size()) rb += b[j].second;
    }
  }
  return acc;
}

inline std::vector<std::pair<double, double>> projected(const EmpiricalMeasure& mu, const Vec& dir) {
  std::vector<std::pair<double, double>> out;
  out.reserve(mu.size());
  const double m = mu.mass();
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (mu.weight(i) == 0.0) continue;
    out.emplace_back(mu.point(i).dot(dir), mu.weight(i) / m);
  }
  return out;
}

/// Minimum-cost perfect assignment (Hungarian algorithm, O(n^3)). Returns the optimal cost.
inline double assignment_cost(const std::vector<double>& cost, std::size_t n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (std::size_t j = 1; j <= n; ++j) total += cost[(p[j] - 1) * n + (j - 1)];
  return total;
}

inline bool uniform_weights(const EmpiricalMeasure& mu) {
  if (mu.size() == 0) return false;
  const double w0 = mu.weight(0);
  for (std::size_t i = 1; i < mu.size(); ++i)
    if (std::abs(mu.weight(i) - w0) > 1e-14 * std::max(1.0, w0)) return false;
  return true;
}

}  // namespace detail

/**
 * @brief Quadratic Wasserstein distance between the probability views of two clouds.
 *
 * Exact in one dimension (quantile coupling) and for equal-size uniform
 * clouds up to `assignment_cap` atoms (optimal assignment). Everything else
 * uses the sliced distance, rescaled by sqrt(n) so that it is exact for a
 * pair of Dirac masses; the method is reported in the result.
 */
inline W2Result wasserstein2(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                             const W2Options& opts = {}) {
  if (!(mu.mass() > 0.0) || !(nu.mass() > 0.0))
    throw ZeroMassError("wasserstein2: both measures need positive mass");
  if (mu.dim() != nu.dim()) throw DimensionMismatch("wasserstein2: dimension mismatch");
  const int n = mu.dim();
  if (n == 1) {
    const Vec e = Vec::Ones(1);
    const double w2 = detail::w2_squared_1d(detail::projected(mu, e), detail::projected(nu, e));
    return {std::sqrt(std::max(0.0, w2)), W2Method::quantile_1d, 0};
  }
  if (mu.size() == nu.size() && mu.size() <= opts.assignment_cap && detail::uniform_weights(mu) &&
      detail::uniform_weights(nu)) {
    const std::size_t k = mu.size();
    std::vector<double> cost(k * k);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) cost[i * k + j] = (mu.point(i) - nu.point(j)).squaredNorm();
    const double total = detail::assignment_cost(cost, k);
    return {std::sqrt(std::max(0.0, total / static_cast<double>(k))), W2Method::assignment, 0};
  }
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> gauss;
  double acc = 0.0;
  for (int p = 0; p < opts.projections; ++p) {
    Vec dir(n);
    for (int j = 0; j < n; ++j) dir(j) = gauss(rng);
    dir.normalize();
    acc += detail::w2_squared_1d(detail::projected(mu, dir), detail::projected(nu, dir));
  }
  const double sw2 = static_cast<double>(n) * acc / static_cast<double>(opts.projections);
  return {std::sqrt(std::max(0.0, sw2)), W2Method::sliced, opts.projections};
}

}  // namespace mvf
