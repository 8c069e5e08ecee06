#pragma once

#include "mvf/errors.hpp"
#include "mvf/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

namespace mvf {

/**
 * @brief Finite weighted point cloud in R^n.
 *
 * Stands for an element of P_2(R^n) when the mass is one and for a finite
 * measure in M(R^n) otherwise. Weights are nonnegative but need not sum to
 * one. The object is immutable; mass, mean and second moment are cached at
 * construction so that mean-field coefficients can read them in O(1).
 */
class EmpiricalMeasure {
 public:
  EmpiricalMeasure() = default;

  /// `points` is row-major (size() x dim).
  EmpiricalMeasure(int dim, std::vector<double> points, std::vector<double> weights)
      : dim_(dim), points_(std::move(points)), weights_(std::move(weights)) {
    if (dim < 1 || dim > kMaxDim) throw InvalidArgument("EmpiricalMeasure: unsupported dimension");
    if (points_.size() != weights_.size() * static_cast<std::size_t>(dim))
      throw DimensionMismatch("EmpiricalMeasure: points/weights size mismatch");
    for (double w : weights_)
      if (!(w >= 0.0) || !std::isfinite(w))
        throw InvalidArgument("EmpiricalMeasure: weights must be finite and nonnegative");
    refresh_moments();
  }

  /// Uniform weights 1/N.
  static EmpiricalMeasure uniform(int dim, std::vector<double> points) {
    const std::size_t count = points.size() / static_cast<std::size_t>(dim);
    std::vector<double> w(count, count ? 1.0 / static_cast<double>(count) : 0.0);
    return EmpiricalMeasure(dim, std::move(points), std::move(w));
  }

  static EmpiricalMeasure dirac(const Vec& x, double weight = 1.0) {
    std::vector<double> p(x.data(), x.data() + x.size());
    return EmpiricalMeasure(static_cast<int>(x.size()), std::move(p), {weight});
  }

  int dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return weights_.size(); }
  double mass() const noexcept { return mass_; }
  double weight(std::size_t i) const { return weights_[i]; }
  Vec point(std::size_t i) const { return row_of(points_, i, dim_); }
  std::span<const double> points() const noexcept { return points_; }
  std::span<const double> weights() const noexcept { return weights_; }

  /// Weighted mean of the probability view. Zero vector when the mass vanishes.
  const Vec& mean() const noexcept { return mean_; }
  /// Second moment ||mu||_2^2 of the probability view.
  double second_moment() const noexcept { return second_moment_; }
  /// ||mu||_2 as used in the growth hypotheses.
  double moment_norm() const noexcept { return std::sqrt(second_moment_); }

  /// Sum_i w_i f(x_i).
  template <class F>
  double integrate(F&& f) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < size(); ++i) acc += weights_[i] * f(point(i));
    return acc;
  }

  /// Rescaled copy with unit mass.
  EmpiricalMeasure as_probability() const {
    if (!(mass_ > 0.0)) throw ZeroMassError("as_probability: measure has zero mass");
    std::vector<double> w(weights_);
    for (double& x : w) x /= mass_;
    return EmpiricalMeasure(dim_, points_, std::move(w));
  }

  EmpiricalMeasure scaled(double factor) const {
    std::vector<double> w(weights_);
    for (double& x : w) x *= factor;
    return EmpiricalMeasure(dim_, points_, std::move(w));
  }

  /// Push-forward by a map applied to every atom.
  template <class Map>
  EmpiricalMeasure pushed_forward(Map&& map) const {
    std::vector<double> p(points_.size());
    for (std::size_t i = 0; i < size(); ++i) store_row(p, i, map(point(i)));
    return EmpiricalMeasure(dim_, std::move(p), weights_);
  }

 private:
  void refresh_moments() {
    mass_ = std::accumulate(weights_.begin(), weights_.end(), 0.0);
    mean_ = Vec::Zero(dim_);
    second_moment_ = 0.0;
    if (!(mass_ > 0.0)) return;
    for (std::size_t i = 0; i < size(); ++i) {
      const Vec x = point(i);
      mean_ += weights_[i] * x;
      second_moment_ += weights_[i] * x.squaredNorm();
    }
    mean_ /= mass_;
    second_moment_ /= mass_;
  }

  int dim_ = 1;
  std::vector<double> points_;
  std::vector<double> weights_;
  double mass_ = 0.0;
  Vec mean_ = Vec::Zero(1);
  double second_moment_ = 0.0;
};

}  // namespace mvf
