#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <vector>

namespace mvf {

/// Largest state/noise dimension supported by the stack-allocated vector types.
inline constexpr int kMaxDim = 4;
/// Largest number of inner test functions in a cylindrical functional.
inline constexpr int kMaxCoords = 8;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;
using Coords = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxCoords, 1>;
using CoordMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxCoords, kMaxCoords>;

inline Vec vec_from(std::span<const double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

inline Vec scalar_vec(double x) {
  Vec out(1);
  out(0) = x;
  return out;
}

inline Mat scalar_mat(double x) {
  Mat out(1, 1);
  out(0, 0) = x;
  return out;
}

/// Frobenius norm, the matrix norm used for every hypothesis bound.
inline double frob(const Mat& a) { return a.norm(); }

/// Row-major view of row `i` of a flat (rows x dim) buffer.
inline Vec row_of(std::span<const double> flat, std::size_t i, int dim) {
  Vec out(dim);
  for (int j = 0; j < dim; ++j) out(j) = flat[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(j)];
  return out;
}

inline void store_row(std::span<double> flat, std::size_t i, const Vec& v) {
  const auto dim = static_cast<std::size_t>(v.size());
  for (std::size_t j = 0; j < dim; ++j) flat[i * dim + j] = v(static_cast<Eigen::Index>(j));
}

}  // namespace mvf
