#pragma once

#include "mvf/empirical_measure.hpp"
#include "mvf/errors.hpp"
#include "mvf/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <functional>
#include <optional>
#include <string>

namespace mvf {

using VectorField = std::function<Vec(double t, const Vec& x, const EmpiricalMeasure& mu)>;
using MatrixField = std::function<Mat(double t, const Vec& x, const EmpiricalMeasure& mu)>;
using TimeMatrix = std::function<Mat(double t)>;

enum class NoiseMode {
  /// dX = b1 dt + s0 dW + s1 dV,  dY = b2 dt + s2 dV
  signal_correlated,
  /// dX = b1 dt + s1 dV,  dY = b2 dt + S2 dV + S3 dW  with S2 S2' + S3 S3' = I
  sensor_correlated,
};

inline const char* to_string(NoiseMode m) {
  return m == NoiseMode::signal_correlated ? "signal-correlated" : "sensor-correlated";
}

/// User-declared hypothesis constants on [0, T]; unset entries are not screened.
struct DeclaredConstants {
  std::optional<double> lipschitz;        // L1': b1, s0, s1 in state and W2
  std::optional<double> growth;           // K1: |b1|^2+|s0|^2+|s1|^2 <= K1 (1+|x|+|mu|_2)^2
  std::optional<double> bound;            // K1': |b1|+|s0|+|s1| <= K1'
  std::optional<double> obs_bound;        // K2: |b2|, |s2(t)|, |s2^-1| <= K2
  std::optional<double> obs_lipschitz;    // L3: b2 in state and W2
};

/**
 * @brief Coefficients of a McKean-Vlasov signal-observation system.
 *
 * Callables must be safe to invoke concurrently. In sensor-correlated mode
 * `b1`, `sigma1` and `b2` hold the checked coefficients, `sigma0` is ignored,
 * `sigma2` must return the identity and the constant mixing matrices live in
 * `sensor_mix_v` (m x m) and `sensor_mix_w` (m x d). Call finalize() once
 * after filling the fields.
 */
struct CoefficientSet {
  std::string name;
  int n = 1;
  int d = 1;
  int m = 1;
  NoiseMode mode = NoiseMode::signal_correlated;
  VectorField b1;
  MatrixField sigma0;
  MatrixField sigma1;
  VectorField b2;
  TimeMatrix sigma2;
  Mat sensor_mix_v;
  Mat sensor_mix_w;
  DeclaredConstants constants;
  /// True when some coefficient reads its measure argument.
  bool distribution_dependent = false;
  double sigma2_condition_cap = 1e8;

  // Derived by finalize(): sqrt(I - S2' S2), the loading of the part of V invisible to Y.
  Mat sensor_orth_root;
  bool finalized = false;

  /// Dimension of the particle noise that is independent of the observation.
  int independent_noise_dim() const { return mode == NoiseMode::signal_correlated ? d : m; }

  void finalize() {
    if (n < 1 || n > kMaxDim || d < 1 || d > kMaxDim || m < 1 || m > kMaxDim)
      throw InvalidArgument("CoefficientSet: dimensions must lie in [1, " + std::to_string(kMaxDim) + "]");
    if (!b1 || !sigma1 || !b2 || !sigma2) throw InvalidArgument("CoefficientSet: missing coefficient");
    if (mode == NoiseMode::signal_correlated && !sigma0)
      throw InvalidArgument("CoefficientSet: sigma0 required in signal-correlated mode");
    if (mode == NoiseMode::sensor_correlated) {
      if (sensor_mix_v.rows() != m || sensor_mix_v.cols() != m || sensor_mix_w.rows() != m ||
          sensor_mix_w.cols() != d)
        throw DimensionMismatch("CoefficientSet: sensor mixing matrices have wrong shape");
      const Mat gram = sensor_mix_v * sensor_mix_v.transpose() + sensor_mix_w * sensor_mix_w.transpose();
      const double err = (gram - Mat::Identity(m, m)).cwiseAbs().maxCoeff();
      if (err > 1e-12)
        throw InvalidArgument("CoefficientSet: sensor mixing violates S2 S2' + S3 S3' = I (error " +
                              std::to_string(err) + ")");
      const Mat orth = Mat::Identity(m, m) - sensor_mix_v.transpose() * sensor_mix_v;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(0.5 * (orth + orth.transpose())));
      Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
      sensor_orth_root = Mat(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
    }
    finalized = true;
  }

  void require_finalized() const {
    if (!finalized) throw InvalidArgument("CoefficientSet '" + name + "' used before finalize()");
  }
};

/// sigma0 sigma0' + sigma1 sigma1' (signal mode) or sigma1 sigma1' (sensor mode).
inline Mat diffusion_sum(const CoefficientSet& c, double t, const Vec& x, const EmpiricalMeasure& mu) {
  const Mat s1 = c.sigma1(t, x, mu);
  Mat a = s1 * s1.transpose();
  if (c.mode == NoiseMode::signal_correlated) {
    const Mat s0 = c.sigma0(t, x, mu);
    a += s0 * s0.transpose();
  }
  return a;
}

/// Loading of the observation innovation in the signal: sigma1, or sigma1 S2' in sensor mode.
inline Mat correlated_loading(const CoefficientSet& c, double t, const Vec& x, const EmpiricalMeasure& mu) {
  if (c.mode == NoiseMode::signal_correlated) return c.sigma1(t, x, mu);
  return c.sigma1(t, x, mu) * c.sensor_mix_v.transpose();
}

/// Loading of the particle-private noise: sigma0, or sigma1 sqrt(I - S2' S2) in sensor mode.
inline Mat independent_loading(const CoefficientSet& c, double t, const Vec& x, const EmpiricalMeasure& mu) {
  if (c.mode == NoiseMode::signal_correlated) return c.sigma0(t, x, mu);
  return c.sigma1(t, x, mu) * c.sensor_orth_root;
}

/// sigma2(t)^{-1}, refusing matrices whose condition number exceeds the configured cap.
inline Mat observation_inverse(const CoefficientSet& c, double t) {
  const Mat s2 = c.sigma2(t);
  if (s2.rows() != c.m || s2.cols() != c.m) throw DimensionMismatch("sigma2 has wrong shape");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd{Eigen::MatrixXd(s2)};
  const auto& sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  if (!(smin > 0.0) || smax / smin > c.sigma2_condition_cap)
    throw SingularMatrixError("sigma2(t) is singular or ill-conditioned at t = " + std::to_string(t));
  return s2.inverse();
}

}  // namespace mvf
