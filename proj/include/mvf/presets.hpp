#pragma once

#include "mvf/coefficients.hpp"
#include "mvf/errors.hpp"
#include "mvf/filter.hpp"
#include "mvf/sde.hpp"

#include "json.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace mvf {

/// A named scenario: coefficients, initial law and, for linear systems, the Kalman-Bucy spec.
struct Preset {
  std::string name;
  std::string description;
  CoefficientSet coeffs;
  InitialLaw init;
  std::optional<LinearSpec> linear;
  /// Stationary standard deviation of the signal, when known in closed form.
  std::optional<double> stationary_std;
  /// True when b1, sigma0, sigma1 are bounded (the Gronwall envelope applies).
  bool bounded = false;
};

namespace detail {

inline double param(const nlohmann::json& p, const char* key, double fallback) {
  if (!p.is_object() || !p.contains(key)) return fallback;
  return p.at(key).get<double>();
}

inline VectorField const_vec(double v) {
  return [v](double, const Vec&, const EmpiricalMeasure&) { return scalar_vec(v); };
}

inline MatrixField const_mat(double v) {
  return [v](double, const Vec&, const EmpiricalMeasure&) { return scalar_mat(v); };
}

inline TimeMatrix const_time_mat(double v) {
  return [v](double) { return scalar_mat(v); };
}

inline Preset scalar_linear(const std::string& name, const nlohmann::json& p, double s1_default) {
  const double a = param(p, "a", -1.0);
  const double s0 = param(p, "sigma0", 1.0);
  const double s1 = param(p, "sigma1", s1_default);
  const double cgain = param(p, "c", 1.0);
  const double s2 = param(p, "sigma2", 1.0);
  const double m0 = param(p, "m0", 0.0);
  const double p0 = param(p, "p0", 0.5);
  Preset pr;
  pr.name = name;
  pr.description = "scalar linear-Gaussian system dX = aX dt + s0 dW + s1 dV, dY = cX dt + s2 dV";
  auto& c = pr.coeffs;
  c.name = name;
  c.b1 = [a](double, const Vec& x, const EmpiricalMeasure&) -> Vec { return a * x; };
  c.sigma0 = const_mat(s0);
  c.sigma1 = const_mat(s1);
  c.b2 = [cgain](double, const Vec& x, const EmpiricalMeasure&) -> Vec { return cgain * x; };
  c.sigma2 = const_time_mat(s2);
  c.constants.lipschitz = std::max({std::abs(a), std::abs(s0), std::abs(s1)});
  c.constants.obs_lipschitz = std::abs(cgain);
  c.finalize();
  pr.init = InitialLaw::gaussian(scalar_vec(m0), scalar_mat(p0));
  pr.linear = LinearSpec{scalar_mat(a), scalar_mat(s0), scalar_mat(s1), scalar_mat(cgain), scalar_mat(s2),
                         scalar_vec(m0), scalar_mat(p0)};
  if (a < 0.0) pr.stationary_std = std::sqrt((s0 * s0 + s1 * s1) / (-2.0 * a));
  return pr;
}

}  // namespace detail

inline std::vector<std::string> preset_names() {
  return {"linear-gaussian", "correlated-linear", "mean-field-linear", "tanh-observation", "sensor-correlated",
          "constant-h"};
}

/**
 * @brief Builds a shipped scenario; `params` overrides its numeric defaults.
 *
 *  linear-gaussian    a=-1, sigma0=1, sigma1=0, c=1, sigma2=1, X0 ~ N(0, 0.5)
 *  correlated-linear  as above with sigma1=0.5
 *  mean-field-linear  b1 = a x + abar mean(mu), sigma0=0.5, b2 = c x
 *  tanh-observation   b1 = -k tanh(x) + kbar tanh(mean mu), b2 = g tanh(x) + gbar tanh(mean mu)
 *  sensor-correlated  tanh dynamics in the correlated-sensor form, S2 = 0.6, S3 = 0.8
 *  constant-h         b1 = -x, b2 = h (constant)
 */
inline Preset make_preset(const std::string& name, const nlohmann::json& params = nlohmann::json::object()) {
  using detail::param;
  if (name == "linear-gaussian") return detail::scalar_linear(name, params, 0.0);
  if (name == "correlated-linear") return detail::scalar_linear(name, params, 0.5);

  Preset pr;
  pr.name = name;
  auto& c = pr.coeffs;
  c.name = name;
  if (name == "mean-field-linear") {
    const double a = param(params, "a", -1.0);
    const double abar = param(params, "abar", 0.5);
    const double s0 = param(params, "sigma0", 0.5);
    const double cg = param(params, "c", 1.0);
    pr.description = "b1 = a x + abar mean(mu); linear observation";
    c.distribution_dependent = true;
    c.b1 = [a, abar](double, const Vec& x, const EmpiricalMeasure& mu) -> Vec { return a * x + abar * mu.mean(); };
    c.sigma0 = detail::const_mat(s0);
    c.sigma1 = detail::const_mat(param(params, "sigma1", 0.0));
    c.b2 = [cg](double, const Vec& x, const EmpiricalMeasure&) -> Vec { return cg * x; };
    c.sigma2 = detail::const_time_mat(1.0);
    c.constants.lipschitz = std::abs(a) + std::abs(abar);
    c.finalize();
    pr.init = InitialLaw::gaussian(scalar_vec(param(params, "m0", 1.0)), scalar_mat(param(params, "p0", 0.25)));
    return pr;
  }
  if (name == "tanh-observation" || name == "sensor-correlated") {
    const double k = param(params, "drift_gain", 2.0);
    const double kbar = param(params, "drift_mean_gain", 0.5);
    const double g = param(params, "obs_gain", 1.5);
    const double gbar = param(params, "obs_mean_gain", 0.3);
    const bool sensor = name == "sensor-correlated";
    const double s0 = sensor ? 0.0 : param(params, "sigma0", 0.8);
    const double s1 = param(params, "sigma1", sensor ? 0.7 : 0.4);
    pr.description = sensor ? "bounded tanh dynamics, correlated sensor noise U = S2 V + S3 W"
                            : "bounded tanh dynamics and observation";
    pr.bounded = true;
    c.distribution_dependent = kbar != 0.0 || gbar != 0.0;
    c.b1 = [k, kbar](double, const Vec& x, const EmpiricalMeasure& mu) -> Vec {
      return scalar_vec(-k * std::tanh(x(0)) + kbar * std::tanh(mu.mean()(0)));
    };
    c.sigma0 = detail::const_mat(s0);
    c.sigma1 = detail::const_mat(s1);
    c.b2 = [g, gbar](double, const Vec& x, const EmpiricalMeasure& mu) -> Vec {
      return scalar_vec(g * std::tanh(x(0)) + gbar * std::tanh(mu.mean()(0)));
    };
    c.sigma2 = detail::const_time_mat(1.0);
    if (sensor) {
      c.mode = NoiseMode::sensor_correlated;
      const double s2 = param(params, "S2", 0.6);
      c.sensor_mix_v = scalar_mat(s2);
      c.sensor_mix_w = scalar_mat(param(params, "S3", std::sqrt(1.0 - s2 * s2)));
    }
    c.constants.lipschitz = std::max(std::abs(k), std::abs(kbar));
    c.constants.bound = std::abs(k) + std::abs(kbar) + std::abs(s0) + std::abs(s1);
    c.constants.growth = std::pow(std::abs(k) + std::abs(kbar), 2) + s0 * s0 + s1 * s1;
    c.constants.obs_bound = std::max(1.0, std::abs(g) + std::abs(gbar));
    c.constants.obs_lipschitz = std::max(std::abs(g), std::abs(gbar));
    c.finalize();
    pr.init = InitialLaw::gaussian(scalar_vec(param(params, "m0", 0.0)), scalar_mat(param(params, "p0", 0.5)));
    return pr;
  }
  if (name == "constant-h") {
    const double h = param(params, "h", 0.8);
    const double s0 = param(params, "sigma0", 0.5);
    const double s1 = param(params, "sigma1", 0.3);
    pr.description = "b1 = -x with a constant observation drift h";
    c.b1 = [](double, const Vec& x, const EmpiricalMeasure&) -> Vec { return -x; };
    c.sigma0 = detail::const_mat(s0);
    c.sigma1 = detail::const_mat(s1);
    c.b2 = detail::const_vec(h);
    c.sigma2 = detail::const_time_mat(1.0);
    c.constants.lipschitz = 1.0;
    c.constants.obs_bound = std::max(1.0, std::abs(h));
    c.constants.obs_lipschitz = 0.0;
    c.finalize();
    pr.init = InitialLaw::gaussian(scalar_vec(0.0), scalar_mat(param(params, "p0", 0.5)));
    return pr;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

}  // namespace mvf
