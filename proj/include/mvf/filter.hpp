#pragma once

#include "mvf/coefficients.hpp"
#include "mvf/functionals.hpp"
#include "mvf/generators.hpp"
#include "mvf/io.hpp"
#include "mvf/parallel.hpp"
#include "mvf/random.hpp"
#include "mvf/sde.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace mvf {

/**
 * @brief Weighted particle representation of the unnormalized filter.
 *
 * The measure is (1/N) sum_i exp(log_weights[i]) delta_{x_i}. `labels[i]`
 * selects the noise stream of slot i, so permuting atoms together with
 * their labels leaves every trajectory unchanged.
 */
struct FilterState {
  int dim = 1;
  double time = 0.0;
  std::vector<double> particles;
  std::vector<double> log_weights;
  std::vector<std::uint64_t> labels;

  std::size_t size() const { return log_weights.size(); }
  Vec particle(std::size_t i) const { return row_of(particles, i, dim); }

  double max_log_weight() const {
    return log_weights.empty() ? -std::numeric_limits<double>::infinity()
                               : *std::max_element(log_weights.begin(), log_weights.end());
  }

  double log_mass() const {
    const double top = max_log_weight();
    if (!std::isfinite(top)) return -std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (double lw : log_weights) acc += std::exp(lw - top);
    return top + std::log(acc / static_cast<double>(size()));
  }

  double mass() const { return std::exp(log_mass()); }

  /// Probability weights exp(lw_i) / sum_j exp(lw_j), computed with a max shift.
  std::vector<double> normalized_weights() const {
    const double top = max_log_weight();
    if (!std::isfinite(top)) throw ZeroMassError("FilterState: zero mass");
    std::vector<double> w(size());
    double acc = 0.0;
    for (std::size_t i = 0; i < size(); ++i) acc += (w[i] = std::exp(log_weights[i] - top));
    for (double& x : w) x /= acc;
    return w;
  }

  double ess() const {
    const auto w = normalized_weights();
    double s2 = 0.0;
    for (double x : w) s2 += x * x;
    return 1.0 / s2;
  }

  /// The unnormalized filter as a finite measure.
  EmpiricalMeasure measure() const {
    std::vector<double> w(size());
    const double inv = 1.0 / static_cast<double>(size());
    for (std::size_t i = 0; i < size(); ++i) w[i] = std::exp(log_weights[i]) * inv;
    return EmpiricalMeasure(dim, particles, std::move(w));
  }

  /// The normalized filter Lambda_t.
  EmpiricalMeasure normalized() const { return EmpiricalMeasure(dim, particles, normalized_weights()); }
};

/// Unit-weight state on given atoms, labelled 0..N-1.
inline FilterState state_from_points(int dim, std::vector<double> points) {
  FilterState s;
  s.dim = dim;
  s.particles = std::move(points);
  const std::size_t N = s.particles.size() / static_cast<std::size_t>(dim);
  s.log_weights.assign(N, 0.0);
  s.labels.resize(N);
  std::iota(s.labels.begin(), s.labels.end(), std::uint64_t{0});
  return s;
}

/// N i.i.d. draws from `law`; particle i uses stream (seed, filter_init, first_label + i).
inline FilterState sample_initial_state(const InitialLaw& law, std::size_t N, std::uint64_t seed,
                                        std::uint64_t first_label = 0) {
  if (N == 0) throw InvalidArgument("sample_initial_state: need at least one particle");
  FilterState s;
  s.dim = law.dim();
  s.particles.resize(N * static_cast<std::size_t>(s.dim));
  s.log_weights.assign(N, 0.0);
  s.labels.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    s.labels[i] = first_label + i;
    auto rng = make_stream(seed, StreamTag::filter_init, s.labels[i]);
    store_row(s.particles, i, law.sample(rng));
  }
  return s;
}

enum class Resampling { none, systematic };

struct FilterConfig {
  Resampling resampling = Resampling::none;
  /// Resample when ESS / N falls below this threshold.
  double ess_threshold = 0.5;
  std::vector<TestFunction> record;
  /// Seed of the particle noise streams.
  std::uint64_t seed = 1;
  bool keep_states = false;
  double blowup_guard = 1e12;
  int threads = 1;

  void validate() const {
    if (!(ess_threshold > 0.0 && ess_threshold <= 1.0))
      throw InvalidArgument("FilterConfig: ESS threshold must lie in (0, 1]");
  }
};

namespace detail {

/// Lowest log weight for which exp() still yields a normal double.
inline constexpr double kLogUnderflow = -700.0;

inline std::size_t step_index(double t, double dt) { return static_cast<std::size_t>(std::llround(t / dt)); }

}  // namespace detail

/**
 * @brief One Euler step of the particle Zakai filter under the reference measure.
 *
 * dX = (b1 - A h) dt + A dVtilde + B dZ,  dlog w = h.dVtilde - |h|^2 dt / 2,
 * where A is the loading of the observation noise in the signal and B the
 * loading of the particle-private noise (see correlated_loading and
 * independent_loading). `noise` holds the private increments, N x r.
 */
inline FilterState zakai_step(const CoefficientSet& c, const EmpiricalMeasure& law_t, const FilterState& state,
                              const Vec& dVtilde, std::span<const double> noise, double dt, int threads = 1,
                              double blowup_guard = 1e12) {
  c.require_finalized();
  const std::size_t N = state.size();
  const auto r = static_cast<std::size_t>(c.independent_noise_dim());
  if (noise.size() != N * r) throw DimensionMismatch("zakai_step: private noise must be N x r");
  if (dVtilde.size() != c.m) throw DimensionMismatch("zakai_step: innovation dimension");
  const double t = state.time;
  const Mat s2inv = observation_inverse(c, t);
  const std::size_t step = detail::step_index(t, dt) + 1;
  FilterState out;
  out.dim = state.dim;
  out.time = t + dt;
  out.labels = state.labels;
  out.particles.resize(state.particles.size());
  out.log_weights.resize(N);
  parallel_for(N, threads, [&](std::size_t i) {
    const Vec x = state.particle(i);
    const Vec h = observation_drift(c, s2inv, t, x, law_t);
    const Mat a = correlated_loading(c, t, x, law_t);
    const Mat b = independent_loading(c, t, x, law_t);
    Vec dz(static_cast<Eigen::Index>(r));
    for (std::size_t j = 0; j < r; ++j) dz(static_cast<Eigen::Index>(j)) = noise[i * r + j];
    const Vec xn = x + (c.b1(t, x, law_t) - a * h) * dt + a * dVtilde + b * dz;
    detail::guard_state(xn, blowup_guard, step);
    store_row(out.particles, i, xn);
    out.log_weights[i] = state.log_weights[i] + h.dot(dVtilde) - 0.5 * h.squaredNorm() * dt;
  });
  if (!(out.max_log_weight() > detail::kLogUnderflow)) throw MassUnderflowError(step);
  return out;
}

/// zakai_step for the correlated-sensor system; dUtilde = dY since sigma2 = I there.
inline FilterState sensor_variant_step(const CoefficientSet& c, const EmpiricalMeasure& law_t,
                                       const FilterState& state, const Vec& dUtilde, std::span<const double> noise,
                                       double dt, int threads = 1) {
  if (c.mode != NoiseMode::sensor_correlated) throw InvalidArgument("sensor_variant_step: coefficient set is not in sensor mode");
  const Mat gram = c.sensor_mix_v * c.sensor_mix_v.transpose() + c.sensor_mix_w * c.sensor_mix_w.transpose();
  if ((gram - Mat::Identity(c.m, c.m)).cwiseAbs().maxCoeff() > 1e-12)
    throw InvalidArgument("sensor_variant_step: S2 S2' + S3 S3' = I violated");
  return zakai_step(c, law_t, state, dUtilde, noise, dt, threads);
}

/// <Lambda_t, phi> = <mu_t, phi> / <mu_t, 1>.
inline double ks_normalize(const FilterState& state, const TestFunction& phi) {
  if (!std::isfinite(state.max_log_weight())) throw ZeroMassError("ks_normalize: zero mass");
  const auto w = state.normalized_weights();
  double acc = 0.0;
  for (std::size_t i = 0; i < state.size(); ++i) acc += w[i] * phi.value(state.particle(i));
  return acc;
}

/// Systematic resampling; positions move, labels stay with their slots, weights become the mass.
inline FilterState systematic_resample(const FilterState& s, double u01) {
  const std::size_t N = s.size();
  const auto w = s.normalized_weights();
  const double lm = s.log_mass();
  FilterState out = s;
  double cum = w[0];
  std::size_t src = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const double u = (u01 + static_cast<double>(i)) / static_cast<double>(N);
    while (u > cum && src + 1 < N) cum += w[++src];
    store_row(out.particles, i, s.particle(src));
  }
  std::fill(out.log_weights.begin(), out.log_weights.end(), lm);
  return out;
}

/// Recorded output of a particle filter run on a fixed innovation record.
struct FilterRun {
  int n = 1, m = 1;
  double dt = 0.0;
  std::size_t steps = 0;
  std::vector<double> dVtilde;          // steps x m
  std::vector<double> mass;             // steps+1
  std::vector<double> log_mass;         // steps+1
  std::vector<std::string> tracked_labels;
  std::vector<double> tracked;          // (steps+1) x F, unnormalized <mu_t, phi_f>
  std::vector<double> normalized_mean;  // (steps+1) x n
  std::vector<FilterState> states;      // steps+1 when keep_states
  std::size_t resample_count = 0;

  double time(std::size_t k) const { return static_cast<double>(k) * dt; }
  Vec vtilde_increment(std::size_t k) const { return row_of(dVtilde, k, m); }
  double tracked_value(std::size_t k, std::size_t f) const { return tracked[k * tracked_labels.size() + f]; }
  Vec mean(std::size_t k) const { return row_of(normalized_mean, k, n); }
};

using FilterObserver = std::function<void(std::size_t step, const FilterState&)>;

/**
 * @brief Runs the particle Zakai filter over an innovation record.
 *
 * Private noise of slot i comes from stream (cfg.seed, filter_noise, labels[i]),
 * built with the dyadic bridge so that time-step refinements are coupled.
 */
inline FilterRun run_zakai(const CoefficientSet& c, const LawFlow& law, const std::vector<double>& dVtilde,
                           const FilterState& init, const FilterConfig& cfg, const FilterObserver& observer = {}) {
  c.require_finalized();
  cfg.validate();
  if (init.dim != c.n) throw DimensionMismatch("run_zakai: state dimension");
  if (init.labels.size() != init.size()) throw DimensionMismatch("run_zakai: labels");
  const auto m = static_cast<std::size_t>(c.m);
  if (dVtilde.size() % m != 0) throw DimensionMismatch("run_zakai: innovation record shape");
  const std::size_t K = dVtilde.size() / m;
  if (law.steps() < K) throw InvalidArgument("run_zakai: law flow shorter than the innovation record");
  const double dt = law.dt;
  const std::size_t N = init.size();
  const auto r = static_cast<std::size_t>(c.independent_noise_dim());

  std::vector<std::vector<double>> paths(N);
  parallel_for(N, cfg.threads, [&](std::size_t i) {
    paths[i] = brownian_path(cfg.seed, StreamTag::filter_noise, init.labels[i], static_cast<int>(r), K, dt);
  });

  FilterRun run;
  run.n = c.n;
  run.m = c.m;
  run.dt = dt;
  run.steps = K;
  run.dVtilde = dVtilde;
  for (const auto& f : cfg.record) run.tracked_labels.push_back(f.label);
  auto record = [&](std::size_t k, const FilterState& s) {
    const double lm = s.log_mass();
    run.log_mass.push_back(lm);
    run.mass.push_back(std::exp(lm));
    const auto w = s.normalized_weights();
    Vec mean = Vec::Zero(c.n);
    std::vector<double> acc(cfg.record.size(), 0.0);
    for (std::size_t i = 0; i < N; ++i) {
      const Vec x = s.particle(i);
      mean += w[i] * x;
      for (std::size_t f = 0; f < cfg.record.size(); ++f) acc[f] += w[i] * cfg.record[f].value(x);
    }
    for (double a : acc) run.tracked.push_back(a * std::exp(lm));
    for (int j = 0; j < c.n; ++j) run.normalized_mean.push_back(mean(j));
    if (cfg.keep_states) run.states.push_back(s);
    if (observer) observer(k, s);
  };

  FilterState cur = init;
  cur.time = 0.0;
  record(0, cur);
  std::vector<double> noise(N * r);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < N; ++i)
      std::copy_n(paths[i].begin() + static_cast<std::ptrdiff_t>(k * r), r, noise.begin() + static_cast<std::ptrdiff_t>(i * r));
    cur = zakai_step(c, law.at(k), cur, run.vtilde_increment(k), noise, dt, cfg.threads, cfg.blowup_guard);
    if (cfg.resampling == Resampling::systematic && cur.ess() < cfg.ess_threshold * static_cast<double>(N)) {
      auto rng = make_stream(cfg.seed, StreamTag::resample, k);
      cur = systematic_resample(cur, std::uniform_real_distribution<double>(0.0, 1.0)(rng));
      ++run.resample_count;
    }
    record(k + 1, cur);
  }
  return run;
}

namespace detail {

inline void require_diagnostic_run(const FilterRun& run, const char* who) {
  if (run.resample_count > 0)
    throw InvalidArgument(std::string(who) + ": run was resampled; weak-form diagnostics need untouched weights");
  if (run.states.size() != run.steps + 1)
    throw InvalidArgument(std::string(who) + ": run must be recorded with keep_states");
}

}  // namespace detail

struct MassProcessReport {
  std::vector<double> integral;  // 1 + int <mu,1><Lambda,h>.dVtilde, left-point
  std::vector<double> residual;  // |<mu_t,1> - integral|
  double sup = 0.0;
};

/**
 * @brief Compares the filter mass with the stochastic integral it must satisfy.
 */
inline MassProcessReport mass_process_check(const CoefficientSet& c, const LawFlow& law, const FilterRun& run) {
  detail::require_diagnostic_run(run, "mass_process_check");
  MassProcessReport rep;
  double integral = run.mass[0];
  rep.integral.push_back(integral);
  rep.residual.push_back(0.0);
  for (std::size_t k = 0; k < run.steps; ++k) {
    const double t = run.time(k);
    const Mat s2inv = observation_inverse(c, t);
    const EmpiricalMeasure mu = run.states[k].measure();
    const Vec dv = run.vtilde_increment(k);
    integral += mu.integrate([&](const Vec& x) { return observation_drift(c, s2inv, t, x, law.at(k)).dot(dv); });
    rep.integral.push_back(integral);
    const double res = std::abs(run.mass[k + 1] - integral);
    rep.residual.push_back(res);
    rep.sup = std::max(rep.sup, res);
  }
  return rep;
}

struct ResidualSeries {
  std::vector<double> series;
  double terminal = 0.0;  // |R(T)|
};

/**
 * @brief Weak-form residual of the distribution-dependent Zakai equation for one phi.
 *
 * R(t_k) = <mu_k,phi> - <mu_0,phi> - sum_{j<k} [ <mu_j, L phi> dt
 *          + <mu_j, phi h + grad phi . A> . dVtilde_j ].
 */
inline ResidualSeries zakai_residual(const CoefficientSet& c, const LawFlow& law, const FilterRun& run,
                                     const TestFunction& phi) {
  detail::require_diagnostic_run(run, "zakai_residual");
  ResidualSeries out;
  const double start = run.states[0].measure().integrate(phi.value);
  double acc = 0.0;
  out.series.push_back(0.0);
  for (std::size_t k = 0; k < run.steps; ++k) {
    const double t = run.time(k);
    const EmpiricalMeasure& law_k = law.at(k);
    const EmpiricalMeasure mu = run.states[k].measure();
    const Mat s2inv = observation_inverse(c, t);
    const Vec dv = run.vtilde_increment(k);
    acc += mu.integrate([&](const Vec& x) {
      const Vec h = observation_drift(c, s2inv, t, x, law_k);
      const Vec gamma = phi.value(x) * h + correlated_loading(c, t, x, law_k).transpose() * phi.grad(x);
      return generator_Lcal(c, t, phi, law_k, x) * run.dt + gamma.dot(dv);
    });
    const double now = run.states[k + 1].measure().integrate(phi.value);
    out.series.push_back(now - start - acc);
  }
  out.terminal = std::abs(out.series.back());
  return out;
}

struct KSResidualReport {
  std::vector<double> lhs;          // <Lambda_t, F(., L_t)>
  std::vector<double> reconstruction;
  std::vector<double> residual;
  double terminal = 0.0;
};

/**
 * @brief Both sides of the Kushner-Stratonovich equation along a filter run.
 *
 * Lambda is the normalized particle cloud, the measure slot of F is the law
 * flow, and dVbar = dVtilde - <Lambda, h> dt.
 */
inline KSResidualReport ks_residual(const CoefficientSet& c, const LawFlow& law, const FilterRun& run,
                                    const CylindricalStateFunctional& F) {
  detail::require_diagnostic_run(run, "ks_residual");
  if (!F.has_derivatives()) throw InvalidArgument("ks_residual: functional lacks derivative callbacks");
  KSResidualReport rep;
  auto value_at = [&](std::size_t k) {
    const EmpiricalMeasure lam = run.states[k].normalized();
    const EmpiricalMeasure& law_k = law.at(k);
    const Coords z = F.coords(law_k);
    return lam.integrate([&](const Vec& x) { return F.f(x, z); });
  };
  const double start = value_at(0);
  double recon = start;
  rep.lhs.push_back(start);
  rep.reconstruction.push_back(recon);
  rep.residual.push_back(0.0);
  for (std::size_t k = 0; k < run.steps; ++k) {
    const double t = run.time(k);
    const EmpiricalMeasure& law_k = law.at(k);
    const EmpiricalMeasure lam = run.states[k].normalized();
    const Mat s2inv = observation_inverse(c, t);
    const Coords z = F.coords(law_k);
    const Coords terms = inner_generator_terms(c, t, F, law_k);
    double lf = 0.0, fval = 0.0;
    Vec lh = Vec::Zero(c.m), lfh = Vec::Zero(c.m), lgrad = Vec::Zero(c.m);
    for (std::size_t i = 0; i < lam.size(); ++i) {
      const double w = lam.weight(i);
      if (w == 0.0) continue;
      const Vec x = lam.point(i);
      const Vec h = observation_drift(c, s2inv, t, x, law_k);
      const double fx = F.f(x, z);
      lf += w * generator_Lbb(c, t, F, law_k, x, z, terms);
      fval += w * fx;
      lh += w * h;
      lfh += w * fx * h;
      lgrad += w * (correlated_loading(c, t, x, law_k).transpose() * F.f_x(x, z));
    }
    const Vec dvbar = run.vtilde_increment(k) - lh * run.dt;
    recon += lf * run.dt + (lgrad + lfh - fval * lh).dot(dvbar);
    const double now = value_at(k + 1);
    rep.lhs.push_back(now);
    rep.reconstruction.push_back(recon);
    rep.residual.push_back(now - recon);
  }
  rep.terminal = std::abs(rep.residual.back());
  return rep;
}

/// Linear-Gaussian system dX = AX dt + s0 dW + s1 dV, dY = CX dt + s2 dV, X_0 ~ N(m0, P0).
struct LinearSpec {
  Mat A, sigma0, sigma1, C, sigma2;
  Vec m0;
  Mat P0;
};

struct KalmanBucyState {
  Vec mean;
  Mat cov;
};

namespace detail {

inline Mat riccati_rhs(const LinearSpec& s, const Mat& Rinv, const Mat& P) {
  const Mat cross = s.sigma1 * s.sigma2.transpose();
  const Mat gain = (P * s.C.transpose() + cross) * Rinv;
  const Mat R = s.sigma2 * s.sigma2.transpose();
  return s.A * P + P * s.A.transpose() + s.sigma0 * s.sigma0.transpose() + s.sigma1 * s.sigma1.transpose() -
         gain * R * gain.transpose();
}

}  // namespace detail

/**
 * @brief Kalman-Bucy filter with correlated signal/observation noise.
 *
 * Gain K = (P C' + s1 s2') R^{-1}; the Riccati equation is integrated by RK4
 * substeps, the mean by an Euler step on the observation increments.
 */
inline std::vector<KalmanBucyState> kalman_bucy(const LinearSpec& s, const std::vector<double>& Y, double dt,
                                                int substeps = 4) {
  const auto m = s.C.rows();
  if (Y.size() % static_cast<std::size_t>(m) != 0) throw DimensionMismatch("kalman_bucy: Y shape");
  const std::size_t K = Y.size() / static_cast<std::size_t>(m) - 1;
  const Mat R = s.sigma2 * s.sigma2.transpose();
  const Mat Rinv = R.inverse();
  const Mat cross = s.sigma1 * s.sigma2.transpose();
  std::vector<KalmanBucyState> out;
  out.reserve(K + 1);
  Vec mean = s.m0;
  Mat P = s.P0;
  out.push_back({mean, P});
  const double h = dt / substeps;
  for (std::size_t k = 0; k < K; ++k) {
    const Mat gain = (P * s.C.transpose() + cross) * Rinv;
    const Vec dy = row_of(Y, k + 1, static_cast<int>(m)) - row_of(Y, k, static_cast<int>(m));
    mean = mean + s.A * mean * dt + gain * (dy - s.C * mean * dt);
    for (int q = 0; q < substeps; ++q) {
      const Mat k1 = detail::riccati_rhs(s, Rinv, P);
      const Mat k2 = detail::riccati_rhs(s, Rinv, P + 0.5 * h * k1);
      const Mat k3 = detail::riccati_rhs(s, Rinv, P + 0.5 * h * k2);
      const Mat k4 = detail::riccati_rhs(s, Rinv, P + h * k3);
      P += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    P = 0.5 * (P + P.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es{Eigen::MatrixXd(P)};
    if (!P.allFinite() || es.eigenvalues().minCoeff() < -1e-10)
      throw NotPositiveDefinite(k + 1, "min eigenvalue " + std::to_string(es.eigenvalues().minCoeff()));
    out.push_back({mean, P});
  }
  return out;
}

/// CSV columns: t, mass, one column per tracked function, mean1..meann.
inline void write_filter_csv(std::ostream& out, const FilterRun& run) {
  CsvWriter w(out);
  std::vector<std::string> cols{"t", "mass"};
  for (const auto& l : run.tracked_labels) cols.push_back("phi:" + l);
  for (auto& s : indexed("mean", run.n)) cols.push_back(s);
  w.header(cols);
  const std::size_t F = run.tracked_labels.size();
  for (std::size_t k = 0; k <= run.steps; ++k) {
    std::vector<double> row{run.time(k), run.mass[k]};
    for (std::size_t f = 0; f < F; ++f) row.push_back(run.tracked_value(k, f));
    for (int j = 0; j < run.n; ++j) row.push_back(run.normalized_mean[k * static_cast<std::size_t>(run.n) + static_cast<std::size_t>(j)]);
    w.row(row);
  }
}

}  // namespace mvf
