#pragma once

#include "mvf/coefficients.hpp"
#include "mvf/generators.hpp"
#include "mvf/io.hpp"
#include "mvf/parallel.hpp"
#include "mvf/random.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace mvf {

enum class Scheme { euler_maruyama };

/// Point mass, Gaussian or uniform-box initial law; all have moments of every order.
struct InitialLaw {
  enum class Kind { point, gaussian, uniform };
  Kind kind = Kind::point;
  Vec mean = Vec::Zero(1);
  Mat cov = Mat::Zero(1, 1);
  double half_width = 0.0;
  Mat root = Mat::Zero(1, 1);

  int dim() const { return static_cast<int>(mean.size()); }

  static InitialLaw point(const Vec& x) {
    InitialLaw l;
    l.kind = Kind::point;
    l.mean = x;
    l.cov = l.root = Mat::Zero(x.size(), x.size());
    return l;
  }

  static InitialLaw gaussian(const Vec& mean, const Mat& cov) {
    if (cov.rows() != mean.size() || cov.cols() != mean.size())
      throw DimensionMismatch("InitialLaw::gaussian: covariance shape");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(0.5 * (cov + cov.transpose())));
    if (es.eigenvalues().minCoeff() < -1e-12) throw InvalidArgument("InitialLaw::gaussian: covariance not PSD");
    InitialLaw l;
    l.kind = Kind::gaussian;
    l.mean = mean;
    l.cov = cov;
    l.root = Mat(es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                 es.eigenvectors().transpose());
    return l;
  }

  static InitialLaw uniform(const Vec& center, double half_width) {
    InitialLaw l;
    l.kind = Kind::uniform;
    l.mean = center;
    l.half_width = half_width;
    l.cov = Mat::Identity(center.size(), center.size()) * (half_width * half_width / 3.0);
    l.root = Mat::Zero(center.size(), center.size());
    return l;
  }

  Vec sample(std::mt19937_64& rng) const {
    const auto n = mean.size();
    switch (kind) {
      case Kind::point:
        return mean;
      case Kind::gaussian: {
        std::normal_distribution<double> g;
        Vec z(n);
        for (Eigen::Index j = 0; j < n; ++j) z(j) = g(rng);
        return mean + root * z;
      }
      case Kind::uniform: {
        std::uniform_real_distribution<double> u(-half_width, half_width);
        Vec z(n);
        for (Eigen::Index j = 0; j < n; ++j) z(j) = mean(j) + u(rng);
        return z;
      }
    }
    return mean;
  }
};

struct SimConfig {
  double T = 1.0;
  double dt = 1e-2;
  int N_law = 500;
  std::uint64_t seed = 1;
  Scheme scheme = Scheme::euler_maruyama;
  InitialLaw init = InitialLaw::point(Vec::Zero(1));
  /// Coordinates beyond this magnitude abort the simulation.
  double blowup_guard = 1e12;
  /// Stream index of the first law particle; lets a large ensemble be split into pieces.
  std::uint64_t particle_offset = 0;
  int threads = 1;

  std::size_t steps() const {
    if (!(dt > 0.0) || !(T > 0.0)) throw InvalidArgument("SimConfig: T and dt must be positive");
    const double k = T / dt;
    const double kr = std::round(k);
    if (std::abs(k - kr) > 1e-9 * std::max(1.0, k)) throw InvalidArgument("SimConfig: T/dt must be an integer");
    return static_cast<std::size_t>(kr);
  }

  void validate() const {
    (void)steps();
    if (N_law < 2) throw InvalidArgument("SimConfig: N_law must be at least 2");
  }
};

/// Empirical approximation of t -> L(X_t) on the simulation grid.
struct LawFlow {
  double dt = 0.0;
  std::vector<EmpiricalMeasure> measures;

  std::size_t steps() const { return measures.empty() ? 0 : measures.size() - 1; }
  double time(std::size_t k) const { return static_cast<double>(k) * dt; }
  const EmpiricalMeasure& at(std::size_t k) const {
    if (k >= measures.size()) throw InvalidArgument("LawFlow: step outside the simulated grid");
    return measures[k];
  }
  double max_second_moment() const {
    double m = 0.0;
    for (const auto& mu : measures) m = std::max(m, mu.second_moment());
    return m;
  }
};

namespace detail {

inline void guard_state(const Vec& x, double guard, std::size_t step) {
  for (Eigen::Index j = 0; j < x.size(); ++j)
    if (!std::isfinite(x(j)) || std::abs(x(j)) > guard)
      throw BlowUpError(step, "|x| exceeded " + std::to_string(guard));
}

/// Noise width of a signal particle: (W, V) in signal mode, V alone in sensor mode.
inline int signal_noise_dim(const CoefficientSet& c) {
  return c.mode == NoiseMode::signal_correlated ? c.d + c.m : c.m;
}

/// Euler step of the signal equation with raw (W, V) increments packed in `noise`.
inline Vec signal_step(const CoefficientSet& c, double t, const Vec& x, const EmpiricalMeasure& mu,
                       const double* noise, double dt) {
  Vec out = x + c.b1(t, x, mu) * dt;
  if (c.mode == NoiseMode::signal_correlated) {
    Vec dw(c.d), dv(c.m);
    for (int j = 0; j < c.d; ++j) dw(j) = noise[j];
    for (int j = 0; j < c.m; ++j) dv(j) = noise[c.d + j];
    out += c.sigma0(t, x, mu) * dw + c.sigma1(t, x, mu) * dv;
  } else {
    Vec dv(c.m);
    for (int j = 0; j < c.m; ++j) dv(j) = noise[j];
    out += c.sigma1(t, x, mu) * dv;
  }
  return out;
}

}  // namespace detail

/**
 * @brief Mean-field particle approximation of the unconditional law flow.
 *
 * Particle i (stream index offset + i) draws its initial state and its noise
 * from its own streams; at every step all particles see the empirical measure
 * of the whole ensemble in place of L(X_t).
 */
inline LawFlow simulate_law_flow(const CoefficientSet& c, const SimConfig& cfg) {
  c.require_finalized();
  cfg.validate();
  if (cfg.init.dim() != c.n) throw DimensionMismatch("simulate_law_flow: initial law dimension");
  const std::size_t K = cfg.steps();
  const auto N = static_cast<std::size_t>(cfg.N_law);
  const int r = detail::signal_noise_dim(c);
  const auto ru = static_cast<std::size_t>(r);

  std::vector<double> pts(N * static_cast<std::size_t>(c.n));
  std::vector<std::vector<double>> noise(N);
  parallel_for(N, cfg.threads, [&](std::size_t i) {
    const std::uint64_t id = cfg.particle_offset + i;
    auto rng = make_stream(cfg.seed, StreamTag::law_init, id);
    store_row(pts, i, cfg.init.sample(rng));
    noise[i] = brownian_path(cfg.seed, StreamTag::law_noise, id, r, K, cfg.dt);
  });

  LawFlow flow;
  flow.dt = cfg.dt;
  flow.measures.reserve(K + 1);
  flow.measures.push_back(EmpiricalMeasure::uniform(c.n, pts));
  std::vector<double> next(pts.size());
  for (std::size_t k = 0; k < K; ++k) {
    const double t = static_cast<double>(k) * cfg.dt;
    const EmpiricalMeasure& mu = flow.measures.back();
    parallel_for(N, cfg.threads, [&](std::size_t i) {
      const Vec x = detail::signal_step(c, t, row_of(pts, i, c.n), mu, noise[i].data() + k * ru, cfg.dt);
      detail::guard_state(x, cfg.blowup_guard, k + 1);
      store_row(next, i, x);
    });
    pts.swap(next);
    flow.measures.push_back(EmpiricalMeasure::uniform(c.n, pts));
  }
  return flow;
}

/**
 * @brief One realization of the signal-observation pair with its Girsanov weight.
 *
 * Increments are stored row-major per step. `dU` is the Brownian motion driving
 * the observation (V in signal mode, S2 V + S3 W in sensor mode), and
 * `dVtilde` = dU + h dt, so that dY = sigma2 dVtilde.
 */
struct TruthPath {
  int n = 1, m = 1, d = 1;
  double dt = 0.0;
  std::size_t steps = 0;
  std::vector<double> X;        // (steps+1) x n
  std::vector<double> Y;        // (steps+1) x m
  std::vector<double> dW;       // steps x d
  std::vector<double> dV;       // steps x m
  std::vector<double> dU;       // steps x m
  std::vector<double> dVtilde;  // steps x m
  std::vector<double> log_gamma_inv;  // steps+1
  std::vector<double> gamma_inv;      // steps+1
  std::vector<double> gamma;          // steps+1

  double time(std::size_t k) const { return static_cast<double>(k) * dt; }
  Vec x(std::size_t k) const { return row_of(X, k, n); }
  Vec y(std::size_t k) const { return row_of(Y, k, m); }
  Vec vtilde_increment(std::size_t k) const { return row_of(dVtilde, k, m); }
};

/**
 * @brief Simulates (X, Y) with fresh noise independent of the law ensemble.
 *
 * Gamma^{-1} is carried in log form, log G^{-1}_{k+1} = log G^{-1}_k - h.dU - |h|^2 dt / 2,
 * so it stays positive and Gamma * Gamma^{-1} = 1 on the grid.
 */
inline TruthPath simulate_truth(const CoefficientSet& c, const LawFlow& law, const SimConfig& cfg) {
  c.require_finalized();
  const std::size_t K = cfg.steps();
  if (law.steps() < K) throw InvalidArgument("simulate_truth: law flow shorter than the horizon");
  if (cfg.init.dim() != c.n) throw DimensionMismatch("simulate_truth: initial law dimension");
  TruthPath tp;
  tp.n = c.n;
  tp.m = c.m;
  tp.d = c.d;
  tp.dt = cfg.dt;
  tp.steps = K;
  tp.dW = brownian_path(cfg.seed, StreamTag::truth_noise, 0, c.d, K, cfg.dt, 0);
  tp.dV = brownian_path(cfg.seed, StreamTag::truth_noise, 0, c.m, K, cfg.dt, kMaxDim);
  tp.X.assign((K + 1) * static_cast<std::size_t>(c.n), 0.0);
  tp.Y.assign((K + 1) * static_cast<std::size_t>(c.m), 0.0);
  tp.dU.assign(K * static_cast<std::size_t>(c.m), 0.0);
  tp.dVtilde.assign(K * static_cast<std::size_t>(c.m), 0.0);
  tp.log_gamma_inv.assign(K + 1, 0.0);

  auto rng = make_stream(cfg.seed, StreamTag::truth_init, 0);
  Vec x = cfg.init.sample(rng);
  store_row(tp.X, 0, x);
  Vec y = Vec::Zero(c.m);
  const bool sensor = c.mode == NoiseMode::sensor_correlated;
  std::vector<double> packed(static_cast<std::size_t>(detail::signal_noise_dim(c)));
  for (std::size_t k = 0; k < K; ++k) {
    const double t = static_cast<double>(k) * cfg.dt;
    const EmpiricalMeasure& mu = law.at(k);
    const Vec dw = row_of(tp.dW, k, c.d);
    const Vec dv = row_of(tp.dV, k, c.m);
    const Mat s2 = c.sigma2(t);
    const Vec h = eval_h(c, t, x, mu);
    const Vec du = sensor ? Vec(c.sensor_mix_v * dv + c.sensor_mix_w * dw) : dv;

    if (sensor) {
      for (int j = 0; j < c.m; ++j) packed[static_cast<std::size_t>(j)] = dv(j);
    } else {
      for (int j = 0; j < c.d; ++j) packed[static_cast<std::size_t>(j)] = dw(j);
      for (int j = 0; j < c.m; ++j) packed[static_cast<std::size_t>(c.d + j)] = dv(j);
    }
    const Vec b2 = c.b2(t, x, mu);
    const Vec x_next = detail::signal_step(c, t, x, mu, packed.data(), cfg.dt);
    detail::guard_state(x_next, cfg.blowup_guard, k + 1);
    y += b2 * cfg.dt + s2 * du;
    store_row(tp.dU, k, du);
    store_row(tp.dVtilde, k, Vec(du + h * cfg.dt));
    tp.log_gamma_inv[k + 1] = tp.log_gamma_inv[k] - (h.dot(du) + 0.5 * h.squaredNorm() * cfg.dt);
    x = x_next;
    store_row(tp.X, k + 1, x);
    store_row(tp.Y, k + 1, y);
  }
  tp.gamma_inv.resize(K + 1);
  tp.gamma.resize(K + 1);
  for (std::size_t k = 0; k <= K; ++k) {
    tp.gamma_inv[k] = std::exp(tp.log_gamma_inv[k]);
    tp.gamma[k] = std::exp(-tp.log_gamma_inv[k]);
  }
  return tp;
}

/// dVtilde_k = sigma2(t_k)^{-1} dY_k; Y is (steps+1) x m row-major.
inline std::vector<double> innovation_from_observation(const CoefficientSet& c, const std::vector<double>& Y,
                                                       double dt) {
  const auto m = static_cast<std::size_t>(c.m);
  if (Y.size() % m != 0 || Y.size() < 2 * m) throw DimensionMismatch("innovation_from_observation: Y shape");
  const std::size_t K = Y.size() / m - 1;
  std::vector<double> out(K * m);
  for (std::size_t k = 0; k < K; ++k) {
    const double t = static_cast<double>(k) * dt;
    (void)observation_inverse(c, t);  // conditioning check
    Eigen::PartialPivLU<Eigen::MatrixXd> lu{Eigen::MatrixXd(c.sigma2(t))};
    const Vec dy = row_of(Y, k + 1, c.m) - row_of(Y, k, c.m);
    store_row(out, k, Vec(lu.solve(Eigen::VectorXd(dy))));
  }
  return out;
}

/// CSV columns: t, X1..Xn, Y1..Ym, Gamma, Vtilde1..Vtildem (Vtilde cumulative).
inline void write_truth_csv(std::ostream& out, const TruthPath& tp) {
  CsvWriter w(out);
  std::vector<std::string> cols{"t"};
  for (auto& s : indexed("X", tp.n)) cols.push_back(s);
  for (auto& s : indexed("Y", tp.m)) cols.push_back(s);
  cols.push_back("Gamma");
  for (auto& s : indexed("Vtilde", tp.m)) cols.push_back(s);
  w.header(cols);
  Vec vt = Vec::Zero(tp.m);
  for (std::size_t k = 0; k <= tp.steps; ++k) {
    if (k > 0) vt += tp.vtilde_increment(k - 1);
    std::vector<double> row{tp.time(k)};
    for (int j = 0; j < tp.n; ++j) row.push_back(tp.X[k * static_cast<std::size_t>(tp.n) + static_cast<std::size_t>(j)]);
    for (int j = 0; j < tp.m; ++j) row.push_back(tp.Y[k * static_cast<std::size_t>(tp.m) + static_cast<std::size_t>(j)]);
    row.push_back(tp.gamma[k]);
    for (int j = 0; j < tp.m; ++j) row.push_back(vt(j));
    w.row(row);
  }
}

/// CSV columns: t, mean1..meann, second_moment of the law ensemble.
inline void write_law_csv(std::ostream& out, const LawFlow& law) {
  CsvWriter w(out);
  const int n = law.measures.empty() ? 1 : law.measures.front().dim();
  std::vector<std::string> cols{"t"};
  for (auto& s : indexed("mean", n)) cols.push_back(s);
  cols.push_back("second_moment");
  w.header(cols);
  for (std::size_t k = 0; k < law.measures.size(); ++k) {
    std::vector<double> row{law.time(k)};
    const auto& mu = law.measures[k];
    for (int j = 0; j < n; ++j) row.push_back(mu.mean()(j));
    row.push_back(mu.second_moment());
    w.row(row);
  }
}

}  // namespace mvf
