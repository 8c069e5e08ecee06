#pragma once

#include "mvf/coefficients.hpp"
#include "mvf/filter.hpp"
#include "mvf/functionals.hpp"
#include "mvf/io.hpp"
#include "mvf/parallel.hpp"
#include "mvf/random.hpp"
#include "mvf/sde.hpp"
#include "mvf/test_function.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mvf {

// ---------------------------------------------------------------------------
// Functional battery: a finite, versioned library of (g, phi) combinations.

inline constexpr int kBatteryVersion = 1;

struct LibraryEntry {
  std::string id;
  TestFunction phi;
};

struct BatteryFunctional {
  std::string id;
  std::vector<std::size_t> phi_index;  // into the battery library
  OuterFunction g;
};

struct FunctionalBattery {
  int version = kBatteryVersion;
  int n = 1;
  std::vector<LibraryEntry> library;
  std::vector<BatteryFunctional> functionals;

  std::vector<TestFunction> phis() const {
    std::vector<TestFunction> out;
    for (const auto& e : library) out.push_back(e.phi);
    return out;
  }

  MeasureFunctional functional(std::size_t i) const {
    const auto& f = functionals.at(i);
    MeasureFunctional G;
    G.id = f.id;
    G.g = f.g;
    for (std::size_t j : f.phi_index) G.phis.push_back(library.at(j).phi);
    return G;
  }
};

namespace detail {

inline Vec json_vec(const nlohmann::json& j, int n, const std::string& what) {
  if (!j.is_array() || static_cast<int>(j.size()) != n) throw ConfigError(what + ": expected an array of length " + std::to_string(n));
  Vec v(n);
  for (int a = 0; a < n; ++a) v(a) = j.at(static_cast<std::size_t>(a)).get<double>();
  return v;
}

inline Coords json_coords(const nlohmann::json& j, std::size_t k, const std::string& what) {
  if (!j.is_array() || j.size() != k) throw ConfigError(what + ": expected " + std::to_string(k) + " entries");
  Coords v(static_cast<Eigen::Index>(k));
  for (std::size_t a = 0; a < k; ++a) v(static_cast<Eigen::Index>(a)) = j.at(a).get<double>();
  return v;
}

inline TestFunction library_function(const nlohmann::json& e, int n) {
  const std::string kind = e.at("kind").get<std::string>();
  const std::string id = e.at("id").get<std::string>();
  TestFunction f;
  if (kind == "bump")
    f = bump(json_vec(e.at("center"), n, id), e.at("radius").get<double>(), e.value("amplitude", 1.0));
  else if (kind == "gaussian")
    f = gaussian_fn(json_vec(e.at("center"), n, id), e.at("variance").get<double>(), e.value("amplitude", 1.0));
  else if (kind == "plateau")
    f = plateau(json_vec(e.at("center"), n, id), e.at("inner").get<double>(), e.at("outer").get<double>());
  else if (kind == "windowed_coordinate")
    f = windowed_coordinate(n, e.at("axis").get<int>(), e.at("inner").get<double>(), e.at("outer").get<double>());
  else if (kind == "constant")
    f = constant_fn(n, e.at("value").get<double>());
  else
    throw ConfigError("battery: unknown test-function kind '" + kind + "'");
  f.label = id;
  return f;
}

inline OuterFunction outer_function(const nlohmann::json& o, std::size_t k) {
  const std::string kind = o.at("kind").get<std::string>();
  if (kind == "affine") return outer_affine(json_coords(o.at("a"), k, "affine.a"), o.value("b", 0.0));
  if (kind == "tanh")
    return outer_tanh(json_coords(o.at("a"), k, "tanh.a"), o.value("b", 0.0), o.value("c", 1.0));
  if (kind == "gauss") return outer_gauss(json_coords(o.at("m"), k, "gauss.m"), o.at("s").get<double>(), o.value("c", 1.0));
  if (kind == "quadratic") {
    const auto& rows = o.at("q");
    if (!rows.is_array() || rows.size() != k) throw ConfigError("quadratic.q: expected a k x k matrix");
    CoordMat q(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
    for (std::size_t r = 0; r < k; ++r) q.row(static_cast<Eigen::Index>(r)) = json_coords(rows.at(r), k, "quadratic.q").transpose();
    return outer_quadratic(q, json_coords(o.at("a"), k, "quadratic.a"));
  }
  throw ConfigError("battery: unknown outer-function kind '" + kind + "'");
}

}  // namespace detail

inline FunctionalBattery parse_battery(const nlohmann::json& j) {
  FunctionalBattery b;
  if (j.value("schema", std::string{}) != "mvf-functional-battery")
    throw ConfigError("battery: missing or wrong schema tag");
  b.version = j.at("version").get<int>();
  if (b.version != kBatteryVersion)
    throw ConfigError("battery: unsupported manifest version " + std::to_string(b.version));
  b.n = j.at("dimension").get<int>();
  for (const auto& e : j.at("library")) b.library.push_back({e.at("id").get<std::string>(), detail::library_function(e, b.n)});
  for (const auto& f : j.at("functionals")) {
    BatteryFunctional bf;
    bf.id = f.at("id").get<std::string>();
    for (const auto& pid : f.at("phis")) {
      const std::string want = pid.get<std::string>();
      std::size_t idx = b.library.size();
      for (std::size_t q = 0; q < b.library.size(); ++q)
        if (b.library[q].id == want) idx = q;
      if (idx == b.library.size()) throw ConfigError("battery: functional '" + bf.id + "' refers to unknown '" + want + "'");
      bf.phi_index.push_back(idx);
    }
    if (bf.phi_index.empty() || bf.phi_index.size() > static_cast<std::size_t>(kMaxCoords))
      throw ConfigError("battery: functional '" + bf.id + "' has an unsupported arity");
    bf.g = detail::outer_function(f.at("outer"), bf.phi_index.size());
    bf.g.label = f.at("outer").at("kind").get<std::string>();
    b.functionals.push_back(std::move(bf));
  }
  return b;
}

/**
 * @brief State functional built from battery entry i:
 * F(x, mu) = g(phi_1(x), <mu, phi_2>, ..., <mu, phi_k>).
 */
inline CylindricalStateFunctional state_functional(const FunctionalBattery& b, std::size_t i) {
  const BatteryFunctional& bf = b.functionals.at(i);
  const TestFunction a = b.library.at(bf.phi_index[0]).phi;
  const OuterFunction g = bf.g;
  const auto k = static_cast<Eigen::Index>(bf.phi_index.size());
  CylindricalStateFunctional F;
  F.id = bf.id;
  for (std::size_t u = 1; u < bf.phi_index.size(); ++u) F.inner.push_back(b.library.at(bf.phi_index[u]).phi);
  auto full = [a, k](const Vec& x, const Coords& z) {
    Coords out(k);
    out(0) = a.value(x);
    out.tail(k - 1) = z;
    return out;
  };
  F.f = [=](const Vec& x, const Coords& z) { return g.value(full(x, z)); };
  F.f_x = [=](const Vec& x, const Coords& z) -> Vec { return g.grad(full(x, z))(0) * a.grad(x); };
  F.f_xx = [=](const Vec& x, const Coords& z) -> Mat {
    const Coords y = full(x, z);
    const Vec ga = a.grad(x);
    return g.hess(y)(0, 0) * (ga * ga.transpose()) + g.grad(y)(0) * a.hess(x);
  };
  F.f_z = [=](const Vec& x, const Coords& z) -> Coords { return g.grad(full(x, z)).tail(k - 1); };
  return F;
}

inline FunctionalBattery load_battery(const std::filesystem::path& path) {
  return parse_battery(nlohmann::json::parse(read_text(path)));
}

// ---------------------------------------------------------------------------
// Ensembles of filter runs, stored through their projections on a library.

struct EnsembleConfig {
  std::size_t M = 200;  // runs
  std::size_t N = 100;  // particles per run
  std::uint64_t seed = 1;
  int threads = 1;
};

/**
 * @brief Per-step projections of one run on a library phi_1..phi_k.
 *
 * Layouts are step-major: xi/beta (K+1) x k, gamma (K+1) x k x m,
 * iota (K+1) x k x k.
 */
struct RunProjection {
  std::vector<double> xi;         // <mu, phi_u>
  std::vector<double> beta;       // <mu, L phi_u>
  std::vector<double> gamma;      // <mu, phi_u h^l + grad phi_u . A^{.l}>
  std::vector<double> iota;       // covariation rate of xi due to the private particle noise
  std::vector<double> integrand;  // <mu, |b1| + |h|^2 + |s1|^2 + |s0 s0'|>
  std::vector<double> mass;
  std::vector<double> dVtilde;    // K x m
};

/// Empirical stand-in for the law of the filter process: M exchangeable runs.
struct LawEnsemble {
  int k = 0, m = 1;
  double dt = 0.0;
  std::size_t steps = 0;
  std::size_t N = 0;
  std::vector<std::string> library_ids;
  std::vector<RunProjection> runs;

  double xi(std::size_t run, std::size_t step, std::size_t u) const {
    return runs[run].xi[step * static_cast<std::size_t>(k) + u];
  }
};

namespace detail {

inline void project_state(const CoefficientSet& c, double t, const EmpiricalMeasure& law_t,
                          const std::vector<TestFunction>& lib, const FilterState& s, RunProjection& out) {
  const std::size_t k = lib.size();
  const auto m = static_cast<std::size_t>(c.m);
  const std::size_t off_x = out.xi.size();
  const std::size_t off_g = out.gamma.size();
  const std::size_t off_i = out.iota.size();
  out.xi.resize(off_x + k, 0.0);
  out.beta.resize(off_x + k, 0.0);
  out.gamma.resize(off_g + k * m, 0.0);
  out.iota.resize(off_i + k * k, 0.0);
  const Mat s2inv = observation_inverse(c, t);
  const bool signal = c.mode == NoiseMode::signal_correlated;
  const double invN = 1.0 / static_cast<double>(s.size());
  double integrand = 0.0;
  std::vector<Vec> priv(k);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double w = std::exp(s.log_weights[i]) * invN;
    if (w == 0.0) continue;
    const Vec x = s.particle(i);
    const Vec h = observation_drift(c, s2inv, t, x, law_t);
    const Vec b = c.b1(t, x, law_t);
    const Mat a = correlated_loading(c, t, x, law_t);
    const Mat bl = independent_loading(c, t, x, law_t);
    const Mat diff = diffusion_sum(c, t, x, law_t);
    const Mat s1 = c.sigma1(t, x, law_t);
    double integ = b.norm() + h.squaredNorm() + s1.squaredNorm();
    if (signal) {
      const Mat s0 = c.sigma0(t, x, law_t);
      integ += frob(s0 * s0.transpose());
    }
    integrand += w * integ;
    for (std::size_t u = 0; u < k; ++u) {
      const double v = lib[u].value(x);
      const Vec g = lib[u].grad(x);
      out.xi[off_x + u] += w * v;
      out.beta[off_x + u] += w * (g.dot(b) + 0.5 * lib[u].hess(x).cwiseProduct(diff).sum());
      const Vec gam = v * h + a.transpose() * g;
      for (std::size_t l = 0; l < m; ++l) out.gamma[off_g + u * m + l] += w * gam(static_cast<Eigen::Index>(l));
      priv[u] = bl.transpose() * g;
    }
    for (std::size_t u = 0; u < k; ++u)
      for (std::size_t v = 0; v < k; ++v) out.iota[off_i + u * k + v] += w * w * priv[u].dot(priv[v]);
  }
  out.integrand.push_back(integrand);
  out.mass.push_back(s.mass());
}

}  // namespace detail

/**
 * @brief Builds M independent filter runs driven by reference-measure innovations.
 *
 * Under the reference measure the innovation is itself a Brownian motion, so
 * each run draws dVtilde directly (stream reference_noise) together with its
 * own initial cloud and private particle noise. Run j depends only on
 * (cfg.seed, j), so ensembles of different sizes are nested.
 */
inline LawEnsemble build_law_ensemble(const CoefficientSet& c, const LawFlow& law, const InitialLaw& init,
                                      const std::vector<TestFunction>& library, const EnsembleConfig& cfg,
                                      std::size_t first_run = 0) {
  c.require_finalized();
  if (library.empty() || library.size() > static_cast<std::size_t>(kMaxCoords) * 2)
    throw InvalidArgument("build_law_ensemble: library must hold 1..16 functions");
  LawEnsemble ens;
  ens.k = static_cast<int>(library.size());
  ens.m = c.m;
  ens.dt = law.dt;
  ens.steps = law.steps();
  ens.N = cfg.N;
  for (const auto& f : library) ens.library_ids.push_back(f.label);
  ens.runs.resize(cfg.M);
  parallel_for(cfg.M, cfg.threads, [&](std::size_t j) {
    const std::uint64_t id = first_run + j;
    const std::vector<double> dv =
        brownian_path(derive_seed(cfg.seed, id, 3), StreamTag::reference_noise, 0, c.m, ens.steps, ens.dt);
    const FilterState init_state = sample_initial_state(init, cfg.N, derive_seed(cfg.seed, id, 1));
    FilterConfig fc;
    fc.seed = derive_seed(cfg.seed, id, 2);
    RunProjection& proj = ens.runs[j];
    proj.dVtilde = dv;
    run_zakai(c, law, dv, init_state, fc, [&](std::size_t step, const FilterState& s) {
      detail::project_state(c, law.time(step), law.at(step), library, s, proj);
    });
  });
  return ens;
}

struct FPEResidualReport {
  std::string id;
  std::vector<double> series;      // ensemble mean of R(t_k)
  std::vector<double> stderr_;     // its Monte-Carlo standard error
  double terminal = 0.0;           // |mean R(T)|
  double terminal_se = 0.0;
  /// Mean finite-N correction 1/2 d2g : iota integrated over [0, T]; reported, not subtracted.
  double particle_bias = 0.0;
  std::size_t runs = 0;
  bool pass = false;
};

namespace detail {

struct Moments {
  double mean = 0.0, se = 0.0;
};

inline Moments moments(const std::vector<double>& v) {
  Moments out;
  if (v.empty()) return out;
  const double M = static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += x;
  out.mean = s / M;
  if (v.size() < 2) return out;
  double ss = 0.0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  out.se = std::sqrt(ss / (M - 1.0) / M);
  return out;
}

inline bool within(const Moments& m, double sigmas, double extra = 0.0) {
  return std::abs(m.mean) <= sigmas * m.se + extra + 1e-12 * (1.0 + std::abs(m.mean));
}

/// Restricts a run's projections at one step to the functional's coordinates.
inline ProjectedCoefficients restrict_projection(const LawEnsemble& e, const RunProjection& r, std::size_t step,
                                                 const std::vector<std::size_t>& idx) {
  const auto k = static_cast<std::size_t>(e.k);
  const auto m = static_cast<std::size_t>(e.m);
  const auto q = static_cast<Eigen::Index>(idx.size());
  ProjectedCoefficients p{Coords(q), Coords(q), decltype(p.gamma)(q, e.m)};
  for (Eigen::Index a = 0; a < q; ++a) {
    const std::size_t u = idx[static_cast<std::size_t>(a)];
    p.xi(a) = r.xi[step * k + u];
    p.beta(a) = r.beta[step * k + u];
    for (std::size_t l = 0; l < m; ++l) p.gamma(a, static_cast<Eigen::Index>(l)) = r.gamma[(step * k + u) * m + l];
  }
  return p;
}

}  // namespace detail

/**
 * @brief Weak-form residual of the measure-valued Fokker-Planck equation for one G.
 *
 * Per run, r(t_k) = G(mu_k) - G(mu_0) - sum_{i<k} (L G)(mu_i) dt; the report
 * carries the ensemble mean with its standard error. Passes when |mean R(T)|
 * is within three standard errors.
 */
inline FPEResidualReport fpe_residual(const LawEnsemble& ens, const BatteryFunctional& G) {
  for (std::size_t u : G.phi_index)
    if (u >= static_cast<std::size_t>(ens.k)) throw InvalidArgument("fpe_residual: functional uses a phi outside the ensemble library");
  FPEResidualReport rep;
  rep.id = G.id;
  rep.runs = ens.runs.size();
  const std::size_t K = ens.steps;
  std::vector<std::vector<double>> per_step(K + 1, std::vector<double>(ens.runs.size()));
  std::vector<double> bias(ens.runs.size(), 0.0);
  const auto k = static_cast<std::size_t>(ens.k);
  for (std::size_t j = 0; j < ens.runs.size(); ++j) {
    const RunProjection& r = ens.runs[j];
    const double g0 = G.g.value(detail::restrict_projection(ens, r, 0, G.phi_index).xi);
    double acc = 0.0;
    per_step[0][j] = 0.0;
    for (std::size_t s = 0; s < K; ++s) {
      const ProjectedCoefficients p = detail::restrict_projection(ens, r, s, G.phi_index);
      acc += measure_generator_from_projection(G.g, p) * ens.dt;
      const CoordMat hess = G.g.hess(p.xi);
      double corr = 0.0;
      for (std::size_t a = 0; a < G.phi_index.size(); ++a)
        for (std::size_t b = 0; b < G.phi_index.size(); ++b)
          corr += hess(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) *
                  r.iota[s * k * k + G.phi_index[a] * k + G.phi_index[b]];
      bias[j] += 0.5 * corr * ens.dt;
      const double gk = G.g.value(detail::restrict_projection(ens, r, s + 1, G.phi_index).xi);
      per_step[s + 1][j] = gk - g0 - acc;
    }
  }
  for (std::size_t s = 0; s <= K; ++s) {
    const auto mo = detail::moments(per_step[s]);
    rep.series.push_back(mo.mean);
    rep.stderr_.push_back(mo.se);
  }
  rep.terminal = std::abs(rep.series.back());
  rep.terminal_se = rep.stderr_.back();
  rep.particle_bias = detail::moments(bias).mean;
  rep.pass = detail::within({rep.series.back(), rep.terminal_se}, 3.0);
  return rep;
}

/// Per-run terminal values r_j(T) of fpe_residual (for medians over seed groups).
inline std::vector<double> fpe_terminal_samples(const LawEnsemble& ens, const BatteryFunctional& G) {
  std::vector<double> out;
  const std::size_t K = ens.steps;
  for (const auto& r : ens.runs) {
    double acc = 0.0;
    for (std::size_t s = 0; s < K; ++s)
      acc += measure_generator_from_projection(G.g, detail::restrict_projection(ens, r, s, G.phi_index)) * ens.dt;
    out.push_back(G.g.value(detail::restrict_projection(ens, r, K, G.phi_index).xi) -
                  G.g.value(detail::restrict_projection(ens, r, 0, G.phi_index).xi) - acc);
  }
  return out;
}

struct IntegrabilityReport {
  double value = 0.0;
  double se = 0.0;
  double cap = 0.0;
  bool pass = false;
};

/// Ensemble estimate of int_0^T E <mu_r, |b1| + |h|^2 + |s1|^2 + |s0 s0'|> dr.
inline IntegrabilityReport integrability_check(const LawEnsemble& ens, double cap = 1e6) {
  std::vector<double> per_run;
  for (const auto& r : ens.runs) {
    double acc = 0.0;
    for (std::size_t s = 0; s < ens.steps; ++s) acc += r.integrand[s] * ens.dt;
    per_run.push_back(acc);
  }
  const auto mo = detail::moments(per_run);
  IntegrabilityReport rep{mo.mean, mo.se, cap, std::isfinite(mo.mean) && mo.mean <= cap};
  return rep;
}

struct ProjectedSdeReport {
  struct Entry {
    std::size_t u = 0, v = 0;
    double mean = 0.0, se = 0.0;
    double allowance = 0.0;  // dt and finite-N allowances (covariation only)
    bool pass = false;
  };
  std::vector<Entry> drift;
  std::vector<Entry> covariation;
  bool pass = false;
};

/**
 * @brief Martingale-problem fingerprint of the projections xi^u = <mu, phi_u>.
 *
 * Drift: per run D = sum_k (dxi^u - beta^u dt); its ensemble mean must vanish
 * at 3 sigma. Covariation: Q = sum_k dxi^u dxi^v - sum_k alpha^{uv} dt with
 * alpha = gamma gamma'; the mean must vanish within 3 sigma plus the
 * discretization allowance sum |beta^u beta^v| dt^2 and the finite-N allowance
 * sum |iota^{uv}| dt from the private particle noise.
 */
inline ProjectedSdeReport projected_sde_check(const LawEnsemble& ens, const std::vector<std::size_t>& idx) {
  if (idx.empty() || idx.size() > 6) throw InvalidArgument("projected_sde_check: use between 1 and 6 functions");
  for (std::size_t u : idx)
    if (u >= static_cast<std::size_t>(ens.k)) throw InvalidArgument("projected_sde_check: index outside library");
  const auto k = static_cast<std::size_t>(ens.k);
  const auto m = static_cast<std::size_t>(ens.m);
  const double dt = ens.dt;
  ProjectedSdeReport rep;
  rep.pass = true;
  for (std::size_t u : idx) {
    std::vector<double> d;
    for (const auto& r : ens.runs) {
      double acc = 0.0;
      for (std::size_t s = 0; s < ens.steps; ++s) acc += r.xi[(s + 1) * k + u] - r.xi[s * k + u] - r.beta[s * k + u] * dt;
      d.push_back(acc);
    }
    const auto mo = detail::moments(d);
    ProjectedSdeReport::Entry e{u, u, mo.mean, mo.se, 0.0, detail::within(mo, 3.0)};
    rep.pass = rep.pass && e.pass;
    rep.drift.push_back(e);
  }
  for (std::size_t a = 0; a < idx.size(); ++a) {
    for (std::size_t b = a; b < idx.size(); ++b) {
      const std::size_t u = idx[a], v = idx[b];
      std::vector<double> q;
      double allowance = 0.0;
      for (const auto& r : ens.runs) {
        double acc = 0.0, extra = 0.0;
        for (std::size_t s = 0; s < ens.steps; ++s) {
          const double du = r.xi[(s + 1) * k + u] - r.xi[s * k + u];
          const double dv = r.xi[(s + 1) * k + v] - r.xi[s * k + v];
          double alpha = 0.0;
          for (std::size_t l = 0; l < m; ++l) alpha += r.gamma[(s * k + u) * m + l] * r.gamma[(s * k + v) * m + l];
          acc += du * dv - alpha * dt;
          extra += std::abs(r.beta[s * k + u] * r.beta[s * k + v]) * dt * dt + std::abs(r.iota[s * k * k + u * k + v]) * dt;
        }
        q.push_back(acc);
        allowance += extra;
      }
      allowance /= static_cast<double>(ens.runs.size());
      const auto mo = detail::moments(q);
      ProjectedSdeReport::Entry e{u, v, mo.mean, mo.se, allowance, detail::within(mo, 3.0, allowance)};
      rep.pass = rep.pass && e.pass;
      rep.covariation.push_back(e);
    }
  }
  return rep;
}

}  // namespace mvf
