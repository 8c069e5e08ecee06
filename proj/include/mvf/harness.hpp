#pragma once

#include "mvf/filter.hpp"
#include "mvf/fpe.hpp"
#include "mvf/hypotheses.hpp"
#include "mvf/io.hpp"
#include "mvf/mollifier.hpp"
#include "mvf/presets.hpp"
#include "mvf/sde.hpp"
#include "mvf/uniqueness.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#ifndef MVF_VERSION
#define MVF_VERSION "unknown"
#endif
#ifndef MVF_SOURCE_DIR
#define MVF_SOURCE_DIR "."
#endif

namespace mvf {

using nlohmann::json;

inline const std::vector<std::string>& known_diagnostics() {
  static const std::vector<std::string> names = {"kalman",        "mass",       "zakai",      "ks",
                                                 "fpe",           "projected_sde", "integrability", "gronwall",
                                                 "hypotheses",    "uniqueness"};
  return names;
}

/// Everything that determines an experiment; serialized as canonical JSON and hashed.
struct ExperimentConfig {
  std::string preset = "linear-gaussian";
  json params = json::object();
  double T = 1.0;
  double dt = 0.01;
  int N_law = 500;
  int N_filt = 1000;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string resampling = "none";
  double ess_threshold = 0.5;
  std::vector<std::string> diagnostics = {"mass", "zakai", "ks"};
  std::string battery = "battery/functional_battery.json";
  std::size_t ensemble_M = 200;
  std::size_t ensemble_N = 100;
  int gronwall_runs = 20;
  double gronwall_cap = 50.0;
  std::vector<std::size_t> projected_indices = {1, 2};
  json mollifier = json::object();  // optional epsilon / L / dx overrides
  std::map<std::string, double> tolerances = default_tolerances();
  double max_work = 4e9;  // particle-steps budget
  json sweep = json::object();

  static std::map<std::string, double> default_tolerances() {
    return {{"kalman", 0.05}, {"mass", 0.05}, {"zakai", 0.05}, {"ks", 0.02},
            {"sigmas", 3.0}, {"integrability_cap", 1e6}};
  }

  double tol(const std::string& key) const {
    const auto it = tolerances.find(key);
    if (it == tolerances.end()) throw ConfigError("missing tolerance '" + key + "'");
    return it->second;
  }

  bool wants(const std::string& d) const { return std::find(diagnostics.begin(), diagnostics.end(), d) != diagnostics.end(); }

  Resampling resampling_mode() const {
    if (resampling == "none") return Resampling::none;
    if (resampling == "systematic") return Resampling::systematic;
    throw ConfigError("resampling must be 'none' or 'systematic'");
  }

  void validate() const {
    for (const auto& d : diagnostics)
      if (std::find(known_diagnostics().begin(), known_diagnostics().end(), d) == known_diagnostics().end())
        throw ConfigError("unknown diagnostic '" + d + "'");
    if (!(T > 0.0) || !(dt > 0.0)) throw ConfigError("T and dt must be positive");
    if (N_law < 2 || N_filt < 1) throw ConfigError("N_law must be >= 2 and N_filt >= 1");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (resampling_mode() != Resampling::none && (wants("mass") || wants("zakai") || wants("ks")))
      throw ConfigError("mass, zakai and ks diagnostics need resampling = none");
    if (ensemble_M < 2 || ensemble_N < 1) throw ConfigError("ensemble needs M >= 2 and N >= 1");
    SimConfig s;
    s.T = T;
    s.dt = dt;
    (void)s.steps();
  }
};

inline void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"preset", c.preset},
           {"params", c.params},
           {"T", c.T},
           {"dt", c.dt},
           {"N_law", c.N_law},
           {"N_filt", c.N_filt},
           {"seed", c.seed},
           {"threads", c.threads},
           {"resampling", c.resampling},
           {"ess_threshold", c.ess_threshold},
           {"diagnostics", c.diagnostics},
           {"battery", c.battery},
           {"ensemble", {{"M", c.ensemble_M}, {"N", c.ensemble_N}}},
           {"gronwall", {{"runs", c.gronwall_runs}, {"cap", c.gronwall_cap}}},
           {"projected_indices", c.projected_indices},
           {"mollifier", c.mollifier},
           {"tolerances", c.tolerances},
           {"max_work", c.max_work},
           {"sweep", c.sweep}};
}

/// Reads a config; absent keys keep their defaults, unknown keys are rejected.
inline void from_json(const json& j, ExperimentConfig& c) {
  static const std::set<std::string> keys = {"preset", "params",   "T",          "dt",          "N_law",
                                             "N_filt", "seed",     "threads",    "resampling",  "ess_threshold",
                                             "diagnostics", "battery", "ensemble", "gronwall", "projected_indices",
                                             "mollifier", "tolerances", "max_work", "sweep",    "description"};
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!keys.count(k)) throw ConfigError("unknown config key '" + k + "'");
  try {
    c.preset = j.value("preset", c.preset);
    if (j.contains("params")) c.params = j.at("params");
    c.T = j.value("T", c.T);
    c.dt = j.value("dt", c.dt);
    c.N_law = j.value("N_law", c.N_law);
    c.N_filt = j.value("N_filt", c.N_filt);
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    c.resampling = j.value("resampling", c.resampling);
    c.ess_threshold = j.value("ess_threshold", c.ess_threshold);
    if (j.contains("diagnostics")) c.diagnostics = j.at("diagnostics").get<std::vector<std::string>>();
    c.battery = j.value("battery", c.battery);
    if (j.contains("ensemble")) {
      c.ensemble_M = j.at("ensemble").value("M", c.ensemble_M);
      c.ensemble_N = j.at("ensemble").value("N", c.ensemble_N);
    }
    if (j.contains("gronwall")) {
      c.gronwall_runs = j.at("gronwall").value("runs", c.gronwall_runs);
      c.gronwall_cap = j.at("gronwall").value("cap", c.gronwall_cap);
    }
    if (j.contains("projected_indices")) c.projected_indices = j.at("projected_indices").get<std::vector<std::size_t>>();
    if (j.contains("mollifier")) c.mollifier = j.at("mollifier");
    if (j.contains("tolerances"))
      for (const auto& [k, v] : j.at("tolerances").items()) c.tolerances[k] = v.get<double>();
    c.max_work = j.value("max_work", c.max_work);
    if (j.contains("sweep")) c.sweep = j.at("sweep");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// FNV-1a of the canonical (key-sorted, compact) JSON form, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
  const std::uint64_t h = fnv1a64(json(c).dump());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::vector<std::string> builtin_experiments() {
  auto names = preset_names();
  names.insert(names.begin(), "smoke");
  return names;
}

/// Shipped experiment for a preset name (the coefficient presets plus "smoke").
inline ExperimentConfig builtin_experiment(const std::string& name) {
  ExperimentConfig c;
  if (name == "smoke") {
    c.preset = "linear-gaussian";
    c.T = 0.2;
    c.N_law = 100;
    c.N_filt = 200;
    c.diagnostics = {"kalman", "mass", "zakai", "ks", "hypotheses"};
    c.tolerances["kalman"] = 0.25;
    return c;
  }
  const auto names = preset_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) throw ConfigError("unknown preset '" + name + "'");
  c.preset = name;
  if (name == "linear-gaussian" || name == "correlated-linear")
    c.diagnostics = {"kalman", "mass", "zakai", "ks", "hypotheses"};
  else if (name == "tanh-observation" || name == "sensor-correlated")
    c.diagnostics = {"mass", "zakai", "ks", "hypotheses", "gronwall"};
  else
    c.diagnostics = {"mass", "zakai", "ks", "hypotheses"};
  return c;
}

struct DiagnosticResult {
  std::string name;
  bool pass = false;
  double value = 0.0;  // headline number, used by sweep tables
  json metrics = json::object();
};

inline void to_json(json& j, const DiagnosticResult& d) {
  j = json{{"name", d.name}, {"pass", d.pass}, {"value", d.value}, {"metrics", d.metrics}};
}

struct ResultRecord {
  ExperimentConfig config;
  std::string hash;
  std::vector<DiagnosticResult> diagnostics;
  double runtime_seconds = 0.0;

  bool pass() const {
    return std::all_of(diagnostics.begin(), diagnostics.end(), [](const DiagnosticResult& d) { return d.pass; });
  }
  const DiagnosticResult& diagnostic(const std::string& name) const {
    for (const auto& d : diagnostics)
      if (d.name == name) return d;
    throw InvalidArgument("no diagnostic '" + name + "' in record");
  }
};

inline json to_report_json(const ResultRecord& r) {
  return json{{"schema", "mvf-report"},
              {"version", 1},
              {"tool_version", MVF_VERSION},
              {"config", r.config},
              {"config_hash", r.hash},
              {"diagnostics", r.diagnostics},
              {"pass", r.pass()},
              {"runtime_seconds", r.runtime_seconds}};
}

/// Battery path as given, else relative to the source tree.
inline FunctionalBattery resolve_battery(const std::string& path) {
  namespace fs = std::filesystem;
  if (fs::exists(path)) return load_battery(path);
  const fs::path alt = fs::path(MVF_SOURCE_DIR) / path;
  if (fs::exists(alt)) return load_battery(alt);
  throw ConfigError("battery manifest not found: " + path);
}

/// Particle-steps an experiment will take; checked against max_work before any work starts.
inline double estimated_work(const ExperimentConfig& c) {
  const double K = c.T / c.dt;
  double w = K * (c.N_law + c.N_filt + 1);
  const double ens = K * static_cast<double>(c.ensemble_M * c.ensemble_N);
  if (c.wants("fpe") || c.wants("projected_sde") || c.wants("integrability")) w += ens;
  if (c.wants("gronwall")) w += K * c.gronwall_runs * static_cast<double>(c.ensemble_N);
  if (c.wants("uniqueness")) w += 2.0 * K * c.N_filt;
  if (c.wants("ks")) w += K * c.N_filt * 4.0;
  return w;
}

namespace detail {

inline double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Grid for the energy and uniqueness diagnostics, covering the law flow with slack.
inline MollifierConfig experiment_grid(const ExperimentConfig& cfg, const LawFlow& law) {
  MollifierConfig g = MollifierConfig::for_cloud(law.at(0));
  double reach = 0.0;
  for (const auto& mu : law.measures)
    for (std::size_t i = 0; i < mu.size(); ++i) reach = std::max(reach, mu.point(i).cwiseAbs().maxCoeff());
  g.L = reach + g.margin_sd * g.sd() + 3.0;
  if (cfg.mollifier.contains("epsilon")) g.epsilon = cfg.mollifier.at("epsilon").get<double>();
  g.dx = cfg.mollifier.value("dx", g.sd() / 4.0);
  g.L = cfg.mollifier.value("L", g.L);
  g.validate();
  return g;
}

}  // namespace detail

/// Everything produced on the way to the diagnostics; kept for the CLI output files.
struct ExperimentState {
  Preset preset;
  FunctionalBattery battery;
  LawFlow law;
  TruthPath truth;
  std::optional<FilterRun> run;
  std::optional<std::vector<KalmanBucyState>> kalman;
  std::optional<LawEnsemble> ensemble;
};

inline SimConfig sim_config(const ExperimentConfig& cfg, const Preset& pr) {
  SimConfig s;
  s.T = cfg.T;
  s.dt = cfg.dt;
  s.N_law = cfg.N_law;
  s.seed = cfg.seed;
  s.init = pr.init;
  s.threads = cfg.threads;
  return s;
}

/// Law flow and truth path only.
inline ExperimentState simulate_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const double work = estimated_work(cfg);
  if (work > cfg.max_work)
    throw ConfigError("experiment needs about " + fmt(work) + " particle-steps, above max_work = " + fmt(cfg.max_work));
  ExperimentState st;
  st.preset = make_preset(cfg.preset, cfg.params);
  st.battery = resolve_battery(cfg.battery);
  if (st.battery.n != st.preset.coeffs.n) throw ConfigError("battery dimension does not match the preset");
  if (cfg.wants("kalman") && !(st.preset.linear && st.preset.stationary_std))
    throw ConfigError("kalman diagnostic needs a linear preset with a stationary signal");
  const SimConfig s = sim_config(cfg, st.preset);
  st.law = simulate_law_flow(st.preset.coeffs, s);
  st.truth = simulate_truth(st.preset.coeffs, st.law, s);
  return st;
}

inline FilterConfig filter_config(const ExperimentConfig& cfg, const FunctionalBattery& b, bool keep) {
  FilterConfig f;
  f.resampling = cfg.resampling_mode();
  f.ess_threshold = cfg.ess_threshold;
  f.record = b.phis();
  f.seed = cfg.seed;
  f.keep_states = keep;
  f.threads = cfg.threads;
  return f;
}

/// Adds the particle filter on the truth's innovation record (and Kalman-Bucy for linear presets).
inline void run_filter_stage(const ExperimentConfig& cfg, ExperimentState& st) {
  const bool keep = cfg.wants("mass") || cfg.wants("zakai") || cfg.wants("ks");
  const FilterState init = sample_initial_state(st.preset.init, static_cast<std::size_t>(cfg.N_filt), cfg.seed);
  st.run = run_zakai(st.preset.coeffs, st.law, st.truth.dVtilde, init, filter_config(cfg, st.battery, keep));
  if (st.preset.linear) st.kalman = kalman_bucy(*st.preset.linear, st.truth.Y, cfg.dt);
}

namespace diagnostics {

/// Realized quadratic variation of a residual path; under the null it sets the spread of R(T).
inline double residual_qv_sd(const std::vector<double>& r) {
  double qv = 0.0;
  for (std::size_t k = 1; k < r.size(); ++k) qv += std::pow(r[k] - r[k - 1], 2);
  return std::sqrt(qv);
}


inline DiagnosticResult kalman(const ExperimentConfig& cfg, const ExperimentState& st) {
  DiagnosticResult d{"kalman"};
  const auto& run = *st.run;
  double acc = 0.0;
  for (std::size_t k = 0; k <= run.steps; ++k) acc += (run.mean(k) - (*st.kalman)[k].mean).norm();
  const double err = acc / static_cast<double>(run.steps + 1);
  const double tol = cfg.tol("kalman") * *st.preset.stationary_std;
  d.value = err;
  d.pass = err <= tol;
  d.metrics = {{"time_avg_abs_error", err},
               {"tolerance", tol},
               {"stationary_std", *st.preset.stationary_std},
               {"terminal_kalman_variance", st.kalman->back().cov(0, 0)}};
  return d;
}

inline DiagnosticResult mass(const ExperimentConfig& cfg, const ExperimentState& st) {
  DiagnosticResult d{"mass"};
  const auto rep = mass_process_check(st.preset.coeffs, st.law, *st.run);
  std::vector<double> signed_res(rep.integral.size());
  double dev = 0.0, top = 1.0;
  for (std::size_t k = 0; k < signed_res.size(); ++k) {
    signed_res[k] = st.run->mass[k] - rep.integral[k];
    dev = std::max(dev, std::abs(st.run->mass[k] - 1.0));
    top = std::max(top, st.run->mass[k]);
  }
  const double sd = residual_qv_sd(signed_res);
  const double terminal = rep.residual.back();
  const double band = std::max(cfg.tol("sigmas") * sd, cfg.tol("mass") * top);
  d.value = terminal / band;
  d.pass = terminal <= band;
  d.metrics = {{"terminal", terminal}, {"residual_sup", rep.sup}, {"residual_qv_sd", sd},
               {"max_abs_mass_minus_one", dev}, {"max_mass", top}, {"band", band}};
  return d;
}

inline DiagnosticResult zakai(const ExperimentConfig& cfg, const ExperimentState& st) {
  DiagnosticResult d{"zakai"};
  d.pass = true;
  json per = json::array();
  double worst = 0.0;
  for (std::size_t f = 0; f < st.battery.library.size(); ++f) {
    const auto r = zakai_residual(st.preset.coeffs, st.law, *st.run, st.battery.library[f].phi);
    double scale = 0.0;
    for (std::size_t k = 0; k <= st.run->steps; ++k) scale = std::max(scale, std::abs(st.run->tracked_value(k, f)));
    const double sd = residual_qv_sd(r.series);
    const double band = std::max(cfg.tol("sigmas") * sd, cfg.tol("zakai") * scale);
    const bool ok = r.terminal <= band;
    d.pass = d.pass && ok;
    worst = std::max(worst, r.terminal / std::max(band, 1e-300));
    per.push_back({{"phi", st.battery.library[f].id}, {"terminal", r.terminal}, {"residual_qv_sd", sd},
                   {"band", band}, {"pass", ok}});
  }
  d.value = worst;
  d.metrics = {{"functions", per}};
  return d;
}

inline DiagnosticResult ks(const ExperimentConfig& cfg, const ExperimentState& st) {
  DiagnosticResult d{"ks"};
  d.pass = true;
  json per = json::array();
  double worst = 0.0;
  for (std::size_t i = 0; i < st.battery.functionals.size(); ++i) {
    const auto F = state_functional(st.battery, i);
    const auto r = ks_residual(st.preset.coeffs, st.law, *st.run, F);
    const double sd = residual_qv_sd(r.residual);
    const double lhs = r.lhs.back();
    const double band = std::max(cfg.tol("sigmas") * sd, cfg.tol("ks") * std::abs(lhs));
    const bool ok = r.terminal <= band;
    d.pass = d.pass && ok;
    worst = std::max(worst, r.terminal / std::max(band, 1e-300));
    per.push_back({{"functional", F.id}, {"lhs", lhs}, {"reconstruction", r.reconstruction.back()},
                   {"abs_diff", r.terminal}, {"residual_qv_sd", sd}, {"band", band}, {"pass", ok}});
  }
  d.value = worst;
  d.metrics = {{"functionals", per}};
  return d;
}

inline const LawEnsemble& ensemble(const ExperimentConfig& cfg, ExperimentState& st) {
  if (!st.ensemble) {
    EnsembleConfig e;
    e.M = cfg.ensemble_M;
    e.N = cfg.ensemble_N;
    e.seed = cfg.seed;
    e.threads = cfg.threads;
    st.ensemble = build_law_ensemble(st.preset.coeffs, st.law, st.preset.init, st.battery.phis(), e);
  }
  return *st.ensemble;
}

inline DiagnosticResult fpe(const ExperimentConfig& cfg, ExperimentState& st) {
  DiagnosticResult d{"fpe"};
  const auto& ens = ensemble(cfg, st);
  d.pass = true;
  json per = json::array();
  std::vector<double> terminals;
  for (const auto& G : st.battery.functionals) {
    const auto r = fpe_residual(ens, G);
    d.pass = d.pass && r.pass;
    terminals.push_back(r.terminal);
    per.push_back({{"functional", r.id}, {"terminal", r.terminal}, {"se", r.terminal_se},
                   {"particle_bias", r.particle_bias}, {"pass", r.pass}});
  }
  d.value = detail::median(terminals);
  d.metrics = {{"runs", ens.runs.size()}, {"particles", ens.N}, {"median_abs_terminal", d.value}, {"functionals", per}};
  return d;
}

inline DiagnosticResult projected_sde(const ExperimentConfig& cfg, ExperimentState& st) {
  DiagnosticResult d{"projected_sde"};
  const auto r = projected_sde_check(ensemble(cfg, st), cfg.projected_indices);
  auto entries = [](const std::vector<ProjectedSdeReport::Entry>& v) {
    json a = json::array();
    for (const auto& e : v)
      a.push_back({{"u", e.u}, {"v", e.v}, {"mean", e.mean}, {"se", e.se}, {"allowance", e.allowance}, {"pass", e.pass}});
    return a;
  };
  std::size_t fails = 0;
  for (const auto& e : r.drift) fails += !e.pass;
  for (const auto& e : r.covariation) fails += !e.pass;
  d.pass = r.pass;
  d.value = static_cast<double>(fails);
  d.metrics = {{"drift", entries(r.drift)}, {"covariation", entries(r.covariation)}};
  return d;
}

inline DiagnosticResult integrability(const ExperimentConfig& cfg, ExperimentState& st) {
  DiagnosticResult d{"integrability"};
  const auto r = integrability_check(ensemble(cfg, st), cfg.tol("integrability_cap"));
  d.pass = r.pass;
  d.value = r.value;
  d.metrics = {{"value", r.value}, {"se", r.se}, {"cap", r.cap}};
  return d;
}

inline DiagnosticResult gronwall(const ExperimentConfig& cfg, ExperimentState& st) {
  DiagnosticResult d{"gronwall"};
  const MollifierConfig g = detail::experiment_grid(cfg, st.law);
  const auto K = st.law.steps();
  std::vector<std::vector<double>> norms(static_cast<std::size_t>(cfg.gronwall_runs));
  parallel_for(norms.size(), cfg.threads, [&](std::size_t j) {
    const std::uint64_t id = 1000000 + j;
    const auto dv = brownian_path(derive_seed(cfg.seed, id, 3), StreamTag::reference_noise, 0, st.preset.coeffs.m, K, cfg.dt);
    const auto init = sample_initial_state(st.preset.init, cfg.ensemble_N, derive_seed(cfg.seed, id, 1));
    FilterConfig fc;
    fc.seed = derive_seed(cfg.seed, id, 2);
    run_zakai(st.preset.coeffs, st.law, dv, init, fc,
              [&](std::size_t, const FilterState& s) { norms[j].push_back(smooth_measure(s.measure(), g).norm2()); });
  });
  const auto curve = energy_curve(norms, cfg.dt);
  const auto fit = gronwall_check(curve, {}, cfg.gronwall_cap);
  d.pass = !fit.violated;
  d.value = fit.C_hat;
  d.metrics = {{"C_hat", fit.C_hat}, {"cap", cfg.gronwall_cap}, {"bounded_coefficients", st.preset.bounded},
               {"runs", cfg.gronwall_runs}, {"epsilon", g.epsilon}, {"energy_start", curve.mean.front()},
               {"energy_end", curve.mean.back()}};
  return d;
}

inline DiagnosticResult hypotheses(const ExperimentConfig& cfg, const ExperimentState& st) {
  DiagnosticResult d{"hypotheses"};
  HypothesisSampler s;
  s.horizon = cfg.T;
  s.seed = cfg.seed;
  const auto r = estimate_hypotheses(st.preset.coeffs, s);
  json verdicts = json::array();
  std::size_t fails = 0;
  for (const auto& v : r.verdicts) {
    fails += v.verdict == Verdict::fail;
    json e = {{"family", v.family}, {"observed", v.observed}, {"verdict", to_string(v.verdict)}};
    e["declared"] = v.declared ? json(*v.declared) : json(nullptr);
    verdicts.push_back(e);
  }
  json lip = json::object();
  for (const auto& [k, e] : r.lipschitz) lip[k] = {{"state", e.state}, {"measure", e.measure}};
  d.pass = r.all_pass();
  d.value = static_cast<double>(fails);
  d.metrics = {{"verdicts", verdicts}, {"lipschitz", lip}, {"growth_ratio", r.growth_ratio},
               {"bound_sup", r.bound_sup}, {"k2_estimate", r.k2_estimate()}};
  return d;
}

inline DiagnosticResult uniqueness(const ExperimentConfig& cfg, const ExperimentState& st) {
  DiagnosticResult d{"uniqueness"};
  const MollifierConfig g = detail::experiment_grid(cfg, st.law);
  FilterConfig fc;
  fc.seed = cfg.seed;
  fc.threads = cfg.threads;
  const auto N = static_cast<std::size_t>(cfg.N_filt);
  const auto a = sample_initial_state(st.preset.init, N, cfg.seed);
  const auto b = sample_initial_state(st.preset.init, N, derive_seed(cfg.seed, 77));
  const auto same = pathwise_uniqueness_gap(st.preset.coeffs, st.law, st.truth.dVtilde, a, a, fc, g);
  const auto indep = pathwise_uniqueness_gap(st.preset.coeffs, st.law, st.truth.dVtilde, a, b, fc, g);
  const double same_max = detail::max_abs(same.gap);
  d.pass = same_max == 0.0;
  d.value = indep.gap.back();
  d.metrics = {{"identical_start_max_gap", same_max}, {"independent_start_terminal_gap", indep.gap.back()},
               {"epsilon", g.epsilon}};
  return d;
}

}  // namespace diagnostics

/**
 * @brief Runs one experiment; when `out` is set, writes CSV payloads, the battery
 * manifest and report.json there.
 */
inline ResultRecord run_experiment(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& out = {}) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentState st = simulate_experiment(cfg);
  run_filter_stage(cfg, st);
  ResultRecord rec;
  rec.config = cfg;
  rec.hash = config_hash(cfg);
  for (const auto& name : cfg.diagnostics) {
    if (name == "kalman") rec.diagnostics.push_back(diagnostics::kalman(cfg, st));
    else if (name == "mass") rec.diagnostics.push_back(diagnostics::mass(cfg, st));
    else if (name == "zakai") rec.diagnostics.push_back(diagnostics::zakai(cfg, st));
    else if (name == "ks") rec.diagnostics.push_back(diagnostics::ks(cfg, st));
    else if (name == "fpe") rec.diagnostics.push_back(diagnostics::fpe(cfg, st));
    else if (name == "projected_sde") rec.diagnostics.push_back(diagnostics::projected_sde(cfg, st));
    else if (name == "integrability") rec.diagnostics.push_back(diagnostics::integrability(cfg, st));
    else if (name == "gronwall") rec.diagnostics.push_back(diagnostics::gronwall(cfg, st));
    else if (name == "hypotheses") rec.diagnostics.push_back(diagnostics::hypotheses(cfg, st));
    else if (name == "uniqueness") rec.diagnostics.push_back(diagnostics::uniqueness(cfg, st));
  }
  rec.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (out) {
    std::ostringstream law, truth, filt;
    write_law_csv(law, st.law);
    write_truth_csv(truth, st.truth);
    write_filter_csv(filt, *st.run);
    write_text(*out / "law.csv", law.str());
    write_text(*out / "truth.csv", truth.str());
    write_text(*out / "filter.csv", filt.str());
    if (st.kalman) {
      std::ostringstream kb;
      CsvWriter w(kb);
      w.header({"t", "kalman_mean1", "kalman_var1", "particle_mean1"});
      for (std::size_t k = 0; k < st.kalman->size(); ++k)
        w.row({st.run->time(k), (*st.kalman)[k].mean(0), (*st.kalman)[k].cov(0, 0), st.run->mean(k)(0)});
      write_text(*out / "kalman.csv", kb.str());
    }
    write_text(*out / "battery.json", read_text(std::filesystem::exists(cfg.battery)
                                                    ? std::filesystem::path(cfg.battery)
                                                    : std::filesystem::path(MVF_SOURCE_DIR) / cfg.battery));
    write_text(*out / "report.json", to_report_json(rec).dump(2) + "\n");
  }
  return rec;
}

/// Cartesian product of the "sweep" object: {"dt": [...], "N_filt": [...], ...}.
inline std::vector<ExperimentConfig> sweep_cells(const ExperimentConfig& base) {
  if (!base.sweep.is_object() || base.sweep.empty()) throw ConfigError("sweep: config has no 'sweep' object");
  std::vector<json> cells{json(base)};
  for (auto& c : cells) c.erase("sweep");
  for (const auto& [key, values] : base.sweep.items()) {
    if (!values.is_array() || values.empty()) throw ConfigError("sweep: '" + key + "' needs a non-empty array");
    std::vector<json> next;
    for (const auto& c : cells)
      for (const auto& v : values) {
        json cell = c;
        if (key.rfind("params.", 0) == 0) cell["params"][key.substr(7)] = v;
        else cell[key] = v;
        next.push_back(cell);
      }
    cells = std::move(next);
  }
  std::vector<ExperimentConfig> out;
  for (const auto& c : cells) out.push_back(c.get<ExperimentConfig>());
  return out;
}

/// Runs every sweep cell into out/cell_NNN and writes sweep.csv plus sweep.json.
inline std::vector<ResultRecord> run_sweep(const ExperimentConfig& base, const std::filesystem::path& out) {
  const auto cells = sweep_cells(base);
  std::vector<ResultRecord> recs;
  std::vector<std::string> keys;
  for (const auto& [k, v] : base.sweep.items()) keys.push_back(k);
  std::ostringstream csv;
  csv << "cell,config_hash";
  for (const auto& k : keys) csv << ',' << k;
  for (const auto& d : base.diagnostics) csv << ',' << d << "_pass," << d << "_value";
  csv << '\n';
  json index = json::array();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "cell_%03zu", i);
    recs.push_back(run_experiment(cells[i], out / name));
    const json cj = cells[i];
    csv << i << ',' << recs.back().hash;
    for (const auto& k : keys) {
      const json v = k.rfind("params.", 0) == 0 ? cj.at("params").at(k.substr(7)) : cj.at(k);
      csv << ',' << (v.is_number() ? fmt(v.get<double>()) : v.dump());
    }
    for (const auto& d : recs.back().diagnostics) csv << ',' << (d.pass ? 1 : 0) << ',' << fmt(d.value);
    csv << '\n';
    index.push_back({{"cell", name}, {"config_hash", recs.back().hash}, {"pass", recs.back().pass()}});
  }
  write_text(out / "sweep.csv", csv.str());
  write_text(out / "sweep.json", json{{"schema", "mvf-sweep"}, {"version", 1}, {"cells", index}}.dump(2) + "\n");
  return recs;
}

/// Markdown summary of every report.json below `dir`; `all_pass` is set to the conjunction.
inline std::string summarize_reports(const std::filesystem::path& dir, bool& all_pass) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (fs::is_regular_file(dir)) files.push_back(dir);
  else if (fs::is_directory(dir))
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file() && e.path().filename() == "report.json") files.push_back(e.path());
  if (files.empty()) throw ConfigError("report: no report.json found under " + dir.string());
  std::sort(files.begin(), files.end());
  all_pass = true;
  std::ostringstream md;
  md << "| report | preset | config hash | diagnostic | value | pass |\n|---|---|---|---|---|---|\n";
  for (const auto& f : files) {
    const json j = json::parse(read_text(f));
    if (j.value("schema", "") != "mvf-report") throw ConfigError("report: " + f.string() + " is not a report");
    const std::string rel = fs::relative(f, fs::is_directory(dir) ? dir : dir.parent_path()).string();
    for (const auto& d : j.at("diagnostics")) {
      const bool ok = d.at("pass").get<bool>();
      all_pass = all_pass && ok;
      md << "| " << rel << " | " << j.at("config").at("preset").get<std::string>() << " | "
         << j.at("config_hash").get<std::string>() << " | " << d.at("name").get<std::string>() << " | "
         << fmt(d.at("value").get<double>()) << " | " << (ok ? "pass" : "FAIL") << " |\n";
    }
  }
  return md.str();
}

}  // namespace mvf
