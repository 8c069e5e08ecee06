#include "mvf/harness.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace fs = std::filesystem;
using namespace mvf;

namespace {

enum Exit { kPass = 0, kFail = 1, kConfig = 2, kNumerical = 3 };

struct Options {
  std::string config, preset, out = "mvf-out";
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig cfg;
  if (!o.config.empty()) {
    try {
      cfg = json::parse(read_text(o.config)).get<ExperimentConfig>();
    } catch (const json::parse_error& e) {
      throw ConfigError(o.config + ": " + e.what());
    }
    if (!o.preset.empty()) cfg.preset = o.preset;
  } else if (!o.preset.empty()) {
    cfg = builtin_experiment(o.preset);
  } else {
    throw ConfigError("give --config or --preset");
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  cfg.validate();
  return cfg;
}

void print_record(const ResultRecord& r) {
  std::cout << "config " << r.hash << " preset " << r.config.preset << "\n";
  for (const auto& d : r.diagnostics)
    std::cout << "  " << (d.pass ? "pass " : "FAIL ") << d.name << "  " << fmt(d.value) << "\n";
}

int simulate(const Options& o) {
  const auto cfg = resolve(o);
  const auto st = simulate_experiment(cfg);
  std::ostringstream law, truth;
  write_law_csv(law, st.law);
  write_truth_csv(truth, st.truth);
  write_text(fs::path(o.out) / "law.csv", law.str());
  write_text(fs::path(o.out) / "truth.csv", truth.str());
  write_text(fs::path(o.out) / "config.json", json(cfg).dump(2) + "\n");
  std::cout << "wrote law.csv, truth.csv to " << o.out << " (config " << config_hash(cfg) << ")\n";
  return kPass;
}

int filter(const Options& o) {
  auto cfg = resolve(o);
  cfg.diagnostics.clear();
  run_experiment(cfg, fs::path(o.out));
  std::cout << "wrote filter output to " << o.out << " (config " << config_hash(cfg) << ")\n";
  return kPass;
}

int diagnose(const Options& o) {
  const auto cfg = resolve(o);
  const auto rec = run_experiment(cfg, fs::path(o.out));
  print_record(rec);
  return rec.pass() ? kPass : kFail;
}

int sweep(const Options& o) {
  const auto cfg = resolve(o);
  const auto recs = run_sweep(cfg, fs::path(o.out));
  bool ok = true;
  for (const auto& r : recs) {
    print_record(r);
    ok = ok && r.pass();
  }
  std::cout << "wrote " << recs.size() << " cells and sweep.csv to " << o.out << "\n";
  return ok ? kPass : kFail;
}

int report(const Options& o, const std::string& input) {
  bool ok = false;
  const std::string md = summarize_reports(input, ok);
  std::cout << md;
  if (!o.out.empty() && o.out != "mvf-out") write_text(fs::path(o.out) / "summary.md", md);
  return ok ? kPass : kFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Particle filters and diagnostics for distribution-dependent filtering"};
  app.require_subcommand(0, 1);
  Options o;
  bool list = false;
  app.add_flag("--list-presets", list, "Print the built-in experiment names");
  app.set_version_flag("--version", std::string(MVF_VERSION));

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--preset", o.preset, "Built-in experiment, or preset override for --config");
    sub->add_option("--seed", o.seed, "Master seed");
    sub->add_option("--out", o.out, "Output directory")->capture_default_str();
    sub->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  };
  auto* sim = app.add_subcommand("simulate", "Simulate the law flow and a truth path");
  auto* fil = app.add_subcommand("filter", "Run the particle filter on a simulated observation record");
  auto* dia = app.add_subcommand("diagnose", "Run the configured diagnostics and write report.json");
  auto* swp = app.add_subcommand("sweep", "Run every cell of the config's sweep grid");
  auto* rep = app.add_subcommand("report", "Summarize report.json files as a markdown table");
  for (auto* s : {sim, fil, dia, swp}) common(s);
  std::string input;
  rep->add_option("input", input, "Directory (searched recursively) or report.json")->required();
  rep->add_option("--out", o.out, "Directory for summary.md");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kPass : kConfig;
  }

  try {
    if (list) {
      for (const auto& n : builtin_experiments()) std::cout << n << "\n";
      return kPass;
    }
    if (sim->parsed()) return simulate(o);
    if (fil->parsed()) return filter(o);
    if (dia->parsed()) return diagnose(o);
    if (swp->parsed()) return sweep(o);
    if (rep->parsed()) return report(o, input);
    std::cout << app.help();
    return kConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const Error& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  }
}
