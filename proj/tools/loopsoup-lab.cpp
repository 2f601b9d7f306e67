// loopsoup-lab: run the Monte-Carlo experiments from a config file.
//
//   loopsoup-lab run <config> [--seed N] [--replicas N] [--workers N]
//   loopsoup-lab list
//   loopsoup-lab calibrate <config>
//
// Exit codes: 0 PASS, 1 FAIL, 2 config error, 3 INCONCLUSIVE.
// LOOPSOUP_REPORT_DIR overrides report_dir from the config.

#include "loopsoup/config.hpp"
#include "loopsoup/experiments.hpp"
#include "loopsoup/identities.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <optional>

namespace {

using namespace loopsoup;

constexpr int kExitPass = 0, kExitFail = 1, kExitConfig = 2, kExitInconclusive = 3;

int exit_code(Verdict v) {
  switch (v) {
    case Verdict::pass: return kExitPass;
    case Verdict::fail: return kExitFail;
    case Verdict::inconclusive: return kExitInconclusive;
  }
  return kExitFail;
}

std::string report_dir(const RunConfig& c) {
  if (const char* env = std::getenv("LOOPSOUP_REPORT_DIR"); env && *env) return env;
  return c.report_dir;
}

const char* kDefaults = R"(config keys (defaults):
  experiment = "isomorphism"   isomorphism | rewiring | strip_parity |
                               rectangle_crossing | multi_arc_parity
  nx = 2, ny = 2               interior grid size
  alpha = 0.5                  loop-soup intensity
  beta = "calibrated"          or a positive number; calibrated = u^2 / 4
  u = 1.0
  m_target                     rectangle crossing: solve beta from m
  replicas = 10000
  k_max = 0                    0 = smallest truncation meeting tail_tolerance
  tail_tolerance = 1e-9
  seed = 1, workers = 1
  report_dir = "reports", csv = false
  strip_height = 2, box_widths = [4, 8, 16, 32], boxes = 8, box_gap = 0,
  strip_epsilon = 0.1
  n_arcs = 3, k_fields = 3
  rewire_steps = 10000, sweeps = 10
  k_level = 0.3, energy_subsample = 300, permutations = 200
  [thresholds] z_max = 4.0, level = 0.01, moment_z_max = 5.0, min_class = 1000
  [arcs] left = 1, "top:0-2" = 2, ...
)";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Loop-soup and boundary-excursion parity experiments"};
  app.footer(kDefaults);
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<long> replicas;
  std::optional<int> workers;

  auto* run = app.add_subcommand("run", "run the experiment named in a config");
  run->add_option("config", config_path, "config file")->required();
  run->add_option("--seed", seed, "override the master seed");
  run->add_option("--replicas", replicas, "override the replica count")
      ->check(CLI::PositiveNumber);
  run->add_option("--workers", workers, "override the worker count")
      ->check(CLI::PositiveNumber);

  auto* list = app.add_subcommand("list", "print the experiment catalog");

  auto* cal_cmd =
      app.add_subcommand("calibrate", "print calibration constants and residuals");
  cal_cmd->add_option("config", config_path, "config file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  if (list->parsed()) {
    std::string current;
    for (const auto& e : experiment_catalog()) {
      if (e.experiment != current) {
        current = e.experiment;
        std::cout << current << '\n';
      }
      std::cout << "  " << e.claim << "  " << e.description << '\n';
    }
    return 0;
  }

  RunConfig cfg;
  try {
    cfg = parse_config_file(config_path);
  } catch (const ConfigError& e) {
    std::cerr << config_path << ": " << e.what() << '\n';
    return kExitConfig;
  }
  if (seed) cfg.seed = *seed;
  if (replicas) cfg.replicas = *replicas;
  if (workers) cfg.workers = *workers;

  const CalibrationReport cal = calibrate();

  if (cal_cmd->parsed()) {
    nlohmann::json j = cal.to_json();
    const DomainGraph d = config_domain(cfg);
    const ScalarField k = ScalarField::constant(d, cfg.k_level, Support::interior);
    const IdentityReport dyn = dynkin_exact(d, cal.constants, cfg.u, k);
    j["config_domain_dynkin"] = dyn.to_json();
    std::cout << j.dump(2) << '\n';
    return cal.ok && dyn.abs_err < 1e-10 ? kExitPass : kExitFail;
  }

  if (!cal.ok) {
    std::cerr << "calibration failed: " << cal.diagnostic << '\n';
    return kExitFail;
  }
  try {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentReport rep = run_experiment(cfg, cal.constants);
    rep.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto path = write_report(rep, report_dir(cfg), cfg.csv);
    for (const auto& c : rep.claims)
      std::cout << verdict_name(c.verdict) << (c.informational ? "*" : "") << "  "
                << c.id << "  " << c.quantity << '\n';
    std::cout << rep.name << ": " << verdict_name(rep.overall()) << "  ("
              << path.string() << ", " << rep.wall_time_seconds << " s)\n";
    return exit_code(rep.overall());
  } catch (const ConfigError& e) {
    std::cerr << config_path << ": " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << config_path << ": " << e.what() << '\n';
    return kExitConfig;
  }
}
