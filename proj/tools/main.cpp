// pearl — privacy-aware early-exit DQN experiment harness.
//
//   pearl <train|sweep|infer|attack|drift|report> --config <file> [overrides]
//
// Flags override values from the config file. Exit code is nonzero on any
// invariant violation or I/O failure.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pearl/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"pearl: budget-constrained early-exit DQN experiments"};
  app.require_subcommand(1);

  std::string config_path;
  double u = 0.0, p = 0.0, v = 0.0;
  std::uint64_t seed = 0;
  std::string env_name, profile, outdir, run_id, checkpoint, trace, truth;
  int branch = -1;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train", "Phase 1 + Phase 2 training; writes checkpoint and label/MI CSVs"},
      {"sweep", "budget grid: relabel, retrain heads, serve, attack per (u, p) cell"},
      {"infer", "serve a trained network and run the clustering attack on its trace"},
      {"attack", "cluster an existing trace CSV against ground-truth labels"},
      {"drift", "behavior-switch scenario with the variability monitor armed"},
      {"report", "assemble report.json from a run directory's artifacts"},
  };
  for (const auto& [name, desc] : commands) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", config_path, "INI config file (strict keys)");
    sub->add_option("--u", u, "utility budget override");
    sub->add_option("--p", p, "privacy budget override");
    sub->add_option("--v", v, "variability threshold override");
    sub->add_option("--seed", seed, "root RNG seed override");
    sub->add_option("--env", env_name, "environment override (thermal|vr)");
    sub->add_option("--profile", profile, "occupant/student profile override");
    sub->add_option("--outdir", outdir, "output directory override");
    sub->add_option("--run-id", run_id, "run id override");
    sub->add_option("--checkpoint", checkpoint, "input network checkpoint override");
    sub->add_option("--trace", trace, "input trace CSV (attack)");
    sub->add_option("--truth", truth, "input ground-truth CSV (attack)");
    sub->add_option("--branch", branch, "fixed serving branch override");
    sub->add_flag("--no-switch", "drift: keep the starting profile (control run)");
  }

  CLI11_PARSE(app, argc, argv);
  CLI::App* sub = app.get_subcommands().front();

  try {
    pearl::ExperimentConfig cfg;
    if (sub->count("--config") > 0) cfg = pearl::load_config(config_path);
    cfg.command = sub->get_name();
    if (sub->count("--u") > 0) cfg.budgets.u = u;
    if (sub->count("--p") > 0) cfg.budgets.p = p;
    if (sub->count("--v") > 0) cfg.budgets.v = v;
    if (sub->count("--seed") > 0) cfg.seed = seed;
    if (sub->count("--env") > 0) cfg.env = env_name;
    if (sub->count("--profile") > 0) cfg.profile = profile;
    if (sub->count("--outdir") > 0) cfg.outdir = outdir;
    if (sub->count("--run-id") > 0) cfg.run_id = run_id;
    if (sub->count("--checkpoint") > 0) cfg.checkpoint = checkpoint;
    if (sub->count("--trace") > 0) cfg.trace_csv = trace;
    if (sub->count("--truth") > 0) cfg.truth_csv = truth;
    if (sub->count("--branch") > 0) cfg.serve_branch = branch;
    if (sub->count("--no-switch") > 0) cfg.drift_profile.clear();
    return pearl::run_command(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
