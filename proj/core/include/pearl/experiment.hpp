#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "pearl/adversary.hpp"
#include "pearl/confidence.hpp"
#include "pearl/ee_qnet.hpp"
#include "pearl/env.hpp"
#include "pearl/runtime.hpp"
#include "pearl/thermal_env.hpp"

namespace pearl {

// Everything a run needs, resolvable from an INI-style config file plus CLI
// overrides. Zero values in the "defaults depend on the env" fields resolve
// per environment (thermal vs vr).
struct ExperimentConfig {
  // run identity / io
  std::string command = "train";
  std::string outdir = "runs";
  std::string run_id;              // empty -> "<command>-<env>-<profile>-s<seed>"
  std::string checkpoint;          // input network for sweep / infer / drift
  std::string trace_csv;           // input action trace for attack
  std::string truth_csv;           // ground-truth labels for attack
  std::uint64_t seed = 1;

  // scenario
  std::string env = "thermal";     // "thermal" | "vr"
  std::string profile = "H1";      // H1..H3 / P1..P3
  int n_layers = 10;
  BudgetConfig budgets;            // u, p, v

  // phase 1
  int steps_per_layer = 20000;
  double learning_rate = 1e-3;

  // phase 2
  int phase2_steps = 0;            // 0 -> 2016 thermal / 2000 vr
  int head_epochs = 20;

  // leakage estimation
  int window_n = 0;                // 0 -> 168 thermal / 100 vr
  bool miller_madow = false;

  // serving / evaluation
  int eval_steps = 0;              // 0 -> 1200 thermal / 1000 vr
  int serve_branch = -1;           // infer/drift: -1 = auto, else fixed branch

  // adversary
  int k_max = 0;                   // 0 -> 12 thermal / 10 vr
  int restarts = 10;
  bool day_vectors = false;

  // sweep grid
  std::vector<double> u_list = {0.55, 0.65, 0.75, 0.85, 0.95};
  std::vector<double> p_list = {0.6, 0.7, 0.8, 0.9};
  int threads = 0;                 // 0 -> hardware concurrency

  // drift scenario
  std::string drift_profile;       // profile to switch to; empty = no switch
  int drift_switch_step = 0;       // 0 -> 25 days / lectures worth of steps
  int drift_steps = 0;             // 0 -> 2 * switch point
  int finetune_updates = 5000;
  int calibration_windows = 1;

  // environment physical parameters
  HouseParams house;
  double rho_override = -1.0;      // <0 = keep the profile default
  double vr_noise_sd = 8.0;

  int resolved_window_n() const;
  int resolved_phase2_steps() const;
  int resolved_eval_steps() const;
  int resolved_k_max() const;
  int resolved_switch_step() const;
  int resolved_drift_steps() const;
  std::string resolved_run_id() const;
  std::string run_dir() const;     // outdir / resolved_run_id
  void validate() const;           // env/profile ids exist, budgets in (0,1]
};

// Strict INI-style parsing: unknown sections or keys are errors.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

// Fresh simulator for the config's scenario. `profile_id` overrides the
// config's profile (drift scenarios build both).
std::unique_ptr<Environment> make_environment(const ExperimentConfig& cfg, std::uint64_t env_seed);
std::unique_ptr<Environment> make_environment(const ExperimentConfig& cfg, std::uint64_t env_seed,
                                              std::string_view profile_id);

// Phase 1 + Phase 2 end to end, returning everything later stages need.
struct TrainArtifacts {
  EEQNetwork net;
  ConfidenceBuffers buffers;
  HeadTrainStats head_stats;
  std::vector<double> branch_utility;  // per-branch greedy-policy scores
  int best_branch = 0;
};
TrainArtifacts train_pipeline(const ExperimentConfig& cfg, const std::string& training_csv = "");

// One serving run plus the clustering attack on its shared trace.
struct EvalOutcome {
  RunTrace trace;
  MISeries serving_mi;       // executed-stream windows
  double utility_score = 0;  // in-range fraction (thermal) / mean quiz / 100 (vr)
  double utility_std = 0;    // STD of the raw utility samples
  ClusteringReport attack;
};
EvalOutcome evaluate_policy(const EEQNetwork& net, const ExperimentConfig& cfg,
                            const BudgetConfig& budgets, const ServingPolicy& serving,
                            std::uint64_t env_seed, Rng attack_rng);

// One (u, p) cell of the budget grid.
struct SweepCell {
  double u = 0;
  double p = 0;
  std::vector<int> eligible;  // branches with majority-1 labels in both buffers
  bool feasible = false;
  double attack_accuracy = -1;
  double utility_score = 0;
  double utility_std = 0;
  double min_head_acc = 0;
  RunTrace trace;             // the cell's own serving trace
  ClusteringReport attack;
};
struct SweepOutcome {
  std::vector<SweepCell> cells;  // u-major ordering over cfg lists
  const SweepCell& cell(double u, double p) const;
};
// Relabels the stored buffers per cell, retrains heads on a network copy,
// serves, and attacks. Cells run in parallel on cell-keyed substreams, so
// results are independent of grid order and thread count.
SweepOutcome sweep_pipeline(const TrainArtifacts& base, const ExperimentConfig& cfg);

void write_eligibility_csv(const std::string& path, const SweepOutcome& sweep,
                           const ExperimentConfig& cfg);
void write_tradeoff_csv(const std::string& path, const SweepOutcome& sweep);

// 2-phase drift scenario: serve on cfg.profile, switch the occupant to
// cfg.drift_profile at the switch step (when enable_switch), with the
// variability monitor armed at v. `net` must carry trained heads and
// leakage metadata (it is updated in place on retraining).
struct DriftOutcome {
  DriftReport report;
  int window_n = 0;
  int served_branch = 0;
  double initial_i_max = 0;
  double final_i_max = 0;
  long recovery_steps_after_trigger = -1;  // serving steps from trigger to recovery
};
DriftOutcome drift_pipeline(EEQNetwork& net, const ExperimentConfig& cfg, bool enable_switch);

// CLI entry points: write artifacts under run_dir() and return a process
// exit code (nonzero on any invariant violation).
int cmd_train(const ExperimentConfig& cfg);
int cmd_sweep(const ExperimentConfig& cfg);
int cmd_infer(const ExperimentConfig& cfg);
int cmd_attack(const ExperimentConfig& cfg);
int cmd_drift(const ExperimentConfig& cfg);
int cmd_report(const ExperimentConfig& cfg);
int run_command(const ExperimentConfig& cfg);

}  // namespace pearl
