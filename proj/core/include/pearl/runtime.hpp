#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pearl/confidence.hpp"
#include "pearl/ee_qnet.hpp"
#include "pearl/env.hpp"
#include "pearl/mutual_information.hpp"
#include "pearl/rng.hpp"

namespace pearl {

struct ExitDecision {
  int branch = -1;
  int action = 0;
  bool ucl_ok = false;
  bool pcl_ok = false;
  bool feasible = false;
};

// Budget-constrained exit choice: branches are probed in increasing index and
// the first whose utility and privacy heads both clear 0.5 wins. When none
// qualifies the decision is infeasible and falls back to the branch with the
// highest privacy-head output among utility-passing branches (or globally if
// none passes utility) — privacy is the protected resource.
// `budgets` must match the budgets the heads were trained for.
ExitDecision select_exit(const EEQNetwork& net, std::span<const double> s,
                         const BudgetConfig& budgets);

struct RunStep {
  long t = 0;
  int s_id = 0;
  int a_id = 0;
  int branch = 0;
  bool feasible = true;
  double i_current = 0.0;
  bool trigger = false;
  int truth = 0;
  int phase = 0;  // hour-of-day / lecture stage
  double utility_sample = 0.0;
  bool utility_sample_valid = false;
};

struct RunTrace {
  int state_count = 0;
  int action_count = 0;
  int truth_count = 0;
  int cycle_length = 0;
  std::vector<RunStep> steps;

  ActionTrace to_action_trace() const;
  std::vector<double> utility_samples() const;
  void write_csv(const std::string& path) const;
  void write_truth_csv(const std::string& path) const;
};

// How the serving loop picks actions.
struct ServingPolicy {
  enum class Mode { confidence_gated, fixed_branch };
  Mode mode = Mode::confidence_gated;
  int branch = 0;  // used by fixed_branch

  static ServingPolicy gated() { return {Mode::confidence_gated, 0}; }
  static ServingPolicy fixed(int branch) { return {Mode::fixed_branch, branch}; }
};

// Inference loop (no learning): runs `steps` decisions, filling i_current
// with the MI of the most recent completed non-overlapping window of the
// executed (s, a) stream. Triggers stay false — monitoring lives in
// monitor_and_retrain.
RunTrace run_policy(const EEQNetwork& net, Environment& env, const BudgetConfig& budgets,
                    int steps, const MIWindowConfig& mi_cfg,
                    const ServingPolicy& serving = ServingPolicy::gated());

// Drift detector state (Alg. 3): trigger iff i_current < v * i_max, where
// i_max is the running maximum of observed window MI.
struct VariabilityMonitor {
  double v = 0.8;
  double i_max = 0.0;
  double i_current = 0.0;
  enum class State { stable, retraining } state = State::stable;

  // Feed one completed window's MI; returns whether retraining must trigger.
  bool observe(double window_mi);
};

struct RetrainConfig {
  int finetune_updates = 5000;      // total gradient updates across all layers
  int head_epochs = 20;
  int calibration_windows = 1;      // post-retrain windows that re-anchor i_max
  std::size_t replay_capacity = 10000;
  QTrainConfig qtrain;              // lr/batch/target-sync for the fine-tune
};

struct DriftReport {
  std::vector<long> trigger_steps;
  MISeries serving_mi;              // executed-stream windows over the whole run
  std::vector<double> i_max_history;  // i_max after each window
  // First stable-state window completion after re-anchoring with
  // MI >= v * i_max; -1 when never reached.
  long recovery_step = -1;
  RunTrace trace;
};

// Serving loop with the variability monitor attached. The monitored series
// is the windowed MI between the private attribute (truth label) and the
// executed actions — the leak the adversary mines — not the fine state-id
// binning used for labeling. On trigger: fine-tunes trunk+branches from the
// replay of recent transitions (offline — simulation time does not advance)
// and rebuilds confidence buffers and heads from the same recent history.
// The monitor then stays in the retraining state for the next
// `calibration_windows` completed windows — coalescing repeat triggers —
// and re-anchors i_max to their maximum ("the new observed maximum") before
// re-arming.
DriftReport monitor_and_retrain(EEQNetwork& net, Environment& env, VariabilityMonitor& monitor,
                                const BudgetConfig& budgets, const RetrainConfig& retrain,
                                int steps, const MIWindowConfig& mi_cfg, Rng& rng,
                                const ServingPolicy& serving = ServingPolicy::gated());

}  // namespace pearl
