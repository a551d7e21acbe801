#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pearl/ee_qnet.hpp"
#include "pearl/env.hpp"
#include "pearl/mutual_information.hpp"
#include "pearl/rng.hpp"

namespace pearl {

// Deployment budgets: u — fraction of the best branch's max Q a branch must
// reach to stay utility-eligible; p — fraction of the historical max MI a
// branch must stay under to be privacy-eligible; v — MI fraction below which
// the variability monitor declares behavior drift.
struct BudgetConfig {
  double u = 0.75;
  double p = 0.7;
  double v = 0.8;

  void validate() const;  // throws unless all three lie in (0, 1]
};

// Per-branch utility labels: label_i = 1 iff Q_i_max clears the u-fraction
// threshold of Q_max = max_i Q_i_max. Written as Q_i_max >= Q_max - (1-u)*|Q_max|
// so the rule degrades gracefully when all Q-values are negative; for
// Q_max > 0 this is exactly Q_i_max >= u * Q_max.
std::vector<std::uint8_t> utility_labels(std::span<const double> q_per_branch, double u);

// Per-branch privacy labels: label_i = 1 iff I_i < p * I_max (strict).
// mi_max == 0 means no leakage was ever observed: every branch passes.
std::vector<std::uint8_t> privacy_labels(std::span<const double> mi_per_branch, double p,
                                         double mi_max);

struct UtilityLabelRecord {
  std::vector<double> s;
  int a = 0;
  std::vector<std::uint8_t> ucl;
};

struct PrivacyLabelRecord {
  std::vector<double> s;
  int a = 0;
  std::vector<std::uint8_t> pcl;
};

// Label buffers plus the raw per-record Q maxima / per-window MI they were
// derived from, so a budget sweep can relabel without re-running the env.
struct ConfidenceBuffers {
  int branch_count = 0;
  std::vector<UtilityLabelRecord> utility;
  std::vector<PrivacyLabelRecord> privacy;

  std::vector<std::vector<double>> record_q;   // per utility record: per-branch Q_i_max
  std::vector<std::vector<double>> window_mi;  // per window: per-branch MI (bits)
  std::vector<int> privacy_window;             // per privacy record: owning window
  std::vector<long> window_start;              // per window: t of first step
  double i_max = 0.0;                          // max over window_mi

  // Raw per-step ids kept for MI reporting and audits.
  std::vector<int> step_sid;
  std::vector<int> step_truth;
  std::vector<std::vector<int>> branch_greedy;  // [branch][step] greedy action

  // Per-branch MI series over the recomputed greedy streams, replayed from
  // the stored window values (s_id binning).
  MISeries to_mi_series() const;
  // Same windows recomputed against the coarse truth-label binning — what
  // the adversary actually targets.
  MISeries activity_mi_series(int window_n, bool miller_madow = false) const;
};

// Phase 2 buffer construction: run the frozen Phase-1 network in the env for
// `steps` steps, executing at each step the greedy action of a uniformly
// random branch (bias-avoidance rule). Utility labels are computed per step
// from per-branch Q maxima; privacy labels once per MI window from per-branch
// MI over each branch's greedy actions (recomputed on the visited states) and
// broadcast to all records of the window. All labels use the final I_max of
// the pass. Trailing steps that do not fill a window carry no privacy records.
ConfidenceBuffers build_buffers(const EEQNetwork& net, Environment& env,
                                const MIWindowConfig& mi_cfg, const BudgetConfig& budgets,
                                int steps, Rng& rng);

// Recompute ucl/pcl from the stored raw material under new budgets.
void relabel_buffers(ConfidenceBuffers& buffers, const BudgetConfig& budgets);

// Fresh sigmoid heads (utility + privacy) for every branch.
void attach_confidence_heads(EEQNetwork& net, Rng& rng);

struct HeadTrainStats {
  std::vector<double> utility_heldout_acc;  // per branch
  std::vector<double> privacy_heldout_acc;
  double min_heldout_acc() const;
};

// BCE training of all heads against the buffers; trunk and branch Q-parameters
// are never touched. 20% held-out split for the reported accuracies.
HeadTrainStats train_confidence_heads(EEQNetwork& net, const ConfidenceBuffers& buffers,
                                      int epochs, Rng& rng);

// Branches whose labels are majority-1 in both buffers (a Table-1 cell).
std::vector<int> eligible_branches(const ConfidenceBuffers& buffers);

void write_buffer_csvs(const std::string& utility_path, const std::string& privacy_path,
                       const ConfidenceBuffers& buffers);

}  // namespace pearl
