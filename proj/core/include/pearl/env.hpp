#pragma once

#include <vector>

namespace pearl {

struct StepResult {
  std::vector<double> obs;
  double reward = 0.0;
  bool done = false;
  // Per-step utility sample (thermal: PMV when occupied; VR: quiz score).
  double utility_sample = 0.0;
  bool utility_sample_valid = false;
};

// How per-step utility samples aggregate into a scalar utility score.
enum class UtilityKind {
  in_range_fraction,  // fraction of samples inside a fixed comfort band
  mean_score,         // mean of 0..100 samples, normalized to 0..1
};

// Episodic simulation interface consumed by training, inference, and the
// privacy pipeline. `state_id`/`truth_label` describe the *current* state
// (the one the next action will be chosen in).
class Environment {
 public:
  virtual ~Environment() = default;

  virtual int obs_dim() const = 0;
  virtual int action_count() const = 0;

  virtual std::vector<double> reset() = 0;
  virtual StepResult step(int action) = 0;

  // Discrete state id for MI estimation (fine binning).
  virtual int state_id() const = 0;
  virtual int state_id_count() const = 0;

  // Private attribute the adversary tries to recover (activity / human state).
  virtual int truth_label() const = 0;
  virtual int truth_label_count() const = 0;

  // Step counter since construction (hours for the house, stages for VR).
  virtual long clock() const = 0;
  // Position within the daily/lecture cycle, used as the adversary's time feature.
  virtual int phase_in_cycle() const = 0;
  virtual int cycle_length() const = 0;

  virtual UtilityKind utility_kind() const = 0;
};

}  // namespace pearl
