#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pearl/env.hpp"
#include "pearl/nn.hpp"
#include "pearl/rng.hpp"

namespace pearl {

struct Transition {
  std::vector<double> s;
  int a = 0;
  double r = 0.0;
  std::vector<double> s_next;
  bool done = false;
};

// Fixed-capacity ring with uniform sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  const Transition& sample(Rng& rng) const;
  std::size_t size() const { return buffer_.size(); }
  std::size_t capacity() const { return capacity_; }
  void clear();
  const std::vector<Transition>& items() const { return buffer_; }

 private:
  std::size_t capacity_;
  std::vector<Transition> buffer_;
  std::size_t next_ = 0;
};

struct EpsilonSchedule {
  double start = 1.0;
  double end = 0.05;
  long decay_steps = 0;  // 0 = half the stage length (filled in by training)

  double at(long step) const {
    if (decay_steps <= 0 || step >= decay_steps) return end;
    return start + (end - start) * (static_cast<double>(step) / static_cast<double>(decay_steps));
  }
};

struct QTrainConfig {
  double gamma = 0.95;
  EpsilonSchedule epsilon;
  int batch_size = 16;
  int target_sync_interval = 500;
  int steps_per_layer = 20000;
  std::size_t replay_capacity = 10000;
  double learning_rate = 1e-3;
  int warmup_steps = 200;  // replay fill before gradient steps begin
  std::string training_csv;  // per-episode log path; empty = no log
};

// Layered Q-network where every trunk layer carries an exit branch emitting a
// full Q-value vector, plus per-branch sigmoid confidence heads attached
// after the labeling phase.
struct EEQNetwork {
  int state_dim = 0;
  int action_count = 0;
  nn::DenseStack trunk;                         // n relu layers
  std::vector<nn::DenseStack> branches;         // n heads: 64 -> 32 relu -> |A| linear
  std::vector<nn::DenseStack> utility_heads;    // n heads: 64 -> 32 relu -> 1 sigmoid
  std::vector<nn::DenseStack> privacy_heads;

  // Budget/leakage metadata stamped by the labeling phase; NaN until then.
  double budget_u = NAN;
  double budget_p = NAN;
  double i_max_bits = NAN;

  int layer_count() const { return static_cast<int>(trunk.layers.size()); }
  bool has_confidence_heads() const {
    return !utility_heads.empty() && utility_heads.size() == trunk.layers.size();
  }

  // Trunk activation after each layer, one forward pass serving all branches.
  std::vector<std::vector<double>> trunk_activations(std::span<const double> s) const;

  std::vector<double> q_values(std::span<const double> s, int branch) const;
  int greedy_action(std::span<const double> s, int branch) const;

  // Multiply-accumulate cost of evaluating q_values at this branch.
  long long q_flop_count(int branch) const;

  std::uint64_t trunk_layer_hash(int layer) const;
  std::uint64_t branch_hash(int branch) const;
};

// Phase 1 (sequential growth): for each layer stage, append a fresh trunk
// layer + branch, train them with ε-greedy DQN against a periodically synced
// target copy while all earlier parameters stay frozen.
EEQNetwork train_phase1(Environment& env, const QTrainConfig& cfg, int n_layers, Rng rng);

// Same per-stage loop but offline, from an existing replay buffer; used by
// drift-triggered retraining. Updates the network in place.
void finetune_from_replay(EEQNetwork& net, const ReplayBuffer& replay, const QTrainConfig& cfg,
                          int updates_per_layer, Rng& rng);

// Argmax over per-branch utility scores; ties break toward the lower index.
int best_utility_branch(std::span<const double> branch_scores);

// Evaluates each branch's greedy policy on a fresh environment and returns
// per-branch utility scores (aggregated per the env's UtilityKind).
std::vector<double> per_branch_utility(const EEQNetwork& net,
                                       const std::function<std::unique_ptr<Environment>()>& make_env,
                                       int eval_steps);

// Aggregate per-step utility samples into one score.
double utility_score(UtilityKind kind, std::span<const double> samples);

// Early-exit network container: stack sections (trunk, branches, heads) with
// an index table, plus budget metadata. Bit-exact round-trip.
void save_network(const std::string& path, const EEQNetwork& net);
EEQNetwork load_network(const std::string& path);

}  // namespace pearl
