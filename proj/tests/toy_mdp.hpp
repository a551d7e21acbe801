#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "pearl/env.hpp"
#include "pearl/rng.hpp"

namespace pearl {

// Tiny 2-state / 2-action MDP with a closed-form-checkable optimum, used to
// exercise the Q-learning machinery without simulation physics in the way.
//
//   reward(s0, a0) = +1   reward(s0, a1) = -1
//   reward(s1, a0) =  0   reward(s1, a1) = +2
//   a0: stay with prob 0.9, flip with prob 0.1
//   a1: flip with prob 0.9, stay with prob 0.1
//
// Under gamma = 0.95 the optimal policy is a0 in s0 and a1 in s1, with Q-gaps
// large enough (~1.2) that a converged net identifies it unambiguously.
class ToyMDP : public Environment {
 public:
  static constexpr double kReward[2][2] = {{1.0, -1.0}, {0.0, 2.0}};
  static constexpr double kFlipProb[2] = {0.1, 0.9};  // per action

  explicit ToyMDP(std::uint64_t seed) : rng_(Rng(seed).substream("toy-mdp")) { reset(); }

  int obs_dim() const override { return 2; }
  int action_count() const override { return 2; }

  std::vector<double> reset() override {
    s_ = 0;
    t_ = 0;
    return obs();
  }

  StepResult step(int a) override {
    StepResult r;
    r.reward = kReward[s_][a];
    r.utility_sample = r.reward;
    r.utility_sample_valid = true;
    if (rng_.chance(kFlipProb[a])) s_ = 1 - s_;
    ++t_;
    r.obs = obs();
    r.done = false;
    return r;
  }

  int state_id() const override { return s_; }
  int state_id_count() const override { return 2; }
  int truth_label() const override { return s_; }
  int truth_label_count() const override { return 2; }
  long clock() const override { return t_; }
  int phase_in_cycle() const override { return static_cast<int>(t_ % 4); }
  int cycle_length() const override { return 4; }
  UtilityKind utility_kind() const override { return UtilityKind::mean_score; }

 private:
  std::vector<double> obs() const { return {s_ == 0 ? 1.0 : 0.0, s_ == 1 ? 1.0 : 0.0}; }

  Rng rng_;
  int s_ = 0;
  long t_ = 0;
};

struct ToyMDPSolution {
  std::array<std::array<double, 2>, 2> q;  // [state][action]
  std::array<int, 2> optimal_action;
};

// Independent value-iteration oracle over the same constants.
inline ToyMDPSolution solve_toy_mdp(double gamma = 0.95) {
  std::array<double, 2> v = {0.0, 0.0};
  ToyMDPSolution sol{};
  for (int iter = 0; iter < 100000; ++iter) {
    std::array<double, 2> v_next{};
    double delta = 0.0;
    for (int s = 0; s < 2; ++s) {
      for (int a = 0; a < 2; ++a) {
        const double p_flip = ToyMDP::kFlipProb[a];
        sol.q[s][a] = ToyMDP::kReward[s][a] +
                      gamma * ((1.0 - p_flip) * v[s] + p_flip * v[1 - s]);
      }
      v_next[s] = std::max(sol.q[s][0], sol.q[s][1]);
      delta = std::max(delta, std::abs(v_next[s] - v[s]));
    }
    v = v_next;
    if (delta < 1e-13) break;
  }
  for (int s = 0; s < 2; ++s) sol.optimal_action[s] = sol.q[s][1] > sol.q[s][0] ? 1 : 0;
  return sol;
}

}  // namespace pearl
