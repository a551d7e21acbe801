#include <cmath>
#include <utility>
#include <vector>

#include "doctest.h"
#include "pearl/mutual_information.hpp"
#include "pearl/runtime.hpp"
#include "pearl/rng.hpp"
#include "toy_mdp.hpp"

using namespace pearl;

namespace {

// A tiny trained net with confidence heads whose outputs we then hard-wire:
// zeroed weights and a large final bias turn each head into a constant 0 or 1.
EEQNetwork rigged_net(int n_layers) {
  ToyMDP env(21);
  QTrainConfig cfg;
  cfg.steps_per_layer = 400;
  cfg.warmup_steps = 100;
  EEQNetwork net = train_phase1(env, cfg, n_layers, Rng(21).substream("qtrain"));
  Rng head_rng(22);
  attach_confidence_heads(net, head_rng);
  net.budget_u = 0.75;
  net.budget_p = 0.7;
  return net;
}

// Force a sigmoid head to a constant output: sigmoid(bias) with no input term.
void force_head(nn::DenseStack& head, double final_bias) {
  for (auto& layer : head.layers) {
    for (double& w : layer.weights.data) w = 0.0;
    for (double& b : layer.bias) b = 0.0;
  }
  head.layers.back().bias[0] = final_bias;
}

void set_heads(EEQNetwork& net, const std::vector<double>& utility_bias,
               const std::vector<double>& privacy_bias) {
  for (std::size_t b = 0; b < net.utility_heads.size(); ++b) {
    force_head(net.utility_heads[b], utility_bias[b]);
    force_head(net.privacy_heads[b], privacy_bias[b]);
  }
}

const std::vector<double> kS0 = {1.0, 0.0};

}  // namespace

TEST_CASE("exit choice takes the lowest-index branch passing both heads") {
  EEQNetwork net = rigged_net(3);
  const BudgetConfig budgets{0.75, 0.7, 0.8};

  set_heads(net, {-20.0, 20.0, 20.0}, {20.0, 20.0, 20.0});
  ExitDecision d = select_exit(net, kS0, budgets);
  CHECK(d.branch == 1);
  CHECK(d.feasible);
  CHECK(d.ucl_ok);
  CHECK(d.pcl_ok);
  CHECK(d.action == net.greedy_action(kS0, 1));

  set_heads(net, {20.0, 20.0, 20.0}, {20.0, 20.0, 20.0});
  CHECK(select_exit(net, kS0, budgets).branch == 0);
}

TEST_CASE("infeasible exits fall back to max privacy among utility passers") {
  EEQNetwork net = rigged_net(3);
  const BudgetConfig budgets{0.75, 0.7, 0.8};

  // No branch passes privacy; branches 1 and 2 pass utility. Privacy outputs
  // sigmoid(-1) = 0.269 vs sigmoid(-2) = 0.119: branch 1 wins the fallback.
  set_heads(net, {-20.0, 20.0, 20.0}, {-3.0, -1.0, -2.0});
  ExitDecision d = select_exit(net, kS0, budgets);
  CHECK_FALSE(d.feasible);
  CHECK(d.branch == 1);
  CHECK(d.ucl_ok);       // the fallback branch does pass utility
  CHECK_FALSE(d.pcl_ok);

  // Nothing passes utility either: global max privacy output wins.
  set_heads(net, {-20.0, -20.0, -20.0}, {-3.0, -0.5, -2.0});
  d = select_exit(net, kS0, budgets);
  CHECK_FALSE(d.feasible);
  CHECK(d.branch == 1);
  CHECK_FALSE(d.ucl_ok);
  CHECK_FALSE(d.pcl_ok);
}

TEST_CASE("exit choice validates heads and budget consistency") {
  ToyMDP env(23);
  QTrainConfig cfg;
  cfg.steps_per_layer = 200;
  cfg.warmup_steps = 100;
  EEQNetwork bare = train_phase1(env, cfg, 2, Rng(23).substream("qtrain"));
  CHECK_THROWS(select_exit(bare, kS0, BudgetConfig{}));  // no heads attached

  EEQNetwork net = rigged_net(2);
  set_heads(net, {20.0, 20.0}, {20.0, 20.0});
  BudgetConfig other{0.55, 0.7, 0.8};  // heads were trained for u=0.75
  CHECK_THROWS(select_exit(net, kS0, other));
}

TEST_CASE("variability monitor triggers only against history") {
  VariabilityMonitor mon;
  mon.v = 0.8;
  // Rising series never triggers: each window joins i_max before comparing.
  CHECK_FALSE(mon.observe(1.0));
  CHECK_FALSE(mon.observe(1.2));
  CHECK_FALSE(mon.observe(1.5));
  CHECK(mon.i_max == doctest::Approx(1.5));
  // Mild dip above the line: fine. Below the line: trigger.
  CHECK_FALSE(mon.observe(1.25));
  CHECK(mon.observe(1.19));
  CHECK(mon.i_current == doctest::Approx(1.19));
  CHECK(mon.i_max == doctest::Approx(1.5));  // max unaffected by the dip
  // While retraining the monitor stays quiet.
  mon.state = VariabilityMonitor::State::retraining;
  CHECK_FALSE(mon.observe(0.0));
  CHECK_THROWS(mon.observe(-0.1));
}

TEST_CASE("variability monitor at v = 1 tolerates exact repeats") {
  VariabilityMonitor mon;
  mon.v = 1.0;
  CHECK_FALSE(mon.observe(2.0));
  CHECK_FALSE(mon.observe(2.0));   // 2.0 < 1.0 * 2.0 is false
  CHECK(mon.observe(1.999999));    // any strict dip triggers
}

TEST_CASE("serving loop records the executed stream faithfully") {
  EEQNetwork net = rigged_net(2);
  set_heads(net, {20.0, 20.0}, {20.0, 20.0});
  ToyMDP env(31);
  MIWindowConfig mi_cfg;
  mi_cfg.window_n = 16;
  const BudgetConfig budgets{0.75, 0.7, 0.8};
  const int steps = 70;
  const RunTrace trace = run_policy(net, env, budgets, steps, mi_cfg, ServingPolicy::fixed(1));

  REQUIRE(static_cast<int>(trace.steps.size()) == steps);
  CHECK(trace.state_count == 2);
  CHECK(trace.action_count == 2);
  CHECK(trace.truth_count == 2);
  CHECK(trace.cycle_length == 4);

  std::vector<std::pair<int, int>> window;
  double expected_i = 0.0;
  for (int i = 0; i < steps; ++i) {
    const RunStep& rs = trace.steps[static_cast<std::size_t>(i)];
    CHECK(rs.t == i);
    CHECK(rs.branch == 1);
    CHECK(rs.feasible);
    CHECK(rs.truth == rs.s_id);  // toy task: the state is the private attribute
    CHECK(rs.phase == i % 4);
    // Replay the policy: fixed branch == greedy action on the observed state.
    const std::vector<double> obs = {rs.s_id == 0 ? 1.0 : 0.0, rs.s_id == 1 ? 1.0 : 0.0};
    CHECK(rs.a_id == net.greedy_action(obs, 1));
    // i_current equals the MI of the most recent completed window.
    window.emplace_back(rs.s_id, rs.a_id);
    if (static_cast<int>(window.size()) == mi_cfg.window_n) {
      expected_i = mutual_information(window);
      window.clear();
    }
    CHECK(rs.i_current == doctest::Approx(expected_i).epsilon(1e-12));
    CHECK_FALSE(rs.trigger);
  }

  // The companion action-trace view carries the same entries.
  const ActionTrace at = trace.to_action_trace();
  REQUIRE(at.entries.size() == trace.steps.size());
  CHECK_NOTHROW(at.validate());
  CHECK(at.entries[5].s_id == trace.steps[5].s_id);
  CHECK(at.entries[5].a_id == trace.steps[5].a_id);

  // Utility samples: toy task marks every step valid.
  CHECK(trace.utility_samples().size() == trace.steps.size());
}

TEST_CASE("gated serving records head verdicts per step") {
  EEQNetwork net = rigged_net(2);
  // Utility passes only at branch 1; privacy passes everywhere.
  set_heads(net, {-20.0, 20.0}, {20.0, 20.0});
  ToyMDP env(37);
  MIWindowConfig mi_cfg;
  const BudgetConfig budgets{0.75, 0.7, 0.8};
  const RunTrace trace = run_policy(net, env, budgets, 40, mi_cfg, ServingPolicy::gated());
  for (const RunStep& rs : trace.steps) {
    CHECK(rs.branch == 1);
    CHECK(rs.feasible);
  }
}
