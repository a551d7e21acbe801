#include "pearl/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

#include "pearl/csv.hpp"

namespace pearl {

namespace {

void check_budget_match(const EEQNetwork& net, const BudgetConfig& budgets) {
  auto matches = [](double trained, double asked) {
    return std::isnan(trained) || std::abs(trained - asked) < 1e-9;
  };
  if (!matches(net.budget_u, budgets.u) || !matches(net.budget_p, budgets.p))
    throw std::invalid_argument(
        "select_exit: confidence heads were trained for different budgets");
}

double head_output(const nn::DenseStack& head, const std::vector<double>& feat) {
  return nn::forward(head, feat)[0];
}

}  // namespace

ExitDecision select_exit(const EEQNetwork& net, std::span<const double> s,
                         const BudgetConfig& budgets) {
  budgets.validate();
  if (!net.has_confidence_heads())
    throw std::logic_error("select_exit: network has no trained confidence heads");
  check_budget_match(net, budgets);

  const std::vector<std::vector<double>> acts = net.trunk_activations(s);
  ExitDecision decision;
  double best_privacy = -1.0;
  int best_privacy_branch = -1;
  double best_gated_privacy = -1.0;
  int best_gated_branch = -1;
  for (int b = 0; b < net.layer_count(); ++b) {
    const auto& feat = acts[static_cast<std::size_t>(b)];
    const double u_out = head_output(net.utility_heads[static_cast<std::size_t>(b)], feat);
    const double p_out = head_output(net.privacy_heads[static_cast<std::size_t>(b)], feat);
    if (u_out >= 0.5 && p_out >= 0.5) {
      decision.branch = b;
      decision.ucl_ok = true;
      decision.pcl_ok = true;
      decision.feasible = true;
      break;
    }
    if (p_out > best_privacy) {
      best_privacy = p_out;
      best_privacy_branch = b;
    }
    if (u_out >= 0.5 && p_out > best_gated_privacy) {
      best_gated_privacy = p_out;
      best_gated_branch = b;
    }
  }
  if (!decision.feasible) {
    decision.branch = best_gated_branch >= 0 ? best_gated_branch : best_privacy_branch;
    decision.ucl_ok = best_gated_branch >= 0;
    decision.pcl_ok = false;
  }
  const auto& feat = acts[static_cast<std::size_t>(decision.branch)];
  const std::vector<double> q =
      nn::forward(net.branches[static_cast<std::size_t>(decision.branch)], feat);
  decision.action = static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin());
  return decision;
}

ActionTrace RunTrace::to_action_trace() const {
  ActionTrace trace;
  trace.state_count = state_count;
  trace.action_count = action_count;
  trace.entries.reserve(steps.size());
  for (const RunStep& s : steps) trace.entries.push_back({s.t, s.s_id, s.a_id, s.branch});
  return trace;
}

std::vector<double> RunTrace::utility_samples() const {
  std::vector<double> samples;
  for (const RunStep& s : steps)
    if (s.utility_sample_valid) samples.push_back(s.utility_sample);
  return samples;
}

void RunTrace::write_csv(const std::string& path) const {
  CsvWriter csv(path, {"t", "s_id", "a_id", "branch", "feasible", "i_current", "trigger"});
  for (const RunStep& s : steps)
    csv.write_row({CsvWriter::num(static_cast<long long>(s.t)),
                   CsvWriter::num(static_cast<long long>(s.s_id)),
                   CsvWriter::num(static_cast<long long>(s.a_id)),
                   CsvWriter::num(static_cast<long long>(s.branch)),
                   s.feasible ? "1" : "0", CsvWriter::num(s.i_current), s.trigger ? "1" : "0"});
}

void RunTrace::write_truth_csv(const std::string& path) const {
  CsvWriter csv(path, {"t", "truth", "phase"});
  for (const RunStep& s : steps)
    csv.write_row({CsvWriter::num(static_cast<long long>(s.t)),
                   CsvWriter::num(static_cast<long long>(s.truth)),
                   CsvWriter::num(static_cast<long long>(s.phase))});
}

namespace {

ExitDecision serve_decision(const EEQNetwork& net, const std::vector<double>& obs,
                            const BudgetConfig& budgets, const ServingPolicy& serving) {
  if (serving.mode == ServingPolicy::Mode::fixed_branch) {
    ExitDecision d;
    d.branch = serving.branch;
    d.action = net.greedy_action(obs, serving.branch);
    d.ucl_ok = d.pcl_ok = d.feasible = true;
    return d;
  }
  return select_exit(net, obs, budgets);
}

}  // namespace

RunTrace run_policy(const EEQNetwork& net, Environment& env, const BudgetConfig& budgets,
                    int steps, const MIWindowConfig& mi_cfg, const ServingPolicy& serving) {
  if (steps < 1) throw std::invalid_argument("run_policy: steps must be >= 1");
  RunTrace trace;
  trace.state_count = env.state_id_count();
  trace.action_count = env.action_count();
  trace.truth_count = env.truth_label_count();
  trace.cycle_length = env.cycle_length();

  std::vector<double> obs = env.reset();
  std::vector<std::pair<int, int>> window;
  double i_current = 0.0;
  for (int step = 0; step < steps; ++step) {
    const ExitDecision d = serve_decision(net, obs, budgets, serving);
    RunStep rs;
    rs.t = env.clock();
    rs.s_id = env.state_id();
    rs.truth = env.truth_label();
    rs.phase = env.phase_in_cycle();
    rs.a_id = d.action;
    rs.branch = d.branch;
    rs.feasible = d.feasible;

    window.emplace_back(rs.s_id, rs.a_id);
    if (static_cast<int>(window.size()) == mi_cfg.window_n) {
      i_current = mutual_information(window, mi_cfg.miller_madow);
      window.clear();
    }
    rs.i_current = i_current;

    StepResult res = env.step(d.action);
    rs.utility_sample = res.utility_sample;
    rs.utility_sample_valid = res.utility_sample_valid;
    trace.steps.push_back(rs);
    obs = res.done ? env.reset() : std::move(res.obs);
  }
  return trace;
}

bool VariabilityMonitor::observe(double window_mi) {
  if (window_mi < 0.0) throw std::invalid_argument("monitor: negative MI");
  // The observed maximum includes the current window, so a window can only
  // trigger against history, never against itself.
  i_max = std::max(i_max, window_mi);
  i_current = window_mi;
  return state == State::stable && i_current < v * i_max;
}

namespace {

// Recent interaction history for offline retraining: transitions for the
// Q fine-tune plus the aligned (obs, s_id, t) stream for label rebuilding.
struct RecentHistory {
  std::deque<std::vector<double>> obs;
  std::deque<int> s_id;
  std::deque<long> t;
  std::size_t capacity;

  explicit RecentHistory(std::size_t cap) : capacity(cap) {}

  void push(std::vector<double> o, int sid, long time) {
    obs.push_back(std::move(o));
    s_id.push_back(sid);
    t.push_back(time);
    while (obs.size() > capacity) {
      obs.pop_front();
      s_id.pop_front();
      t.pop_front();
    }
  }
};

// Rebuild Phase-2 buffers from stored history instead of fresh interaction.
ConfidenceBuffers buffers_from_history(const EEQNetwork& net, const RecentHistory& history,
                                       const MIWindowConfig& mi_cfg, const BudgetConfig& budgets,
                                       Rng& rng) {
  const int B = net.layer_count();
  const int steps = static_cast<int>(history.obs.size());
  const int n_windows = steps / mi_cfg.window_n;
  if (n_windows == 0) throw std::runtime_error("retrain: history shorter than one MI window");
  // Trailing window-aligned slice: the freshest behavior.
  const int base0 = steps - n_windows * mi_cfg.window_n;

  ConfidenceBuffers buffers;
  buffers.branch_count = B;
  buffers.branch_greedy.assign(static_cast<std::size_t>(B), {});
  for (int i = base0; i < steps; ++i) {
    const auto& obs = history.obs[static_cast<std::size_t>(i)];
    const std::vector<std::vector<double>> acts = net.trunk_activations(obs);
    std::vector<double> q_max(static_cast<std::size_t>(B));
    std::vector<int> greedy(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
      const std::vector<double> q =
          nn::forward(net.branches[static_cast<std::size_t>(b)], acts[static_cast<std::size_t>(b)]);
      const auto it = std::max_element(q.begin(), q.end());
      q_max[static_cast<std::size_t>(b)] = *it;
      greedy[static_cast<std::size_t>(b)] = static_cast<int>(it - q.begin());
    }
    const int chosen = rng.uniform_int(0, B - 1);
    buffers.utility.push_back({obs, greedy[static_cast<std::size_t>(chosen)], {}});
    buffers.record_q.push_back(std::move(q_max));
    buffers.step_sid.push_back(history.s_id[static_cast<std::size_t>(i)]);
    buffers.step_truth.push_back(0);
    for (int b = 0; b < B; ++b)
      buffers.branch_greedy[static_cast<std::size_t>(b)].push_back(greedy[static_cast<std::size_t>(b)]);
  }
  std::vector<std::pair<int, int>> window(static_cast<std::size_t>(mi_cfg.window_n));
  for (int w = 0; w < n_windows; ++w) {
    const int base = w * mi_cfg.window_n;
    std::vector<double> mi_row(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
      for (int i = 0; i < mi_cfg.window_n; ++i)
        window[static_cast<std::size_t>(i)] = {
            buffers.step_sid[static_cast<std::size_t>(base + i)],
            buffers.branch_greedy[static_cast<std::size_t>(b)][static_cast<std::size_t>(base + i)]};
      mi_row[static_cast<std::size_t>(b)] = mutual_information(window, mi_cfg.miller_madow);
      buffers.i_max = std::max(buffers.i_max, mi_row[static_cast<std::size_t>(b)]);
    }
    buffers.window_mi.push_back(std::move(mi_row));
    buffers.window_start.push_back(history.t[static_cast<std::size_t>(base0 + base)]);
    for (int i = 0; i < mi_cfg.window_n; ++i) {
      const std::size_t idx = static_cast<std::size_t>(base + i);
      buffers.privacy.push_back({buffers.utility[idx].s, buffers.utility[idx].a, {}});
      buffers.privacy_window.push_back(w);
    }
  }
  relabel_buffers(buffers, budgets);
  return buffers;
}

}  // namespace

DriftReport monitor_and_retrain(EEQNetwork& net, Environment& env, VariabilityMonitor& monitor,
                                const BudgetConfig& budgets, const RetrainConfig& retrain,
                                int steps, const MIWindowConfig& mi_cfg, Rng& rng,
                                const ServingPolicy& serving) {
  if (monitor.i_max <= 0.0)
    throw std::invalid_argument("monitor_and_retrain: monitor.i_max must be set before serving");
  monitor.v = budgets.v;

  DriftReport report;
  report.trace.state_count = env.state_id_count();
  report.trace.action_count = env.action_count();
  report.trace.truth_count = env.truth_label_count();
  report.trace.cycle_length = env.cycle_length();

  RecentHistory history(retrain.replay_capacity);
  ReplayBuffer replay(retrain.replay_capacity);
  Rng retrain_rng = rng.substream("retrain");
  Rng buffer_rng = rng.substream("rebuild");

  std::vector<double> obs = env.reset();
  std::vector<std::pair<int, int>> window;
  bool recovered = false;
  bool triggered_once = false;
  int anchor_windows_left = 0;  // post-retrain windows still to observe
  double anchor_max = 0.0;      // their running max, the future i_max

  for (int step = 0; step < steps; ++step) {
    const ExitDecision d = serve_decision(net, obs, budgets, serving);
    RunStep rs;
    rs.t = env.clock();
    rs.s_id = env.state_id();
    rs.truth = env.truth_label();
    rs.phase = env.phase_in_cycle();
    rs.a_id = d.action;
    rs.branch = d.branch;
    rs.feasible = d.feasible;

    history.push(obs, rs.s_id, rs.t);
    // The monitor bins the shared stream by the private attribute itself:
    // the leak it guards is what an observer of the actions can learn about
    // the occupant's activity, and the fine state id would bury a behavior
    // change under temperature texture that is the same for every occupant.
    window.emplace_back(rs.truth, rs.a_id);
    bool trigger_now = false;
    if (static_cast<int>(window.size()) == mi_cfg.window_n) {
      const double mi = mutual_information(window, mi_cfg.miller_madow);
      window.clear();
      const bool was_stable = monitor.state == VariabilityMonitor::State::stable;
      if (was_stable) {
        trigger_now = monitor.observe(mi);
      } else {
        // Validation period after a retrain: these windows re-anchor i_max
        // instead of testing the trigger predicate (repeat triggers coalesce).
        anchor_max = std::max(anchor_max, mi);
        monitor.i_current = mi;
        if (--anchor_windows_left == 0) {
          monitor.i_max = anchor_max;
          monitor.state = VariabilityMonitor::State::stable;
        }
      }
      const MIPoint point{d.branch, rs.t - mi_cfg.window_n + 1, mi, monitor.i_max};
      report.serving_mi.points.push_back(point);
      report.serving_mi.i_max = std::max(report.serving_mi.i_max, mi);
      report.i_max_history.push_back(monitor.i_max);
      if (triggered_once && !recovered && was_stable && !trigger_now &&
          mi >= monitor.v * monitor.i_max) {
        report.recovery_step = rs.t;
        recovered = true;
      }
    }
    rs.i_current = monitor.i_current;
    rs.trigger = trigger_now;

    if (trigger_now) {
      monitor.state = VariabilityMonitor::State::retraining;
      report.trigger_steps.push_back(rs.t);
      triggered_once = true;
      recovered = false;
      anchor_windows_left = std::max(1, retrain.calibration_windows);
      anchor_max = 0.0;

      // Offline retrain from recent replay; sim time does not advance.
      QTrainConfig cfg = retrain.qtrain;
      cfg.replay_capacity = retrain.replay_capacity;
      const int per_layer = std::max(1, retrain.finetune_updates / net.layer_count());
      finetune_from_replay(net, replay, cfg, per_layer, retrain_rng);

      // Rebuild labels and heads from the same recent history; i_max
      // re-anchors from the next completed serving windows.
      ConfidenceBuffers buffers =
          buffers_from_history(net, history, mi_cfg, budgets, buffer_rng);
      attach_confidence_heads(net, buffer_rng);
      train_confidence_heads(net, buffers, retrain.head_epochs, buffer_rng);
      net.budget_u = budgets.u;
      net.budget_p = budgets.p;
      net.i_max_bits = buffers.i_max;
    }

    StepResult res = env.step(d.action);
    rs.utility_sample = res.utility_sample;
    rs.utility_sample_valid = res.utility_sample_valid;
    replay.push({obs, d.action, res.reward, res.obs, res.done});
    report.trace.steps.push_back(rs);
    obs = res.done ? env.reset() : std::move(res.obs);
  }
  return report;
}

}  // namespace pearl
