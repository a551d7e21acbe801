#include "pearl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <utility>

#include <json.hpp>

#include "pearl/checkpoint.hpp"
#include "pearl/csv.hpp"
#include "pearl/vr_env.hpp"

namespace pearl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool is_vr(const ExperimentConfig& cfg) { return cfg.env == "vr"; }

std::uint64_t derived_seed(const ExperimentConfig& cfg, std::string_view label) {
  return Rng(cfg.seed).substream(label).seed();
}

double population_std(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

std::string format_budget(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string branch_list_label(const std::vector<int>& branches) {
  if (branches.empty()) return "×";  // × — the infeasible-cell marker
  std::string out;
  for (std::size_t i = 0; i < branches.size(); ++i) {
    if (i > 0) out += '|';
    out += 'L' + std::to_string(branches[i] + 1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config parsing (strict INI: unknown sections/keys are errors)

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return std::isspace(c) == 0; };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

[[noreturn]] void bad_value(const std::string& ctx, const std::string& value) {
  throw std::runtime_error("config: bad value for " + ctx + ": '" + value + "'");
}

int parse_int(const std::string& v, const std::string& ctx) {
  try {
    std::size_t pos = 0;
    const int x = std::stoi(v, &pos);
    if (pos != v.size()) bad_value(ctx, v);
    return x;
  } catch (const std::runtime_error&) {
    throw;
  } catch (...) {
    bad_value(ctx, v);
  }
}

std::uint64_t parse_u64(const std::string& v, const std::string& ctx) {
  try {
    std::size_t pos = 0;
    const std::uint64_t x = std::stoull(v, &pos);
    if (pos != v.size()) bad_value(ctx, v);
    return x;
  } catch (const std::runtime_error&) {
    throw;
  } catch (...) {
    bad_value(ctx, v);
  }
}

double parse_double(const std::string& v, const std::string& ctx) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) bad_value(ctx, v);
    return x;
  } catch (const std::runtime_error&) {
    throw;
  } catch (...) {
    bad_value(ctx, v);
  }
}

bool parse_bool(const std::string& v, const std::string& ctx) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(ctx, v);
}

std::vector<double> parse_double_list(const std::string& v, const std::string& ctx) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(trim(item), ctx));
  if (out.empty()) bad_value(ctx, v);
  return out;
}

void set_key(ExperimentConfig& cfg, const std::string& section, const std::string& key,
             const std::string& value) {
  const std::string ctx = "[" + section + "] " + key;
  auto unknown = [&]() -> std::runtime_error {
    return std::runtime_error("config: unknown key " + ctx);
  };
  if (section == "run") {
    if (key == "env") cfg.env = value;
    else if (key == "profile") cfg.profile = value;
    else if (key == "seed") cfg.seed = parse_u64(value, ctx);
    else if (key == "outdir") cfg.outdir = value;
    else if (key == "run_id") cfg.run_id = value;
    else if (key == "checkpoint") cfg.checkpoint = value;
    else if (key == "trace") cfg.trace_csv = value;
    else if (key == "truth") cfg.truth_csv = value;
    else throw unknown();
  } else if (section == "train") {
    if (key == "n_layers") cfg.n_layers = parse_int(value, ctx);
    else if (key == "steps_per_layer") cfg.steps_per_layer = parse_int(value, ctx);
    else if (key == "learning_rate") cfg.learning_rate = parse_double(value, ctx);
    else if (key == "phase2_steps") cfg.phase2_steps = parse_int(value, ctx);
    else if (key == "head_epochs") cfg.head_epochs = parse_int(value, ctx);
    else throw unknown();
  } else if (section == "mi") {
    if (key == "window_n") cfg.window_n = parse_int(value, ctx);
    else if (key == "miller_madow") cfg.miller_madow = parse_bool(value, ctx);
    else throw unknown();
  } else if (section == "budgets") {
    if (key == "u") cfg.budgets.u = parse_double(value, ctx);
    else if (key == "p") cfg.budgets.p = parse_double(value, ctx);
    else if (key == "v") cfg.budgets.v = parse_double(value, ctx);
    else throw unknown();
  } else if (section == "serve") {
    if (key == "eval_steps") cfg.eval_steps = parse_int(value, ctx);
    else if (key == "branch") cfg.serve_branch = parse_int(value, ctx);
    else throw unknown();
  } else if (section == "attack") {
    if (key == "k_max") cfg.k_max = parse_int(value, ctx);
    else if (key == "restarts") cfg.restarts = parse_int(value, ctx);
    else if (key == "day_vectors") cfg.day_vectors = parse_bool(value, ctx);
    else throw unknown();
  } else if (section == "sweep") {
    if (key == "u_list") cfg.u_list = parse_double_list(value, ctx);
    else if (key == "p_list") cfg.p_list = parse_double_list(value, ctx);
    else if (key == "threads") cfg.threads = parse_int(value, ctx);
    else throw unknown();
  } else if (section == "drift") {
    if (key == "profile") cfg.drift_profile = value;
    else if (key == "switch_step") cfg.drift_switch_step = parse_int(value, ctx);
    else if (key == "steps") cfg.drift_steps = parse_int(value, ctx);
    else if (key == "finetune_updates") cfg.finetune_updates = parse_int(value, ctx);
    else if (key == "calibration_windows") cfg.calibration_windows = parse_int(value, ctx);
    else throw unknown();
  } else if (section == "house") {
    if (key == "thermal_resistance") cfg.house.thermal_resistance = parse_double(value, ctx);
    else if (key == "thermal_mass") cfg.house.thermal_mass = parse_double(value, ctx);
    else if (key == "heater_supply_c") cfg.house.heater_supply_c = parse_double(value, ctx);
    else if (key == "cooler_supply_c") cfg.house.cooler_supply_c = parse_double(value, ctx);
    else if (key == "airflow_w_per_k") cfg.house.airflow_w_per_k = parse_double(value, ctx);
    else if (key == "outdoor_mean_c") cfg.house.outdoor.mean_c = parse_double(value, ctx);
    else if (key == "outdoor_amplitude_c") cfg.house.outdoor.amplitude_c = parse_double(value, ctx);
    else if (key == "outdoor_peak_hour") cfg.house.outdoor.peak_hour = parse_double(value, ctx);
    else if (key == "rho") cfg.rho_override = parse_double(value, ctx);
    else throw unknown();
  } else if (section == "vr") {
    if (key == "noise_sd") cfg.vr_noise_sd = parse_double(value, ctx);
    else throw unknown();
  } else {
    throw std::runtime_error("config: unknown section [" + section + "]");
  }
}

// ---------------------------------------------------------------------------

std::unique_ptr<ThermalEnv> make_thermal(const ExperimentConfig& cfg, std::uint64_t env_seed,
                                         std::string_view profile_id) {
  OccupantProfile prof = occupant_profile(profile_id);
  if (cfg.rho_override >= 0.0) prof.rho = cfg.rho_override;
  return std::make_unique<ThermalEnv>(std::move(prof), cfg.house, env_seed);
}

// Thermal env that swaps the occupant profile after a fixed number of served
// steps — the behavior-drift scenario.
class ProfileSwitchEnv : public Environment {
 public:
  ProfileSwitchEnv(std::unique_ptr<ThermalEnv> inner, OccupantProfile to, long switch_step)
      : inner_(std::move(inner)), to_(std::move(to)), switch_step_(switch_step) {}

  int obs_dim() const override { return inner_->obs_dim(); }
  int action_count() const override { return inner_->action_count(); }
  std::vector<double> reset() override { return inner_->reset(); }
  StepResult step(int action) override {
    if (!switched_ && served_ == switch_step_) {
      inner_->set_profile(to_);
      switched_ = true;
    }
    ++served_;
    return inner_->step(action);
  }
  int state_id() const override { return inner_->state_id(); }
  int state_id_count() const override { return inner_->state_id_count(); }
  int truth_label() const override { return inner_->truth_label(); }
  int truth_label_count() const override { return inner_->truth_label_count(); }
  long clock() const override { return inner_->clock(); }
  int phase_in_cycle() const override { return inner_->phase_in_cycle(); }
  int cycle_length() const override { return inner_->cycle_length(); }
  UtilityKind utility_kind() const override { return inner_->utility_kind(); }

 private:
  std::unique_ptr<ThermalEnv> inner_;
  OccupantProfile to_;
  long switch_step_;
  long served_ = 0;
  bool switched_ = false;
};

ActionTrace activity_binned_trace(const RunTrace& trace) {
  ActionTrace at;
  at.state_count = trace.truth_count;
  at.action_count = trace.action_count;
  for (const auto& s : trace.steps) at.append(s.t, s.truth, s.a_id, s.branch);
  return at;
}

json config_json(const ExperimentConfig& cfg) {
  json j;
  j["command"] = cfg.command;
  j["env"] = cfg.env;
  j["profile"] = cfg.profile;
  j["seed"] = cfg.seed;
  j["n_layers"] = cfg.n_layers;
  j["budgets"] = {{"u", cfg.budgets.u}, {"p", cfg.budgets.p}, {"v", cfg.budgets.v}};
  j["steps_per_layer"] = cfg.steps_per_layer;
  j["learning_rate"] = cfg.learning_rate;
  j["phase2_steps"] = cfg.resolved_phase2_steps();
  j["head_epochs"] = cfg.head_epochs;
  j["window_n"] = cfg.resolved_window_n();
  j["miller_madow"] = cfg.miller_madow;
  j["eval_steps"] = cfg.resolved_eval_steps();
  j["serve_branch"] = cfg.serve_branch;
  j["k_max"] = cfg.resolved_k_max();
  j["restarts"] = cfg.restarts;
  j["day_vectors"] = cfg.day_vectors;
  j["u_list"] = cfg.u_list;
  j["p_list"] = cfg.p_list;
  j["threads"] = cfg.threads;
  j["drift"] = {{"profile", cfg.drift_profile},
                {"switch_step", cfg.resolved_switch_step()},
                {"steps", cfg.resolved_drift_steps()},
                {"finetune_updates", cfg.finetune_updates},
                {"calibration_windows", cfg.calibration_windows}};
  if (!is_vr(cfg)) {
    j["house"] = {{"thermal_resistance", cfg.house.thermal_resistance},
                  {"thermal_mass", cfg.house.thermal_mass},
                  {"heater_supply_c", cfg.house.heater_supply_c},
                  {"cooler_supply_c", cfg.house.cooler_supply_c},
                  {"airflow_w_per_k", cfg.house.airflow_w_per_k},
                  {"outdoor_mean_c", cfg.house.outdoor.mean_c},
                  {"outdoor_amplitude_c", cfg.house.outdoor.amplitude_c},
                  {"outdoor_peak_hour", cfg.house.outdoor.peak_hour},
                  {"rho_override", cfg.rho_override}};
  } else {
    j["vr"] = {{"noise_sd", cfg.vr_noise_sd}};
  }
  if (!cfg.checkpoint.empty()) j["checkpoint_in"] = cfg.checkpoint;
  if (!cfg.trace_csv.empty()) j["trace_in"] = cfg.trace_csv;
  if (!cfg.truth_csv.empty()) j["truth_in"] = cfg.truth_csv;
  return j;
}

void write_manifest(const fs::path& dir, const ExperimentConfig& cfg, json results) {
  json j;
  j["run_id"] = cfg.resolved_run_id();
  j["config"] = config_json(cfg);
  j["results"] = std::move(results);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot open for writing: " + (dir / "manifest.json").string());
  out << j.dump(2) << '\n';
}

fs::path prepare_run_dir(const ExperimentConfig& cfg) {
  const fs::path dir(cfg.run_dir());
  fs::create_directories(dir);
  return dir;
}

json cell_json(const SweepCell& cell) {
  return {{"u", cell.u},
          {"p", cell.p},
          {"feasible", cell.feasible},
          {"eligible", cell.eligible},
          {"attack_accuracy", cell.attack_accuracy},
          {"utility_score", cell.utility_score},
          {"utility_std", cell.utility_std},
          {"min_head_acc", cell.min_head_acc}};
}

}  // namespace

// ---------------------------------------------------------------------------
// ExperimentConfig

int ExperimentConfig::resolved_window_n() const {
  return window_n > 0 ? window_n : (env == "vr" ? 100 : 168);
}
int ExperimentConfig::resolved_phase2_steps() const {
  return phase2_steps > 0 ? phase2_steps : (env == "vr" ? 2000 : 2016);
}
int ExperimentConfig::resolved_eval_steps() const {
  return eval_steps > 0 ? eval_steps : (env == "vr" ? 1000 : 1200);
}
int ExperimentConfig::resolved_k_max() const {
  return k_max > 0 ? k_max : (env == "vr" ? 10 : 12);
}
int ExperimentConfig::resolved_switch_step() const {
  // 25 simulated days of hours, or 25 lectures of stages.
  return drift_switch_step > 0 ? drift_switch_step
                               : (env == "vr" ? 25 * VREnv::kStagesPerLecture : 25 * 24);
}
int ExperimentConfig::resolved_drift_steps() const {
  return drift_steps > 0 ? drift_steps : 2 * resolved_switch_step();
}
std::string ExperimentConfig::resolved_run_id() const {
  if (!run_id.empty()) return run_id;
  return command + "-" + env + "-" + profile + "-s" + std::to_string(seed);
}
std::string ExperimentConfig::run_dir() const {
  return (fs::path(outdir) / resolved_run_id()).string();
}

void ExperimentConfig::validate() const {
  budgets.validate();
  if (env != "thermal" && env != "vr")
    throw std::runtime_error("config: env must be 'thermal' or 'vr', got '" + env + "'");
  if (env == "thermal") {
    occupant_profile(profile);
    if (!drift_profile.empty()) occupant_profile(drift_profile);
  } else {
    vr_profile(profile);
    if (!drift_profile.empty()) vr_profile(drift_profile);
  }
  if (n_layers < 1 || n_layers > 64) throw std::runtime_error("config: n_layers out of [1,64]");
  if (steps_per_layer < 1) throw std::runtime_error("config: steps_per_layer must be positive");
  if (learning_rate <= 0.0) throw std::runtime_error("config: learning_rate must be positive");
  if (head_epochs < 1) throw std::runtime_error("config: head_epochs must be positive");
  if (resolved_phase2_steps() < resolved_window_n())
    throw std::runtime_error("config: phase2_steps shorter than one MI window");
  if (resolved_eval_steps() < 1) throw std::runtime_error("config: eval_steps must be positive");
  if (resolved_k_max() < 3) throw std::runtime_error("config: k_max must be at least 3");
  if (restarts < 1) throw std::runtime_error("config: restarts must be positive");
  if (threads < 0) throw std::runtime_error("config: threads must be non-negative");
  if (u_list.empty() || p_list.empty())
    throw std::runtime_error("config: sweep lists must be non-empty");
  for (double u : u_list)
    if (u <= 0.0 || u > 1.0) throw std::runtime_error("config: sweep u values must lie in (0,1]");
  for (double p : p_list)
    if (p <= 0.0 || p > 1.0) throw std::runtime_error("config: sweep p values must lie in (0,1]");
  if (rho_override > 1.0) throw std::runtime_error("config: rho must lie in [0,1]");
  if (house.thermal_resistance <= 0.0 || house.thermal_mass <= 0.0 ||
      house.airflow_w_per_k < 0.0)
    throw std::runtime_error("config: house parameters must be positive");
  if (finetune_updates < 0) throw std::runtime_error("config: finetune_updates must be >= 0");
  if (calibration_windows < 1)
    throw std::runtime_error("config: calibration_windows must be positive");
  if (resolved_drift_steps() <= resolved_switch_step())
    throw std::runtime_error("config: drift steps must exceed the switch step");
  if (vr_noise_sd < 0.0) throw std::runtime_error("config: noise_sd must be non-negative");
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section = "run";
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t cut = line.find_first_of("#;");
    if (cut != std::string::npos) line.erase(cut);
    line = trim(std::move(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::runtime_error("config line " + std::to_string(lineno) +
                                 ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
    try {
      set_key(cfg, section, key, value);
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string(e.what()) + " (line " + std::to_string(lineno) + ")");
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::unique_ptr<Environment> make_environment(const ExperimentConfig& cfg,
                                              std::uint64_t env_seed) {
  return make_environment(cfg, env_seed, cfg.profile);
}

std::unique_ptr<Environment> make_environment(const ExperimentConfig& cfg, std::uint64_t env_seed,
                                              std::string_view profile_id) {
  if (is_vr(cfg)) return std::make_unique<VREnv>(vr_profile(profile_id), env_seed, cfg.vr_noise_sd);
  return make_thermal(cfg, env_seed, profile_id);
}

// ---------------------------------------------------------------------------
// Pipelines

TrainArtifacts train_pipeline(const ExperimentConfig& cfg, const std::string& training_csv) {
  cfg.validate();
  Rng root(cfg.seed);

  QTrainConfig qcfg;
  qcfg.steps_per_layer = cfg.steps_per_layer;
  qcfg.learning_rate = cfg.learning_rate;
  qcfg.training_csv = training_csv;

  TrainArtifacts art;
  {
    auto env = make_environment(cfg, derived_seed(cfg, "env-phase1"));
    art.net = train_phase1(*env, qcfg, cfg.n_layers, root.substream("phase1"));
  }

  const MIWindowConfig mi_cfg{cfg.resolved_window_n(), cfg.miller_madow};
  {
    auto env = make_environment(cfg, derived_seed(cfg, "env-phase2"));
    Rng phase2 = root.substream("phase2");
    art.buffers =
        build_buffers(art.net, *env, mi_cfg, cfg.budgets, cfg.resolved_phase2_steps(), phase2);
  }
  Rng heads = root.substream("confidence");
  attach_confidence_heads(art.net, heads);
  art.head_stats = train_confidence_heads(art.net, art.buffers, cfg.head_epochs, heads);
  art.net.budget_u = cfg.budgets.u;
  art.net.budget_p = cfg.budgets.p;
  art.net.i_max_bits = art.buffers.i_max;

  const std::uint64_t eval_seed = derived_seed(cfg, "env-branch-eval");
  art.branch_utility = per_branch_utility(
      art.net, [&cfg, eval_seed] { return make_environment(cfg, eval_seed); },
      cfg.resolved_eval_steps());
  art.best_branch = best_utility_branch(art.branch_utility);
  return art;
}

EvalOutcome evaluate_policy(const EEQNetwork& net, const ExperimentConfig& cfg,
                            const BudgetConfig& budgets, const ServingPolicy& serving,
                            std::uint64_t env_seed, Rng attack_rng) {
  const MIWindowConfig mi_cfg{cfg.resolved_window_n(), cfg.miller_madow};
  EvalOutcome out;
  {
    auto env = make_environment(cfg, env_seed);
    out.trace = run_policy(net, *env, budgets, cfg.resolved_eval_steps(), mi_cfg, serving);
  }
  out.serving_mi = mi_series(out.trace.to_action_trace(), mi_cfg);
  const std::vector<double> samples = out.trace.utility_samples();
  out.utility_score =
      utility_score(is_vr(cfg) ? UtilityKind::mean_score : UtilityKind::in_range_fraction,
                    samples);
  out.utility_std = population_std(samples);

  const auto features = attack_features(out.trace, cfg.day_vectors);
  std::vector<int> truth;
  if (!cfg.day_vectors)
    for (const auto& s : out.trace.steps) truth.push_back(s.truth);
  const AttackConfig acfg{cfg.resolved_k_max(), cfg.restarts, cfg.day_vectors};
  out.attack = run_attack(features, truth, acfg, attack_rng);
  return out;
}

const SweepCell& SweepOutcome::cell(double u, double p) const {
  for (const auto& c : cells)
    if (std::abs(c.u - u) < 1e-9 && std::abs(c.p - p) < 1e-9) return c;
  throw std::out_of_range("sweep: no cell at u=" + format_budget(u) + " p=" + format_budget(p));
}

namespace {

SweepCell run_sweep_cell(const TrainArtifacts& base, const ExperimentConfig& cfg, double u,
                         double p) {
  const std::string label = "cell-u" + format_budget(u) + "-p" + format_budget(p);
  Rng cell_rng = Rng(cfg.seed).substream(label);

  BudgetConfig budgets = cfg.budgets;
  budgets.u = u;
  budgets.p = p;

  ConfidenceBuffers buffers = base.buffers;
  relabel_buffers(buffers, budgets);

  SweepCell cell;
  cell.u = u;
  cell.p = p;
  cell.eligible = eligible_branches(buffers);
  cell.feasible = !cell.eligible.empty();

  EEQNetwork net = base.net;
  attach_confidence_heads(net, cell_rng);
  const HeadTrainStats stats = train_confidence_heads(net, buffers, cfg.head_epochs, cell_rng);
  cell.min_head_acc = stats.min_heldout_acc();
  net.budget_u = u;
  net.budget_p = p;
  net.i_max_bits = buffers.i_max;

  EvalOutcome ev = evaluate_policy(net, cfg, budgets, ServingPolicy::gated(),
                                   derived_seed(cfg, "env-sweep-eval"),
                                   cell_rng.substream("attack"));
  cell.attack_accuracy = ev.attack.accuracy;
  cell.utility_score = ev.utility_score;
  cell.utility_std = ev.utility_std;
  cell.trace = std::move(ev.trace);
  cell.attack = std::move(ev.attack);
  return cell;
}

}  // namespace

SweepOutcome sweep_pipeline(const TrainArtifacts& base, const ExperimentConfig& cfg) {
  cfg.validate();
  struct CellSpec {
    double u, p;
  };
  std::vector<CellSpec> specs;
  for (double u : cfg.u_list)
    for (double p : cfg.p_list) specs.push_back({u, p});

  SweepOutcome out;
  out.cells.resize(specs.size());

  const unsigned hw = std::thread::hardware_concurrency();
  const std::size_t workers =
      std::min(specs.size(),
               static_cast<std::size_t>(cfg.threads > 0 ? cfg.threads : (hw > 0 ? hw : 4)));

  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= specs.size()) return;
      try {
        out.cells[i] = run_sweep_cell(base, cfg, specs[i].u, specs[i].p);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

void write_eligibility_csv(const std::string& path, const SweepOutcome& sweep,
                           const ExperimentConfig& cfg) {
  std::vector<std::string> header = {"p"};
  for (double u : cfg.u_list) header.push_back("u=" + format_budget(u));
  CsvWriter csv(path, header);
  for (double p : cfg.p_list) {
    std::vector<std::string> row = {format_budget(p)};
    for (double u : cfg.u_list) row.push_back(branch_list_label(sweep.cell(u, p).eligible));
    csv.write_row(row);
  }
}

void write_tradeoff_csv(const std::string& path, const SweepOutcome& sweep) {
  CsvWriter csv(path, {"u", "p", "feasible", "eligible", "attack_accuracy", "utility_score",
                       "utility_std", "min_head_acc"});
  for (const auto& cell : sweep.cells) {
    csv.write_row({CsvWriter::num(cell.u), CsvWriter::num(cell.p),
                   CsvWriter::num(static_cast<long long>(cell.feasible ? 1 : 0)),
                   branch_list_label(cell.eligible), CsvWriter::num(cell.attack_accuracy),
                   CsvWriter::num(cell.utility_score), CsvWriter::num(cell.utility_std),
                   CsvWriter::num(cell.min_head_acc)});
  }
}

DriftOutcome drift_pipeline(EEQNetwork& net, const ExperimentConfig& cfg, bool enable_switch) {
  cfg.validate();
  if (is_vr(cfg)) throw std::runtime_error("drift scenario: thermal env only");
  if (!net.has_confidence_heads())
    throw std::invalid_argument("drift: network has no trained confidence heads");

  const MIWindowConfig mi_cfg{cfg.resolved_window_n(), cfg.miller_madow};
  const int switch_step = cfg.resolved_switch_step();
  const int total_steps = cfg.resolved_drift_steps();

  int branch = cfg.serve_branch;
  if (branch < 0) {
    const std::uint64_t bseed = derived_seed(cfg, "env-branch-eval");
    branch = best_utility_branch(per_branch_utility(
        net, [&cfg, bseed] { return make_environment(cfg, bseed); }, cfg.resolved_eval_steps()));
  }
  const ServingPolicy serving = ServingPolicy::fixed(branch);

  // Seed the monitor conservatively from two serving windows on the starting
  // profile (separate stream, no scenario time consumed): the low end of
  // normal variation; the running max takes over from the first live window.
  // Binned by the private attribute, matching what the live monitor watches.
  double seed_i = 0.0;
  {
    auto calib_env = make_environment(cfg, derived_seed(cfg, "env-drift-calib"));
    const RunTrace calib =
        run_policy(net, *calib_env, cfg.budgets, 2 * mi_cfg.window_n, mi_cfg, serving);
    const MISeries series = mi_series(activity_binned_trace(calib), mi_cfg);
    if (series.points.empty())
      throw std::runtime_error("drift: calibration produced no MI windows");
    seed_i = series.points[0].bits;
    for (const auto& pt : series.points) seed_i = std::min(seed_i, pt.bits);
    if (seed_i <= 0.0)
      throw std::runtime_error(
          "drift: served stream carries no leakage to monitor (calibration MI is zero)");
  }

  VariabilityMonitor monitor;
  monitor.v = cfg.budgets.v;
  monitor.i_max = seed_i;
  monitor.i_current = seed_i;

  std::unique_ptr<Environment> env;
  {
    auto base = make_thermal(cfg, derived_seed(cfg, "env-drift"), cfg.profile);
    if (enable_switch) {
      if (cfg.drift_profile.empty())
        throw std::runtime_error("drift: no target profile configured");
      OccupantProfile to = occupant_profile(cfg.drift_profile);
      if (cfg.rho_override >= 0.0) to.rho = cfg.rho_override;
      env = std::make_unique<ProfileSwitchEnv>(std::move(base), std::move(to), switch_step);
    } else {
      env = std::move(base);
    }
  }

  RetrainConfig rcfg;
  rcfg.finetune_updates = cfg.finetune_updates;
  rcfg.head_epochs = cfg.head_epochs;
  rcfg.calibration_windows = cfg.calibration_windows;
  rcfg.qtrain.learning_rate = cfg.learning_rate;

  Rng rng = Rng(cfg.seed).substream(enable_switch ? "drift" : "drift-control");

  DriftOutcome out;
  out.window_n = mi_cfg.window_n;
  out.served_branch = branch;
  out.initial_i_max = monitor.i_max;
  out.report =
      monitor_and_retrain(net, *env, monitor, cfg.budgets, rcfg, total_steps, mi_cfg, rng, serving);
  out.final_i_max = monitor.i_max;
  if (!out.report.trigger_steps.empty() && out.report.recovery_step >= 0)
    out.recovery_steps_after_trigger = out.report.recovery_step - out.report.trigger_steps.front();
  return out;
}

// ---------------------------------------------------------------------------
// CLI commands

int cmd_train(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path dir = prepare_run_dir(cfg);
  const TrainArtifacts art = train_pipeline(cfg, (dir / "training.csv").string());

  const std::string ckpt = (dir / "network.bin").string();
  save_network(ckpt, art.net);
  write_mi_csv((dir / "mi_branches.csv").string(), art.buffers.to_mi_series());
  write_mi_csv((dir / "mi_branches_activity.csv").string(),
               art.buffers.activity_mi_series(cfg.resolved_window_n(), cfg.miller_madow));
  write_buffer_csvs((dir / "utility_labels.csv").string(), (dir / "privacy_labels.csv").string(),
                    art.buffers);
  {
    CsvWriter bu((dir / "branch_utility.csv").string(), {"branch", "utility", "flops"});
    for (std::size_t b = 0; b < art.branch_utility.size(); ++b)
      bu.write_row({CsvWriter::num(static_cast<long long>(b)),
                    CsvWriter::num(art.branch_utility[b]),
                    CsvWriter::num(art.net.q_flop_count(static_cast<int>(b)))});
  }
  if (is_vr(cfg)) vr_profile(cfg.profile).dump_csv((dir / "profile_mdp.csv").string());

  json results;
  results["checkpoint"] = "network.bin";
  results["checkpoint_fnv1a64"] = file_hash_hex(ckpt);
  results["i_max_bits"] = art.buffers.i_max;
  results["best_branch"] = art.best_branch;
  results["branch_utility"] = art.branch_utility;
  results["eligible_branches"] = eligible_branches(art.buffers);
  results["head_heldout_accuracy"] = {{"utility", art.head_stats.utility_heldout_acc},
                                      {"privacy", art.head_stats.privacy_heldout_acc},
                                      {"min", art.head_stats.min_heldout_acc()}};
  write_manifest(dir, cfg, results);
  std::cout << "train: " << dir.string() << "  i_max=" << art.buffers.i_max << " bits, best branch L"
            << art.best_branch + 1 << "\n";
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path dir = prepare_run_dir(cfg);

  TrainArtifacts art;
  if (cfg.checkpoint.empty()) {
    art = train_pipeline(cfg, (dir / "training.csv").string());
  } else {
    art.net = load_network(cfg.checkpoint);
    const MIWindowConfig mi_cfg{cfg.resolved_window_n(), cfg.miller_madow};
    auto env = make_environment(cfg, derived_seed(cfg, "env-phase2"));
    Rng phase2 = Rng(cfg.seed).substream("phase2");
    art.buffers =
        build_buffers(art.net, *env, mi_cfg, cfg.budgets, cfg.resolved_phase2_steps(), phase2);
  }

  const SweepOutcome sweep = sweep_pipeline(art, cfg);
  write_eligibility_csv((dir / "eligibility.csv").string(), sweep, cfg);
  write_tradeoff_csv((dir / "tradeoff.csv").string(), sweep);
  for (const auto& cell : sweep.cells) {
    const fs::path cell_dir =
        dir / "cells" / ("u" + format_budget(cell.u) + "-p" + format_budget(cell.p));
    fs::create_directories(cell_dir);
    cell.trace.write_csv((cell_dir / "trace.csv").string());
    cell.trace.write_truth_csv((cell_dir / "truth.csv").string());
    write_attack_report((cell_dir / "attack_wcss.csv").string(),
                        (cell_dir / "attack.json").string(), cell.attack);
  }

  json results;
  results["cells"] = json::array();
  for (const auto& cell : sweep.cells) results["cells"].push_back(cell_json(cell));
  if (!cfg.checkpoint.empty()) results["checkpoint_fnv1a64"] = file_hash_hex(cfg.checkpoint);
  write_manifest(dir, cfg, results);
  std::cout << "sweep: " << dir.string() << "  " << sweep.cells.size() << " cells\n";
  return 0;
}

int cmd_infer(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.checkpoint.empty()) throw std::runtime_error("infer: requires [run] checkpoint");
  const fs::path dir = prepare_run_dir(cfg);

  const EEQNetwork net = load_network(cfg.checkpoint);
  const ServingPolicy serving =
      cfg.serve_branch >= 0 ? ServingPolicy::fixed(cfg.serve_branch) : ServingPolicy::gated();
  const EvalOutcome ev = evaluate_policy(net, cfg, cfg.budgets, serving,
                                         derived_seed(cfg, "env-serve"),
                                         Rng(cfg.seed).substream("attack"));

  ev.trace.write_csv((dir / "trace.csv").string());
  ev.trace.write_truth_csv((dir / "truth.csv").string());
  write_mi_csv((dir / "mi_serving.csv").string(), ev.serving_mi);
  const MIWindowConfig mi_cfg{cfg.resolved_window_n(), cfg.miller_madow};
  write_mi_csv((dir / "mi_serving_activity.csv").string(),
               mi_series(activity_binned_trace(ev.trace), mi_cfg));
  write_attack_report((dir / "attack_wcss.csv").string(), (dir / "attack.json").string(),
                      ev.attack);

  std::size_t feasible = 0;
  std::vector<long long> branch_hist(static_cast<std::size_t>(net.layer_count()), 0);
  for (const auto& s : ev.trace.steps) {
    if (s.feasible) ++feasible;
    if (s.branch >= 0 && s.branch < net.layer_count())
      ++branch_hist[static_cast<std::size_t>(s.branch)];
  }

  json results;
  results["checkpoint_fnv1a64"] = file_hash_hex(cfg.checkpoint);
  results["utility_score"] = ev.utility_score;
  results["utility_std"] = ev.utility_std;
  results["serving_i_max"] = ev.serving_mi.i_max;
  results["attack"] = {{"k_selected", ev.attack.k_selected}, {"accuracy", ev.attack.accuracy}};
  results["feasible_fraction"] =
      ev.trace.steps.empty()
          ? 1.0
          : static_cast<double>(feasible) / static_cast<double>(ev.trace.steps.size());
  results["branch_histogram"] = branch_hist;
  write_manifest(dir, cfg, results);
  std::cout << "infer: " << dir.string() << "  utility=" << ev.utility_score
            << " attack_accuracy=" << ev.attack.accuracy << " (k=" << ev.attack.k_selected
            << ")\n";
  return 0;
}

int cmd_attack(const ExperimentConfig& cfg) {
  if (cfg.trace_csv.empty() || cfg.truth_csv.empty())
    throw std::runtime_error("attack: requires [run] trace and truth CSV paths");
  const fs::path dir = prepare_run_dir(cfg);

  const CsvTable trace_table = read_csv(cfg.trace_csv);
  const std::vector<std::string> want_trace = {"t",        "s_id",      "a_id",   "branch",
                                               "feasible", "i_current", "trigger"};
  if (trace_table.header != want_trace)
    throw std::runtime_error("attack: trace csv has unexpected schema: " + cfg.trace_csv);
  const CsvTable truth_table = read_csv(cfg.truth_csv);
  const std::vector<std::string> want_truth = {"t", "truth", "phase"};
  if (truth_table.header != want_truth)
    throw std::runtime_error("attack: truth csv has unexpected schema: " + cfg.truth_csv);
  if (trace_table.rows.size() != truth_table.rows.size())
    throw std::runtime_error("attack: trace and truth row counts differ");
  if (trace_table.rows.empty()) throw std::runtime_error("attack: empty trace");

  RunTrace trace;
  for (std::size_t i = 0; i < trace_table.rows.size(); ++i) {
    const auto& tr = trace_table.rows[i];
    const auto& gr = truth_table.rows[i];
    if (tr.at(0) != gr.at(0))
      throw std::runtime_error("attack: trace/truth timestamps disagree at row " +
                               std::to_string(i));
    RunStep s;
    s.t = std::stol(tr.at(0));
    s.s_id = std::stoi(tr.at(1));
    s.a_id = std::stoi(tr.at(2));
    s.branch = std::stoi(tr.at(3));
    s.feasible = std::stoi(tr.at(4)) != 0;
    s.i_current = std::stod(tr.at(5));
    s.trigger = std::stoi(tr.at(6)) != 0;
    s.truth = std::stoi(gr.at(1));
    s.phase = std::stoi(gr.at(2));
    trace.steps.push_back(std::move(s));
  }
  for (const auto& s : trace.steps) {
    trace.state_count = std::max(trace.state_count, s.s_id + 1);
    trace.action_count = std::max(trace.action_count, s.a_id + 1);
    trace.truth_count = std::max(trace.truth_count, s.truth + 1);
    trace.cycle_length = std::max(trace.cycle_length, s.phase + 1);
  }

  const auto features = attack_features(trace, cfg.day_vectors);
  std::vector<int> truth;
  if (!cfg.day_vectors)
    for (const auto& s : trace.steps) truth.push_back(s.truth);
  const AttackConfig acfg{cfg.resolved_k_max(), cfg.restarts, cfg.day_vectors};
  Rng attack_rng = Rng(cfg.seed).substream("attack");
  const ClusteringReport report = run_attack(features, truth, acfg, attack_rng);

  write_attack_report((dir / "attack_wcss.csv").string(), (dir / "attack.json").string(), report);
  json results;
  results["k_selected"] = report.k_selected;
  results["accuracy"] = report.accuracy;
  results["n_samples"] = features.size();
  write_manifest(dir, cfg, results);
  std::cout << "attack: k=" << report.k_selected << " accuracy=" << report.accuracy << "\n";
  return 0;
}

int cmd_drift(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.checkpoint.empty()) throw std::runtime_error("drift: requires [run] checkpoint");
  const fs::path dir = prepare_run_dir(cfg);

  EEQNetwork net = load_network(cfg.checkpoint);
  const bool enable_switch = !cfg.drift_profile.empty();
  const DriftOutcome out = drift_pipeline(net, cfg, enable_switch);

  out.report.trace.write_csv((dir / "trace.csv").string());
  out.report.trace.write_truth_csv((dir / "truth.csv").string());
  write_mi_csv((dir / "mi_serving.csv").string(), out.report.serving_mi);
  {
    CsvWriter hist((dir / "i_max_history.csv").string(), {"window", "i_max"});
    for (std::size_t w = 0; w < out.report.i_max_history.size(); ++w)
      hist.write_row({CsvWriter::num(static_cast<long long>(w)),
                      CsvWriter::num(out.report.i_max_history[w])});
    CsvWriter trig((dir / "triggers.csv").string(), {"t"});
    for (long t : out.report.trigger_steps)
      trig.write_row({CsvWriter::num(static_cast<long long>(t))});
  }
  save_network((dir / "network_final.bin").string(), net);

  json results;
  results["checkpoint_fnv1a64"] = file_hash_hex(cfg.checkpoint);
  results["switch_enabled"] = enable_switch;
  results["served_branch"] = out.served_branch;
  results["initial_i_max"] = out.initial_i_max;
  results["final_i_max"] = out.final_i_max;
  results["trigger_steps"] = out.report.trigger_steps;
  results["recovery_step"] = out.report.recovery_step;
  results["recovery_steps_after_trigger"] = out.recovery_steps_after_trigger;
  results["window_n"] = out.window_n;
  write_manifest(dir, cfg, results);
  std::cout << "drift: " << dir.string() << "  triggers=" << out.report.trigger_steps.size()
            << " recovery_step=" << out.report.recovery_step << "\n";
  return 0;
}

int cmd_report(const ExperimentConfig& cfg) {
  const fs::path dir(cfg.run_dir());
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("report: no manifest at " + manifest_path.string());
  json manifest = json::parse(in);

  json report;
  report["run_id"] = manifest.value("run_id", std::string{});
  report["config"] = manifest.value("config", json::object());
  report["results"] = manifest.value("results", json::object());

  auto csv_to_json = [&](const std::string& name) -> json {
    const fs::path p = dir / name;
    if (!fs::exists(p)) return nullptr;
    const CsvTable table = read_csv(p.string());
    json rows = json::array();
    for (const auto& r : table.rows) {
      json row;
      for (std::size_t c = 0; c < table.header.size(); ++c) row[table.header[c]] = r.at(c);
      rows.push_back(std::move(row));
    }
    return rows;
  };
  for (const char* name : {"eligibility.csv", "tradeoff.csv", "branch_utility.csv",
                           "i_max_history.csv", "triggers.csv"}) {
    const json rows = csv_to_json(name);
    if (!rows.is_null()) report[fs::path(name).stem().string()] = rows;
  }
  for (const char* name : {"attack.json"}) {
    const fs::path p = dir / name;
    if (fs::exists(p)) {
      std::ifstream f(p);
      report[fs::path(name).stem().string()] = json::parse(f);
    }
  }

  std::ofstream out(dir / "report.json");
  if (!out) throw std::runtime_error("cannot open for writing: " + (dir / "report.json").string());
  out << report.dump(2) << '\n';
  std::cout << report.dump(2) << "\n";
  return 0;
}

int run_command(const ExperimentConfig& cfg) {
  try {
    if (cfg.command == "train") return cmd_train(cfg);
    if (cfg.command == "sweep") return cmd_sweep(cfg);
    if (cfg.command == "infer") return cmd_infer(cfg);
    if (cfg.command == "attack") return cmd_attack(cfg);
    if (cfg.command == "drift") return cmd_drift(cfg);
    if (cfg.command == "report") return cmd_report(cfg);
    std::cerr << "error: unknown command '" << cfg.command << "'\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace pearl
