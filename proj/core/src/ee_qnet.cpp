#include "pearl/ee_qnet.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pearl/checkpoint.hpp"
#include "pearl/csv.hpp"

namespace pearl {

namespace {
constexpr int kTrunkWidth = 64;
constexpr int kBranchWidth = 32;
}  // namespace

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
  buffer_.reserve(capacity);
}

void ReplayBuffer::push(Transition t) {
  if (buffer_.size() < capacity_) {
    buffer_.push_back(std::move(t));
  } else {
    buffer_[next_] = std::move(t);
    next_ = (next_ + 1) % capacity_;
  }
}

const Transition& ReplayBuffer::sample(Rng& rng) const {
  if (buffer_.empty()) throw std::logic_error("replay: sample from empty buffer");
  return buffer_[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(buffer_.size()) - 1))];
}

void ReplayBuffer::clear() {
  buffer_.clear();
  next_ = 0;
}

std::vector<std::vector<double>> EEQNetwork::trunk_activations(std::span<const double> s) const {
  nn::StackCache cache;
  nn::forward(trunk, s, cache);
  return std::move(cache.post);
}

std::vector<double> EEQNetwork::q_values(std::span<const double> s, int branch) const {
  if (branch < 0 || branch >= layer_count()) throw std::out_of_range("q_values: branch out of range");
  const std::vector<double> feat = nn::forward(trunk, s, branch + 1);
  return nn::forward(branches[static_cast<std::size_t>(branch)], feat);
}

int EEQNetwork::greedy_action(std::span<const double> s, int branch) const {
  const std::vector<double> q = q_values(s, branch);
  return static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin());
}

long long EEQNetwork::q_flop_count(int branch) const {
  if (branch < 0 || branch >= layer_count()) throw std::out_of_range("q_flop_count: branch out of range");
  return nn::flop_count(trunk, branch + 1) + nn::flop_count(branches[static_cast<std::size_t>(branch)]);
}

std::uint64_t EEQNetwork::trunk_layer_hash(int layer) const {
  nn::DenseStack one;
  one.layers.push_back(trunk.layers.at(static_cast<std::size_t>(layer)));
  return nn::parameter_hash(one);
}

std::uint64_t EEQNetwork::branch_hash(int branch) const {
  return nn::parameter_hash(branches.at(static_cast<std::size_t>(branch)));
}

namespace {

// Greedy/random action for the in-training branch.
int act_epsilon_greedy(const EEQNetwork& net, int branch, std::span<const double> obs, double epsilon,
                       Rng& rng) {
  if (rng.chance(epsilon)) return rng.uniform_int(0, net.action_count - 1);
  return net.greedy_action(obs, branch);
}

struct StageNets {
  // Views for the training stage: the full trunk plus the stage branch.
  nn::DenseStack target_trunk;
  nn::DenseStack target_branch;
};

double stage_train_batch(EEQNetwork& net, int stage, const StageNets& target,
                         const std::vector<const Transition*>& batch, double gamma,
                         nn::Optimizer& trunk_opt, nn::Optimizer& branch_opt,
                         const nn::ParameterMask& trunk_mask) {
  nn::Gradients trunk_grads, branch_grads;
  trunk_grads.match(net.trunk);
  branch_grads.match(net.branches[static_cast<std::size_t>(stage)]);
  nn::StackCache trunk_cache, branch_cache;
  double total_loss = 0.0;
  for (const Transition* tr : batch) {
    // TD target from the frozen copy.
    double target_q = tr->r;
    if (!tr->done) {
      const std::vector<double> feat_next = nn::forward(target.target_trunk, tr->s_next, stage + 1);
      const std::vector<double> q_next = nn::forward(target.target_branch, feat_next);
      target_q += gamma * *std::max_element(q_next.begin(), q_next.end());
    }
    // Online forward with caches.
    const std::vector<double>& feat =
        nn::forward(net.trunk, tr->s, trunk_cache, stage + 1);
    const std::vector<double>& q =
        nn::forward(net.branches[static_cast<std::size_t>(stage)], feat, branch_cache);
    // MSE on the taken action only: target vector equals the output elsewhere.
    std::vector<double> target_vec(q.begin(), q.end());
    target_vec[static_cast<std::size_t>(tr->a)] = target_q;
    const double err = q[static_cast<std::size_t>(tr->a)] - target_q;
    total_loss += err * err;
    std::vector<double> d_feat = nn::backward(
        net.branches[static_cast<std::size_t>(stage)], branch_cache,
        nn::loss_grad(nn::LossKind::mse, q, target_vec), branch_grads);
    nn::backward(net.trunk, trunk_cache, std::move(d_feat), trunk_grads, stage + 1);
  }
  const double mean_loss = total_loss / static_cast<double>(batch.size());
  if (!std::isfinite(mean_loss)) throw std::runtime_error("phase 1 diverged: non-finite TD loss");
  trunk_grads.scale(1.0 / static_cast<double>(batch.size()));
  branch_grads.scale(1.0 / static_cast<double>(batch.size()));
  trunk_opt.apply(net.trunk, trunk_grads, trunk_mask);
  branch_opt.apply(net.branches[static_cast<std::size_t>(stage)], branch_grads);
  return mean_loss;
}

void sync_target(const EEQNetwork& net, int stage, StageNets& target) {
  target.target_trunk = net.trunk;
  target.target_branch = net.branches[static_cast<std::size_t>(stage)];
}

// Shared stage loop: interact==true draws fresh transitions from the env;
// otherwise samples come purely from the provided replay buffer.
void run_stage(EEQNetwork& net, int stage, Environment* env, ReplayBuffer& replay,
               const QTrainConfig& cfg, long total_updates, bool interact, Rng& explore_rng,
               Rng& replay_rng, CsvWriter* log, long* global_step) {
  EpsilonSchedule eps = cfg.epsilon;
  if (eps.decay_steps <= 0) eps.decay_steps = cfg.steps_per_layer / 2;
  nn::Optimizer trunk_opt = nn::Optimizer::adam(cfg.learning_rate);
  nn::Optimizer branch_opt = nn::Optimizer::adam(cfg.learning_rate);
  const nn::ParameterMask trunk_mask = nn::ParameterMask::freeze_below(stage + 1, stage);

  StageNets target;
  sync_target(net, stage, target);

  std::vector<double> obs;
  if (interact) obs = env->reset();
  double episode_return = 0.0;
  double last_loss = 0.0;
  std::vector<const Transition*> batch(static_cast<std::size_t>(cfg.batch_size));

  for (long step = 0; step < total_updates; ++step) {
    const double epsilon = interact ? eps.at(step) : 0.0;
    if (interact) {
      const int action = act_epsilon_greedy(net, stage, obs, epsilon, explore_rng);
      StepResult res = env->step(action);
      episode_return += res.reward;
      replay.push({obs, action, res.reward, res.obs, res.done});
      obs = res.done ? env->reset() : std::move(res.obs);
      if (res.done && log) {
        log->write_row({CsvWriter::num(static_cast<long long>(*global_step)),
                        CsvWriter::num(static_cast<long long>(stage)), CsvWriter::num(epsilon),
                        CsvWriter::num(last_loss), CsvWriter::num(episode_return)});
        episode_return = 0.0;
      }
      ++*global_step;
    }
    const std::size_t min_fill = interact
        ? std::max<std::size_t>(static_cast<std::size_t>(cfg.batch_size),
                                static_cast<std::size_t>(cfg.warmup_steps))
        : static_cast<std::size_t>(cfg.batch_size);
    if (replay.size() >= min_fill) {
      for (int b = 0; b < cfg.batch_size; ++b) batch[static_cast<std::size_t>(b)] = &replay.sample(replay_rng);
      last_loss = stage_train_batch(net, stage, target, batch, cfg.gamma, trunk_opt, branch_opt,
                                    trunk_mask);
    }
    if ((step + 1) % cfg.target_sync_interval == 0) sync_target(net, stage, target);
    // Continuing tasks have no episode boundary; log on a fixed cadence.
    if (interact && log && (step + 1) % 500 == 0) {
      log->write_row({CsvWriter::num(static_cast<long long>(*global_step)),
                      CsvWriter::num(static_cast<long long>(stage)), CsvWriter::num(epsilon),
                      CsvWriter::num(last_loss), CsvWriter::num(episode_return)});
      episode_return = 0.0;
    }
  }
}

}  // namespace

EEQNetwork train_phase1(Environment& env, const QTrainConfig& cfg, int n_layers, Rng rng) {
  if (n_layers < 1) throw std::invalid_argument("train_phase1: n_layers must be >= 1");
  EEQNetwork net;
  net.state_dim = env.obs_dim();
  net.action_count = env.action_count();

  std::unique_ptr<CsvWriter> log;
  if (!cfg.training_csv.empty())
    log = std::make_unique<CsvWriter>(cfg.training_csv,
                                      std::vector<std::string>{"step", "layer_stage", "epsilon",
                                                               "loss", "episode_return"});
  long global_step = 0;
  for (int stage = 0; stage < n_layers; ++stage) {
    Rng init_rng = rng.substream("init", static_cast<std::uint64_t>(stage));
    const int in_dim = stage == 0 ? net.state_dim : kTrunkWidth;
    net.trunk.layers.push_back(nn::make_layer(in_dim, kTrunkWidth, nn::Activation::relu, init_rng));
    net.branches.push_back(nn::make_stack({kTrunkWidth, kBranchWidth, net.action_count},
                                          {nn::Activation::relu, nn::Activation::linear},
                                          init_rng));
    Rng explore_rng = rng.substream("explore", static_cast<std::uint64_t>(stage));
    Rng replay_rng = rng.substream("replay", static_cast<std::uint64_t>(stage));
    ReplayBuffer replay(cfg.replay_capacity);
    try {
      run_stage(net, stage, &env, replay, cfg, cfg.steps_per_layer, /*interact=*/true, explore_rng,
                replay_rng, log.get(), &global_step);
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << "phase 1 failed at layer stage " << stage << ": " << e.what();
      throw std::runtime_error(msg.str());
    }
  }
  return net;
}

void finetune_from_replay(EEQNetwork& net, const ReplayBuffer& replay, const QTrainConfig& cfg,
                          int updates_per_layer, Rng& rng) {
  if (net.layer_count() == 0) throw std::invalid_argument("finetune: untrained network");
  if (replay.size() < static_cast<std::size_t>(cfg.batch_size))
    throw std::invalid_argument("finetune: replay too small");
  long global_step = 0;
  ReplayBuffer& source = const_cast<ReplayBuffer&>(replay);
  for (int stage = 0; stage < net.layer_count(); ++stage) {
    Rng explore_rng = rng.substream("ft-explore", static_cast<std::uint64_t>(stage));
    Rng replay_rng = rng.substream("ft-replay", static_cast<std::uint64_t>(stage));
    run_stage(net, stage, nullptr, source, cfg, updates_per_layer, /*interact=*/false, explore_rng,
              replay_rng, nullptr, &global_step);
  }
}

int best_utility_branch(std::span<const double> branch_scores) {
  if (branch_scores.empty()) throw std::invalid_argument("best_utility_branch: empty scores");
  int best = 0;
  for (int i = 1; i < static_cast<int>(branch_scores.size()); ++i)
    if (branch_scores[static_cast<std::size_t>(i)] > branch_scores[static_cast<std::size_t>(best)]) best = i;
  return best;
}

std::vector<double> per_branch_utility(const EEQNetwork& net,
                                       const std::function<std::unique_ptr<Environment>()>& make_env,
                                       int eval_steps) {
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(net.layer_count()));
  for (int branch = 0; branch < net.layer_count(); ++branch) {
    auto env = make_env();
    std::vector<double> obs = env->reset();
    std::vector<double> samples;
    for (int step = 0; step < eval_steps; ++step) {
      const int action = net.greedy_action(obs, branch);
      StepResult res = env->step(action);
      if (res.utility_sample_valid) samples.push_back(res.utility_sample);
      obs = res.done ? env->reset() : std::move(res.obs);
    }
    scores.push_back(utility_score(env->utility_kind(), samples));
  }
  return scores;
}

double utility_score(UtilityKind kind, std::span<const double> samples) {
  if (samples.empty()) return 0.0;
  if (kind == UtilityKind::in_range_fraction) {
    std::size_t in_range = 0;
    for (double v : samples)
      if (std::abs(v) <= 0.5) ++in_range;
    return static_cast<double>(in_range) / static_cast<double>(samples.size());
  }
  double total = 0.0;
  for (double v : samples) total += v;
  return total / (100.0 * static_cast<double>(samples.size()));
}

namespace {
constexpr char kNetMagic[8] = {'P', 'R', 'L', 'E', 'E', 'Q', 'N', 'T'};
constexpr std::uint32_t kNetVersion = 1;
enum SectionKind : std::uint8_t { kTrunk = 0, kBranch = 1, kUtilityHead = 2, kPrivacyHead = 3 };
}  // namespace

void save_network(const std::string& path, const EEQNetwork& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(kNetMagic, sizeof(kNetMagic));
  write_u32(out, kNetVersion);
  write_u32(out, static_cast<std::uint32_t>(net.state_dim));
  write_u32(out, static_cast<std::uint32_t>(net.action_count));
  write_u32(out, static_cast<std::uint32_t>(net.layer_count()));
  write_u8(out, net.has_confidence_heads() ? 1 : 0);
  write_f64(out, net.budget_u);
  write_f64(out, net.budget_p);
  write_f64(out, net.i_max_bits);

  // Serialize sections to memory first so the index table can carry offsets.
  struct Section {
    std::uint8_t kind;
    std::uint32_t index;
    std::string bytes;
  };
  std::vector<Section> sections;
  auto add = [&sections](std::uint8_t kind, std::uint32_t index, const nn::DenseStack& stack) {
    std::ostringstream buf(std::ios::binary);
    write_stack(buf, stack);
    sections.push_back({kind, index, buf.str()});
  };
  add(kTrunk, 0, net.trunk);
  for (std::size_t i = 0; i < net.branches.size(); ++i)
    add(kBranch, static_cast<std::uint32_t>(i), net.branches[i]);
  for (std::size_t i = 0; i < net.utility_heads.size(); ++i)
    add(kUtilityHead, static_cast<std::uint32_t>(i), net.utility_heads[i]);
  for (std::size_t i = 0; i < net.privacy_heads.size(); ++i)
    add(kPrivacyHead, static_cast<std::uint32_t>(i), net.privacy_heads[i]);

  write_u32(out, static_cast<std::uint32_t>(sections.size()));
  std::uint64_t offset = 0;
  for (const Section& s : sections) {
    write_u8(out, s.kind);
    write_u32(out, s.index);
    write_u64(out, offset);
    offset += s.bytes.size();
  }
  for (const Section& s : sections) out.write(s.bytes.data(), static_cast<std::streamsize>(s.bytes.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

EEQNetwork load_network(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kNetMagic))
    throw std::runtime_error("checkpoint: bad magic: " + path);
  if (read_u32(in) != kNetVersion) throw std::runtime_error("checkpoint: unsupported version");
  EEQNetwork net;
  net.state_dim = static_cast<int>(read_u32(in));
  net.action_count = static_cast<int>(read_u32(in));
  const std::uint32_t n_layers = read_u32(in);
  const bool has_heads = read_u8(in) != 0;
  net.budget_u = read_f64(in);
  net.budget_p = read_f64(in);
  net.i_max_bits = read_f64(in);

  const std::uint32_t section_count = read_u32(in);
  struct Entry {
    std::uint8_t kind;
    std::uint32_t index;
    std::uint64_t offset;
  };
  std::vector<Entry> entries(section_count);
  for (auto& e : entries) {
    e.kind = read_u8(in);
    e.index = read_u32(in);
    e.offset = read_u64(in);
  }
  net.branches.resize(n_layers);
  if (has_heads) {
    net.utility_heads.resize(n_layers);
    net.privacy_heads.resize(n_layers);
  }
  // Sections were written in index-table order, consecutively.
  for (const Entry& e : entries) {
    nn::DenseStack stack = read_stack(in);
    switch (e.kind) {
      case kTrunk: net.trunk = std::move(stack); break;
      case kBranch: net.branches.at(e.index) = std::move(stack); break;
      case kUtilityHead: net.utility_heads.at(e.index) = std::move(stack); break;
      case kPrivacyHead: net.privacy_heads.at(e.index) = std::move(stack); break;
      default: throw std::runtime_error("checkpoint: unknown section kind");
    }
  }
  if (net.trunk.layers.size() != n_layers || net.branches.size() != n_layers)
    throw std::runtime_error("checkpoint: inconsistent layer count");
  return net;
}

}  // namespace pearl
