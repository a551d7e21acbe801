#include "pearl/confidence.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pearl/csv.hpp"

namespace pearl {

void BudgetConfig::validate() const {
  auto in_unit = [](double x) { return x > 0.0 && x <= 1.0; };
  if (!in_unit(u) || !in_unit(p) || !in_unit(v))
    throw std::invalid_argument("budgets u, p, v must lie in (0, 1]");
}

std::vector<std::uint8_t> utility_labels(std::span<const double> q_per_branch, double u) {
  if (q_per_branch.empty()) throw std::invalid_argument("utility_labels: empty q vector");
  if (u <= 0.0 || u > 1.0) throw std::invalid_argument("utility_labels: u outside (0,1]");
  const double q_max = *std::max_element(q_per_branch.begin(), q_per_branch.end());
  const double threshold = q_max - (1.0 - u) * std::abs(q_max);
  std::vector<std::uint8_t> labels(q_per_branch.size());
  for (std::size_t i = 0; i < q_per_branch.size(); ++i)
    labels[i] = q_per_branch[i] >= threshold ? 1 : 0;
  return labels;
}

std::vector<std::uint8_t> privacy_labels(std::span<const double> mi_per_branch, double p,
                                         double mi_max) {
  if (mi_per_branch.empty()) throw std::invalid_argument("privacy_labels: empty mi vector");
  if (p <= 0.0 || p > 1.0) throw std::invalid_argument("privacy_labels: p outside (0,1]");
  if (mi_max < 0.0) throw std::invalid_argument("privacy_labels: negative mi_max");
  std::vector<std::uint8_t> labels(mi_per_branch.size());
  if (mi_max == 0.0) {
    std::fill(labels.begin(), labels.end(), 1);
    return labels;
  }
  const double threshold = p * mi_max;
  for (std::size_t i = 0; i < mi_per_branch.size(); ++i) {
    if (mi_per_branch[i] < 0.0) throw std::invalid_argument("privacy_labels: negative mi");
    labels[i] = mi_per_branch[i] < threshold ? 1 : 0;
  }
  return labels;
}

MISeries ConfidenceBuffers::to_mi_series() const {
  MISeries series;
  if (branch_greedy.empty() || window_start.empty()) return series;
  for (std::size_t w = 0; w < window_mi.size(); ++w) {
    for (int b = 0; b < branch_count; ++b) {
      MIPoint point;
      point.branch = b;
      point.window_start = window_start[w];
      point.bits = window_mi[w][static_cast<std::size_t>(b)];
      series.i_max = std::max(series.i_max, point.bits);
      point.i_max_so_far = series.i_max;
      series.points.push_back(point);
    }
  }
  return series;
}

MISeries ConfidenceBuffers::activity_mi_series(int window_n, bool miller_madow) const {
  MISeries series;
  if (branch_greedy.empty() || window_start.empty() || window_n <= 0) return series;
  std::vector<std::pair<int, int>> window(static_cast<std::size_t>(window_n));
  for (std::size_t w = 0; w < window_start.size(); ++w) {
    const std::size_t base = w * static_cast<std::size_t>(window_n);
    if (base + static_cast<std::size_t>(window_n) > step_truth.size()) break;
    for (int b = 0; b < branch_count; ++b) {
      for (int i = 0; i < window_n; ++i)
        window[static_cast<std::size_t>(i)] = {
            step_truth[base + static_cast<std::size_t>(i)],
            branch_greedy[static_cast<std::size_t>(b)][base + static_cast<std::size_t>(i)]};
      MIPoint point;
      point.branch = b;
      point.window_start = window_start[w];
      point.bits = mutual_information(window, miller_madow);
      series.i_max = std::max(series.i_max, point.bits);
      point.i_max_so_far = series.i_max;
      series.points.push_back(point);
    }
  }
  return series;
}

ConfidenceBuffers build_buffers(const EEQNetwork& net, Environment& env,
                                const MIWindowConfig& mi_cfg, const BudgetConfig& budgets,
                                int steps, Rng& rng) {
  budgets.validate();
  if (net.layer_count() == 0) throw std::invalid_argument("build_buffers: untrained network");
  if (steps < mi_cfg.window_n)
    throw std::invalid_argument("build_buffers: steps must cover at least one MI window");

  const int B = net.layer_count();
  ConfidenceBuffers buffers;
  buffers.branch_count = B;
  buffers.branch_greedy.assign(static_cast<std::size_t>(B), {});

  std::vector<double> obs = env.reset();
  std::vector<long> step_t;
  for (int step = 0; step < steps; ++step) {
    const int s_id = env.state_id();
    const int truth = env.truth_label();
    const long t = env.clock();

    // One trunk pass serves every branch's Q-values.
    const std::vector<std::vector<double>> acts = net.trunk_activations(obs);
    std::vector<double> q_max_per_branch(static_cast<std::size_t>(B));
    std::vector<int> greedy(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
      const std::vector<double> q =
          nn::forward(net.branches[static_cast<std::size_t>(b)], acts[static_cast<std::size_t>(b)]);
      const auto it = std::max_element(q.begin(), q.end());
      q_max_per_branch[static_cast<std::size_t>(b)] = *it;
      greedy[static_cast<std::size_t>(b)] = static_cast<int>(it - q.begin());
    }

    // Executed action: greedy action of a uniformly random branch.
    const int chosen_branch = rng.uniform_int(0, B - 1);
    const int action = greedy[static_cast<std::size_t>(chosen_branch)];

    buffers.utility.push_back({obs, action, {}});
    buffers.record_q.push_back(q_max_per_branch);
    buffers.step_sid.push_back(s_id);
    buffers.step_truth.push_back(truth);
    step_t.push_back(t);
    for (int b = 0; b < B; ++b)
      buffers.branch_greedy[static_cast<std::size_t>(b)].push_back(greedy[static_cast<std::size_t>(b)]);

    StepResult res = env.step(action);
    obs = res.done ? env.reset() : std::move(res.obs);
  }

  // Per-branch MI over each completed window of the recomputed greedy streams.
  const int n_windows = steps / mi_cfg.window_n;
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
    buffers.window_start.push_back(step_t[static_cast<std::size_t>(base)]);
    // One privacy record per step of the window; labels filled by relabel below.
    for (int i = 0; i < mi_cfg.window_n; ++i) {
      const std::size_t idx = static_cast<std::size_t>(base + i);
      buffers.privacy.push_back({buffers.utility[idx].s, buffers.utility[idx].a, {}});
      buffers.privacy_window.push_back(w);
    }
  }

  relabel_buffers(buffers, budgets);
  return buffers;
}

void relabel_buffers(ConfidenceBuffers& buffers, const BudgetConfig& budgets) {
  budgets.validate();
  for (std::size_t i = 0; i < buffers.utility.size(); ++i)
    buffers.utility[i].ucl = utility_labels(buffers.record_q[i], budgets.u);
  // All windows are labeled against the final I_max of the building pass —
  // the highest leakage observed during initial training.
  std::vector<std::vector<std::uint8_t>> per_window(buffers.window_mi.size());
  for (std::size_t w = 0; w < buffers.window_mi.size(); ++w)
    per_window[w] = privacy_labels(buffers.window_mi[w], budgets.p, buffers.i_max);
  for (std::size_t i = 0; i < buffers.privacy.size(); ++i)
    buffers.privacy[i].pcl = per_window[static_cast<std::size_t>(buffers.privacy_window[i])];
}

void attach_confidence_heads(EEQNetwork& net, Rng& rng) {
  if (net.layer_count() == 0) throw std::invalid_argument("attach heads: untrained network");
  const int width = net.trunk.layers.back().out_dim();
  net.utility_heads.clear();
  net.privacy_heads.clear();
  for (int b = 0; b < net.layer_count(); ++b) {
    Rng head_rng = rng.substream("heads", static_cast<std::uint64_t>(b));
    net.utility_heads.push_back(nn::make_stack({width, 32, 1},
                                               {nn::Activation::relu, nn::Activation::sigmoid},
                                               head_rng));
    net.privacy_heads.push_back(nn::make_stack({width, 32, 1},
                                               {nn::Activation::relu, nn::Activation::sigmoid},
                                               head_rng));
  }
}

namespace {

struct HeadDataset {
  std::vector<std::vector<double>> x;  // trunk activation at the branch depth
  std::vector<double> y;
};

double train_one_head(nn::DenseStack& head, const HeadDataset& data, int epochs, Rng& rng) {
  if (data.x.empty()) throw std::invalid_argument("head training: empty buffer");
  // Deterministic 80/20 split after one shuffle; the held-out tail never
  // enters a minibatch.
  std::vector<std::size_t> order(data.x.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  const std::size_t train_n = std::max<std::size_t>(1, order.size() * 8 / 10);
  std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<long>(train_n));

  nn::Optimizer opt = nn::Optimizer::adam(1e-3);
  constexpr int kBatch = 32;
  std::vector<std::vector<double>> bx;
  std::vector<std::vector<double>> by;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(train_idx);
    for (std::size_t base = 0; base < train_idx.size(); base += kBatch) {
      bx.clear();
      by.clear();
      for (std::size_t i = base; i < std::min(base + kBatch, train_idx.size()); ++i) {
        bx.push_back(data.x[train_idx[i]]);
        by.push_back({data.y[train_idx[i]]});
      }
      nn::train_batch(head, bx, by, nn::LossKind::bce, opt);
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = train_n; i < order.size(); ++i) {
    const double out = nn::forward(head, data.x[order[i]])[0];
    if ((out >= 0.5 ? 1.0 : 0.0) == data.y[order[i]]) ++correct;
  }
  const std::size_t heldout = order.size() - train_n;
  return heldout == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(heldout);
}

}  // namespace

double HeadTrainStats::min_heldout_acc() const {
  double m = 1.0;
  for (double a : utility_heldout_acc) m = std::min(m, a);
  for (double a : privacy_heldout_acc) m = std::min(m, a);
  return m;
}

HeadTrainStats train_confidence_heads(EEQNetwork& net, const ConfidenceBuffers& buffers,
                                      int epochs, Rng& rng) {
  if (buffers.utility.empty() || buffers.privacy.empty())
    throw std::invalid_argument("train_confidence_heads: empty buffers");
  if (!net.has_confidence_heads()) attach_confidence_heads(net, rng);
  const int B = net.layer_count();

  // Trunk activations once per record; heads at branch b read depth-b features.
  // Privacy records are the window-covered prefix of the utility records (same
  // states, same order), so one activation pass covers both buffers.
  std::vector<std::vector<std::vector<double>>> util_acts(buffers.utility.size());
  for (std::size_t i = 0; i < buffers.utility.size(); ++i)
    util_acts[i] = net.trunk_activations(buffers.utility[i].s);
  if (buffers.privacy.size() > buffers.utility.size())
    throw std::logic_error("buffers: privacy records exceed utility records");

  HeadTrainStats stats;
  for (int b = 0; b < B; ++b) {
    HeadDataset util;
    util.x.reserve(buffers.utility.size());
    for (std::size_t i = 0; i < buffers.utility.size(); ++i) {
      util.x.push_back(util_acts[i][static_cast<std::size_t>(b)]);
      util.y.push_back(buffers.utility[i].ucl[static_cast<std::size_t>(b)]);
    }
    Rng util_rng = rng.substream("utility-head", static_cast<std::uint64_t>(b));
    stats.utility_heldout_acc.push_back(
        train_one_head(net.utility_heads[static_cast<std::size_t>(b)], util, epochs, util_rng));

    HeadDataset priv;
    priv.x.reserve(buffers.privacy.size());
    for (std::size_t i = 0; i < buffers.privacy.size(); ++i) {
      priv.x.push_back(util_acts[i][static_cast<std::size_t>(b)]);
      priv.y.push_back(buffers.privacy[i].pcl[static_cast<std::size_t>(b)]);
    }
    Rng priv_rng = rng.substream("privacy-head", static_cast<std::uint64_t>(b));
    stats.privacy_heldout_acc.push_back(
        train_one_head(net.privacy_heads[static_cast<std::size_t>(b)], priv, epochs, priv_rng));
  }
  return stats;
}

std::vector<int> eligible_branches(const ConfidenceBuffers& buffers) {
  std::vector<int> eligible;
  for (int b = 0; b < buffers.branch_count; ++b) {
    std::size_t ucl_ones = 0;
    for (const auto& rec : buffers.utility) ucl_ones += rec.ucl[static_cast<std::size_t>(b)];
    std::size_t pcl_ones = 0;
    for (const auto& rec : buffers.privacy) pcl_ones += rec.pcl[static_cast<std::size_t>(b)];
    const bool ucl_major = 2 * ucl_ones >= buffers.utility.size();
    const bool pcl_major = 2 * pcl_ones >= buffers.privacy.size();
    if (ucl_major && pcl_major) eligible.push_back(b);
  }
  return eligible;
}

namespace {

void write_label_csv(const std::string& path, const std::vector<UtilityLabelRecord>& records,
                     const char* label_name) {
  if (records.empty()) throw std::invalid_argument("write buffers: empty");
  std::vector<std::string> header;
  for (std::size_t i = 0; i < records.front().s.size(); ++i) header.push_back("s" + std::to_string(i));
  header.push_back("a");
  for (std::size_t b = 0; b < records.front().ucl.size(); ++b)
    header.push_back(label_name + std::to_string(b));
  CsvWriter csv(path, header);
  std::vector<std::string> row;
  for (const auto& rec : records) {
    row.clear();
    for (double v : rec.s) row.push_back(CsvWriter::num(v));
    row.push_back(CsvWriter::num(static_cast<long long>(rec.a)));
    for (std::uint8_t l : rec.ucl) row.push_back(std::to_string(static_cast<int>(l)));
    csv.write_row(row);
  }
}

}  // namespace

void write_buffer_csvs(const std::string& utility_path, const std::string& privacy_path,
                       const ConfidenceBuffers& buffers) {
  write_label_csv(utility_path, buffers.utility, "ucl");
  // PrivacyLabelRecord has the same layout; reuse via a shallow conversion.
  std::vector<UtilityLabelRecord> priv;
  priv.reserve(buffers.privacy.size());
  for (const auto& rec : buffers.privacy) priv.push_back({rec.s, rec.a, rec.pcl});
  write_label_csv(privacy_path, priv, "pcl");
}

}  // namespace pearl
