#include "pearl/mutual_information.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "pearl/csv.hpp"

namespace pearl {

void ActionTrace::append(long t, int s_id, int a_id, int branch) {
  entries.push_back({t, s_id, a_id, branch});
}

void ActionTrace::validate() const {
  long last_t = -1;
  for (const TraceEntry& e : entries) {
    if (e.t <= last_t) throw std::invalid_argument("trace: t not strictly increasing");
    if (e.s_id < 0 || e.s_id >= state_count) throw std::invalid_argument("trace: s_id out of range");
    if (e.a_id < 0 || e.a_id >= action_count) throw std::invalid_argument("trace: a_id out of range");
    last_t = e.t;
  }
}

double mutual_information(std::span<const std::pair<int, int>> window, bool miller_madow) {
  if (window.empty()) throw std::invalid_argument("mutual_information: empty window");
  int max_s = 0, max_a = 0;
  for (const auto& [s, a] : window) {
    if (s < 0 || a < 0) throw std::invalid_argument("mutual_information: negative id");
    max_s = std::max(max_s, s);
    max_a = std::max(max_a, a);
  }
  const int ns = max_s + 1, na = max_a + 1;
  std::vector<int> joint(static_cast<std::size_t>(ns) * na, 0);
  std::vector<int> sc(static_cast<std::size_t>(ns), 0), ac(static_cast<std::size_t>(na), 0);
  for (const auto& [s, a] : window) {
    ++joint[static_cast<std::size_t>(s) * na + a];
    ++sc[static_cast<std::size_t>(s)];
    ++ac[static_cast<std::size_t>(a)];
  }
  const double n = static_cast<double>(window.size());
  double bits = 0.0;
  int joint_support = 0;
  for (int s = 0; s < ns; ++s) {
    for (int a = 0; a < na; ++a) {
      const int c = joint[static_cast<std::size_t>(s) * na + a];
      if (c == 0) continue;
      ++joint_support;
      const double p_joint = c / n;
      const double p_s = sc[static_cast<std::size_t>(s)] / n;
      const double p_a = ac[static_cast<std::size_t>(a)] / n;
      bits += p_joint * std::log2(p_joint / (p_s * p_a));
    }
  }
  if (miller_madow) {
    const int s_support = static_cast<int>(std::count_if(sc.begin(), sc.end(), [](int c) { return c > 0; }));
    const int a_support = static_cast<int>(std::count_if(ac.begin(), ac.end(), [](int c) { return c > 0; }));
    bits += (joint_support - s_support - a_support + 1) / (2.0 * n * std::log(2.0));
  }
  // Plug-in MI is mathematically >= 0; clip the tiny negative residue that
  // floating-point cancellation can leave on independent windows.
  return std::max(bits, 0.0);
}

MISeries mi_series(const ActionTrace& trace, const MIWindowConfig& cfg, bool per_branch) {
  if (cfg.window_n < 1) throw std::invalid_argument("mi_series: window_n must be >= 1");
  if (static_cast<int>(trace.entries.size()) < cfg.window_n)
    throw std::invalid_argument("mi_series: trace shorter than one window");

  // Group entries by branch (single group -1 when not per-branch).
  std::map<int, std::vector<const TraceEntry*>> groups;
  for (const TraceEntry& e : trace.entries) groups[per_branch ? e.branch : -1].push_back(&e);

  MISeries series;
  std::vector<std::pair<int, int>> window(static_cast<std::size_t>(cfg.window_n));
  for (const auto& [branch, entries] : groups) {
    const std::size_t n_windows = entries.size() / static_cast<std::size_t>(cfg.window_n);
    for (std::size_t w = 0; w < n_windows; ++w) {
      const std::size_t base = w * static_cast<std::size_t>(cfg.window_n);
      for (int i = 0; i < cfg.window_n; ++i)
        window[static_cast<std::size_t>(i)] = {entries[base + i]->s_id, entries[base + i]->a_id};
      MIPoint point;
      point.branch = per_branch ? branch : entries[base]->branch;
      point.window_start = entries[base]->t;
      point.bits = mutual_information(window, cfg.miller_madow);
      series.i_max = std::max(series.i_max, point.bits);
      point.i_max_so_far = series.i_max;
      series.points.push_back(point);
    }
  }
  // Emit in time order across groups; i_max_so_far then follows the timeline.
  std::sort(series.points.begin(), series.points.end(),
            [](const MIPoint& a, const MIPoint& b) {
              return a.window_start != b.window_start ? a.window_start < b.window_start
                                                      : a.branch < b.branch;
            });
  double running = 0.0;
  for (MIPoint& p : series.points) {
    running = std::max(running, p.bits);
    p.i_max_so_far = running;
  }
  return series;
}

void write_mi_csv(const std::string& path, const MISeries& series) {
  CsvWriter csv(path, {"branch", "window_start", "I_bits", "I_max_so_far"});
  for (const MIPoint& p : series.points)
    csv.write_row({CsvWriter::num(static_cast<long long>(p.branch)),
                   CsvWriter::num(static_cast<long long>(p.window_start)), CsvWriter::num(p.bits),
                   CsvWriter::num(p.i_max_so_far)});
}

}  // namespace pearl
