#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

namespace pearl {

// Timestamped (state, action, branch) series shared with the cloud.
struct TraceEntry {
  long t = 0;
  int s_id = 0;
  int a_id = 0;
  int branch = 0;
};

struct ActionTrace {
  int state_count = 0;   // cardinality of s_id
  int action_count = 0;  // cardinality of a_id
  std::vector<TraceEntry> entries;

  void append(long t, int s_id, int a_id, int branch);
  void validate() const;  // throws on decreasing t or out-of-range ids
};

struct MIWindowConfig {
  int window_n = 168;         // 7 simulated days of hourly steps
  bool miller_madow = false;  // optional small-sample bias correction
};

struct MIPoint {
  int branch = 0;
  long window_start = 0;  // t of the first entry in the window
  double bits = 0.0;
  double i_max_so_far = 0.0;
};

struct MISeries {
  std::vector<MIPoint> points;
  double i_max = 0.0;
};

// Plug-in (maximum-likelihood) mutual information in bits over empirical
// frequencies of an (s, a) window. Non-negative and symmetric in s/a.
double mutual_information(std::span<const std::pair<int, int>> window, bool miller_madow = false);

// One MI value per non-overlapping window of window_n entries (trailing
// partial window dropped). With per_branch, entries are grouped by branch
// first and each branch's subsequence is windowed separately. i_max is the
// running maximum across all emitted points.
MISeries mi_series(const ActionTrace& trace, const MIWindowConfig& cfg, bool per_branch = false);

void write_mi_csv(const std::string& path, const MISeries& series);

}  // namespace pearl
