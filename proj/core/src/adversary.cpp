#include "pearl/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "pearl/csv.hpp"

namespace pearl {

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    d += diff * diff;
  }
  return d;
}

std::vector<std::vector<double>> seed_kmeanspp(const std::vector<std::vector<double>>& points,
                                               int k, Rng& rng) {
  std::vector<std::vector<double>> centroids;
  centroids.reserve(static_cast<std::size_t>(k));
  centroids.push_back(points[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(points.size()) - 1))]);
  std::vector<double> d2(points.size(), std::numeric_limits<double>::max());
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      d2[i] = std::min(d2[i], sq_dist(points[i], centroids.back()));
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        acc += d2[i];
        if (acc >= target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(points.size()) - 1));
    }
    centroids.push_back(points[pick]);
  }
  return centroids;
}

double assign_points(const std::vector<std::vector<double>>& points,
                     const std::vector<std::vector<double>>& centroids,
                     std::vector<int>& assignments) {
  double wcss = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    double best = std::numeric_limits<double>::max();
    int best_c = 0;
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      const double d = sq_dist(points[i], centroids[c]);
      if (d < best) {
        best = d;
        best_c = static_cast<int>(c);
      }
    }
    assignments[i] = best_c;
    wcss += best;
  }
  return wcss;
}

}  // namespace

KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, Rng& rng,
                    int max_iter) {
  if (points.empty()) throw std::invalid_argument("kmeans: no points");
  if (k < 1 || k > static_cast<int>(points.size()))
    throw std::invalid_argument("kmeans: k must be in [1, |points|]");

  KMeansResult result;
  result.centroids = seed_kmeanspp(points, k, rng);
  result.assignments.assign(points.size(), 0);
  const std::size_t dim = points.front().size();

  std::vector<int> prev(points.size(), -1);
  for (int iter = 0; iter < max_iter; ++iter) {
    result.wcss = assign_points(points, result.centroids, result.assignments);
    if (result.assignments == prev) break;
    prev = result.assignments;

    std::vector<std::vector<double>> sums(static_cast<std::size_t>(k),
                                          std::vector<double>(dim, 0.0));
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto c = static_cast<std::size_t>(result.assignments[i]);
      ++counts[c];
      for (std::size_t d = 0; d < dim; ++d) sums[c][d] += points[i][d];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) {
        // Re-seed an empty cluster at the point farthest from its centroid.
        std::size_t farthest = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
          const double d =
              sq_dist(points[i], result.centroids[static_cast<std::size_t>(result.assignments[i])]);
          if (d > far_d) {
            far_d = d;
            farthest = i;
          }
        }
        result.centroids[static_cast<std::size_t>(c)] = points[farthest];
        prev.assign(points.size(), -1);  // force another assignment round
        continue;
      }
      for (std::size_t d = 0; d < dim; ++d)
        result.centroids[static_cast<std::size_t>(c)][d] =
            sums[static_cast<std::size_t>(c)][d] / counts[static_cast<std::size_t>(c)];
    }
  }
  result.wcss = assign_points(points, result.centroids, result.assignments);
  return result;
}

KMeansResult kmeans_best(const std::vector<std::vector<double>>& points, int k, int restarts,
                         Rng& rng, const KMeansResult* warm_start) {
  KMeansResult best;
  best.wcss = std::numeric_limits<double>::max();
  for (int r = 0; r < restarts; ++r) {
    Rng restart_rng = rng.substream("kmeans-restart", static_cast<std::uint64_t>(r));
    KMeansResult candidate = kmeans(points, k, restart_rng);
    if (candidate.wcss < best.wcss) best = std::move(candidate);
  }
  if (warm_start != nullptr && static_cast<int>(warm_start->centroids.size()) == k) {
    // Polish the warm start with plain Lloyd iterations (seeding skipped).
    KMeansResult candidate;
    candidate.centroids = warm_start->centroids;
    candidate.assignments.assign(points.size(), 0);
    const std::size_t dim = points.front().size();
    std::vector<int> prev(points.size(), -1);
    for (int iter = 0; iter < 300; ++iter) {
      candidate.wcss = assign_points(points, candidate.centroids, candidate.assignments);
      if (candidate.assignments == prev) break;
      prev = candidate.assignments;
      std::vector<std::vector<double>> sums(static_cast<std::size_t>(k),
                                            std::vector<double>(dim, 0.0));
      std::vector<int> counts(static_cast<std::size_t>(k), 0);
      for (std::size_t i = 0; i < points.size(); ++i) {
        const auto c = static_cast<std::size_t>(candidate.assignments[i]);
        ++counts[c];
        for (std::size_t d = 0; d < dim; ++d) sums[c][d] += points[i][d];
      }
      for (int c = 0; c < k; ++c)
        if (counts[static_cast<std::size_t>(c)] > 0)
          for (std::size_t d = 0; d < dim; ++d)
            candidate.centroids[static_cast<std::size_t>(c)][d] =
                sums[static_cast<std::size_t>(c)][d] / counts[static_cast<std::size_t>(c)];
    }
    candidate.wcss = assign_points(points, candidate.centroids, candidate.assignments);
    if (candidate.wcss < best.wcss) best = std::move(candidate);
  }
  return best;
}

int elbow_select(std::span<const double> wcss_curve) {
  if (wcss_curve.size() < 3) return 1;
  for (std::size_t i = 1; i < wcss_curve.size(); ++i) {
    const double slack = 1e-9 * std::max(1.0, std::abs(wcss_curve[i - 1]));
    if (wcss_curve[i] > wcss_curve[i - 1] + slack)
      throw std::invalid_argument("elbow_select: wcss curve must be non-increasing");
  }
  // Flat curve carries no cluster structure at all.
  const double flat_slack = 1e-9 * std::max(1.0, std::abs(wcss_curve.front()));
  if (wcss_curve.front() - wcss_curve.back() <= flat_slack) return 1;

  // The kink is found on log(WCSS): the second difference of the log curve
  // compares successive shrink *ratios*, so the pick is scale-free and a drop
  // from 100k to 50k does not drown out a sharp 1k -> 100 elbow further along.
  // The floor keeps perfectly separable curves (wcss hitting zero) finite.
  const double floor = 1e-12 * std::max(1.0, std::abs(wcss_curve.front()));
  auto log_at = [&](std::size_t i) { return std::log(std::max(wcss_curve[i], floor)); };
  int best_k = 2;
  double best_dd = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i + 1 < wcss_curve.size(); ++i) {
    const double dd = log_at(i - 1) - 2.0 * log_at(i) + log_at(i + 1);
    if (dd > best_dd) {
      best_dd = dd;
      best_k = static_cast<int>(i) + 1;  // curve index i holds k = i+1
    }
  }
  return best_k;
}

namespace {

// Dense relabeling of arbitrary ids to 0..n-1.
std::vector<int> densify(std::span<const int> ids, int& count) {
  std::vector<int> lookup;
  std::vector<int> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto it = std::find(lookup.begin(), lookup.end(), ids[i]);
    if (it == lookup.end()) {
      out[i] = static_cast<int>(lookup.size());
      lookup.push_back(ids[i]);
    } else {
      out[i] = static_cast<int>(it - lookup.begin());
    }
  }
  count = static_cast<int>(lookup.size());
  return out;
}

long long mapping_score(const std::vector<std::vector<long long>>& confusion,
                        const std::vector<int>& perm) {
  long long total = 0;
  for (std::size_t r = 0; r < confusion.size(); ++r)
    total += confusion[r][static_cast<std::size_t>(perm[r])];
  return total;
}

}  // namespace

double attack_accuracy(std::span<const int> assignments, std::span<const int> ground_truth) {
  if (assignments.size() != ground_truth.size())
    throw std::invalid_argument("attack_accuracy: length mismatch");
  if (assignments.empty()) throw std::invalid_argument("attack_accuracy: empty input");
  int n_clusters = 0, n_classes = 0;
  const std::vector<int> clusters = densify(assignments, n_clusters);
  const std::vector<int> classes = densify(ground_truth, n_classes);
  const int m = std::max(n_clusters, n_classes);  // zero-padded square

  std::vector<std::vector<long long>> confusion(static_cast<std::size_t>(m),
                                                std::vector<long long>(static_cast<std::size_t>(m), 0));
  for (std::size_t i = 0; i < clusters.size(); ++i)
    ++confusion[static_cast<std::size_t>(clusters[i])][static_cast<std::size_t>(classes[i])];

  std::vector<int> perm(static_cast<std::size_t>(m));
  std::iota(perm.begin(), perm.end(), 0);
  long long best = 0;
  if (m <= 8) {
    do {
      best = std::max(best, mapping_score(confusion, perm));
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    // Greedy seeding by largest cell, then 2-opt swaps to a local optimum.
    std::vector<bool> row_used(static_cast<std::size_t>(m), false), col_used(static_cast<std::size_t>(m), false);
    std::vector<int> greedy(static_cast<std::size_t>(m), -1);
    for (int pick = 0; pick < m; ++pick) {
      long long cell_best = -1;
      int br = -1, bc = -1;
      for (int r = 0; r < m; ++r) {
        if (row_used[static_cast<std::size_t>(r)]) continue;
        for (int c = 0; c < m; ++c) {
          if (col_used[static_cast<std::size_t>(c)]) continue;
          if (confusion[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] > cell_best) {
            cell_best = confusion[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
            br = r;
            bc = c;
          }
        }
      }
      greedy[static_cast<std::size_t>(br)] = bc;
      row_used[static_cast<std::size_t>(br)] = true;
      col_used[static_cast<std::size_t>(bc)] = true;
    }
    bool improved = true;
    while (improved) {
      improved = false;
      for (int a = 0; a < m; ++a) {
        for (int b = a + 1; b < m; ++b) {
          const long long before =
              confusion[static_cast<std::size_t>(a)][static_cast<std::size_t>(greedy[static_cast<std::size_t>(a)])] +
              confusion[static_cast<std::size_t>(b)][static_cast<std::size_t>(greedy[static_cast<std::size_t>(b)])];
          const long long after =
              confusion[static_cast<std::size_t>(a)][static_cast<std::size_t>(greedy[static_cast<std::size_t>(b)])] +
              confusion[static_cast<std::size_t>(b)][static_cast<std::size_t>(greedy[static_cast<std::size_t>(a)])];
          if (after > before) {
            std::swap(greedy[static_cast<std::size_t>(a)], greedy[static_cast<std::size_t>(b)]);
            improved = true;
          }
        }
      }
    }
    best = mapping_score(confusion, greedy);
  }
  return static_cast<double>(best) / static_cast<double>(assignments.size());
}

std::vector<std::vector<double>> attack_features(const RunTrace& trace, bool day_vectors) {
  if (trace.steps.empty()) throw std::invalid_argument("attack_features: empty trace");
  std::vector<std::vector<double>> points;
  if (!day_vectors) {
    // Time-of-cycle enters as a point on the unit circle so that hour 23 and
    // hour 0 are neighbors; a linear hour axis would tear the nightly sleep
    // block in half at midnight.
    const double cycle = trace.cycle_length > 0 ? static_cast<double>(trace.cycle_length) : 24.0;
    points.reserve(trace.steps.size());
    for (const RunStep& s : trace.steps) {
      const double angle = 2.0 * M_PI * static_cast<double>(s.phase) / cycle;
      points.push_back({std::cos(angle), std::sin(angle), static_cast<double>(s.a_id)});
    }
  } else {
    if (trace.cycle_length <= 0) throw std::invalid_argument("attack_features: no cycle length");
    const std::size_t cycle = static_cast<std::size_t>(trace.cycle_length);
    for (std::size_t base = 0; base + cycle <= trace.steps.size(); base += cycle) {
      std::vector<double> day(cycle);
      for (std::size_t i = 0; i < cycle; ++i)
        day[i] = static_cast<double>(trace.steps[base + i].a_id);
      points.push_back(std::move(day));
    }
  }
  // Standardize per dimension; constant dimensions stay at zero.
  const std::size_t dim = points.front().size();
  for (std::size_t d = 0; d < dim; ++d) {
    double mean = 0.0;
    for (const auto& p : points) mean += p[d];
    mean /= static_cast<double>(points.size());
    double var = 0.0;
    for (const auto& p : points) var += (p[d] - mean) * (p[d] - mean);
    var /= static_cast<double>(points.size());
    const double sd = std::sqrt(var);
    for (auto& p : points) p[d] = sd > 0.0 ? (p[d] - mean) / sd : 0.0;
  }
  return points;
}

ClusteringReport run_attack(const std::vector<std::vector<double>>& features,
                            std::span<const int> truth, const AttackConfig& cfg, Rng& rng) {
  if (features.empty()) throw std::invalid_argument("run_attack: no features");
  const int k_max = std::min(cfg.k_max, static_cast<int>(features.size()));
  ClusteringReport report;
  std::vector<double> wcss;
  std::vector<KMeansResult> results;
  for (int k = 1; k <= k_max; ++k) {
    Rng k_rng = rng.substream("attack-k", static_cast<std::uint64_t>(k));
    KMeansResult* warm = nullptr;
    KMeansResult warm_candidate;
    if (k > 1) {
      // Previous solution plus its farthest point: guarantees WCSS(k) <= WCSS(k-1).
      warm_candidate = results.back();
      std::size_t farthest = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < features.size(); ++i) {
        const double d = sq_dist(features[i],
                                 warm_candidate.centroids[static_cast<std::size_t>(warm_candidate.assignments[i])]);
        if (d > far_d) {
          far_d = d;
          farthest = i;
        }
      }
      warm_candidate.centroids.push_back(features[farthest]);
      warm = &warm_candidate;
    }
    KMeansResult result = kmeans_best(features, k, cfg.restarts, k_rng, warm);
    wcss.push_back(result.wcss);
    report.wcss_curve.emplace_back(k, result.wcss);
    results.push_back(std::move(result));
  }
  // Guard against restart noise breaking monotonicity before elbow selection.
  for (std::size_t i = 1; i < wcss.size(); ++i)
    if (wcss[i] > wcss[i - 1]) {
      wcss[i] = wcss[i - 1];
      report.wcss_curve[i].second = wcss[i];
      results[i] = results[i - 1];
    }
  report.k_selected = elbow_select(wcss);
  report.assignments = results[static_cast<std::size_t>(report.k_selected - 1)].assignments;
  if (!truth.empty()) report.accuracy = attack_accuracy(report.assignments, truth);
  return report;
}

void write_attack_report(const std::string& csv_path, const std::string& json_path,
                         const ClusteringReport& report) {
  CsvWriter csv(csv_path, {"k", "wcss"});
  for (const auto& [k, w] : report.wcss_curve)
    csv.write_row({CsvWriter::num(static_cast<long long>(k)), CsvWriter::num(w)});

  nlohmann::json j;
  j["k_selected"] = report.k_selected;
  j["accuracy"] = report.accuracy;
  j["n_samples"] = report.assignments.size();
  auto& curve = j["wcss_curve"] = nlohmann::json::array();
  for (const auto& [k, w] : report.wcss_curve) curve.push_back({{"k", k}, {"wcss", w}});
  std::ofstream out(json_path);
  if (!out) throw std::runtime_error("cannot open for writing: " + json_path);
  out << j.dump(2) << '\n';
}

}  // namespace pearl
