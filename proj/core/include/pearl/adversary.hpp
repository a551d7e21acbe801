#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pearl/rng.hpp"
#include "pearl/runtime.hpp"

namespace pearl {

struct KMeansResult {
  std::vector<std::vector<double>> centroids;
  std::vector<int> assignments;
  double wcss = 0.0;
};

// Lloyd's algorithm with k-means++ seeding; empty clusters are re-seeded at
// the farthest point from its centroid. Converges on an assignment fixpoint
// or after max_iter rounds. WCSS never increases across iterations.
KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, Rng& rng,
                    int max_iter = 300);

// Best of `restarts` seeded runs; an optional warm start (e.g. the k-1
// solution plus the farthest point) competes with the random restarts, which
// keeps the WCSS curve non-increasing in k.
KMeansResult kmeans_best(const std::vector<std::vector<double>>& points, int k, int restarts,
                         Rng& rng, const KMeansResult* warm_start = nullptr);

// Elbow selection: k (1-based) maximizing the discrete second difference of
// log(wcss), i.e. the sharpest drop in the curve's shrink *ratio*. Flat
// curves return 1. Input must be non-increasing (validated).
int elbow_select(std::span<const double> wcss_curve);

// Accuracy under the best one-to-one cluster -> class mapping on the padded
// confusion matrix: exhaustive permutations up to 8x8, greedy + 2-opt beyond.
double attack_accuracy(std::span<const int> assignments, std::span<const int> ground_truth);

struct ClusteringReport {
  int k_selected = 0;
  std::vector<std::pair<int, double>> wcss_curve;
  std::vector<int> assignments;
  double accuracy = -1.0;  // negative when no ground truth was supplied
};

struct AttackConfig {
  int k_max = 12;
  int restarts = 10;
  bool day_vectors = false;  // cluster whole-day action vectors instead
};

// (cos time-in-cycle, sin time-in-cycle, action) samples standardized per
// dimension — the feature the cloud clusters. Time enters on the unit circle
// so blocks wrapping midnight stay contiguous. With day_vectors, each point
// is one full cycle's actions instead.
std::vector<std::vector<double>> attack_features(const RunTrace& trace, bool day_vectors = false);

// Full pipeline: WCSS curve over k=1..k_max, elbow pick, accuracy scoring at
// the selected k (when truth labels are given).
ClusteringReport run_attack(const std::vector<std::vector<double>>& features,
                            std::span<const int> truth, const AttackConfig& cfg, Rng& rng);

void write_attack_report(const std::string& csv_path, const std::string& json_path,
                         const ClusteringReport& report);

}  // namespace pearl
