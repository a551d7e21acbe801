#include <benchmark/benchmark.h>

#include <vector>

#include "pearl/adversary.hpp"
#include "pearl/rng.hpp"

using namespace pearl;

namespace {

// Clustered synthetic features shaped like a serving trace: 6 blobs in 3-D.
std::vector<std::vector<double>> blob_points(int n, Rng& rng) {
  std::vector<std::vector<double>> pts;
  pts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int c = rng.uniform_int(0, 5);
    pts.push_back({c * 2.0 + rng.normal(0.0, 0.2), (c % 3) * 1.5 + rng.normal(0.0, 0.2),
                   (c % 2) * 3.0 + rng.normal(0.0, 0.2)});
  }
  return pts;
}

}  // namespace

static void BM_kmeans(benchmark::State& state) {
  Rng rng(11);
  const auto pts = blob_points(static_cast<int>(state.range(0)), rng);
  for (auto _ : state) {
    Rng run_rng(42);
    auto result = kmeans(pts, 6, run_rng);
    benchmark::DoNotOptimize(result.wcss);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_kmeans)->Arg(1200)->Arg(4800);

static void BM_elbow_curve(benchmark::State& state) {
  Rng rng(12);
  const auto pts = blob_points(1200, rng);
  for (auto _ : state) {
    Rng run_rng(43);
    std::vector<double> wcss;
    KMeansResult prev;
    for (int k = 1; k <= 12; ++k) {
      KMeansResult r = kmeans_best(pts, k, 4, run_rng, k > 1 ? &prev : nullptr);
      wcss.push_back(r.wcss);
      prev = std::move(r);
    }
    benchmark::DoNotOptimize(elbow_select(wcss));
  }
}
BENCHMARK(BM_elbow_curve);
