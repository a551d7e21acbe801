#include <benchmark/benchmark.h>

#include <utility>
#include <vector>

#include "pearl/mutual_information.hpp"
#include "pearl/rng.hpp"

using namespace pearl;

static void BM_mutual_information(benchmark::State& state) {
  Rng rng(7);
  const int n = static_cast<int>(state.range(0));
  std::vector<std::pair<int, int>> window;
  window.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int s = rng.uniform_int(0, 125);
    const int a = rng.chance(0.5) ? s % 21 : rng.uniform_int(0, 20);
    window.emplace_back(s, a);
  }
  for (auto _ : state) {
    const double bits = mutual_information(window);
    benchmark::DoNotOptimize(bits);
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_mutual_information)->Arg(168)->Arg(2016)->Arg(10000);

static void BM_mi_series(benchmark::State& state) {
  Rng rng(8);
  ActionTrace trace;
  trace.state_count = 126;
  trace.action_count = 21;
  for (long t = 0; t < 4800; ++t) {
    const int s = rng.uniform_int(0, 125);
    trace.append(t, s, s % 21, 0);
  }
  MIWindowConfig cfg;
  for (auto _ : state) {
    const MISeries series = mi_series(trace, cfg);
    benchmark::DoNotOptimize(series.i_max);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(trace.entries.size()));
}
BENCHMARK(BM_mi_series);
