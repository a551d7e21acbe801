#include <benchmark/benchmark.h>

#include "pearl/comfort.hpp"
#include "pearl/thermal_env.hpp"

using namespace pearl;

static void BM_thermal_step(benchmark::State& state) {
  ThermalEnv env(occupant_profile("H1"), HouseParams{}, 99);
  int a = 0;
  for (auto _ : state) {
    auto r = env.step(8 + (a++ % 5));
    benchmark::DoNotOptimize(r.reward);
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_thermal_step);

static void BM_pmv(benchmark::State& state) {
  double t = 18.0;
  for (auto _ : state) {
    t += 0.001;
    if (t > 30.0) t = 18.0;
    benchmark::DoNotOptimize(pmv(t, t, 0.1, 60.0, 1.2, 0.5));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_pmv);
