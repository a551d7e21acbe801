#include <benchmark/benchmark.h>

#include <vector>

#include "pearl/nn.hpp"
#include "pearl/rng.hpp"

using namespace pearl;

namespace {

nn::DenseStack make_trunk(int layers, int width, Rng& rng) {
  std::vector<int> dims = {2};
  std::vector<nn::Activation> acts;
  for (int i = 0; i < layers; ++i) {
    dims.push_back(width);
    acts.push_back(nn::Activation::relu);
  }
  return nn::make_stack(dims, acts, rng);
}

}  // namespace

static void BM_forward(benchmark::State& state) {
  Rng rng(1);
  nn::DenseStack stack = make_trunk(static_cast<int>(state.range(0)), 64, rng);
  std::vector<double> x = {0.5, 0.25};
  for (auto _ : state) {
    auto y = nn::forward(stack, x);
    benchmark::DoNotOptimize(y);
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_forward)->Arg(1)->Arg(4)->Arg(10);

static void BM_train_batch(benchmark::State& state) {
  Rng rng(2);
  nn::DenseStack stack = make_trunk(static_cast<int>(state.range(0)), 64, rng);
  nn::Optimizer opt = nn::Optimizer::adam(1e-3);
  std::vector<std::vector<double>> xs;
  std::vector<std::vector<double>> ys;
  for (int i = 0; i < 16; ++i) {
    xs.push_back({rng.uniform(), rng.uniform()});
    std::vector<double> y(64);
    for (double& v : y) v = rng.uniform();
    ys.push_back(std::move(y));
  }
  for (auto _ : state) {
    const double loss = nn::train_batch(stack, xs, ys, nn::LossKind::mse, opt);
    benchmark::DoNotOptimize(loss);
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_train_batch)->Arg(1)->Arg(4)->Arg(10);
