#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pearl/rng.hpp"

namespace pearl::nn {

enum class Activation : std::uint8_t { relu = 0, linear = 1, sigmoid = 2 };

// Row-major dense matrix. Deliberately minimal: the networks here are small
// enough that hand-rolled loops beat pulling in a linear-algebra dependency.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // rows * cols, row-major

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

struct DenseLayer {
  Matrix weights;            // [out x in]
  std::vector<double> bias;  // [out]
  Activation activation = Activation::linear;

  int in_dim() const { return weights.cols; }
  int out_dim() const { return weights.rows; }
};

// He initialization for relu layers, Xavier-uniform for linear/sigmoid.
DenseLayer make_layer(int in_dim, int out_dim, Activation act, Rng& rng);

// A feed-forward chain of dense layers.
struct DenseStack {
  std::vector<DenseLayer> layers;

  int input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  int output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }
};

DenseStack make_stack(const std::vector<int>& dims, const std::vector<Activation>& acts, Rng& rng);

// Activations recorded during a forward pass, needed for backprop.
struct StackCache {
  std::vector<double> input;
  std::vector<std::vector<double>> pre;   // pre-activation per layer
  std::vector<std::vector<double>> post;  // post-activation per layer
};

// Plain forward pass. `num_layers < 0` means the whole stack; otherwise only
// the first num_layers layers are applied (used by early exits).
std::vector<double> forward(const DenseStack& net, std::span<const double> x, int num_layers = -1);
const std::vector<double>& forward(const DenseStack& net, std::span<const double> x, StackCache& cache,
                                   int num_layers = -1);

// Parameter gradients aligned with a stack's layers.
struct Gradients {
  std::vector<Matrix> dw;
  std::vector<std::vector<double>> db;

  void match(const DenseStack& net);  // allocate/zero to net's shapes
  void zero();
  void scale(double f);
};

// Layers whose parameters must not move. Backprop still flows *through*
// frozen layers; only the optimizer update is suppressed.
struct ParameterMask {
  std::vector<bool> frozen;  // indexed by layer; missing entries = trainable

  bool is_frozen(int layer) const {
    return layer < static_cast<int>(frozen.size()) && frozen[layer];
  }
  void freeze(int layer);
  static ParameterMask freeze_below(int layer_count, int first_trainable);
  static ParameterMask freeze_all(int layer_count);
};

// Backprop from d(loss)/d(output). Accumulates parameter gradients into
// `grads` (which must already match the stack) and returns d(loss)/d(input).
// `num_layers` must match the forward call that produced `cache`.
std::vector<double> backward(const DenseStack& net, const StackCache& cache,
                             std::vector<double> d_output, Gradients& grads, int num_layers = -1);

enum class LossKind : std::uint8_t { mse, bce };

double loss_value(LossKind kind, std::span<const double> output, std::span<const double> target);
std::vector<double> loss_grad(LossKind kind, std::span<const double> output,
                              std::span<const double> target);

enum class OptimizerKind : std::uint8_t { sgd, adam };

class Optimizer {
 public:
  static Optimizer sgd(double learning_rate);
  static Optimizer adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                        double epsilon = 1e-8);

  // One update from (already averaged) gradients; frozen layers untouched.
  void apply(DenseStack& net, const Gradients& grads, const ParameterMask& mask = {});

  OptimizerKind kind() const { return kind_; }
  double learning_rate() const { return learning_rate_; }

 private:
  OptimizerKind kind_ = OptimizerKind::sgd;
  double learning_rate_ = 1e-3;
  double beta1_ = 0.9, beta2_ = 0.999, epsilon_ = 1e-8;
  long step_ = 0;
  Gradients m_, v_;  // adam moments, lazily shaped
  bool moments_ready_ = false;
};

// Single-sample train step: cached forward must already have run; computes the
// loss, backprops, applies one optimizer update. Throws on non-finite loss.
double backward_and_step(DenseStack& net, const StackCache& cache, LossKind loss,
                         std::span<const double> target, Optimizer& opt,
                         const ParameterMask& mask = {});

// Minibatch step with mean-gradient update. xs/targets must be parallel.
double train_batch(DenseStack& net, const std::vector<std::vector<double>>& xs,
                   const std::vector<std::vector<double>>& targets, LossKind loss, Optimizer& opt,
                   const ParameterMask& mask = {});

// Multiply-accumulate count of a forward pass through the first `num_layers`
// layers (whole stack when negative).
long long flop_count(const DenseStack& net, int num_layers = -1);

// FNV-1a over the raw parameter bytes; used by freeze tests and manifests.
std::uint64_t parameter_hash(const DenseStack& net);

}  // namespace pearl::nn
