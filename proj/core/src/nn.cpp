#include "pearl/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

namespace pearl::nn {

namespace {

double activate(Activation act, double z) {
  switch (act) {
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::linear: return z;
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
  }
  throw std::logic_error("unknown activation");
}

// Derivative in terms of pre-activation z and post-activation y.
double activate_deriv(Activation act, double z, double y) {
  switch (act) {
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::linear: return 1.0;
    case Activation::sigmoid: return y * (1.0 - y);
  }
  throw std::logic_error("unknown activation");
}

constexpr double kBceClamp = 1e-7;

int resolve_layer_count(const DenseStack& net, int num_layers) {
  const int n = static_cast<int>(net.layers.size());
  if (num_layers < 0) return n;
  if (num_layers > n) throw std::invalid_argument("num_layers exceeds stack depth");
  return num_layers;
}

}  // namespace

DenseLayer make_layer(int in_dim, int out_dim, Activation act, Rng& rng) {
  if (in_dim <= 0 || out_dim <= 0) throw std::invalid_argument("layer dims must be positive");
  DenseLayer layer;
  layer.weights = Matrix(out_dim, in_dim);
  layer.bias.assign(static_cast<std::size_t>(out_dim), 0.0);
  layer.activation = act;
  if (act == Activation::relu) {
    const double stddev = std::sqrt(2.0 / in_dim);
    for (double& w : layer.weights.data) w = rng.normal(0.0, stddev);
  } else {
    const double limit = std::sqrt(6.0 / (in_dim + out_dim));
    for (double& w : layer.weights.data) w = rng.uniform(-limit, limit);
  }
  return layer;
}

DenseStack make_stack(const std::vector<int>& dims, const std::vector<Activation>& acts, Rng& rng) {
  if (dims.size() < 2 || acts.size() != dims.size() - 1)
    throw std::invalid_argument("make_stack: need dims n+1 and acts n");
  DenseStack net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i)
    net.layers.push_back(make_layer(dims[i], dims[i + 1], acts[i], rng));
  return net;
}

std::vector<double> forward(const DenseStack& net, std::span<const double> x, int num_layers) {
  const int n = resolve_layer_count(net, num_layers);
  std::vector<double> cur(x.begin(), x.end());
  for (int li = 0; li < n; ++li) {
    const DenseLayer& layer = net.layers[li];
    if (static_cast<int>(cur.size()) != layer.in_dim())
      throw std::invalid_argument("forward: dimension mismatch");
    std::vector<double> next(static_cast<std::size_t>(layer.out_dim()));
    for (int r = 0; r < layer.out_dim(); ++r) {
      double z = layer.bias[r];
      const double* wrow = &layer.weights.data[static_cast<std::size_t>(r) * layer.in_dim()];
      for (int c = 0; c < layer.in_dim(); ++c) z += wrow[c] * cur[c];
      next[r] = activate(layer.activation, z);
    }
    cur = std::move(next);
  }
  return cur;
}

const std::vector<double>& forward(const DenseStack& net, std::span<const double> x,
                                   StackCache& cache, int num_layers) {
  const int n = resolve_layer_count(net, num_layers);
  cache.input.assign(x.begin(), x.end());
  cache.pre.assign(static_cast<std::size_t>(n), {});
  cache.post.assign(static_cast<std::size_t>(n), {});
  const std::vector<double>* cur = &cache.input;
  for (int li = 0; li < n; ++li) {
    const DenseLayer& layer = net.layers[li];
    if (static_cast<int>(cur->size()) != layer.in_dim())
      throw std::invalid_argument("forward: dimension mismatch");
    auto& pre = cache.pre[li];
    auto& post = cache.post[li];
    pre.resize(static_cast<std::size_t>(layer.out_dim()));
    post.resize(static_cast<std::size_t>(layer.out_dim()));
    for (int r = 0; r < layer.out_dim(); ++r) {
      double z = layer.bias[r];
      const double* wrow = &layer.weights.data[static_cast<std::size_t>(r) * layer.in_dim()];
      for (int c = 0; c < layer.in_dim(); ++c) z += wrow[c] * (*cur)[c];
      pre[r] = z;
      post[r] = activate(layer.activation, z);
    }
    cur = &post;
  }
  if (n == 0) return cache.input;
  return cache.post[static_cast<std::size_t>(n) - 1];
}

void Gradients::match(const DenseStack& net) {
  dw.assign(net.layers.size(), {});
  db.assign(net.layers.size(), {});
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    dw[i] = Matrix(net.layers[i].out_dim(), net.layers[i].in_dim());
    db[i].assign(net.layers[i].bias.size(), 0.0);
  }
}

void Gradients::zero() {
  for (auto& m : dw) std::fill(m.data.begin(), m.data.end(), 0.0);
  for (auto& b : db) std::fill(b.begin(), b.end(), 0.0);
}

void Gradients::scale(double f) {
  for (auto& m : dw)
    for (double& v : m.data) v *= f;
  for (auto& b : db)
    for (double& v : b) v *= f;
}

void ParameterMask::freeze(int layer) {
  if (layer >= static_cast<int>(frozen.size())) frozen.resize(static_cast<std::size_t>(layer) + 1, false);
  frozen[static_cast<std::size_t>(layer)] = true;
}

ParameterMask ParameterMask::freeze_below(int layer_count, int first_trainable) {
  ParameterMask mask;
  mask.frozen.assign(static_cast<std::size_t>(layer_count), false);
  for (int i = 0; i < first_trainable && i < layer_count; ++i) mask.frozen[static_cast<std::size_t>(i)] = true;
  return mask;
}

ParameterMask ParameterMask::freeze_all(int layer_count) {
  return freeze_below(layer_count, layer_count);
}

std::vector<double> backward(const DenseStack& net, const StackCache& cache,
                             std::vector<double> d_output, Gradients& grads, int num_layers) {
  const int n = resolve_layer_count(net, num_layers);
  if (static_cast<int>(cache.pre.size()) != n)
    throw std::invalid_argument("backward: cache does not match num_layers");
  std::vector<double> d_post = std::move(d_output);
  for (int li = n - 1; li >= 0; --li) {
    const DenseLayer& layer = net.layers[li];
    if (static_cast<int>(d_post.size()) != layer.out_dim())
      throw std::invalid_argument("backward: gradient dimension mismatch");
    const std::vector<double>& input = li == 0 ? cache.input : cache.post[li - 1];
    // d(loss)/d(pre-activation)
    std::vector<double> d_pre(static_cast<std::size_t>(layer.out_dim()));
    for (int r = 0; r < layer.out_dim(); ++r)
      d_pre[r] = d_post[r] * activate_deriv(layer.activation, cache.pre[li][r], cache.post[li][r]);
    // Parameter gradients.
    Matrix& dw = grads.dw[li];
    std::vector<double>& db = grads.db[li];
    for (int r = 0; r < layer.out_dim(); ++r) {
      db[r] += d_pre[r];
      double* dwrow = &dw.data[static_cast<std::size_t>(r) * layer.in_dim()];
      for (int c = 0; c < layer.in_dim(); ++c) dwrow[c] += d_pre[r] * input[c];
    }
    // Input gradient for the layer below.
    std::vector<double> d_in(static_cast<std::size_t>(layer.in_dim()), 0.0);
    for (int r = 0; r < layer.out_dim(); ++r) {
      const double* wrow = &layer.weights.data[static_cast<std::size_t>(r) * layer.in_dim()];
      for (int c = 0; c < layer.in_dim(); ++c) d_in[c] += d_pre[r] * wrow[c];
    }
    d_post = std::move(d_in);
  }
  return d_post;
}

double loss_value(LossKind kind, std::span<const double> output, std::span<const double> target) {
  if (output.size() != target.size()) throw std::invalid_argument("loss: size mismatch");
  const double n = static_cast<double>(output.size());
  double total = 0.0;
  if (kind == LossKind::mse) {
    for (std::size_t i = 0; i < output.size(); ++i) {
      const double d = output[i] - target[i];
      total += d * d;
    }
  } else {
    for (std::size_t i = 0; i < output.size(); ++i) {
      const double y = std::clamp(output[i], kBceClamp, 1.0 - kBceClamp);
      total += -(target[i] * std::log(y) + (1.0 - target[i]) * std::log(1.0 - y));
    }
  }
  return total / n;
}

std::vector<double> loss_grad(LossKind kind, std::span<const double> output,
                              std::span<const double> target) {
  if (output.size() != target.size()) throw std::invalid_argument("loss: size mismatch");
  const double n = static_cast<double>(output.size());
  std::vector<double> grad(output.size());
  if (kind == LossKind::mse) {
    for (std::size_t i = 0; i < output.size(); ++i)
      grad[i] = 2.0 * (output[i] - target[i]) / n;
  } else {
    for (std::size_t i = 0; i < output.size(); ++i) {
      const double y = std::clamp(output[i], kBceClamp, 1.0 - kBceClamp);
      grad[i] = (y - target[i]) / (y * (1.0 - y)) / n;
    }
  }
  return grad;
}

Optimizer Optimizer::sgd(double learning_rate) {
  Optimizer opt;
  opt.kind_ = OptimizerKind::sgd;
  opt.learning_rate_ = learning_rate;
  return opt;
}

Optimizer Optimizer::adam(double learning_rate, double beta1, double beta2, double epsilon) {
  Optimizer opt;
  opt.kind_ = OptimizerKind::adam;
  opt.learning_rate_ = learning_rate;
  opt.beta1_ = beta1;
  opt.beta2_ = beta2;
  opt.epsilon_ = epsilon;
  return opt;
}

void Optimizer::apply(DenseStack& net, const Gradients& grads, const ParameterMask& mask) {
  if (learning_rate_ <= 0.0) throw std::invalid_argument("optimizer: learning rate must be > 0");
  if (kind_ == OptimizerKind::sgd) {
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
      if (mask.is_frozen(static_cast<int>(li))) continue;
      DenseLayer& layer = net.layers[li];
      for (std::size_t i = 0; i < layer.weights.data.size(); ++i)
        layer.weights.data[i] -= learning_rate_ * grads.dw[li].data[i];
      for (std::size_t i = 0; i < layer.bias.size(); ++i)
        layer.bias[i] -= learning_rate_ * grads.db[li][i];
    }
    return;
  }
  if (!moments_ready_) {
    m_.match(net);
    v_.match(net);
    moments_ready_ = true;
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    if (mask.is_frozen(static_cast<int>(li))) continue;
    DenseLayer& layer = net.layers[li];
    auto update = [&](double& param, double g, double& m, double& v) {
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g * g;
      param -= learning_rate_ * (m / bc1) / (std::sqrt(v / bc2) + epsilon_);
    };
    for (std::size_t i = 0; i < layer.weights.data.size(); ++i)
      update(layer.weights.data[i], grads.dw[li].data[i], m_.dw[li].data[i], v_.dw[li].data[i]);
    for (std::size_t i = 0; i < layer.bias.size(); ++i)
      update(layer.bias[i], grads.db[li][i], m_.db[li][i], v_.db[li][i]);
  }
}

double backward_and_step(DenseStack& net, const StackCache& cache, LossKind loss,
                         std::span<const double> target, Optimizer& opt,
                         const ParameterMask& mask) {
  const std::vector<double>& output = cache.post.back();
  const double value = loss_value(loss, output, target);
  if (!std::isfinite(value)) throw std::runtime_error("training diverged: non-finite loss");
  Gradients grads;
  grads.match(net);
  backward(net, cache, loss_grad(loss, output, target), grads);
  opt.apply(net, grads, mask);
  return value;
}

double train_batch(DenseStack& net, const std::vector<std::vector<double>>& xs,
                   const std::vector<std::vector<double>>& targets, LossKind loss, Optimizer& opt,
                   const ParameterMask& mask) {
  if (xs.empty() || xs.size() != targets.size())
    throw std::invalid_argument("train_batch: bad batch");
  Gradients grads;
  grads.match(net);
  StackCache cache;
  double total = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::vector<double>& out = forward(net, xs[i], cache);
    total += loss_value(loss, out, targets[i]);
    backward(net, cache, loss_grad(loss, out, targets[i]), grads);
  }
  const double mean_loss = total / static_cast<double>(xs.size());
  if (!std::isfinite(mean_loss)) throw std::runtime_error("training diverged: non-finite loss");
  grads.scale(1.0 / static_cast<double>(xs.size()));
  opt.apply(net, grads, mask);
  return mean_loss;
}

long long flop_count(const DenseStack& net, int num_layers) {
  const int n = resolve_layer_count(net, num_layers);
  long long flops = 0;
  for (int li = 0; li < n; ++li)
    flops += 2LL * net.layers[li].in_dim() * net.layers[li].out_dim();
  return flops;
}

std::uint64_t parameter_hash(const DenseStack& net) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int shift = 0; shift < 64; shift += 8) {
      h ^= (bits >> shift) & 0xffULL;
      h *= 0x100000001b3ULL;
    }
  };
  for (const DenseLayer& layer : net.layers) {
    for (double w : layer.weights.data) mix(w);
    for (double b : layer.bias) mix(b);
  }
  return h;
}

}  // namespace pearl::nn
