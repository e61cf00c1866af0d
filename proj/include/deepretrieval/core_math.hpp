#pragma once

// Dense numeric kernel: affine layers, ReLU MLPs, softmax/cross-entropy and
// first-order optimizers. Everything is 64-bit; checkpoints narrow to 32-bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "deepretrieval/error.hpp"

namespace dr {

/// Floor applied to probabilities before taking a log.
inline constexpr double kProbabilityFloor = 1e-12;

/// Row-major matrix of doubles.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

  std::size_t size() const { return values.size(); }
  void set_zero() { std::fill(values.begin(), values.end(), 0.0); }

  std::vector<float> to_float32() const {
    return std::vector<float>(values.begin(), values.end());
  }
  static DenseMatrix from_float32(std::size_t r, std::size_t c, std::span<const float> data) {
    if (data.size() != r * c) throw ShapeError("from_float32: data length != rows*cols");
    DenseMatrix m(r, c);
    std::copy(data.begin(), data.end(), m.values.begin());
    return m;
  }

  bool operator==(const DenseMatrix&) const = default;
};

/// y = W x + b, W is out x in.
struct AffineLayer {
  DenseMatrix weight;
  std::vector<double> bias;

  AffineLayer() = default;
  AffineLayer(std::size_t in, std::size_t out) : weight(out, in), bias(out, 0.0) {}

  std::size_t in_features() const { return weight.cols; }
  std::size_t out_features() const { return weight.rows; }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }

  bool operator==(const AffineLayer&) const = default;
};

inline void affine_forward_into(const AffineLayer& layer, std::span<const double> input,
                                std::span<double> out) {
  if (input.size() != layer.in_features()) {
    std::ostringstream msg;
    msg << "affine_forward: input length " << input.size() << " != layer input width "
        << layer.in_features();
    throw ShapeError(msg.str());
  }
  if (layer.bias.size() != layer.out_features()) throw ShapeError("affine_forward: bias length != rows");
  const std::size_t in = layer.in_features();
  const double* w = layer.weight.values.data();
  for (std::size_t r = 0; r < layer.out_features(); ++r) {
    const double* wr = w + r * in;
    double acc = 0.0;
    for (std::size_t c = 0; c < in; ++c) acc += wr[c] * input[c];
    out[r] = acc + layer.bias[r];
  }
}

inline std::vector<double> affine_forward(const AffineLayer& layer, std::span<const double> input) {
  std::vector<double> out(layer.out_features());
  affine_forward_into(layer, input, out);
  return out;
}

/// Accumulates dL/dW, dL/db into `grad` and, when `grad_input` is non-empty, writes dL/dx.
inline void affine_backward(const AffineLayer& layer, std::span<const double> input,
                            std::span<const double> grad_out, AffineLayer& grad,
                            std::span<double> grad_input) {
  const std::size_t in = layer.in_features();
  const std::size_t out = layer.out_features();
  if (grad_out.size() != out || input.size() != in) throw ShapeError("affine_backward: shape mismatch");
  if (!grad_input.empty()) std::fill(grad_input.begin(), grad_input.end(), 0.0);
  for (std::size_t r = 0; r < out; ++r) {
    const double g = grad_out[r];
    if (g == 0.0) continue;
    grad.bias[r] += g;
    double* gw = grad.weight.values.data() + r * in;
    const double* w = layer.weight.values.data() + r * in;
    for (std::size_t c = 0; c < in; ++c) gw[c] += g * input[c];
    if (!grad_input.empty()) {
      for (std::size_t c = 0; c < in; ++c) grad_input[c] += g * w[c];
    }
  }
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

/// Affine stack with ReLU between layers and raw logits at the end.
struct Mlp {
  std::vector<AffineLayer> layers;

  std::size_t in_features() const { return layers.front().in_features(); }
  std::size_t out_features() const { return layers.back().out_features(); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.parameter_count();
    return n;
  }
  bool operator==(const Mlp&) const = default;
};

/// Builds an MLP: in -> hidden x hidden_layers -> out.
inline Mlp make_mlp(std::size_t in, std::size_t hidden, std::size_t hidden_layers, std::size_t out) {
  Mlp mlp;
  std::size_t width = in;
  for (std::size_t i = 0; i < hidden_layers; ++i) {
    mlp.layers.emplace_back(width, hidden);
    width = hidden;
  }
  mlp.layers.emplace_back(width, out);
  return mlp;
}

/// Per-layer inputs and hidden pre-activations kept for the backward pass.
struct MlpTrace {
  std::vector<std::vector<double>> inputs;          // inputs[i] feeds layers[i]
  std::vector<std::vector<double>> preactivations;  // one per hidden layer
};

inline std::vector<double> mlp_forward(const Mlp& mlp, std::span<const double> input,
                                       MlpTrace* trace = nullptr) {
  std::vector<double> current(input.begin(), input.end());
  if (trace) {
    trace->inputs.clear();
    trace->preactivations.clear();
  }
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    std::vector<double> next = affine_forward(mlp.layers[i], current);
    if (trace) trace->inputs.push_back(std::move(current));
    if (i + 1 < mlp.layers.size()) {
      if (trace) trace->preactivations.push_back(next);
      for (double& v : next) v = relu(v);
    }
    current = std::move(next);
  }
  return current;
}

/// Backprop through an MLP using a trace from mlp_forward. Writes dL/dinput when non-empty.
inline void mlp_backward(const Mlp& mlp, const MlpTrace& trace, std::span<const double> grad_logits,
                         Mlp& grad, std::span<double> grad_input) {
  std::vector<double> g(grad_logits.begin(), grad_logits.end());
  for (std::size_t i = mlp.layers.size(); i-- > 0;) {
    const bool first = (i == 0);
    std::vector<double> gin(first && grad_input.empty() ? 0 : mlp.layers[i].in_features());
    affine_backward(mlp.layers[i], trace.inputs[i], g, grad.layers[i], gin);
    if (first) {
      if (!grad_input.empty()) std::copy(gin.begin(), gin.end(), grad_input.begin());
      break;
    }
    const auto& pre = trace.preactivations[i - 1];
    for (std::size_t k = 0; k < gin.size(); ++k) gin[k] = pre[k] > 0.0 ? gin[k] : 0.0;
    g = std::move(gin);
  }
}

inline double log_sum_exp(std::span<const double> z) {
  if (z.empty()) throw ShapeError("log_sum_exp: empty input");
  const double m = *std::max_element(z.begin(), z.end());
  if (m == -std::numeric_limits<double>::infinity()) return m;
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("softmax: empty input");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

inline std::vector<double> log_softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

struct CrossEntropyResult {
  double loss = 0.0;
  std::vector<double> grad_logits;
};

/// Loss -log p[target] (floored) and its gradient w.r.t. the softmax logits.
inline CrossEntropyResult cross_entropy_grad(std::span<const double> probabilities,
                                             std::size_t target_index) {
  if (target_index >= probabilities.size()) throw ShapeError("cross_entropy_grad: target out of range");
  CrossEntropyResult r;
  r.loss = -std::log(std::max(probabilities[target_index], kProbabilityFloor));
  r.grad_logits.assign(probabilities.begin(), probabilities.end());
  r.grad_logits[target_index] -= 1.0;
  return r;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { adam, sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

struct OptimizerState {
  OptimizerConfig config;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;

  OptimizerState() = default;
  explicit OptimizerState(OptimizerConfig c) : config(c) {}
};

/// One update over a parameter set. Moment buffers are created lazily on the first step.
inline void optimizer_step(std::span<const std::span<double>> params,
                           std::span<const std::span<const double>> grads, OptimizerState& state) {
  if (params.size() != grads.size()) throw ShapeError("optimizer_step: params/grads count mismatch");
  if (!(state.config.learning_rate > 0.0)) throw InputError("optimizer_step: learning rate must be positive");
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != grads[t].size()) {
      std::ostringstream msg;
      msg << "optimizer_step: tensor " << t << " has " << params[t].size() << " params but "
          << grads[t].size() << " grads";
      throw ShapeError(msg.str());
    }
    for (std::size_t i = 0; i < grads[t].size(); ++i) {
      if (!std::isfinite(grads[t][i])) {
        std::ostringstream msg;
        msg << "optimizer_step: non-finite gradient " << grads[t][i] << " in tensor " << t
            << " at index " << i;
        throw NumericError(msg.str());
      }
    }
  }

  const auto& cfg = state.config;
  ++state.step;
  if (cfg.kind == OptimizerKind::sgd) {
    for (std::size_t t = 0; t < params.size(); ++t) {
      for (std::size_t i = 0; i < params[t].size(); ++i) {
        const double g = grads[t][i] + cfg.weight_decay * params[t][i];
        params[t][i] -= cfg.learning_rate * g;
      }
    }
    return;
  }

  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("optimizer_step: moment buffer count mismatch");

  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& m = state.first_moment[t];
    auto& v = state.second_moment[t];
    if (m.size() != params[t].size()) throw ShapeError("optimizer_step: moment buffer shape mismatch");
    double* p = params[t].data();
    const double* g = grads[t].data();
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double gi = g[i] + cfg.weight_decay * p[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Initialisers

template <class Rng>
void fill_normal(std::span<double> values, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : values) v = dist(rng);
}

/// Glorot-uniform weights, zero bias.
template <class Rng>
void init_glorot(AffineLayer& layer, Rng& rng) {
  const double limit =
      std::sqrt(6.0 / static_cast<double>(layer.in_features() + layer.out_features()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& w : layer.weight.values) w = dist(rng);
  std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
}

}  // namespace dr
