#pragma once

// D-layer, K-node path probability model.
//
//   p(c | x) = prod_d p(c_d | x, c_1..c_{d-1})
//
// Layer d sees [emb(x); emb_1(c_1); ...; emb_{d-1}(c_{d-1})] and emits K logits
// through its own ReLU MLP. emb(x) is the mean of the behavior item embeddings.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "deepretrieval/core_math.hpp"
#include "deepretrieval/error.hpp"
#include "deepretrieval/item_path_mapping.hpp"
#include "deepretrieval/types.hpp"

namespace dr {

struct StructureParams {
  StructureConfig config;
  DenseMatrix item_embeddings;               // V x E
  std::vector<DenseMatrix> node_embeddings;  // D-1 tables of K x E; table d embeds layer-d choices
  std::vector<Mlp> layer_mlps;               // layer d maps E*(d+1) -> K

  std::size_t item_count() const { return item_embeddings.rows; }
  std::size_t emb_dim() const { return config.emb_dim; }

  static StructureParams zeros(const StructureConfig& config, std::size_t item_count) {
    config.validate();
    StructureParams p;
    p.config = config;
    p.item_embeddings = DenseMatrix(item_count, config.emb_dim);
    for (std::size_t d = 0; d + 1 < config.D; ++d) p.node_embeddings.emplace_back(config.K, config.emb_dim);
    for (std::size_t d = 0; d < config.D; ++d) {
      p.layer_mlps.push_back(make_mlp(config.emb_dim * (d + 1), config.effective_hidden_width(),
                                      config.hidden_layers, config.K));
    }
    return p;
  }

  template <class Rng>
  static StructureParams random(const StructureConfig& config, std::size_t item_count, Rng& rng,
                                double embedding_stddev = 0.1) {
    StructureParams p = zeros(config, item_count);
    fill_normal(p.item_embeddings.values, embedding_stddev, rng);
    for (auto& t : p.node_embeddings) fill_normal(t.values, embedding_stddev, rng);
    for (auto& mlp : p.layer_mlps) {
      for (auto& layer : mlp.layers) init_glorot(layer, rng);
    }
    return p;
  }

  /// Same shapes, all zero. Used as a gradient accumulator.
  StructureParams zeros_like() const { return zeros(config, item_count()); }

  /// Visits every tensor as (name, rows, cols, values) in a fixed order.
  template <class Self, class Fn>
  static void for_each_tensor(Self& self, Fn&& fn) {
    fn(std::string("item_embeddings"), self.item_embeddings.rows, self.item_embeddings.cols,
       std::span(self.item_embeddings.values));
    for (std::size_t d = 0; d < self.node_embeddings.size(); ++d) {
      auto& t = self.node_embeddings[d];
      fn("node_embeddings." + std::to_string(d), t.rows, t.cols, std::span(t.values));
    }
    for (std::size_t d = 0; d < self.layer_mlps.size(); ++d) {
      for (std::size_t l = 0; l < self.layer_mlps[d].layers.size(); ++l) {
        auto& layer = self.layer_mlps[d].layers[l];
        const std::string base = "layer." + std::to_string(d) + ".affine." + std::to_string(l);
        fn(base + ".weight", layer.weight.rows, layer.weight.cols, std::span(layer.weight.values));
        fn(base + ".bias", std::size_t{1}, layer.bias.size(), std::span(layer.bias));
      }
    }
  }

  std::vector<std::span<double>> tensors() {
    std::vector<std::span<double>> out;
    for_each_tensor(*this, [&](const std::string&, std::size_t, std::size_t, std::span<double> v) {
      out.push_back(v);
    });
    return out;
  }
  std::vector<std::span<const double>> tensors() const {
    std::vector<std::span<const double>> out;
    for_each_tensor(*this, [&](const std::string&, std::size_t, std::size_t, std::span<const double> v) {
      out.push_back(v);
    });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto t : tensors()) n += t.size();
    return n;
  }

  void set_zero() {
    for (auto t : tensors()) std::fill(t.begin(), t.end(), 0.0);
  }

  /// Closed-form count from the layer shapes.
  static std::size_t expected_parameter_count(const StructureConfig& c, std::size_t item_count) {
    const std::size_t E = c.emb_dim;
    const std::size_t H = c.effective_hidden_width();
    std::size_t n = item_count * E + (c.D - 1) * c.K * E;
    for (std::size_t d = 1; d <= c.D; ++d) {
      n += E * d * H + H;
      n += (c.hidden_layers - 1) * (H * H + H);
      n += H * c.K + c.K;
    }
    return n;
  }

  /// Parameters excluding the item-embedding table (the part that scales with K and D).
  std::size_t structure_parameter_count() const {
    return parameter_count() - item_embeddings.size();
  }

  bool operator==(const StructureParams& o) const {
    return item_embeddings == o.item_embeddings && node_embeddings == o.node_embeddings &&
           layer_mlps == o.layer_mlps;
  }
};

// ---------------------------------------------------------------------------
// User encoder: mean pooling over non-padding behavior items.

inline void validate_context(const UserContext& ctx, std::size_t item_count) {
  for (ItemId v : ctx.behavior) {
    if (v != kPaddingItem && v >= item_count) throw InputError("user context: item id out of range");
  }
}

inline std::vector<double> user_embedding(const UserContext& ctx, const StructureParams& params) {
  std::vector<double> u(params.emb_dim(), 0.0);
  std::size_t n = 0;
  for (ItemId v : ctx.behavior) {
    if (v == kPaddingItem) continue;
    if (v >= params.item_count()) throw InputError("user_embedding: item id out of range");
    const auto row = params.item_embeddings.row(v);
    for (std::size_t k = 0; k < u.size(); ++k) u[k] += row[k];
    ++n;
  }
  if (n > 0) {
    for (double& x : u) x /= static_cast<double>(n);
  }
  return u;
}

/// Spreads dL/d emb(x) back onto the pooled item rows.
inline void user_embedding_backward(const UserContext& ctx, std::span<const double> grad_user,
                                    DenseMatrix& grad_item_embeddings) {
  std::size_t n = 0;
  for (ItemId v : ctx.behavior) n += (v != kPaddingItem);
  if (n == 0) return;
  const double inv = 1.0 / static_cast<double>(n);
  for (ItemId v : ctx.behavior) {
    if (v == kPaddingItem) continue;
    auto row = grad_item_embeddings.row(v);
    for (std::size_t k = 0; k < row.size(); ++k) row[k] += grad_user[k] * inv;
  }
}

// ---------------------------------------------------------------------------
// Layer evaluation

/// [user; node_emb_0[prefix_0]; ...; node_emb_{d-1}[prefix_{d-1}]]
inline std::vector<double> layer_input(std::span<const double> user, std::span<const std::uint32_t> prefix,
                                       const StructureParams& params) {
  const std::size_t E = params.emb_dim();
  if (prefix.size() >= params.config.D) throw InputError("layer input: prefix must be shorter than D");
  std::vector<double> in;
  in.reserve(E * (prefix.size() + 1));
  in.insert(in.end(), user.begin(), user.end());
  for (std::size_t j = 0; j < prefix.size(); ++j) {
    if (prefix[j] >= params.config.K) throw InputError("layer input: prefix node out of range");
    const auto row = params.node_embeddings[j].row(prefix[j]);
    in.insert(in.end(), row.begin(), row.end());
  }
  return in;
}

inline std::vector<double> layer_logits(std::span<const double> user, std::span<const std::uint32_t> prefix,
                                        const StructureParams& params, MlpTrace* trace = nullptr) {
  const auto in = layer_input(user, prefix, params);
  return mlp_forward(params.layer_mlps[prefix.size()], in, trace);
}

/// p(c_d | x, c_1..c_{d-1}) with d = prefix.size() + 1.
inline std::vector<double> layer_distribution(const UserContext& ctx, std::span<const std::uint32_t> prefix,
                                              const StructureParams& params) {
  const auto u = user_embedding(ctx, params);
  return softmax(layer_logits(u, prefix, params));
}

/// Beam-search scorer over a fixed user embedding.
class StructureScorer {
 public:
  StructureScorer(const StructureParams& params, std::vector<double> user)
      : params_(&params), user_(std::move(user)) {}
  StructureScorer(const StructureParams& params, const UserContext& ctx)
      : StructureScorer(params, user_embedding(ctx, params)) {}

  std::size_t K() const { return params_->config.K; }
  std::size_t D() const { return params_->config.D; }

  void operator()(std::span<const std::uint32_t> prefix, std::span<double> log_probs) const {
    const auto lp = log_softmax(layer_logits(user_, prefix, *params_));
    std::copy(lp.begin(), lp.end(), log_probs.begin());
  }

 private:
  const StructureParams* params_;
  std::vector<double> user_;
};

/// log p(c | x) = sum_d log p(c_d | x, c_<d), accumulated from layer 1.
inline double path_log_prob(const UserContext& ctx, const PathId& path, const StructureParams& params) {
  path.validate(params.config.K, params.config.D);
  const auto u = user_embedding(ctx, params);
  double lp = 0.0;
  const std::span<const std::uint32_t> nodes(path.nodes);
  for (std::size_t d = 0; d < params.config.D; ++d) {
    const auto logp = log_softmax(layer_logits(u, nodes.first(d), params));
    lp += logp[nodes[d]];
  }
  return lp;
}

// ---------------------------------------------------------------------------
// Multi-path structure loss: -log sum_j p(c_j | x)

namespace detail {

struct PrefixEval {
  std::vector<std::uint32_t> prefix;
  MlpTrace trace;
  std::vector<double> log_probs;
  std::vector<double> grad_logits;
};

struct MultiPathForward {
  std::vector<double> user;
  std::vector<PathId> paths;             // distinct
  std::vector<double> path_log_probs;
  std::vector<PrefixEval> evals;         // one per distinct prefix
  std::vector<std::vector<std::size_t>> eval_of;  // eval_of[j][d]
  double loss = 0.0;
};

inline std::vector<PathId> collapse_duplicates(std::span<const PathId> paths) {
  std::vector<PathId> out;
  for (const auto& p : paths) {
    if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
  }
  return out;
}

inline MultiPathForward multi_path_forward(std::vector<double> user, std::span<const PathId> paths,
                                           const StructureParams& params) {
  if (paths.empty()) throw InputError("multi_path_loss: no paths");
  const std::size_t D = params.config.D;
  MultiPathForward f;
  f.user = std::move(user);
  f.paths = collapse_duplicates(paths);
  f.eval_of.assign(f.paths.size(), std::vector<std::size_t>(D));
  for (std::size_t j = 0; j < f.paths.size(); ++j) {
    const auto& path = f.paths[j];
    path.validate(params.config.K, D);
    double lp = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      const std::span<const std::uint32_t> prefix(path.nodes.data(), d);
      std::size_t idx = f.evals.size();
      for (std::size_t e = 0; e < f.evals.size(); ++e) {
        if (std::equal(f.evals[e].prefix.begin(), f.evals[e].prefix.end(), prefix.begin(), prefix.end())) {
          idx = e;
          break;
        }
      }
      if (idx == f.evals.size()) {
        PrefixEval ev;
        ev.prefix.assign(prefix.begin(), prefix.end());
        ev.log_probs = log_softmax(layer_logits(f.user, prefix, params, &ev.trace));
        ev.grad_logits.assign(params.config.K, 0.0);
        f.evals.push_back(std::move(ev));
      }
      f.eval_of[j][d] = idx;
      lp += f.evals[idx].log_probs[path.nodes[d]];
    }
    f.path_log_probs.push_back(lp);
  }
  f.loss = -log_sum_exp(f.path_log_probs);
  return f;
}

/// Backprop of `scale * loss`; returns dL/d emb(x) and accumulates parameter grads except item rows.
inline std::vector<double> multi_path_backward(MultiPathForward& f, const StructureParams& params,
                                               StructureParams& grads, double scale) {
  const std::size_t E = params.emb_dim();
  const std::size_t D = params.config.D;
  // d(-lse)/d l_j = -w_j, w_j = posterior weight of path j
  for (std::size_t j = 0; j < f.paths.size(); ++j) {
    const double w = std::exp(f.path_log_probs[j] + f.loss);
    for (std::size_t d = 0; d < D; ++d) {
      auto& ev = f.evals[f.eval_of[j][d]];
      for (std::size_t k = 0; k < ev.grad_logits.size(); ++k) {
        ev.grad_logits[k] += scale * w * std::exp(ev.log_probs[k]);
      }
      ev.grad_logits[f.paths[j].nodes[d]] -= scale * w;
    }
  }
  std::vector<double> grad_user(E, 0.0);
  for (auto& ev : f.evals) {
    const std::size_t d = ev.prefix.size();
    std::vector<double> grad_in(E * (d + 1));
    mlp_backward(params.layer_mlps[d], ev.trace, ev.grad_logits, grads.layer_mlps[d], grad_in);
    for (std::size_t k = 0; k < E; ++k) grad_user[k] += grad_in[k];
    for (std::size_t j = 0; j < d; ++j) {
      auto row = grads.node_embeddings[j].row(ev.prefix[j]);
      for (std::size_t k = 0; k < E; ++k) row[k] += grad_in[(j + 1) * E + k];
    }
  }
  return grad_user;
}

}  // namespace detail

/// Returns -log sum_j p(c_j | x); when `grads` is non-null adds `scale` times the gradient into it.
inline double multi_path_loss(const UserContext& ctx, std::span<const PathId> paths,
                              const StructureParams& params, StructureParams* grads = nullptr,
                              double scale = 1.0) {
  auto f = detail::multi_path_forward(user_embedding(ctx, params), paths, params);
  if (grads) {
    const auto grad_user = detail::multi_path_backward(f, params, *grads, scale);
    user_embedding_backward(ctx, grad_user, grads->item_embeddings);
  }
  return f.loss;
}

struct StructureLossResult {
  double loss = 0.0;
  StructureParams grads;
};

inline StructureLossResult multi_path_loss_with_grad(const UserContext& ctx, std::span<const PathId> paths,
                                                     const StructureParams& params) {
  StructureLossResult r;
  r.grads = params.zeros_like();
  r.loss = multi_path_loss(ctx, paths, params, &r.grads);
  return r;
}

/// Smallest |pre-activation| over the hidden units touched by the loss. Gradient checks use it to
/// stay away from ReLU kinks.
inline double min_abs_hidden_preactivation(const UserContext& ctx, std::span<const PathId> paths,
                                           const StructureParams& params) {
  const auto f = detail::multi_path_forward(user_embedding(ctx, params), paths, params);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& ev : f.evals) {
    for (const auto& pre : ev.trace.preactivations) {
      for (double z : pre) best = std::min(best, std::abs(z));
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Path-size penalty alpha * sum_c f(|c|)

struct PathSizePenalty {
  enum class Kind { quartic, quadratic };
  Kind kind = Kind::quartic;

  /// f(n) = n^4/4 (default) or n^2/2
  double operator()(double n) const {
    if (kind == Kind::quadratic) return n * n / 2.0;
    const double n2 = n * n;
    return n2 * n2 / 4.0;
  }
  /// f(n+1) - f(n)
  double increment(double n) const { return (*this)(n + 1.0) - (*this)(n); }
};

/// alpha * sum f(size). Counters are allowed to be signed so that broken bookkeeping is caught here.
template <class Int>
double penalty_from_sizes(std::span<const Int> sizes, double alpha, PathSizePenalty f = {}) {
  double total = 0.0;
  for (auto s : sizes) {
    if constexpr (std::is_signed_v<Int>) {
      if (s < 0) throw ConsistencyError("penalty: negative path size " + std::to_string(s));
    }
    total += f(static_cast<double>(s));
  }
  return alpha * total;
}

inline double penalty_value(const ItemPathMapping& mapping, double alpha, PathSizePenalty f = {}) {
  if (alpha < 0.0) throw InputError("penalty_value: alpha must be >= 0");
  std::vector<std::size_t> sizes;
  sizes.reserve(mapping.inverted().size());
  for (const auto& [path, items] : mapping.inverted()) sizes.push_back(items.size());
  // Summation order matters for bit-level determinism; unordered_map order is not stable.
  std::sort(sizes.begin(), sizes.end());
  return penalty_from_sizes(std::span<const std::size_t>(sizes), alpha, f);
}

}  // namespace dr
