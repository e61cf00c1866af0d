#pragma once

// Softmax reranker p(y | x) proportional to exp(<emb(x), w_y>) sharing the structure model's
// user encoder, trained with sampled softmax; plus exact brute-force inner-product retrieval.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <unordered_set>
#include <vector>

#include "deepretrieval/core_math.hpp"
#include "deepretrieval/error.hpp"
#include "deepretrieval/item_path_mapping.hpp"
#include "deepretrieval/structure_model.hpp"
#include "deepretrieval/types.hpp"

namespace dr {

struct SoftmaxModel {
  DenseMatrix item_output_embeddings;  // V x E

  std::size_t item_count() const { return item_output_embeddings.rows; }
  std::size_t emb_dim() const { return item_output_embeddings.cols; }

  static SoftmaxModel zeros(std::size_t item_count, std::size_t emb_dim) {
    return {DenseMatrix(item_count, emb_dim)};
  }
  template <class Rng>
  static SoftmaxModel random(std::size_t item_count, std::size_t emb_dim, Rng& rng, double stddev = 0.1) {
    auto m = zeros(item_count, emb_dim);
    fill_normal(m.item_output_embeddings.values, stddev, rng);
    return m;
  }
  SoftmaxModel zeros_like() const { return zeros(item_count(), emb_dim()); }

  bool operator==(const SoftmaxModel&) const = default;
};

struct JointObjectiveWeights {
  double structure_weight = 1.0;
  double softmax_weight = 1.0;
  std::size_t freeze_epoch = 2;       // softmax output embeddings stop updating from this epoch on
  std::size_t negative_samples = 100;
};

/// `count` distinct items drawn uniformly from [0, V) without `positive` (Floyd's algorithm).
template <class Rng>
std::vector<ItemId> sample_negatives(std::size_t item_count, ItemId positive, std::size_t count, Rng& rng) {
  if (item_count < 2) throw InputError("sample_negatives: need at least two items");
  if (count < 1 || count >= item_count) throw InputError("sample_negatives: count must be in [1, V)");
  if (positive >= item_count) throw InputError("sample_negatives: positive out of range");
  const std::size_t pool = item_count - 1;  // indices >= positive shift up by one
  std::vector<ItemId> out;
  out.reserve(count);
  std::unordered_set<std::size_t> taken;
  for (std::size_t j = pool - count; j < pool; ++j) {
    std::uniform_int_distribution<std::size_t> pick(0, j);
    std::size_t t = pick(rng);
    if (!taken.insert(t).second) {
      t = j;
      taken.insert(t);
    }
    out.push_back(static_cast<ItemId>(t >= positive ? t + 1 : t));
  }
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

namespace detail {

/// Cross-entropy with items[0] as the target. Returns the loss; adds `scale` times the gradients
/// into `model_grads` and `grad_user` when given.
inline double softmax_over_set(std::span<const double> user, std::span<const ItemId> items,
                               std::span<const double> corrections, const SoftmaxModel& model,
                               SoftmaxModel* model_grads, std::vector<double>* grad_user, double scale) {
  std::vector<double> logits(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    logits[i] = dot(user, model.item_output_embeddings.row(items[i])) - corrections[i];
  }
  const auto logp = log_softmax(logits);
  const double loss = -logp[0];
  if (model_grads || grad_user) {
    for (std::size_t i = 0; i < items.size(); ++i) {
      const double g = scale * (std::exp(logp[i]) - (i == 0 ? 1.0 : 0.0));
      if (g == 0.0) continue;
      const auto w = model.item_output_embeddings.row(items[i]);
      if (model_grads) {
        auto gw = model_grads->item_output_embeddings.row(items[i]);
        for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += g * user[k];
      }
      if (grad_user) {
        for (std::size_t k = 0; k < w.size(); ++k) (*grad_user)[k] += g * w[k];
      }
    }
  }
  return loss;
}

}  // namespace detail

/// Sampled softmax with log-Q correction for uniform negatives: each negative logit is shifted by
/// -log(n / (V - 1)), its expected count. With n = V - 1 this is the full softmax.
/// Gradients (scaled by `scale`) flow into the output embeddings and through the shared encoder.
inline double sampled_softmax_loss(const UserContext& ctx, ItemId positive, std::span<const ItemId> negatives,
                                   const StructureParams& encoder, const SoftmaxModel& model,
                                   StructureParams* encoder_grads = nullptr, SoftmaxModel* model_grads = nullptr,
                                   double scale = 1.0) {
  const std::size_t V = model.item_count();
  if (encoder.item_count() != V) throw ShapeError("sampled_softmax_loss: encoder/model item count mismatch");
  if (positive >= V) throw InputError("sampled_softmax_loss: positive out of range");
  if (negatives.empty() || negatives.size() >= V) throw InputError("sampled_softmax_loss: need 1 <= negatives < V");
  std::vector<ItemId> items;
  items.reserve(negatives.size() + 1);
  items.push_back(positive);
  for (ItemId n : negatives) {
    if (n >= V) throw InputError("sampled_softmax_loss: negative out of range");
    if (n == positive) throw InputError("sampled_softmax_loss: positive among negatives");
    items.push_back(n);
  }
  const double correction =
      std::log(static_cast<double>(negatives.size()) / static_cast<double>(V - 1));
  std::vector<double> corrections(items.size(), correction);
  corrections[0] = 0.0;

  const auto u = user_embedding(ctx, encoder);
  std::vector<double> grad_user;
  if (encoder_grads) grad_user.assign(u.size(), 0.0);
  const double loss = detail::softmax_over_set(u, items, corrections, model, model_grads,
                                               encoder_grads ? &grad_user : nullptr, scale);
  if (encoder_grads) user_embedding_backward(ctx, grad_user, encoder_grads->item_embeddings);
  return loss;
}

template <class Rng>
double sampled_softmax_loss(const UserContext& ctx, ItemId positive, std::size_t negative_count,
                            const StructureParams& encoder, const SoftmaxModel& model, Rng& rng,
                            StructureParams* encoder_grads = nullptr, SoftmaxModel* model_grads = nullptr,
                            double scale = 1.0) {
  const auto negatives = sample_negatives(model.item_count(), positive, negative_count, rng);
  return sampled_softmax_loss(ctx, positive, negatives, encoder, model, encoder_grads, model_grads, scale);
}

/// -log p_softmax(positive | x) over the whole corpus.
inline double full_softmax_loss(const UserContext& ctx, ItemId positive, const StructureParams& encoder,
                                const SoftmaxModel& model) {
  const auto u = user_embedding(ctx, encoder);
  std::vector<double> logits(model.item_count());
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = dot(u, model.item_output_embeddings.row(i));
  return -log_softmax(logits)[positive];
}

// ---------------------------------------------------------------------------
// Retrieval by inner product

struct ScoredItem {
  ItemId item = 0;
  double score = 0.0;

  bool operator==(const ScoredItem&) const = default;
};

/// Higher score first, ties to the smaller item id.
inline bool item_ranks_before(const ScoredItem& a, const ScoredItem& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.item < b.item;
}

/// Exact top-k over all items by <user, w_item>, via a bounded heap.
inline std::vector<ScoredItem> brute_force_retrieve(std::span<const double> user, const SoftmaxModel& model,
                                                    std::size_t k) {
  const std::size_t V = model.item_count();
  if (k > V) throw InputError("brute_force_retrieve: k exceeds corpus size");
  if (k == 0) return {};
  std::vector<ScoredItem> heap;  // worst element at the front
  heap.reserve(k + 1);
  const double* w = model.item_output_embeddings.values.data();
  const std::size_t E = model.emb_dim();
  for (std::size_t v = 0; v < V; ++v) {
    const double* row = w + v * E;
    double s = 0.0;
    for (std::size_t e = 0; e < E; ++e) s += row[e] * user[e];
    const ScoredItem cand{static_cast<ItemId>(v), s};
    if (heap.size() < k) {
      heap.push_back(cand);
      std::push_heap(heap.begin(), heap.end(), item_ranks_before);
    } else if (item_ranks_before(cand, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), item_ranks_before);
      heap.back() = cand;
      std::push_heap(heap.begin(), heap.end(), item_ranks_before);
    }
  }
  std::sort(heap.begin(), heap.end(), item_ranks_before);
  return heap;
}

inline std::vector<ScoredItem> brute_force_retrieve(const UserContext& ctx, const StructureParams& encoder,
                                                    const SoftmaxModel& model, std::size_t k) {
  return brute_force_retrieve(user_embedding(ctx, encoder), model, k);
}

struct RerankResult {
  std::vector<ScoredItem> items;
  bool truncated_request = false;  // k exceeded the candidate count; all candidates returned
};

inline RerankResult rerank(std::span<const ItemId> candidates, std::span<const double> user, const SoftmaxModel& model,
                           std::size_t k) {
  if (candidates.empty()) throw InputError("rerank: empty candidate set");
  RerankResult r;
  r.items.reserve(candidates.size());
  for (ItemId v : candidates) {
    if (v >= model.item_count()) throw InputError("rerank: candidate out of range");
    r.items.push_back({v, dot(user, model.item_output_embeddings.row(v))});
  }
  if (k >= r.items.size()) {
    r.truncated_request = k > r.items.size();
    std::sort(r.items.begin(), r.items.end(), item_ranks_before);
    return r;
  }
  std::partial_sort(r.items.begin(), r.items.begin() + static_cast<std::ptrdiff_t>(k), r.items.end(),
                    item_ranks_before);
  r.items.resize(k);
  return r;
}

inline RerankResult rerank(std::span<const ItemId> candidates, const UserContext& ctx, const StructureParams& encoder,
                           const SoftmaxModel& model, std::size_t k) {
  return rerank(candidates, user_embedding(ctx, encoder), model, k);
}

// ---------------------------------------------------------------------------
// Joint objective  Q = Q_pen + Q_softmax  (as a loss to minimise)

struct JointLoss {
  double structure = 0.0;  // -log sum_j p(pi_j(y) | x)
  double softmax = 0.0;    // sampled softmax cross-entropy
  double penalty = 0.0;    // alpha * sum_c f(|c|), constant in the parameters
  double total = 0.0;      // w_str * (structure + penalty) + w_sm * softmax
};

/// Joint loss for one interaction given the item's paths and an already evaluated penalty.
/// Adds `scale` * gradients into both towers. When `softmax_frozen` is set the output embeddings
/// get no gradient; the shared encoder still does.
inline JointLoss joint_loss(const UserContext& ctx, ItemId item, std::span<const PathId> item_paths, double penalty,
                            const StructureParams& params, const SoftmaxModel& model,
                            const JointObjectiveWeights& weights, std::span<const ItemId> negatives,
                            StructureParams* params_grads = nullptr, SoftmaxModel* model_grads = nullptr,
                            bool softmax_frozen = false, double scale = 1.0) {
  if (item_paths.empty()) throw InputError("joint_loss: item has no assigned paths");
  JointLoss r;
  if (weights.structure_weight != 0.0) {
    r.structure = multi_path_loss(ctx, item_paths, params, params_grads, scale * weights.structure_weight);
    r.penalty = penalty;
  }
  if (weights.softmax_weight != 0.0) {
    r.softmax = sampled_softmax_loss(ctx, item, negatives, params, model, params_grads,
                                     softmax_frozen ? nullptr : model_grads, scale * weights.softmax_weight);
  }
  r.total = weights.structure_weight * (r.structure + r.penalty) + weights.softmax_weight * r.softmax;
  return r;
}

inline JointLoss joint_loss(const UserContext& ctx, ItemId item, const ItemPathMapping& mapping,
                            const StructureParams& params, const SoftmaxModel& model, double alpha,
                            const JointObjectiveWeights& weights, std::span<const ItemId> negatives,
                            StructureParams* params_grads = nullptr, SoftmaxModel* model_grads = nullptr,
                            bool softmax_frozen = false, double scale = 1.0) {
  const double penalty = weights.structure_weight != 0.0 ? penalty_value(mapping, alpha) : 0.0;
  return joint_loss(ctx, item, mapping.paths_of(item), penalty, params, model, weights, negatives, params_grads,
                    model_grads, softmax_frozen, scale);
}

}  // namespace dr
