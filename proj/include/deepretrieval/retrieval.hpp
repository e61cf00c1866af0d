#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "deepretrieval/core_math.hpp"
#include "deepretrieval/error.hpp"
#include "deepretrieval/item_path_mapping.hpp"
#include "deepretrieval/structure_model.hpp"
#include "deepretrieval/types.hpp"

namespace dr {

struct ScoredPath {
  PathId path;
  double log_prob = 0.0;

  bool operator==(const ScoredPath&) const = default;
};

/// Higher log-probability first; equal log-probabilities go to the lexicographically smaller path.
inline bool ranks_before(const ScoredPath& a, const ScoredPath& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.path < b.path;
}

/// A scorer fills `log_probs` (length K) with log p(c_d | x, prefix) for d = prefix.size() + 1.
template <class S>
concept LayerScorer = requires(const S& s, std::span<const std::uint32_t> prefix, std::span<double> out) {
  { s(prefix, out) };
};

/// Layer-wise top-B expansion. Each layer ranks the K * |beam| successors and keeps B of them,
/// so the work is O(D K B log B) plus D * B scorer calls.
template <LayerScorer Scorer>
std::vector<ScoredPath> beam_search(const Scorer& scorer, std::size_t K, std::size_t D, std::size_t beam) {
  if (beam < 1) throw InputError("beam_search: beam size must be >= 1");
  struct Beam {
    std::vector<std::uint32_t> prefix;
    double log_prob;
  };
  struct Successor {
    std::uint32_t parent;
    std::uint32_t node;
    double log_prob;
  };

  std::vector<Beam> beams{{{}, 0.0}};
  std::vector<double> log_probs(K);
  std::vector<Successor> successors;
  for (std::size_t d = 0; d < D; ++d) {
    successors.clear();
    successors.reserve(beams.size() * K);
    for (std::uint32_t b = 0; b < beams.size(); ++b) {
      scorer(std::span<const std::uint32_t>(beams[b].prefix), std::span<double>(log_probs));
      for (std::uint32_t k = 0; k < K; ++k) successors.push_back({b, k, beams[b].log_prob + log_probs[k]});
    }
    auto before = [&](const Successor& a, const Successor& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      const auto& pa = beams[a.parent].prefix;
      const auto& pb = beams[b.parent].prefix;
      if (pa != pb) return pa < pb;
      return a.node < b.node;
    };
    const std::size_t keep = std::min(beam, successors.size());
    std::partial_sort(successors.begin(), successors.begin() + static_cast<std::ptrdiff_t>(keep),
                      successors.end(), before);
    std::vector<Beam> next;
    next.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
      const auto& s = successors[i];
      Beam nb{beams[s.parent].prefix, s.log_prob};
      nb.prefix.push_back(s.node);
      next.push_back(std::move(nb));
    }
    beams = std::move(next);
  }

  std::vector<ScoredPath> out;
  out.reserve(beams.size());
  for (auto& b : beams) out.push_back({PathId(std::move(b.prefix)), b.log_prob});
  return out;
}

inline std::vector<ScoredPath> beam_search(const UserContext& ctx, const StructureParams& params,
                                           std::size_t beam) {
  return beam_search(StructureScorer(params, ctx), params.config.K, params.config.D, beam);
}

// ---------------------------------------------------------------------------
// Serving-time scorer.
//
// The first affine layer of layer d is linear in each input block, so
//   W [u; e_1; ...; e_{d-1}] + b = (W_u u + b) + sum_j W_j e_j.
// W_j e_j depends only on the node, so it is tabulated once per parameter snapshot
// and each beam prefix costs d vector adds instead of a full matrix-vector product.

class InferenceSession {
 public:
  explicit InferenceSession(const StructureParams& params) : params_(&params) {
    const auto& c = params.config;
    const std::size_t E = c.emb_dim;
    node_projections_.resize(c.D);
    for (std::size_t d = 1; d < c.D; ++d) {
      const auto& first = params.layer_mlps[d].layers.front();
      const std::size_t H = first.out_features();
      node_projections_[d].resize(d);
      for (std::size_t j = 0; j < d; ++j) {
        DenseMatrix table(c.K, H);
        for (std::size_t k = 0; k < c.K; ++k) {
          const auto emb = params.node_embeddings[j].row(k);
          for (std::size_t h = 0; h < H; ++h) {
            const double* w = first.weight.values.data() + h * first.in_features() + (j + 1) * E;
            double acc = 0.0;
            for (std::size_t e = 0; e < E; ++e) acc += w[e] * emb[e];
            table(k, h) = acc;
          }
        }
        node_projections_[d][j] = std::move(table);
      }
    }
  }

  const StructureParams& params() const { return *params_; }

  class Scorer {
   public:
    Scorer(const InferenceSession& session, std::span<const double> user) : session_(&session) {
      const auto& params = session.params();
      const std::size_t E = params.config.emb_dim;
      user_terms_.resize(params.config.D);
      for (std::size_t d = 0; d < params.config.D; ++d) {
        const auto& first = params.layer_mlps[d].layers.front();
        auto& out = user_terms_[d];
        out.resize(first.out_features());
        for (std::size_t h = 0; h < out.size(); ++h) {
          const double* w = first.weight.values.data() + h * first.in_features();
          double acc = 0.0;
          for (std::size_t e = 0; e < E; ++e) acc += w[e] * user[e];
          out[h] = acc + first.bias[h];
        }
      }
    }

    void operator()(std::span<const std::uint32_t> prefix, std::span<double> log_probs) const {
      const auto& params = session_->params();
      const std::size_t d = prefix.size();
      const auto& mlp = params.layer_mlps[d];
      hidden_ = user_terms_[d];
      for (std::size_t j = 0; j < d; ++j) {
        const auto row = session_->node_projections_[d][j].row(prefix[j]);
        for (std::size_t h = 0; h < hidden_.size(); ++h) hidden_[h] += row[h];
      }
      for (std::size_t l = 1; l < mlp.layers.size(); ++l) {
        for (double& v : hidden_) v = relu(v);
        next_.resize(mlp.layers[l].out_features());
        affine_forward_into(mlp.layers[l], hidden_, next_);
        std::swap(hidden_, next_);
      }
      const double lse = log_sum_exp(hidden_);
      for (std::size_t k = 0; k < hidden_.size(); ++k) log_probs[k] = hidden_[k] - lse;
    }

   private:
    const InferenceSession* session_;
    std::vector<std::vector<double>> user_terms_;
    mutable std::vector<double> hidden_;
    mutable std::vector<double> next_;
  };

  Scorer scorer(const UserContext& ctx) const {
    const auto u = user_embedding(ctx, *params_);
    return Scorer(*this, u);
  }

 private:
  const StructureParams* params_;
  // node_projections_[d][j] : K x H, first-layer contribution of node_embeddings[j] to layer d
  std::vector<std::vector<DenseMatrix>> node_projections_;
};

// ---------------------------------------------------------------------------
// Candidate retrieval

struct Candidate {
  ItemId item = 0;
  double log_prob = 0.0;  // best log-probability over the retrieved paths holding the item

  bool operator==(const Candidate&) const = default;
};

/// Union of inverted[path] over the given paths, each item once at its best path score.
/// Sorted by log_prob descending, then item id ascending.
inline std::vector<Candidate> collect_candidates(std::span<const ScoredPath> paths, const ItemPathMapping& mapping) {
  std::vector<Candidate> out;
  std::unordered_map<ItemId, std::size_t> position;
  for (const auto& sp : paths) {
    for (ItemId v : mapping.items_on(sp.path)) {
      auto [it, inserted] = position.try_emplace(v, out.size());
      if (inserted) {
        out.push_back({v, sp.log_prob});
      } else {
        out[it->second].log_prob = std::max(out[it->second].log_prob, sp.log_prob);
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.item < b.item;
  });
  return out;
}

template <LayerScorer Scorer>
std::vector<Candidate> retrieve_candidates(const Scorer& scorer, const ItemPathMapping& mapping, std::size_t beam) {
  const auto paths = beam_search(scorer, mapping.K(), mapping.D(), beam);
  return collect_candidates(paths, mapping);
}

inline std::vector<Candidate> retrieve_candidates(const UserContext& ctx, const StructureParams& params,
                                                  const ItemPathMapping& mapping, std::size_t beam) {
  return retrieve_candidates(StructureScorer(params, ctx), mapping, beam);
}

struct BeamMultipliers {
  double low = 5.0;
  double high = 10.0;
};

struct AdaptiveBeamResult {
  std::vector<Candidate> candidates;
  std::size_t beam = 1;
};

/// Doubles the beam until at least `low * target` candidates come back (or the beam covers
/// every path), bisects down to the smallest beam that still does, and keeps the best
/// `high * target` candidates.
template <LayerScorer Scorer>
AdaptiveBeamResult adaptive_beam(const Scorer& scorer, const ItemPathMapping& mapping, std::size_t target_count,
                                 BeamMultipliers multipliers = {}, std::size_t initial_beam = 1) {
  if (target_count < 1) throw InputError("adaptive_beam: target count must be >= 1");
  if (multipliers.low <= 0.0 || multipliers.high < multipliers.low) {
    throw InputError("adaptive_beam: multiplier range must satisfy 0 < low <= high");
  }
  StructureConfig shape;
  shape.K = mapping.K();
  shape.D = mapping.D();
  const std::size_t max_beam = shape.path_count();
  const auto wanted = static_cast<std::size_t>(std::ceil(multipliers.low * static_cast<double>(target_count)));

  std::size_t beam = std::clamp<std::size_t>(initial_beam, 1, max_beam);
  std::size_t failed = 0;
  auto cands = retrieve_candidates(scorer, mapping, beam);
  while (cands.size() < wanted && beam < max_beam) {
    failed = beam;
    beam = std::min(beam * 2, max_beam);
    cands = retrieve_candidates(scorer, mapping, beam);
  }
  if (cands.size() >= wanted) {
    std::size_t lo = failed;
    std::size_t hi = beam;
    while (hi - lo > 1) {
      const std::size_t mid = lo + (hi - lo) / 2;
      auto trial = retrieve_candidates(scorer, mapping, mid);
      if (trial.size() >= wanted) {
        hi = mid;
        cands = std::move(trial);
      } else {
        lo = mid;
      }
    }
    if (hi != beam) beam = hi;
  }
  const auto cap = static_cast<std::size_t>(std::floor(multipliers.high * static_cast<double>(target_count)));
  if (cands.size() > cap) cands.resize(cap);
  return {std::move(cands), beam};
}

inline AdaptiveBeamResult adaptive_beam(const UserContext& ctx, const StructureParams& params,
                                        const ItemPathMapping& mapping, std::size_t target_count,
                                        BeamMultipliers multipliers = {}) {
  return adaptive_beam(StructureScorer(params, ctx), mapping, target_count, multipliers);
}

}  // namespace dr
