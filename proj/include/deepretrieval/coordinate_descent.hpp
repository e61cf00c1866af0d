#pragma once

// M-step: choose J paths per item to maximise
//
//   sum_v N_v log(sum_j s[v, pi_j(v)]) - alpha * sum_c f(|c|)
//
// by greedy per-item coordinate updates.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

#include "deepretrieval/error.hpp"
#include "deepretrieval/item_path_mapping.hpp"
#include "deepretrieval/score_table.hpp"
#include "deepretrieval/structure_model.hpp"
#include "deepretrieval/types.hpp"

namespace dr {

using PathSizeCounters = std::unordered_map<PathId, std::int64_t, PathHash>;

struct CoordinateDescentOptions {
  double alpha = 0.0;
  std::size_t J = 1;
  std::size_t iterations = 3;  // T
  PathSizePenalty penalty;
};

struct CoordinateDescentResult {
  ItemPathMapping mapping;
  std::vector<double> objective_per_sweep;
  PathSizeCounters path_sizes;     // online counters at the end of the last sweep
  std::size_t random_fallbacks = 0;  // items with no scores and no previous paths
  std::size_t kept_previous = 0;     // items with no interactions that kept their paths
  std::size_t reverted_updates = 0;  // greedy proposals rejected because they lowered the objective
};

/// Penalised surrogate for a full mapping. Items with N_v = 0 contribute only through path sizes.
inline double surrogate_objective(const ScoreTable& table, const ItemPathMapping& mapping, double alpha,
                                  PathSizePenalty f = {}) {
  double likelihood = 0.0;
  for (ItemId v = 0; v < table.item_count(); ++v) {
    const auto& rec = table.item(v);
    if (rec.occurrences <= 0.0) continue;
    double sum = 0.0;
    for (const auto& p : mapping.paths_of(v)) sum += rec.score_of(p);
    likelihood += rec.occurrences * std::log(sum);
  }
  return likelihood - penalty_value(mapping, alpha, f);
}

namespace detail {

struct CdCandidate {
  PathId path;
  double score;
};

inline std::int64_t size_of(const PathSizeCounters& sizes, const PathId& p) {
  auto it = sizes.find(p);
  return it == sizes.end() ? 0 : it->second;
}

inline void add_size(PathSizeCounters& sizes, const PathId& p, std::int64_t delta) {
  auto& n = sizes[p];
  n += delta;
  if (n < 0) throw ConsistencyError("coordinate descent: path size went negative for " + p.to_string());
  if (n == 0) sizes.erase(p);
}

/// Greedy selection of J distinct paths for one item. Sizes are updated as paths are chosen.
inline std::vector<PathId> greedy_select(std::span<const CdCandidate> candidates, double occurrences,
                                         const CoordinateDescentOptions& opt, PathSizeCounters& sizes) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  std::vector<PathId> chosen;
  std::vector<bool> used(candidates.size(), false);
  double sum = 0.0;
  for (std::size_t j = 0; j < opt.J && j < candidates.size(); ++j) {
    std::size_t best = candidates.size();
    double best_gain = kNegInf;
    double best_inc = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (used[i]) continue;
      const auto& c = candidates[i];
      const double inc = opt.alpha * opt.penalty.increment(static_cast<double>(size_of(sizes, c.path)));
      // With sum = 0 the log-ratio is undefined; log(sum) is a shared -inf offset, so rank by N_v log s.
      double gain;
      if (sum > 0.0) {
        gain = occurrences * (std::log(sum + c.score) - std::log(sum)) - inc;
      } else {
        gain = (c.score > 0.0 ? occurrences * std::log(c.score) : kNegInf) - inc;
      }
      bool better = false;
      if (best == candidates.size()) {
        better = true;
      } else if (gain != best_gain) {
        better = gain > best_gain;
      } else if (inc != best_inc) {
        better = inc < best_inc;
      } else {
        better = c.path < candidates[best].path;
      }
      if (better) {
        best = i;
        best_gain = gain;
        best_inc = inc;
      }
    }
    used[best] = true;
    sum += candidates[best].score;
    add_size(sizes, candidates[best].path, +1);
    chosen.push_back(candidates[best].path);
  }
  return chosen;
}

/// N_v log(sum s) - alpha * sum_c [f(|c|+1) - f(|c|)] with sizes that exclude the item itself.
inline double item_objective(std::span<const PathId> paths, const ItemScores& rec, const CoordinateDescentOptions& opt,
                             const PathSizeCounters& sizes_without_item) {
  double sum = 0.0;
  double pen = 0.0;
  for (const auto& p : paths) {
    sum += rec.score_of(p);
    pen += opt.penalty.increment(static_cast<double>(size_of(sizes_without_item, p)));
  }
  return rec.occurrences * std::log(sum) - opt.alpha * pen;
}

}  // namespace detail

/// Coordinate descent over items.
///
/// Sweep 1 starts from empty path sizes and assigns items greedily in id order. Later sweeps
/// release all of an item's previous paths, re-select greedily against everyone else's sizes and
/// keep the proposal unless it scores lower than the previous paths. Items without interactions
/// keep their `previous` paths (or get random ones, counted as fallbacks).
template <class Rng>
CoordinateDescentResult coordinate_descent_assign(const ScoreTable& table, std::size_t K, std::size_t D,
                                                  const CoordinateDescentOptions& opt,
                                                  const ItemPathMapping* previous, Rng& rng) {
  if (opt.J < 1) throw InputError("coordinate descent: J must be >= 1");
  if (opt.iterations < 1) throw InputError("coordinate descent: iteration count must be >= 1");
  if (opt.alpha < 0.0) throw InputError("coordinate descent: alpha must be >= 0");
  const std::size_t V = table.item_count();
  if (previous && previous->item_count() != V) throw InputError("coordinate descent: previous mapping size mismatch");

  CoordinateDescentResult result;
  result.mapping = ItemPathMapping(K, D, opt.J, V);
  std::vector<std::vector<PathId>> assignment(V);
  std::vector<std::vector<detail::CdCandidate>> candidates(V);
  std::vector<bool> active(V, false);
  PathSizeCounters sizes;

  for (ItemId v = 0; v < V; ++v) {
    const auto& rec = table.item(v);
    if (rec.occurrences > 0.0 && !rec.entries.empty()) {
      active[v] = true;
      for (const auto& e : rec.entries) candidates[v].push_back({e.path, e.score});
      if (candidates[v].size() < opt.J) {
        std::vector<PathId> taken;
        for (const auto& c : candidates[v]) taken.push_back(c.path);
        for (auto& p : result.mapping.random_distinct_paths(opt.J - candidates[v].size(), taken, rng)) {
          candidates[v].push_back({std::move(p), 0.0});
        }
      }
      continue;
    }
    if (previous && !previous->paths_of(v).empty()) {
      const auto old = previous->paths_of(v);
      assignment[v].assign(old.begin(), old.end());
      ++result.kept_previous;
    } else {
      assignment[v] = result.mapping.random_distinct_paths(opt.J, {}, rng);
      ++result.random_fallbacks;
    }
    for (const auto& p : assignment[v]) detail::add_size(sizes, p, +1);
  }

  for (std::size_t t = 0; t < opt.iterations; ++t) {
    for (ItemId v = 0; v < V; ++v) {
      if (!active[v]) continue;
      if (t == 0) {
        assignment[v] = detail::greedy_select(candidates[v], table.item(v).occurrences, opt, sizes);
        continue;
      }
      auto old = std::move(assignment[v]);
      for (const auto& p : old) detail::add_size(sizes, p, -1);
      auto proposal = detail::greedy_select(candidates[v], table.item(v).occurrences, opt, sizes);
      for (const auto& p : proposal) detail::add_size(sizes, p, -1);
      const double old_value = detail::item_objective(old, table.item(v), opt, sizes);
      const double new_value = detail::item_objective(proposal, table.item(v), opt, sizes);
      if (new_value < old_value) {
        ++result.reverted_updates;
        assignment[v] = std::move(old);
      } else {
        assignment[v] = std::move(proposal);
      }
      for (const auto& p : assignment[v]) detail::add_size(sizes, p, +1);
    }
    ItemPathMapping snapshot(K, D, opt.J, V);
    for (ItemId v = 0; v < V; ++v) snapshot.assign(v, assignment[v]);
    result.objective_per_sweep.push_back(surrogate_objective(table, snapshot, opt.alpha, opt.penalty));
    if (t + 1 == opt.iterations) result.mapping = std::move(snapshot);
  }
  result.path_sizes = std::move(sizes);
  return result;
}

}  // namespace dr
