#pragma once

// Per-item streaming estimate of s[v, c] = sum over interactions with v of p(c | x).
// Only the S best paths per item are retained.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "deepretrieval/error.hpp"
#include "deepretrieval/retrieval.hpp"
#include "deepretrieval/types.hpp"

namespace dr {

struct PathScore {
  PathId path;
  double score = 0.0;

  bool operator==(const PathScore&) const = default;
};

inline bool score_ranks_before(const PathScore& a, const PathScore& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.path < b.path;
}

struct ItemScores {
  std::vector<PathScore> entries;  // sorted by score_ranks_before, at most S
  double occurrences = 0.0;        // N_v, decayed by eta per interaction

  const PathScore* find(const PathId& path) const {
    for (const auto& e : entries) {
      if (e.path == path) return &e;
    }
    return nullptr;
  }
  double score_of(const PathId& path) const {
    const auto* e = find(path);
    return e ? e->score : 0.0;
  }
  bool operator==(const ItemScores&) const = default;
};

/// Merges a fresh list of path scores into an item's record:
///   in both lists   -> eta * old + new
///   only in fresh   -> eta * min_score + new
///   only in record  -> eta * old
/// then keeps the `capacity` largest. min_score is the smallest recorded score once the
/// record is full, and 0 while it still has free slots.
inline void streaming_score_update(ItemScores& record, std::span<const PathScore> fresh, double eta,
                                   std::size_t capacity) {
  if (capacity < 1) throw InputError("streaming_score_update: capacity must be >= 1");
  for (const auto& f : fresh) {
    if (!(f.score >= 0.0)) throw InputError("streaming_score_update: scores must be non-negative");
  }
  double min_score = 0.0;
  if (record.entries.size() >= capacity) {
    min_score = record.entries.front().score;
    for (const auto& e : record.entries) min_score = std::min(min_score, e.score);
  }

  std::vector<PathScore> merged;
  merged.reserve(record.entries.size() + fresh.size());
  for (const auto& e : record.entries) merged.push_back({e.path, eta * e.score});
  const std::size_t recorded = merged.size();
  for (const auto& f : fresh) {
    auto it = std::find_if(merged.begin(), merged.begin() + static_cast<std::ptrdiff_t>(recorded),
                           [&](const PathScore& m) { return m.path == f.path; });
    if (it != merged.begin() + static_cast<std::ptrdiff_t>(recorded)) {
      it->score += f.score;
      continue;
    }
    // repeated path inside `fresh` folds into its first occurrence
    auto dup = std::find_if(merged.begin() + static_cast<std::ptrdiff_t>(recorded), merged.end(),
                            [&](const PathScore& m) { return m.path == f.path; });
    if (dup != merged.end()) {
      dup->score += f.score;
    } else {
      merged.push_back({f.path, eta * min_score + f.score});
    }
  }
  std::sort(merged.begin(), merged.end(), score_ranks_before);
  if (merged.size() > capacity) merged.resize(capacity);
  record.entries = std::move(merged);
}

class ScoreTable {
 public:
  ScoreTable() = default;
  ScoreTable(std::size_t item_count, std::size_t capacity) : capacity_(capacity), items_(item_count) {
    if (capacity < 1) throw InputError("score table: capacity must be >= 1");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t item_count() const { return items_.size(); }

  const ItemScores& item(ItemId v) const { return items_.at(v); }
  ItemScores& item(ItemId v) { return items_.at(v); }

  /// Folds one interaction with item v: N_v <- eta * N_v + 1, then the streaming merge.
  void observe(ItemId v, std::span<const PathScore> fresh, double eta) {
    auto& rec = item(v);
    rec.occurrences = eta * rec.occurrences + 1.0;
    streaming_score_update(rec, fresh, eta, capacity_);
  }

  /// Same as observe(), with the fresh scores taken as exp(log_prob) of beam output.
  void observe_paths(ItemId v, std::span<const ScoredPath> paths, double eta) {
    std::vector<PathScore> fresh;
    fresh.reserve(paths.size());
    for (const auto& p : paths) fresh.push_back({p.path, std::exp(p.log_prob)});
    observe(v, fresh, eta);
  }

  bool operator==(const ScoreTable&) const = default;

 private:
  std::size_t capacity_ = 1;
  std::vector<ItemScores> items_;
};

}  // namespace dr
