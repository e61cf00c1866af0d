#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "deepretrieval/error.hpp"
#include "deepretrieval/types.hpp"

namespace dr {

/// Item -> J paths, with the inverted index path -> items kept in lockstep.
class ItemPathMapping {
 public:
  using InvertedIndex = std::unordered_map<PathId, std::vector<ItemId>, PathHash>;

  ItemPathMapping() = default;
  ItemPathMapping(std::size_t K, std::size_t D, std::size_t J, std::size_t item_count)
      : K_(K), D_(D), J_(J), assignments_(item_count) {}

  std::size_t K() const { return K_; }
  std::size_t D() const { return D_; }
  std::size_t J() const { return J_; }
  std::size_t item_count() const { return assignments_.size(); }

  /// Replaces the item's paths. Duplicates are collapsed; order of first occurrence is kept.
  void assign(ItemId item, std::vector<PathId> paths) {
    if (item >= assignments_.size()) throw InputError("assign: item id out of range");
    std::vector<PathId> distinct;
    distinct.reserve(paths.size());
    for (auto& p : paths) {
      p.validate(K_, D_);
      if (std::find(distinct.begin(), distinct.end(), p) == distinct.end()) distinct.push_back(std::move(p));
    }
    if (distinct.size() > J_) throw InputError("assign: more than J distinct paths");
    for (const auto& old : assignments_[item]) remove_from_inverted(old, item);
    for (const auto& p : distinct) {
      auto& list = inverted_[p];
      list.insert(std::lower_bound(list.begin(), list.end(), item), item);
    }
    assignments_[item] = std::move(distinct);
  }

  std::span<const PathId> paths_of(ItemId item) const { return assignments_.at(item); }

  std::span<const ItemId> items_on(const PathId& path) const {
    auto it = inverted_.find(path);
    if (it == inverted_.end()) return {};
    return it->second;
  }

  /// |c|
  std::size_t path_size(const PathId& path) const { return items_on(path).size(); }

  const InvertedIndex& inverted() const { return inverted_; }

  std::size_t total_assignments() const {
    std::size_t n = 0;
    for (const auto& [p, items] : inverted_) n += items.size();
    return n;
  }

  std::size_t top_path_size() const {
    std::size_t best = 0;
    for (const auto& [p, items] : inverted_) best = std::max(best, items.size());
    return best;
  }

  /// path size -> number of non-empty paths with that size
  std::map<std::size_t, std::size_t> size_histogram() const {
    std::map<std::size_t, std::size_t> h;
    for (const auto& [p, items] : inverted_) ++h[items.size()];
    return h;
  }

  /// Rebuilds the inverted index from the assignments and compares.
  void check_consistency() const {
    InvertedIndex rebuilt;
    for (ItemId v = 0; v < assignments_.size(); ++v) {
      for (const auto& p : assignments_[v]) rebuilt[p].push_back(v);
    }
    if (rebuilt != inverted_) throw ConsistencyError("inverted index disagrees with assignments");
  }

  template <class Rng>
  static PathId random_path(std::size_t K, std::size_t D, Rng& rng) {
    std::uniform_int_distribution<std::uint32_t> node(0, static_cast<std::uint32_t>(K - 1));
    PathId p;
    p.nodes.resize(D);
    for (auto& n : p.nodes) n = node(rng);
    return p;
  }

  /// J distinct uniformly random paths per item.
  template <class Rng>
  static ItemPathMapping random(std::size_t K, std::size_t D, std::size_t J, std::size_t item_count,
                                Rng& rng) {
    ItemPathMapping m(K, D, J, item_count);
    for (ItemId v = 0; v < item_count; ++v) m.assign(v, m.random_distinct_paths(J, {}, rng));
    return m;
  }

  /// `count` random paths, distinct from each other and from `exclude`.
  template <class Rng>
  std::vector<PathId> random_distinct_paths(std::size_t count, std::span<const PathId> exclude, Rng& rng) const {
    StructureConfig shape;
    shape.K = K_;
    shape.D = D_;
    if (count + exclude.size() > shape.path_count()) throw InputError("not enough distinct paths in K^D");
    std::vector<PathId> out;
    while (out.size() < count) {
      PathId p = random_path(K_, D_, rng);
      if (std::find(out.begin(), out.end(), p) != out.end()) continue;
      if (std::find(exclude.begin(), exclude.end(), p) != exclude.end()) continue;
      out.push_back(std::move(p));
    }
    return out;
  }

  bool operator==(const ItemPathMapping& o) const {
    return K_ == o.K_ && D_ == o.D_ && J_ == o.J_ && assignments_ == o.assignments_;
  }

 private:
  void remove_from_inverted(const PathId& path, ItemId item) {
    auto it = inverted_.find(path);
    if (it == inverted_.end()) throw ConsistencyError("assign: previous path missing from inverted index");
    auto& list = it->second;
    auto pos = std::lower_bound(list.begin(), list.end(), item);
    if (pos == list.end() || *pos != item) throw ConsistencyError("assign: item missing from its path list");
    list.erase(pos);
    if (list.empty()) inverted_.erase(it);
  }

  std::size_t K_ = 0;
  std::size_t D_ = 0;
  std::size_t J_ = 0;
  std::vector<std::vector<PathId>> assignments_;
  InvertedIndex inverted_;
};

}  // namespace dr
