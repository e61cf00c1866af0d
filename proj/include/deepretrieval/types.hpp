#pragma once

#include <algorithm>
#include <charconv>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deepretrieval/error.hpp"

namespace dr {

/// Dense item index in [0, V).
using ItemId = std::uint32_t;

/// Placeholder used to pad short behavior sequences; never pooled.
inline constexpr ItemId kPaddingItem = std::numeric_limits<ItemId>::max();

/// One node per layer, each in [0, K).
struct PathId {
  std::vector<std::uint32_t> nodes;

  PathId() = default;
  explicit PathId(std::vector<std::uint32_t> n) : nodes(std::move(n)) {}
  PathId(std::initializer_list<std::uint32_t> n) : nodes(n) {}

  std::size_t depth() const { return nodes.size(); }

  auto operator<=>(const PathId&) const = default;
  bool operator==(const PathId&) const = default;

  /// "3-1-7"
  std::string to_string() const {
    std::string s;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (i) s.push_back('-');
      s += std::to_string(nodes[i]);
    }
    return s;
  }

  static PathId parse(std::string_view text) {
    PathId p;
    std::size_t start = 0;
    while (start <= text.size()) {
      std::size_t end = text.find('-', start);
      if (end == std::string_view::npos) end = text.size();
      std::uint32_t v = 0;
      auto piece = text.substr(start, end - start);
      auto [ptr, ec] = std::from_chars(piece.data(), piece.data() + piece.size(), v);
      if (piece.empty() || ec != std::errc{} || ptr != piece.data() + piece.size()) {
        throw InputError("malformed path '" + std::string(text) + "'");
      }
      p.nodes.push_back(v);
      start = end + 1;
    }
    return p;
  }

  /// Throws if the path does not fit a K x D structure.
  void validate(std::size_t K, std::size_t D) const {
    if (nodes.size() != D) throw InputError("path " + to_string() + " has wrong depth");
    for (auto n : nodes) {
      if (n >= K) throw InputError("path " + to_string() + " has node >= K");
    }
  }
};

struct PathHash {
  std::size_t operator()(const PathId& p) const noexcept {
    std::uint64_t h = 1469598103934665603ULL;
    for (auto n : p.nodes) {
      h ^= n + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
      h *= 1099511628211ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

/// A user's behavior sequence, most recent item last.
struct UserContext {
  std::vector<ItemId> behavior;

  /// Keeps the most recent `max_len` items.
  static UserContext from_history(std::span<const ItemId> history, std::size_t max_len) {
    UserContext ctx;
    const std::size_t n = std::min(history.size(), max_len);
    ctx.behavior.assign(history.end() - static_cast<std::ptrdiff_t>(n), history.end());
    return ctx;
  }
};

/// Structure hyperparameters plus the few model-shape knobs the structure does not fix.
struct StructureConfig {
  std::size_t K = 50;              // nodes per layer
  std::size_t D = 3;               // layers
  std::size_t J = 3;               // paths per item
  std::size_t B = 25;              // beam size
  std::size_t S = 8;               // score-table capacity per item
  double alpha = 3e-5;             // path-size penalty factor
  double eta = 0.999;              // streaming decay
  std::size_t emb_dim = 32;
  std::size_t hidden_width = 0;    // 0 means 4K
  std::size_t hidden_layers = 1;
  std::size_t max_seq_len = 69;

  std::size_t effective_hidden_width() const { return hidden_width == 0 ? 4 * K : hidden_width; }

  /// K^D, saturating at SIZE_MAX.
  std::size_t path_count() const {
    std::size_t n = 1;
    for (std::size_t d = 0; d < D; ++d) {
      if (n > std::numeric_limits<std::size_t>::max() / K) return std::numeric_limits<std::size_t>::max();
      n *= K;
    }
    return n;
  }

  void validate() const {
    if (K < 1 || D < 1 || J < 1 || B < 1 || S < 1 || emb_dim < 1 || max_seq_len < 1) {
      throw InputError("structure config: all counts must be positive");
    }
    if (J > S) throw InputError("structure config: J must not exceed S");
    if (B > path_count()) throw InputError("structure config: B must not exceed K^D");
    if (J > path_count()) throw InputError("structure config: J must not exceed K^D");
    if (alpha < 0.0) throw InputError("structure config: alpha must be >= 0");
    if (!(eta > 0.0 && eta <= 1.0)) throw InputError("structure config: eta must be in (0, 1]");
  }

  static StructureConfig movielens() {
    StructureConfig c;
    c.K = 50; c.D = 3; c.B = 25; c.J = 3; c.alpha = 3e-5;
    return c;
  }
  static StructureConfig amazon() {
    StructureConfig c;
    c.K = 100; c.D = 3; c.B = 50; c.J = 3; c.alpha = 3e-7;
    return c;
  }
};

}  // namespace dr
