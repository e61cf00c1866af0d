#pragma once

// Interaction logs: CSV ingestion, rating/activity filtering, user splits, training samples
// and a planted-cluster generator.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "deepretrieval/error.hpp"
#include "deepretrieval/random.hpp"
#include "deepretrieval/types.hpp"

namespace dr {

inline constexpr double kMissingRating = 5.0;

struct InteractionRecord {
  std::int64_t user_id = 0;
  std::int64_t item_id = 0;
  double rating = kMissingRating;
  std::int64_t timestamp = 0;

  bool operator==(const InteractionRecord&) const = default;
};

struct CsvReadResult {
  std::vector<InteractionRecord> records;
  std::size_t malformed_rows = 0;
};

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.back() == '\r' || f.back() == ' ')) f.remove_suffix(1);
    while (!f.empty() && f.front() == ' ') f.remove_prefix(1);
  }
  return out;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  if (s.empty()) return false;
  if constexpr (std::is_floating_point_v<T>) {
    // from_chars for double is missing on some toolchains
    std::string tmp(s);
    char* end = nullptr;
    out = std::strtod(tmp.c_str(), &end);
    return end == tmp.c_str() + tmp.size() && std::isfinite(out);
  } else {
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
  }
}

}  // namespace detail

/// Headered CSV `user_id,item_id,rating,timestamp`. A three-column header without a rating
/// column is read as `user_id,item_id,timestamp` with the rating set to 5.0. Rows that do not
/// parse are skipped and counted.
inline CsvReadResult read_interactions_csv(std::istream& in) {
  CsvReadResult result;
  std::string line;
  if (!std::getline(in, line)) return result;
  const auto header = detail::split_csv_line(line);
  bool has_rating = true;
  if (header.size() == 3) {
    has_rating = false;
  } else if (header.size() != 4) {
    throw InputError("interactions CSV: header must have 3 or 4 columns");
  }
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    InteractionRecord r;
    bool ok = f.size() == header.size() && detail::parse_number(f[0], r.user_id) &&
              detail::parse_number(f[1], r.item_id);
    if (ok && has_rating) ok = detail::parse_number(f[2], r.rating) && detail::parse_number(f[3], r.timestamp);
    if (ok && !has_rating) ok = detail::parse_number(f[2], r.timestamp);
    if (ok && r.timestamp < 0) ok = false;
    if (!ok) {
      ++result.malformed_rows;
      continue;
    }
    result.records.push_back(r);
  }
  return result;
}

inline void write_interactions_csv(std::ostream& out, std::span<const InteractionRecord> records) {
  out << "user_id,item_id,rating,timestamp\n";
  for (const auto& r : records) {
    std::ostringstream rating;
    rating << r.rating;
    out << r.user_id << ',' << r.item_id << ',' << rating.str() << ',' << r.timestamp << '\n';
  }
}

struct CorpusCounts {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;

  bool operator==(const CorpusCounts&) const = default;
};

inline CorpusCounts count_corpus(std::span<const InteractionRecord> records) {
  std::set<std::int64_t> users, items;
  for (const auto& r : records) {
    users.insert(r.user_id);
    items.insert(r.item_id);
  }
  return {users.size(), items.size(), records.size()};
}

struct PreprocessReport {
  CorpusCounts input;
  CorpusCounts output;
  std::size_t dropped_low_rating = 0;
  std::size_t dropped_inactive_user_records = 0;
};

struct PreprocessResult {
  std::vector<InteractionRecord> records;
  PreprocessReport report;
};

/// Keeps records with rating >= min_rating, then users with at least min_reviews of those.
/// Record order is preserved.
inline PreprocessResult preprocess(std::span<const InteractionRecord> records, double min_rating = 4.0,
                                   std::size_t min_reviews = 10) {
  PreprocessResult out;
  out.report.input = count_corpus(records);
  std::vector<InteractionRecord> rated;
  rated.reserve(records.size());
  for (const auto& r : records) {
    if (r.rating >= min_rating) {
      rated.push_back(r);
    } else {
      ++out.report.dropped_low_rating;
    }
  }
  std::unordered_map<std::int64_t, std::size_t> per_user;
  for (const auto& r : rated) ++per_user[r.user_id];
  out.records.reserve(rated.size());
  for (const auto& r : rated) {
    if (per_user[r.user_id] >= min_reviews) {
      out.records.push_back(r);
    } else {
      ++out.report.dropped_inactive_user_records;
    }
  }
  out.report.output = count_corpus(out.records);
  return out;
}

// ---------------------------------------------------------------------------
// Dense indexing

struct UserHistory {
  std::int64_t user_id = 0;
  std::vector<ItemId> items;  // ordered by (timestamp, record order)
  std::vector<std::int64_t> timestamps;
};

struct IndexedCorpus {
  std::vector<std::int64_t> item_ids;  // dense index -> raw id, ascending
  std::unordered_map<std::int64_t, ItemId> item_index;
  std::vector<UserHistory> users;      // ascending raw user id

  std::size_t item_count() const { return item_ids.size(); }

  static IndexedCorpus build(std::span<const InteractionRecord> records) {
    IndexedCorpus c;
    std::set<std::int64_t> items;
    for (const auto& r : records) items.insert(r.item_id);
    c.item_ids.assign(items.begin(), items.end());
    for (ItemId i = 0; i < c.item_ids.size(); ++i) c.item_index.emplace(c.item_ids[i], i);

    std::map<std::int64_t, std::vector<std::size_t>> by_user;
    for (std::size_t i = 0; i < records.size(); ++i) by_user[records[i].user_id].push_back(i);
    for (auto& [uid, idx] : by_user) {
      std::stable_sort(idx.begin(), idx.end(),
                       [&](std::size_t a, std::size_t b) { return records[a].timestamp < records[b].timestamp; });
      UserHistory h;
      h.user_id = uid;
      for (auto i : idx) {
        h.items.push_back(c.item_index.at(records[i].item_id));
        h.timestamps.push_back(records[i].timestamp);
      }
      c.users.push_back(std::move(h));
    }
    return c;
  }
};

// ---------------------------------------------------------------------------
// Splits

struct UserHalves {
  std::uint32_t user = 0;       // index into IndexedCorpus::users
  std::vector<ItemId> behavior;  // earlier ceil(n/2) interactions
  std::vector<ItemId> truth;     // the rest

  bool operator==(const UserHalves&) const = default;
};

struct EvalSplit {
  std::vector<std::uint32_t> train_users;
  std::vector<std::uint32_t> validation_users;
  std::vector<std::uint32_t> test_users;
  std::vector<UserHalves> validation;
  std::vector<UserHalves> test;

  bool operator==(const EvalSplit&) const = default;
};

inline UserHalves split_history(const IndexedCorpus& corpus, std::uint32_t user) {
  const auto& h = corpus.users.at(user);
  const std::size_t n_behavior = (h.items.size() + 1) / 2;
  UserHalves out;
  out.user = user;
  out.behavior.assign(h.items.begin(), h.items.begin() + static_cast<std::ptrdiff_t>(n_behavior));
  out.truth.assign(h.items.begin() + static_cast<std::ptrdiff_t>(n_behavior), h.items.end());
  return out;
}

/// Random disjoint validation/test users; everyone else trains. Deterministic in `seed`.
inline EvalSplit make_split(const IndexedCorpus& corpus, std::size_t n_validation, std::size_t n_test,
                            std::uint64_t seed) {
  const std::size_t n = corpus.users.size();
  if (n_validation + n_test > n) throw InputError("make_split: not enough users for the requested split");
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  auto rng = RandomStreams(seed).stream("splits");
  std::shuffle(order.begin(), order.end(), rng);

  EvalSplit s;
  s.validation_users.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_validation));
  s.test_users.assign(order.begin() + static_cast<std::ptrdiff_t>(n_validation),
                      order.begin() + static_cast<std::ptrdiff_t>(n_validation + n_test));
  s.train_users.assign(order.begin() + static_cast<std::ptrdiff_t>(n_validation + n_test), order.end());
  for (auto* v : {&s.validation_users, &s.test_users, &s.train_users}) std::sort(v->begin(), v->end());
  for (auto u : s.validation_users) s.validation.push_back(split_history(corpus, u));
  for (auto u : s.test_users) s.test.push_back(split_history(corpus, u));
  return s;
}

// ---------------------------------------------------------------------------
// Training samples: (history before position, item at position)

struct TrainingSample {
  std::uint32_t user = 0;
  std::uint32_t position = 0;
};

/// Every position with at least one earlier interaction.
inline std::vector<TrainingSample> make_training_samples(const IndexedCorpus& corpus,
                                                         std::span<const std::uint32_t> users) {
  std::vector<TrainingSample> out;
  for (auto u : users) {
    const auto n = corpus.users.at(u).items.size();
    for (std::uint32_t p = 1; p < n; ++p) out.push_back({u, p});
  }
  return out;
}

inline UserContext sample_context(const IndexedCorpus& corpus, const TrainingSample& s, std::size_t max_seq_len) {
  const auto& items = corpus.users.at(s.user).items;
  return UserContext::from_history(std::span<const ItemId>(items.data(), s.position), max_seq_len);
}

inline ItemId sample_target(const IndexedCorpus& corpus, const TrainingSample& s) {
  return corpus.users.at(s.user).items.at(s.position);
}

// ---------------------------------------------------------------------------
// Planted clusters

struct SynthConfig {
  std::size_t clusters = 8;               // G
  std::size_t items_per_cluster = 250;
  std::size_t users = 5000;
  std::size_t interactions_per_user = 20;
  double secondary_weight = 0.0;          // chance an interaction comes from the user's second cluster
  double popularity_exponent = 1.0;       // Zipf exponent of item popularity inside a cluster
  std::uint64_t seed = 1;
};

struct SynthCorpus {
  std::vector<InteractionRecord> records;
  std::vector<std::uint32_t> item_cluster;    // raw item id -> cluster
  std::vector<std::uint32_t> user_primary;    // raw user id -> primary cluster
  std::vector<std::uint32_t> user_secondary;  // raw user id -> secondary cluster (== primary when unused)
};

/// Users pick a primary cluster (and a secondary one when secondary_weight > 0) and draw items
/// inside the chosen cluster by Zipf popularity, without repeats. Item ids are a random
/// permutation so id order carries no cluster or popularity signal.
inline SynthCorpus synth_clusters(const SynthConfig& cfg) {
  if (cfg.clusters < 1) throw InputError("synth_clusters: need at least one cluster");
  if (cfg.items_per_cluster < 1) throw InputError("synth_clusters: need at least one item per cluster");
  if (cfg.secondary_weight < 0.0 || cfg.secondary_weight > 1.0) {
    throw InputError("synth_clusters: secondary weight must be in [0, 1]");
  }
  RandomStreams streams(cfg.seed);
  auto rng = streams.stream("synth");
  const std::size_t V = cfg.clusters * cfg.items_per_cluster;

  std::vector<std::uint32_t> raw_id(V);
  std::iota(raw_id.begin(), raw_id.end(), 0u);
  std::shuffle(raw_id.begin(), raw_id.end(), rng);

  SynthCorpus out;
  out.item_cluster.resize(V);
  for (std::size_t g = 0; g < cfg.clusters; ++g) {
    for (std::size_t r = 0; r < cfg.items_per_cluster; ++r) out.item_cluster[raw_id[g * cfg.items_per_cluster + r]] = g;
  }
  std::vector<double> weights(cfg.items_per_cluster);
  for (std::size_t r = 0; r < weights.size(); ++r) {
    weights[r] = 1.0 / std::pow(static_cast<double>(r + 1), cfg.popularity_exponent);
  }
  std::discrete_distribution<std::size_t> rank_dist(weights.begin(), weights.end());
  std::uniform_int_distribution<std::size_t> cluster_dist(0, cfg.clusters - 1);
  std::bernoulli_distribution use_secondary(cfg.secondary_weight);

  out.records.reserve(cfg.users * cfg.interactions_per_user);
  for (std::size_t u = 0; u < cfg.users; ++u) {
    const auto primary = static_cast<std::uint32_t>(cluster_dist(rng));
    std::uint32_t secondary = primary;
    if (cfg.secondary_weight > 0.0 && cfg.clusters > 1) {
      std::uniform_int_distribution<std::size_t> other(0, cfg.clusters - 2);
      const auto o = static_cast<std::uint32_t>(other(rng));
      secondary = o >= primary ? o + 1 : o;
    }
    out.user_primary.push_back(primary);
    out.user_secondary.push_back(secondary);
    std::set<std::uint32_t> seen;
    for (std::size_t t = 0; t < cfg.interactions_per_user; ++t) {
      const std::uint32_t g = use_secondary(rng) ? secondary : primary;
      std::uint32_t item = 0;
      for (int attempt = 0; attempt < 64; ++attempt) {
        item = raw_id[g * cfg.items_per_cluster + rank_dist(rng)];
        if (!seen.count(item)) break;
      }
      seen.insert(item);
      out.records.push_back({static_cast<std::int64_t>(u), static_cast<std::int64_t>(item), kMissingRating,
                             static_cast<std::int64_t>(1'000'000 + t)});
    }
  }
  return out;
}

}  // namespace dr
