#pragma once

// Precision, recall and F-measure at k, macro-averaged over users.

#include <algorithm>
#include <cstddef>
#include <span>
#include <unordered_set>
#include <vector>

#include "deepretrieval/data.hpp"
#include "deepretrieval/error.hpp"
#include "deepretrieval/types.hpp"

namespace dr {

struct UserMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
};

/// Hits are distinct retrieved items (first k) found in the truth set. Precision divides by k,
/// recall by the number of distinct truth items. Truth must be non-empty.
inline UserMetrics user_metrics(std::span<const ItemId> retrieved, std::span<const ItemId> truth, std::size_t k) {
  if (k < 1) throw InputError("metrics: k must be >= 1");
  const std::unordered_set<ItemId> truth_set(truth.begin(), truth.end());
  if (truth_set.empty()) throw InputError("metrics: empty truth set");
  std::unordered_set<ItemId> seen;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < retrieved.size() && i < k; ++i) {
    if (seen.insert(retrieved[i]).second && truth_set.count(retrieved[i])) ++hits;
  }
  UserMetrics m;
  m.precision = static_cast<double>(hits) / static_cast<double>(k);
  m.recall = static_cast<double>(hits) / static_cast<double>(truth_set.size());
  if (m.precision + m.recall > 0.0) m.f_measure = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

struct MetricReport {
  std::size_t k = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
  std::size_t users_evaluated = 0;
  std::size_t users_excluded = 0;  // empty behavior or truth half
};

namespace detail {

// Sorting before summing makes the mean independent of user order, bit for bit.
inline double order_free_mean(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

}  // namespace detail

/// `retrieve(ctx, k)` returns a ranked item list for one user.
template <class RetrieveFn>
MetricReport evaluate(RetrieveFn&& retrieve, std::span<const UserHalves> users, std::size_t k,
                      std::size_t max_seq_len) {
  if (k < 1) throw InputError("evaluate: k must be >= 1");
  MetricReport r;
  r.k = k;
  std::vector<double> p, rc, f;
  for (const auto& u : users) {
    if (u.behavior.empty() || u.truth.empty()) {
      ++r.users_excluded;
      continue;
    }
    const auto ctx = UserContext::from_history(u.behavior, max_seq_len);
    const std::vector<ItemId> got = retrieve(ctx, k);
    const auto m = user_metrics(got, u.truth, k);
    p.push_back(m.precision);
    rc.push_back(m.recall);
    f.push_back(m.f_measure);
  }
  r.users_evaluated = p.size();
  r.precision = detail::order_free_mean(std::move(p));
  r.recall = detail::order_free_mean(std::move(rc));
  r.f_measure = detail::order_free_mean(std::move(f));
  return r;
}

}  // namespace dr
