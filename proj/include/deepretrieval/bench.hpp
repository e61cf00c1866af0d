#pragma once

// Per-query latency of beam search + rerank against exhaustive inner-product top-k.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "deepretrieval/error.hpp"
#include "deepretrieval/item_path_mapping.hpp"
#include "deepretrieval/random.hpp"
#include "deepretrieval/reranker.hpp"
#include "deepretrieval/retrieval.hpp"
#include "deepretrieval/structure_model.hpp"

namespace dr {

struct LatencySummary {
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p99_ms = 0.0;
};

struct BenchReport {
  std::size_t corpus_size = 0;
  std::size_t k = 0;
  std::size_t beam = 0;
  std::size_t queries = 0;
  std::size_t threads = 1;
  double mean_candidates = 0.0;
  LatencySummary deep_retrieval;
  LatencySummary brute_force;
  double speedup = 0.0;  // brute-force mean / DR mean
};

struct BenchOptions {
  std::size_t k = 10;
  std::size_t beam = 50;
  std::size_t min_queries = 1000;
  std::size_t warmup = 20;
  std::size_t threads = 1;
};

/// Worker count from DR_THREADS, clamped to [1, hardware threads]; 1 when unset or invalid.
inline std::size_t threads_from_env() {
  const char* v = std::getenv("DR_THREADS");
  if (!v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (end == v || *end != '\0' || n < 1) return 1;
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  return std::min(static_cast<std::size_t>(n), hw);
}

/// Nearest-rank percentile of an unsorted sample.
inline double percentile(std::vector<double> xs, double q) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(xs.size())));
  return xs[std::clamp<std::size_t>(rank, 1, xs.size()) - 1];
}

inline LatencySummary summarize(const std::vector<double>& ms) {
  LatencySummary s;
  if (ms.empty()) return s;
  double total = 0.0;
  for (double x : ms) total += x;
  s.mean_ms = total / static_cast<double>(ms.size());
  s.median_ms = percentile(ms, 0.5);
  s.p99_ms = percentile(ms, 0.99);
  return s;
}

inline std::vector<ItemId> dr_retrieve(const InferenceSession& session, const SoftmaxModel& model,
                                       const ItemPathMapping& mapping, const UserContext& ctx, std::size_t beam,
                                       std::size_t k, std::size_t* candidate_count = nullptr) {
  const auto u = user_embedding(ctx, session.params());
  const InferenceSession::Scorer scorer(session, u);
  const auto paths = beam_search(scorer, mapping.K(), mapping.D(), beam);
  const auto cands = collect_candidates(paths, mapping);
  if (candidate_count) *candidate_count = cands.size();
  if (cands.empty()) return {};
  std::vector<ItemId> ids;
  ids.reserve(cands.size());
  for (const auto& c : cands) ids.push_back(c.item);
  const auto r = rerank(ids, u, model, k);
  std::vector<ItemId> out;
  out.reserve(r.items.size());
  for (const auto& s : r.items) out.push_back(s.item);
  return out;
}

inline BenchReport bench(const StructureParams& params, const SoftmaxModel& model, const ItemPathMapping& mapping,
                         std::span<const UserContext> queries, const BenchOptions& opt) {
  const std::size_t V = model.item_count();
  if (opt.k < 1 || opt.k > V) throw InputError("bench: k must be in [1, V]");
  if (queries.size() < opt.min_queries) {
    throw InputError("bench: need at least " + std::to_string(opt.min_queries) + " queries");
  }
  StructureConfig shape = params.config;
  const std::size_t beam = std::min(opt.beam, shape.path_count());
  const InferenceSession session(params);

  const std::size_t warm = std::min(opt.warmup, queries.size());
  for (std::size_t i = 0; i < warm; ++i) {
    (void)dr_retrieve(session, model, mapping, queries[i], beam, opt.k);
    (void)brute_force_retrieve(queries[i], params, model, opt.k);
  }

  const std::size_t workers = std::max<std::size_t>(1, std::min(opt.threads, queries.size()));
  std::vector<std::vector<double>> dr_ms(workers), bf_ms(workers);
  std::vector<double> cand_total(workers, 0.0);
  auto run = [&](std::size_t w) {
    using clock = std::chrono::steady_clock;
    for (std::size_t i = w; i < queries.size(); i += workers) {
      std::size_t n = 0;
      auto t0 = clock::now();
      const auto a = dr_retrieve(session, model, mapping, queries[i], beam, opt.k, &n);
      auto t1 = clock::now();
      const auto b = brute_force_retrieve(queries[i], params, model, opt.k);
      auto t2 = clock::now();
      dr_ms[w].push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      bf_ms[w].push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
      cand_total[w] += static_cast<double>(n);
      (void)a;
      (void)b;
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }

  std::vector<double> all_dr, all_bf;
  double cands = 0.0;
  for (std::size_t w = 0; w < workers; ++w) {
    all_dr.insert(all_dr.end(), dr_ms[w].begin(), dr_ms[w].end());
    all_bf.insert(all_bf.end(), bf_ms[w].begin(), bf_ms[w].end());
    cands += cand_total[w];
  }
  BenchReport r;
  r.corpus_size = V;
  r.k = opt.k;
  r.beam = beam;
  r.queries = queries.size();
  r.threads = workers;
  r.mean_candidates = cands / static_cast<double>(queries.size());
  r.deep_retrieval = summarize(all_dr);
  r.brute_force = summarize(all_bf);
  r.speedup = r.deep_retrieval.mean_ms > 0.0 ? r.brute_force.mean_ms / r.deep_retrieval.mean_ms : 0.0;
  return r;
}

inline nlohmann::json to_json(const LatencySummary& s) {
  return {{"mean_ms", s.mean_ms}, {"median_ms", s.median_ms}, {"p99_ms", s.p99_ms}};
}

inline nlohmann::json to_json(const BenchReport& r) {
  return {{"record", "bench"},
          {"corpus_size", r.corpus_size},
          {"k", r.k},
          {"beam", r.beam},
          {"queries", r.queries},
          {"threads", r.threads},
          {"mean_candidates", r.mean_candidates},
          {"deep_retrieval", to_json(r.deep_retrieval)},
          {"brute_force", to_json(r.brute_force)},
          {"speedup", r.speedup}};
}

struct BenchModel {
  StructureParams params;
  SoftmaxModel softmax;
  ItemPathMapping mapping;
};

/// Randomly initialised model and mapping of a given shape. Query cost does not depend on
/// training, only on shapes and on how many items the beam's paths hold.
inline BenchModel make_bench_model(const StructureConfig& config, std::size_t item_count, std::uint64_t seed) {
  const RandomStreams streams(seed);
  auto init = streams.stream("init");
  auto map_rng = streams.stream("mapping");
  BenchModel m;
  m.params = StructureParams::random(config, item_count, init);
  m.softmax = SoftmaxModel::random(item_count, config.emb_dim, init);
  m.mapping = ItemPathMapping::random(config.K, config.D, config.J, item_count, map_rng);
  return m;
}

/// Random behavior sequences of length in [1, max_len].
inline std::vector<UserContext> make_bench_queries(std::size_t count, std::size_t item_count, std::size_t max_len,
                                                   std::uint64_t seed) {
  auto rng = RandomStreams(seed).stream("queries");
  std::uniform_int_distribution<std::size_t> len(1, max_len);
  std::uniform_int_distribution<ItemId> item(0, static_cast<ItemId>(item_count - 1));
  std::vector<UserContext> out(count);
  for (auto& q : out) {
    q.behavior.resize(len(rng));
    for (auto& v : q.behavior) v = item(rng);
  }
  return out;
}

}  // namespace dr
