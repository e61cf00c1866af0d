// dr: command-line front end for training, evaluating and benchmarking Deep Retrieval models.
//
// Every command writes line-delimited JSON records to stdout. Usage errors exit with 2,
// runtime failures with 1.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "deepretrieval/deepretrieval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void emit(const json& record) { std::cout << record.dump() << '\n' << std::flush; }

std::vector<dr::InteractionRecord> read_csv_file(const std::string& path, std::size_t* malformed = nullptr) {
  std::ifstream in(path);
  if (!in) throw dr::InputError("cannot open " + path);
  auto r = dr::read_interactions_csv(in);
  if (r.malformed_rows > 0) std::cerr << "dr: skipped " << r.malformed_rows << " malformed rows in " << path << '\n';
  if (malformed) *malformed = r.malformed_rows;
  return std::move(r.records);
}

json to_json(const dr::MetricReport& r, const std::string& method) {
  return {{"record", "metrics"},       {"method", method},           {"k", r.k},
          {"precision", r.precision},  {"recall", r.recall},         {"f_measure", r.f_measure},
          {"users_evaluated", r.users_evaluated}, {"users_excluded", r.users_excluded}};
}

json to_json(const dr::CorpusCounts& c) {
  return {{"users", c.users}, {"items", c.items}, {"interactions", c.interactions}};
}

// ---------------------------------------------------------------------------
// Model options shared by train and bench

struct ModelOptions {
  std::string profile = "movielens";
  dr::EmConfig em;
  double learning_rate = 0.0;
  std::string optimizer;
  std::string penalty;

  std::vector<std::pair<CLI::Option*, std::function<void(const dr::StructureConfig&)>>> profiled;

  void add(CLI::App* app, bool training) {
    auto& s = em.structure;
    app->add_option("--profile", profile, "Hyperparameter profile")
        ->check(CLI::IsMember({"movielens", "amazon"}))
        ->capture_default_str();
    auto profiled_opt = [&](const std::string& name, auto& target, auto member, const std::string& help) {
      CLI::Option* o = app->add_option(name, target, help);
      profiled.emplace_back(o, [&target, member](const dr::StructureConfig& p) { target = p.*member; });
      return o;
    };
    profiled_opt("--K", s.K, &dr::StructureConfig::K, "Nodes per layer")->check(CLI::PositiveNumber);
    profiled_opt("--D", s.D, &dr::StructureConfig::D, "Layers")->check(CLI::PositiveNumber);
    profiled_opt("--J", s.J, &dr::StructureConfig::J, "Paths per item")->check(CLI::PositiveNumber);
    profiled_opt("--B", s.B, &dr::StructureConfig::B, "Beam size")->check(CLI::PositiveNumber);
    profiled_opt("--alpha", s.alpha, &dr::StructureConfig::alpha, "Path-size penalty factor")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--emb-dim", s.emb_dim, "Embedding width")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--hidden", s.hidden_width, "Hidden width per layer MLP (0 means 4K)")->capture_default_str();
    app->add_option("--max-seq-len", s.max_seq_len, "Behavior sequence cap")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app->add_option("--seed", em.seed, "Random seed")->capture_default_str();
    if (!training) return;
    app->add_option("--S", s.S, "Score-table capacity per item")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--eta", s.eta, "Streaming decay")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    app->add_option("--epochs", em.epochs)->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--cd-iterations", em.cd_iterations)->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--batch-size", em.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--lr", learning_rate, "Learning rate (default 5e-3)")->check(CLI::PositiveNumber);
    app->add_option("--optimizer", optimizer, "adam or sgd")->check(CLI::IsMember({"adam", "sgd"}));
    app->add_option("--penalty", penalty, "quartic or quadratic")->check(CLI::IsMember({"quartic", "quadratic"}));
    app->add_option("--negatives", em.joint.negative_samples, "Sampled-softmax negatives")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app->add_option("--freeze-epoch", em.joint.freeze_epoch, "Epoch from which softmax embeddings stay fixed")
        ->capture_default_str();
    app->add_option("--softmax-weight", em.joint.softmax_weight)->check(CLI::NonNegativeNumber)->capture_default_str();
    app->add_option("--init-stddev", em.init_stddev)->check(CLI::PositiveNumber)->capture_default_str();
  }

  // Profile values apply only to options not given on the command line or in a config file.
  void finalize() {
    const auto p = profile == "amazon" ? dr::StructureConfig::amazon() : dr::StructureConfig::movielens();
    for (auto& [opt, apply] : profiled) {
      if (opt->count() == 0) apply(p);
    }
    if (learning_rate > 0.0) em.optimizer.learning_rate = learning_rate;
    if (!optimizer.empty()) em.optimizer.kind = dr::optimizer_kind_from_string(optimizer);
    if (!penalty.empty()) em.penalty.kind = dr::penalty_kind_from_string(penalty);
    try {
      em.validate();
    } catch (const dr::InputError& e) {
      throw UsageError(e.what());
    }
  }
};

// Config keys outside any section belong to the subcommand being run, so
// `dr train --config f.cfg` works with a flat file of `K = 50` lines.
class SubcommandConfig : public CLI::ConfigINI {
 public:
  explicit SubcommandConfig(std::string active) : active_(std::move(active)) {}

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    auto items = CLI::ConfigINI::from_config(input);
    if (active_.empty()) return items;
    for (auto& item : items) {
      if (item.parents.empty()) item.parents.push_back(active_);
    }
    return items;
  }

 private:
  std::string active_;
};

// ---------------------------------------------------------------------------
// Commands

struct PreprocessCmd {
  std::string input, output;
  double min_rating = 4.0;
  std::size_t min_reviews = 10;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("preprocess", "Filter ratings and inactive users");
    c->add_option("--input", input)->required()->check(CLI::ExistingFile);
    c->add_option("--output", output)->required();
    c->add_option("--min-rating", min_rating)->capture_default_str();
    c->add_option("--min-reviews", min_reviews)->capture_default_str();
    c->final_callback([this] { run(); });
  }

  void run() {
    std::size_t malformed = 0;
    const auto records = read_csv_file(input, &malformed);
    const auto out = dr::preprocess(records, min_rating, min_reviews);
    std::ofstream f(output);
    if (!f) throw dr::InputError("cannot write " + output);
    dr::write_interactions_csv(f, out.records);
    emit({{"record", "preprocess"},
          {"input", to_json(out.report.input)},
          {"output", to_json(out.report.output)},
          {"malformed_rows", malformed},
          {"dropped_low_rating", out.report.dropped_low_rating},
          {"dropped_inactive_user_records", out.report.dropped_inactive_user_records}});
  }
};

struct SynthCmd {
  dr::SynthConfig cfg;
  std::string output, clusters_out;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("synth", "Generate a planted-cluster interaction corpus");
    c->add_option("--output", output)->required();
    c->add_option("--clusters-out", clusters_out, "Write item_id,cluster pairs here");
    c->add_option("--clusters", cfg.clusters)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--items-per-cluster", cfg.items_per_cluster)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--users", cfg.users)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--interactions", cfg.interactions_per_user)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--mixture", cfg.secondary_weight, "Share of interactions from a second cluster")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    c->add_option("--popularity", cfg.popularity_exponent, "Zipf exponent inside clusters")->capture_default_str();
    c->add_option("--seed", cfg.seed)->capture_default_str();
    c->final_callback([this] { run(); });
  }

  void run() {
    const auto s = dr::synth_clusters(cfg);
    std::ofstream f(output);
    if (!f) throw dr::InputError("cannot write " + output);
    dr::write_interactions_csv(f, s.records);
    if (!clusters_out.empty()) {
      std::ofstream g(clusters_out);
      if (!g) throw dr::InputError("cannot write " + clusters_out);
      g << "item_id,cluster\n";
      for (std::size_t v = 0; v < s.item_cluster.size(); ++v) g << v << ',' << s.item_cluster[v] << '\n';
    }
    emit({{"record", "synth"}, {"corpus", to_json(dr::count_corpus(s.records))}, {"clusters", cfg.clusters}});
  }
};

struct TrainCmd {
  ModelOptions model;
  std::string data, out, resume;
  std::size_t n_validation = 0, n_test = 0;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("train", "Train structure model, reranker and item-path mapping");
    c->add_option("--data", data, "Interaction CSV")->required()->check(CLI::ExistingFile);
    c->add_option("--out", out, "Checkpoint directory")->required();
    c->add_option("--resume", resume, "Continue from this checkpoint")->check(CLI::ExistingDirectory);
    c->add_option("--validation-users", n_validation, "Users held out for validation")->capture_default_str();
    c->add_option("--test-users", n_test, "Users held out for testing")->capture_default_str();
    model.add(c, true);
    c->final_callback([this] { run(); });
  }

  void run() {
    model.finalize();
    const auto records = read_csv_file(data);
    const auto corpus = dr::IndexedCorpus::build(records);
    if (n_validation + n_test > corpus.users.size()) throw UsageError("more held-out users than users in the data");
    const auto split = dr::make_split(corpus, n_validation, n_test, model.em.seed);
    const auto samples = dr::make_training_samples(corpus, split.train_users);
    emit({{"record", "corpus"},
          {"counts", to_json(dr::count_corpus(records))},
          {"train_users", split.train_users.size()},
          {"training_samples", samples.size()}});

    std::optional<dr::EmTrainer> trainer;
    if (resume.empty()) {
      trainer.emplace(model.em, corpus.item_count());
    } else {
      auto c = dr::load_checkpoint(resume);
      if (c.item_ids != corpus.item_ids) throw dr::InputError("resume: checkpoint items differ from --data");
      trainer.emplace(c.config, std::move(c.params), std::move(c.softmax), std::move(c.mapping), std::move(c.scores),
                      c.epochs_done);
    }
    while (trainer->epochs_done() < trainer->config().epochs) emit(dr::to_json(trainer->run_epoch(corpus, samples)));

    auto ckpt = dr::make_checkpoint(*trainer, corpus.item_ids);
    ckpt.metadata = {{"split", {{"validation_users", n_validation}, {"test_users", n_test}, {"seed", model.em.seed}}}};
    dr::save_checkpoint(ckpt, out);
    emit({{"record", "checkpoint"}, {"path", out}, {"epochs_done", ckpt.epochs_done}});
  }
};

/// Loaded checkpoint plus the raw-id lookup.
struct LoadedModel {
  dr::Checkpoint ckpt;
  std::unordered_map<std::int64_t, dr::ItemId> index;

  explicit LoadedModel(const std::string& dir) : ckpt(dr::load_checkpoint(dir)) {
    for (dr::ItemId v = 0; v < ckpt.item_ids.size(); ++v) index.emplace(ckpt.item_ids[v], v);
  }
  std::int64_t raw(dr::ItemId v) const { return ckpt.item_ids.empty() ? static_cast<std::int64_t>(v) : ckpt.item_ids[v]; }
  dr::ItemId dense(std::int64_t raw_id) const {
    if (ckpt.item_ids.empty()) {
      if (raw_id < 0 || static_cast<std::size_t>(raw_id) >= ckpt.item_count()) throw dr::InputError("unknown item id");
      return static_cast<dr::ItemId>(raw_id);
    }
    const auto it = index.find(raw_id);
    if (it == index.end()) throw dr::InputError("unknown item id " + std::to_string(raw_id));
    return it->second;
  }
};

struct EvaluateCmd {
  std::string checkpoint, data, which = "test";
  std::size_t k = 20, beam = 0;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("evaluate", "Precision/recall/F at k for DR and brute force");
    c->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingDirectory);
    c->add_option("--data", data, "The CSV the checkpoint was trained on")->required()->check(CLI::ExistingFile);
    c->add_option("--k", k)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--beam", beam, "Beam size (default: the checkpoint's B)");
    c->add_option("--split", which)->check(CLI::IsMember({"test", "validation"}))->capture_default_str();
    c->final_callback([this] { run(); });
  }

  void run() {
    const LoadedModel m(checkpoint);
    const auto& ck = m.ckpt;
    const auto corpus = dr::IndexedCorpus::build(read_csv_file(data));
    if (corpus.item_ids != ck.item_ids) throw dr::InputError("evaluate: --data items differ from the checkpoint's");
    const auto& sp = ck.metadata.at("split");
    const auto split = dr::make_split(corpus, sp.at("validation_users").get<std::size_t>(),
                                      sp.at("test_users").get<std::size_t>(), sp.at("seed").get<std::uint64_t>());
    const auto& users = which == "test" ? split.test : split.validation;
    if (users.empty()) throw UsageError("the checkpoint holds out no " + which + " users");
    if (k > ck.item_count()) throw UsageError("--k exceeds the number of items");
    const auto& s = ck.config.structure;
    const std::size_t b = std::min(beam == 0 ? s.B : beam, s.path_count());

    const dr::InferenceSession session(ck.params);
    auto deep = [&](const dr::UserContext& ctx, std::size_t kk) {
      return dr::dr_retrieve(session, ck.softmax, ck.mapping, ctx, b, kk);
    };
    auto brute = [&](const dr::UserContext& ctx, std::size_t kk) {
      std::vector<dr::ItemId> ids;
      for (const auto& r : dr::brute_force_retrieve(ctx, ck.params, ck.softmax, kk)) ids.push_back(r.item);
      return ids;
    };
    auto a = to_json(dr::evaluate(deep, users, k, s.max_seq_len), "deep_retrieval");
    a["beam"] = b;
    emit(a);
    emit(to_json(dr::evaluate(brute, users, k, s.max_seq_len), "brute_force"));
  }
};

struct RetrieveCmd {
  std::string checkpoint, user_seq;
  std::size_t k = 10, beam = 0;
  bool brute_force = false;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("retrieve", "Top-k items for one behavior sequence");
    c->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingDirectory);
    c->add_option("--user-seq", user_seq, "Comma-separated raw item ids, oldest first")->required();
    c->add_option("--k", k)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--beam", beam, "Beam size (default: the checkpoint's B)");
    c->add_flag("--brute-force", brute_force, "Score every item instead of beam search");
    c->final_callback([this] { run(); });
  }

  void run() {
    const LoadedModel m(checkpoint);
    const auto& ck = m.ckpt;
    const auto& s = ck.config.structure;
    if (k > ck.item_count()) throw UsageError("--k exceeds the number of items");
    std::vector<dr::ItemId> history;
    for (const auto& tok : CLI::detail::split(user_seq, ',')) {
      std::int64_t id = 0;
      if (!dr::detail::parse_number(std::string_view(CLI::detail::trim_copy(tok)), id)) {
        throw UsageError("--user-seq: not an item id: '" + tok + "'");
      }
      history.push_back(m.dense(id));
    }
    const auto ctx = dr::UserContext::from_history(history, s.max_seq_len);
    const auto u = dr::user_embedding(ctx, ck.params);

    json out{{"record", "retrieve"}, {"method", brute_force ? "brute_force" : "deep_retrieval"}, {"k", k}};
    std::vector<dr::ScoredItem> items;
    if (brute_force) {
      items = dr::brute_force_retrieve(u, ck.softmax, k);
    } else {
      const std::size_t b = std::min(beam == 0 ? s.B : beam, s.path_count());
      const dr::InferenceSession session(ck.params);
      const auto paths = dr::beam_search(dr::InferenceSession::Scorer(session, u), s.K, s.D, b);
      std::vector<dr::ItemId> ids;
      for (const auto& c : dr::collect_candidates(paths, ck.mapping)) ids.push_back(c.item);
      out["beam"] = b;
      out["candidates"] = ids.size();
      if (!ids.empty()) {
        auto r = dr::rerank(ids, u, ck.softmax, k);
        out["truncated"] = r.truncated_request;
        items = std::move(r.items);
      } else {
        out["truncated"] = true;
      }
    }
    json list = json::array();
    for (const auto& it : items) list.push_back({{"item_id", m.raw(it.item)}, {"score", it.score}});
    out["items"] = list;
    emit(out);
  }
};

struct BenchCmd {
  ModelOptions model;
  std::string checkpoint;
  std::size_t items = 200000, queries = 1000, k = 10, warmup = 20, threads = 0;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("bench", "Per-query latency of DR against brute force");
    c->add_option("--checkpoint", checkpoint, "Benchmark a trained model instead of a random one")
        ->check(CLI::ExistingDirectory);
    c->add_option("--items", items, "Corpus size of the random model")->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--queries", queries)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--k", k)->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--warmup", warmup)->capture_default_str();
    c->add_option("--threads", threads, "Worker count (default: DR_THREADS or 1)");
    model.add(c, false);
    c->final_callback([this] { run(); });
  }

  void run() {
    if (queries < 1000) throw UsageError("--queries must be at least 1000");
    dr::BenchModel bm;
    if (checkpoint.empty()) {
      model.finalize();
      if (k > items) throw UsageError("--k exceeds --items");
      bm = dr::make_bench_model(model.em.structure, items, model.em.seed);
    } else {
      auto c = dr::load_checkpoint(checkpoint);
      if (k > c.item_count()) throw UsageError("--k exceeds the number of items");
      bm = {std::move(c.params), std::move(c.softmax), std::move(c.mapping)};
    }
    const auto& s = bm.params.config;
    const auto qs = dr::make_bench_queries(queries, bm.params.item_count(), s.max_seq_len, model.em.seed);
    dr::BenchOptions opt;
    opt.k = k;
    opt.beam = s.B;
    opt.min_queries = 1000;
    opt.warmup = warmup;
    opt.threads = threads == 0 ? dr::threads_from_env() : threads;
    if (std::getenv("DR_THREADS")) opt.threads = std::min(opt.threads, dr::threads_from_env());
    emit(dr::to_json(dr::bench(bm.params, bm.softmax, bm.mapping, qs, opt)));
  }
};

struct InspectCmd {
  std::string checkpoint;
  bool mapping_only = false;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("inspect", "Verify a checkpoint and summarise its mapping");
    c->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingDirectory);
    c->add_flag("--mapping-only", mapping_only, "Load only the manifest and mapping");
    c->final_callback([this] { run(); });
  }

  void run() {
    json out{{"record", "inspect"}, {"path", checkpoint}};
    dr::ItemPathMapping mapping;
    if (mapping_only) {
      mapping = dr::load_mapping(checkpoint);
    } else {
      auto c = dr::load_checkpoint(checkpoint);
      out["config"] = dr::to_json(c.config);
      out["epochs_done"] = c.epochs_done;
      out["parameters"] = c.params.parameter_count();
      mapping = std::move(c.mapping);
    }
    json hist = json::array();
    for (const auto& [size, count] : mapping.size_histogram()) hist.push_back({size, count});
    out["items"] = mapping.item_count();
    out["top_path_size"] = mapping.top_path_size();
    out["nonempty_paths"] = mapping.inverted().size();
    out["path_size_histogram"] = hist;
    emit(out);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep Retrieval: learnable path index for candidate retrieval"};
  app.require_subcommand(1);
  app.fallthrough();
  app.allow_config_extras(false);
  app.set_config("--config", "", "INI/TOML file of option values for the subcommand");
  PreprocessCmd preprocess;
  SynthCmd synth;
  TrainCmd train;
  EvaluateCmd evaluate;
  RetrieveCmd retrieve;
  BenchCmd bench;
  InspectCmd inspect;
  preprocess.add(app);
  synth.add(app);
  train.add(app);
  evaluate.add(app);
  retrieve.add(app);
  bench.add(app);
  inspect.add(app);

  std::string active;
  for (int i = 1; i < argc && active.empty(); ++i) {
    if (app.get_subcommand_no_throw(argv[i])) active = argv[i];
  }
  app.config_formatter(std::make_shared<SubcommandConfig>(active));

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "dr: usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "dr: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
