#pragma once

// Alternating training: gradient steps on the joint loss with the mapping fixed, score
// accumulation alongside, then a coordinate-descent reassignment of item paths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "deepretrieval/coordinate_descent.hpp"
#include "deepretrieval/core_math.hpp"
#include "deepretrieval/data.hpp"
#include "deepretrieval/error.hpp"
#include "deepretrieval/item_path_mapping.hpp"
#include "deepretrieval/random.hpp"
#include "deepretrieval/reranker.hpp"
#include "deepretrieval/retrieval.hpp"
#include "deepretrieval/score_table.hpp"
#include "deepretrieval/structure_model.hpp"

namespace dr {

struct EmConfig {
  StructureConfig structure;
  std::size_t epochs = 4;
  std::size_t cd_iterations = 3;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer{OptimizerKind::adam, 5e-3};
  JointObjectiveWeights joint;
  PathSizePenalty penalty;
  bool update_parameters = true;  // false: scores come from the initial parameters only
  std::size_t score_beam = 0;     // candidate beam for score accumulation; 0 means S
  double init_stddev = 0.1;
  std::uint64_t seed = 1;

  std::size_t effective_score_beam() const {
    const std::size_t b = score_beam == 0 ? structure.S : score_beam;
    return std::min(b, structure.path_count());
  }

  void validate() const {
    structure.validate();
    if (cd_iterations < 1) throw InputError("em config: cd_iterations must be >= 1");
    if (batch_size < 1) throw InputError("em config: batch_size must be >= 1");
    if (joint.freeze_epoch > epochs) throw InputError("em config: freeze epoch exceeds total epochs");
    if (joint.structure_weight < 0.0 || joint.softmax_weight < 0.0) {
      throw InputError("em config: objective weights must be >= 0");
    }
  }
};

/// Folds the beam-selected paths of one interaction into the table.
template <LayerScorer Scorer>
void accumulate_scores(const Scorer& scorer, ItemId item, const StructureConfig& c, std::size_t beam,
                       ScoreTable& table) {
  const auto paths = beam_search(scorer, c.K, c.D, std::min(beam, c.path_count()));
  table.observe_paths(item, paths, c.eta);
}

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  std::size_t samples = 0;
  std::size_t batches = 0;
  bool softmax_frozen = false;
  double mean_structure_loss = 0.0;
  double mean_softmax_loss = 0.0;
  double penalty = 0.0;  // of the mapping used during the epoch
  double mean_total_loss = 0.0;
  std::vector<double> cd_objective_per_sweep;
  std::size_t top_path_size = 0;
  std::size_t nonempty_paths = 0;
  std::map<std::size_t, std::size_t> path_size_histogram;
  std::size_t random_fallbacks = 0;
  std::size_t kept_previous = 0;
  std::size_t reverted_updates = 0;
};

class EmTrainer {
 public:
  EmTrainer(EmConfig config, std::size_t item_count) : config_(std::move(config)) {
    config_.validate();
    if (item_count < 2) throw InputError("em trainer: need at least two items");
    const RandomStreams streams(config_.seed);
    auto init = streams.stream("init");
    params_ = StructureParams::random(config_.structure, item_count, init, config_.init_stddev);
    softmax_ = SoftmaxModel::random(item_count, config_.structure.emb_dim, init, config_.init_stddev);
    auto mapping_rng = streams.stream("mapping");
    const auto& c = config_.structure;
    mapping_ = ItemPathMapping::random(c.K, c.D, c.J, item_count, mapping_rng);
    table_ = ScoreTable(item_count, c.S);
    reset_optimizers();
  }

  /// Continues from saved state. Optimizer moments start fresh.
  EmTrainer(EmConfig config, StructureParams params, SoftmaxModel softmax, ItemPathMapping mapping, ScoreTable table,
            std::size_t epochs_done)
      : config_(std::move(config)),
        params_(std::move(params)),
        softmax_(std::move(softmax)),
        mapping_(std::move(mapping)),
        table_(std::move(table)),
        epochs_done_(epochs_done) {
    config_.validate();
    if (softmax_.item_count() != params_.item_count() || mapping_.item_count() != params_.item_count() ||
        table_.item_count() != params_.item_count()) {
      throw ShapeError("em trainer: item counts of saved state disagree");
    }
    reset_optimizers();
  }

  const EmConfig& config() const { return config_; }
  const StructureParams& params() const { return params_; }
  const SoftmaxModel& softmax() const { return softmax_; }
  const ItemPathMapping& mapping() const { return mapping_; }
  const ScoreTable& score_table() const { return table_; }
  std::size_t epochs_done() const { return epochs_done_; }
  bool softmax_frozen() const { return epochs_done_ >= config_.joint.freeze_epoch; }

  EpochStats run_epoch(const IndexedCorpus& corpus, std::span<const TrainingSample> samples) {
    const auto& c = config_.structure;
    const std::size_t V = params_.item_count();
    if (corpus.item_count() != V) throw ShapeError("em trainer: corpus item count differs from model");
    const std::string tag = std::to_string(epochs_done_);
    const RandomStreams streams(config_.seed);
    auto shuffle_rng = streams.stream("shuffle." + tag);
    auto negatives_rng = streams.stream("negatives." + tag);
    auto assign_rng = streams.stream("assign." + tag);

    EpochStats st;
    st.epoch = epochs_done_ + 1;
    st.softmax_frozen = softmax_frozen();
    st.penalty = penalty_value(mapping_, c.alpha, config_.penalty);

    std::vector<TrainingSample> order(samples.begin(), samples.end());
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    const auto& w = config_.joint;
    const std::size_t negative_count = std::min(w.negative_samples, V - 1);
    const std::size_t beam = config_.effective_score_beam();
    double structure_sum = 0.0;
    double softmax_sum = 0.0;

    for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
      const std::size_t end = std::min(order.size(), start + config_.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      grads_.set_zero();
      std::fill(softmax_grads_.item_output_embeddings.values.begin(),
                softmax_grads_.item_output_embeddings.values.end(), 0.0);
      const InferenceSession session(params_);
      for (std::size_t i = start; i < end; ++i) {
        const auto ctx = sample_context(corpus, order[i], c.max_seq_len);
        const ItemId y = sample_target(corpus, order[i]);
        accumulate_scores(session.scorer(ctx), y, c, beam, table_);
        std::vector<ItemId> negatives;
        if (w.softmax_weight != 0.0) negatives = sample_negatives(V, y, negative_count, negatives_rng);
        const auto loss = joint_loss(ctx, y, mapping_.paths_of(y), st.penalty, params_, softmax_, w, negatives,
                                     config_.update_parameters ? &grads_ : nullptr,
                                     config_.update_parameters ? &softmax_grads_ : nullptr, st.softmax_frozen, scale);
        structure_sum += loss.structure;
        softmax_sum += loss.softmax;
      }
      if (config_.update_parameters) {
        step(params_.tensors(), std::as_const(grads_).tensors(), structure_opt_);
        if (!st.softmax_frozen && w.softmax_weight != 0.0) {
          std::span<double> p(softmax_.item_output_embeddings.values);
          std::span<const double> g(softmax_grads_.item_output_embeddings.values);
          step(std::vector<std::span<double>>{p}, std::vector<std::span<const double>>{g}, softmax_opt_);
        }
      }
      ++st.batches;
    }
    st.samples = order.size();
    if (st.samples > 0) {
      st.mean_structure_loss = structure_sum / static_cast<double>(st.samples);
      st.mean_softmax_loss = softmax_sum / static_cast<double>(st.samples);
    }
    st.mean_total_loss = w.structure_weight * (st.mean_structure_loss + st.penalty) +
                         w.softmax_weight * st.mean_softmax_loss;

    CoordinateDescentOptions opt{c.alpha, c.J, config_.cd_iterations, config_.penalty};
    auto cd = coordinate_descent_assign(table_, c.K, c.D, opt, &mapping_, assign_rng);
    mapping_ = std::move(cd.mapping);
    st.cd_objective_per_sweep = std::move(cd.objective_per_sweep);
    st.random_fallbacks = cd.random_fallbacks;
    st.kept_previous = cd.kept_previous;
    st.reverted_updates = cd.reverted_updates;
    st.top_path_size = mapping_.top_path_size();
    st.nonempty_paths = mapping_.inverted().size();
    st.path_size_histogram = mapping_.size_histogram();
    ++epochs_done_;
    return st;
  }

  /// Runs the remaining configured epochs.
  std::vector<EpochStats> train(const IndexedCorpus& corpus, std::span<const TrainingSample> samples) {
    std::vector<EpochStats> out;
    while (epochs_done_ < config_.epochs) out.push_back(run_epoch(corpus, samples));
    return out;
  }

 private:
  void reset_optimizers() {
    structure_opt_ = OptimizerState(config_.optimizer);
    softmax_opt_ = OptimizerState(config_.optimizer);
    grads_ = params_.zeros_like();
    softmax_grads_ = softmax_.zeros_like();
  }

  static void step(const std::vector<std::span<double>>& p, const std::vector<std::span<const double>>& g,
                   OptimizerState& state) {
    optimizer_step(std::span<const std::span<double>>(p), std::span<const std::span<const double>>(g), state);
  }

  EmConfig config_;
  StructureParams params_;
  SoftmaxModel softmax_;
  ItemPathMapping mapping_;
  ScoreTable table_;
  std::size_t epochs_done_ = 0;
  OptimizerState structure_opt_;
  OptimizerState softmax_opt_;
  StructureParams grads_;
  SoftmaxModel softmax_grads_;
};

}  // namespace dr
