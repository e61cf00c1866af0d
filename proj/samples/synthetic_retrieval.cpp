// Trains Deep Retrieval on a small planted-cluster corpus and compares its recall@20 with
// brute-force inner-product retrieval over the same softmax embeddings.
//
//   sample_synthetic [seed]

#include <cstdio>
#include <cstdlib>

#include "deepretrieval/deepretrieval.hpp"

int main(int argc, char** argv) {
  const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 1;

  dr::SynthConfig synth;
  synth.clusters = 8;
  synth.items_per_cluster = 60;
  synth.users = 1200;
  synth.interactions_per_user = 16;
  synth.seed = seed;
  const auto corpus = dr::IndexedCorpus::build(dr::synth_clusters(synth).records);
  const auto split = dr::make_split(corpus, 0, 200, seed);
  const auto samples = dr::make_training_samples(corpus, split.train_users);

  dr::EmConfig cfg;
  auto& s = cfg.structure;
  s.K = 8;
  s.D = 2;
  s.J = 2;
  s.B = 8;
  s.S = 8;
  s.alpha = 1e-6;
  s.max_seq_len = 16;
  cfg.batch_size = 16;
  cfg.epochs = 3;
  cfg.joint.freeze_epoch = 2;
  cfg.seed = seed;

  dr::EmTrainer trainer(cfg, corpus.item_count());
  for (const auto& st : trainer.train(corpus, samples)) {
    std::printf("epoch %zu  structure %.4f  softmax %.4f  top path %zu  non-empty paths %zu\n", st.epoch,
                st.mean_structure_loss, st.mean_softmax_loss, st.top_path_size, st.nonempty_paths);
  }

  const dr::InferenceSession session(trainer.params());
  auto deep = [&](const dr::UserContext& ctx, std::size_t k) {
    return dr::dr_retrieve(session, trainer.softmax(), trainer.mapping(), ctx, s.B, k);
  };
  auto brute = [&](const dr::UserContext& ctx, std::size_t k) {
    std::vector<dr::ItemId> ids;
    for (const auto& r : dr::brute_force_retrieve(ctx, trainer.params(), trainer.softmax(), k)) ids.push_back(r.item);
    return ids;
  };
  const auto a = dr::evaluate(deep, split.test, 20, s.max_seq_len);
  const auto b = dr::evaluate(brute, split.test, 20, s.max_seq_len);
  std::printf("recall@20  deep retrieval %.4f  brute force %.4f  (%zu users)\n", a.recall, b.recall,
              a.users_evaluated);
  return 0;
}
