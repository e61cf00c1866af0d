#pragma once

// JSON form of the training configuration, used by checkpoint manifests and stats records.

#include <string>

#include <json.hpp>

#include "deepretrieval/em_trainer.hpp"
#include "deepretrieval/error.hpp"

namespace dr {

inline nlohmann::json to_json(const StructureConfig& c) {
  return {{"K", c.K},
          {"D", c.D},
          {"J", c.J},
          {"B", c.B},
          {"S", c.S},
          {"alpha", c.alpha},
          {"eta", c.eta},
          {"emb_dim", c.emb_dim},
          {"hidden_width", c.hidden_width},
          {"hidden_layers", c.hidden_layers},
          {"max_seq_len", c.max_seq_len}};
}

inline StructureConfig structure_config_from_json(const nlohmann::json& j) {
  StructureConfig c;
  c.K = j.at("K").get<std::size_t>();
  c.D = j.at("D").get<std::size_t>();
  c.J = j.at("J").get<std::size_t>();
  c.B = j.at("B").get<std::size_t>();
  c.S = j.at("S").get<std::size_t>();
  c.alpha = j.at("alpha").get<double>();
  c.eta = j.at("eta").get<double>();
  c.emb_dim = j.at("emb_dim").get<std::size_t>();
  c.hidden_width = j.at("hidden_width").get<std::size_t>();
  c.hidden_layers = j.at("hidden_layers").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  return c;
}

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

inline OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw InputError("unknown optimizer '" + s + "' (expected adam or sgd)");
}

inline std::string to_string(PathSizePenalty::Kind k) {
  return k == PathSizePenalty::Kind::quartic ? "quartic" : "quadratic";
}

inline PathSizePenalty::Kind penalty_kind_from_string(const std::string& s) {
  if (s == "quartic") return PathSizePenalty::Kind::quartic;
  if (s == "quadratic") return PathSizePenalty::Kind::quadratic;
  throw InputError("unknown penalty '" + s + "' (expected quartic or quadratic)");
}

inline nlohmann::json to_json(const EmConfig& c) {
  return {{"structure", to_json(c.structure)},
          {"epochs", c.epochs},
          {"cd_iterations", c.cd_iterations},
          {"batch_size", c.batch_size},
          {"optimizer",
           {{"kind", to_string(c.optimizer.kind)},
            {"learning_rate", c.optimizer.learning_rate},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"epsilon", c.optimizer.epsilon},
            {"weight_decay", c.optimizer.weight_decay}}},
          {"joint",
           {{"structure_weight", c.joint.structure_weight},
            {"softmax_weight", c.joint.softmax_weight},
            {"freeze_epoch", c.joint.freeze_epoch},
            {"negative_samples", c.joint.negative_samples}}},
          {"penalty", to_string(c.penalty.kind)},
          {"update_parameters", c.update_parameters},
          {"score_beam", c.score_beam},
          {"init_stddev", c.init_stddev},
          {"seed", c.seed}};
}

inline EmConfig em_config_from_json(const nlohmann::json& j) {
  EmConfig c;
  c.structure = structure_config_from_json(j.at("structure"));
  c.epochs = j.at("epochs").get<std::size_t>();
  c.cd_iterations = j.at("cd_iterations").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  const auto& o = j.at("optimizer");
  c.optimizer.kind = optimizer_kind_from_string(o.at("kind").get<std::string>());
  c.optimizer.learning_rate = o.at("learning_rate").get<double>();
  c.optimizer.beta1 = o.at("beta1").get<double>();
  c.optimizer.beta2 = o.at("beta2").get<double>();
  c.optimizer.epsilon = o.at("epsilon").get<double>();
  c.optimizer.weight_decay = o.at("weight_decay").get<double>();
  const auto& w = j.at("joint");
  c.joint.structure_weight = w.at("structure_weight").get<double>();
  c.joint.softmax_weight = w.at("softmax_weight").get<double>();
  c.joint.freeze_epoch = w.at("freeze_epoch").get<std::size_t>();
  c.joint.negative_samples = w.at("negative_samples").get<std::size_t>();
  c.penalty.kind = penalty_kind_from_string(j.at("penalty").get<std::string>());
  c.update_parameters = j.at("update_parameters").get<bool>();
  c.score_beam = j.at("score_beam").get<std::size_t>();
  c.init_stddev = j.at("init_stddev").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json to_json(const EpochStats& s) {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& [size, count] : s.path_size_histogram) hist.push_back({size, count});
  return {{"record", "epoch"},
          {"epoch", s.epoch},
          {"samples", s.samples},
          {"batches", s.batches},
          {"softmax_frozen", s.softmax_frozen},
          {"structure_loss", s.mean_structure_loss},
          {"softmax_loss", s.mean_softmax_loss},
          {"penalty", s.penalty},
          {"total_loss", s.mean_total_loss},
          {"cd_objective_per_sweep", s.cd_objective_per_sweep},
          {"top_path_size", s.top_path_size},
          {"nonempty_paths", s.nonempty_paths},
          {"path_size_histogram", hist},
          {"random_fallbacks", s.random_fallbacks},
          {"kept_previous", s.kept_previous},
          {"reverted_updates", s.reverted_updates}};
}

}  // namespace dr
