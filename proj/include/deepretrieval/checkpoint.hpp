#pragma once

// Checkpoint directory:
//
//   manifest.json        config, versions, tensor directory with checksums, manifest hash
//   tensors/<name>.bin   "DRTENSR1" | u32 version | u32 rank | u64 rows | u64 cols | f32[] | u64 checksum
//   mapping.tsv          item_id \t c1-c2-...-cD;...   (dense item ids)
//   scores.tsv           item_id \t N_v \t path=score;...
//   item_ids.txt         raw id of each dense item id, one per line
//
// All integers and floats little-endian. Checksums are 64-bit FNV-1a.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "deepretrieval/config_json.hpp"
#include "deepretrieval/em_trainer.hpp"
#include "deepretrieval/error.hpp"
#include "deepretrieval/item_path_mapping.hpp"
#include "deepretrieval/reranker.hpp"
#include "deepretrieval/score_table.hpp"
#include "deepretrieval/structure_model.hpp"

namespace dr {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kTensorMagic[8] = {'D', 'R', 'T', 'E', 'N', 'S', 'R', '1'};
inline constexpr std::string_view kCheckpointFormat = "deep-retrieval-checkpoint";

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Checkpoint {
  EmConfig config;
  StructureParams params;
  SoftmaxModel softmax;
  ItemPathMapping mapping;
  ScoreTable scores;
  std::size_t epochs_done = 0;
  std::vector<std::int64_t> item_ids;  // raw ids; empty means dense ids are the raw ids
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t item_count() const { return params.item_count(); }
};

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(std::string_view in, std::size_t at) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CorruptionError("checkpoint: cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, std::string_view bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("checkpoint: cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("checkpoint: write failed for " + p.string());
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(std::string_view s, const std::string& what) {
  double v = 0.0;
  if (!parse_number(s, v)) throw CorruptionError("checkpoint: malformed number in " + what);
  return v;
}

}  // namespace detail

/// Encodes rows x cols values as a float32 tensor blob.
inline std::string encode_tensor(std::size_t rows, std::size_t cols, std::span<const double> values) {
  if (values.size() != rows * cols) throw ShapeError("encode_tensor: value count != rows*cols");
  std::string out(kTensorMagic, sizeof kTensorMagic);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, 2);
  detail::put_le<std::uint64_t>(out, rows);
  detail::put_le<std::uint64_t>(out, cols);
  for (double v : values) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    detail::put_le<std::uint32_t>(out, bits);
  }
  detail::put_le<std::uint64_t>(out, fnv1a64(out));
  return out;
}

struct DecodedTensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;
};

inline DecodedTensor decode_tensor(std::string_view blob, const std::string& name) {
  constexpr std::size_t header = 8 + 4 + 4 + 8 + 8;
  if (blob.size() < header + 8) throw CorruptionError("tensor " + name + ": truncated header");
  if (std::memcmp(blob.data(), kTensorMagic, sizeof kTensorMagic) != 0) {
    throw CorruptionError("tensor " + name + ": bad magic");
  }
  const auto version = detail::get_le<std::uint32_t>(blob, 8);
  if (version != kCheckpointVersion) {
    throw MigrationError("tensor " + name + ": blob version " + std::to_string(version) + ", expected " +
                         std::to_string(kCheckpointVersion));
  }
  const auto rank = detail::get_le<std::uint32_t>(blob, 12);
  if (rank != 2) throw CorruptionError("tensor " + name + ": unsupported rank");
  DecodedTensor t;
  t.rows = detail::get_le<std::uint64_t>(blob, 16);
  t.cols = detail::get_le<std::uint64_t>(blob, 24);
  const std::size_t count = t.rows * t.cols;
  if (t.cols != 0 && count / t.cols != t.rows) throw CorruptionError("tensor " + name + ": shape overflow");
  if (blob.size() != header + 4 * count + 8) throw CorruptionError("tensor " + name + ": truncated or padded data");
  const auto stored = detail::get_le<std::uint64_t>(blob, blob.size() - 8);
  if (fnv1a64(blob.substr(0, blob.size() - 8)) != stored) throw CorruptionError("tensor " + name + ": checksum mismatch");
  t.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto bits = detail::get_le<std::uint32_t>(blob, header + 4 * i);
    std::memcpy(&t.values[i], &bits, sizeof bits);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Text files

inline std::string format_mapping_line(ItemId item, std::span<const PathId> paths) {
  std::string line = std::to_string(item) + '\t';
  for (std::size_t j = 0; j < paths.size(); ++j) {
    if (j) line += ';';
    line += paths[j].to_string();
  }
  return line;
}

inline std::pair<ItemId, std::vector<PathId>> parse_mapping_line(std::string_view line) {
  const auto tab = line.find('\t');
  if (tab == std::string_view::npos) throw InputError("mapping line: missing tab");
  ItemId item = 0;
  if (!detail::parse_number(line.substr(0, tab), item)) throw InputError("mapping line: bad item id");
  std::vector<PathId> paths;
  auto rest = line.substr(tab + 1);
  while (!rest.empty()) {
    const auto semi = rest.find(';');
    paths.push_back(PathId::parse(rest.substr(0, semi)));
    if (semi == std::string_view::npos) break;
    rest = rest.substr(semi + 1);
  }
  return {item, std::move(paths)};
}

inline std::string encode_mapping(const ItemPathMapping& m) {
  std::string out;
  for (ItemId v = 0; v < m.item_count(); ++v) out += format_mapping_line(v, m.paths_of(v)) + '\n';
  return out;
}

inline ItemPathMapping decode_mapping(std::string_view text, std::size_t K, std::size_t D, std::size_t J,
                                      std::size_t item_count) {
  ItemPathMapping m(K, D, J, item_count);
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      auto [item, paths] = parse_mapping_line(line);
      m.assign(item, std::move(paths));
    } catch (const InputError& e) {
      throw CorruptionError(std::string("mapping file: ") + e.what());
    }
  }
  return m;
}

inline std::string encode_scores(const ScoreTable& t) {
  std::string out;
  for (ItemId v = 0; v < t.item_count(); ++v) {
    const auto& rec = t.item(v);
    if (rec.occurrences == 0.0 && rec.entries.empty()) continue;
    out += std::to_string(v) + '\t' + detail::format_double(rec.occurrences) + '\t';
    for (std::size_t i = 0; i < rec.entries.size(); ++i) {
      if (i) out += ';';
      out += rec.entries[i].path.to_string() + '=' + detail::format_double(rec.entries[i].score);
    }
    out += '\n';
  }
  return out;
}

inline ScoreTable decode_scores(std::string_view text, std::size_t item_count, std::size_t capacity) {
  ScoreTable t(item_count, capacity);
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = std::string_view(line);
    const auto t1 = f.find('\t');
    const auto t2 = t1 == std::string_view::npos ? t1 : f.find('\t', t1 + 1);
    if (t2 == std::string_view::npos) throw CorruptionError("scores file: malformed line");
    ItemId v = 0;
    if (!detail::parse_number(f.substr(0, t1), v) || v >= item_count) throw CorruptionError("scores file: bad item id");
    auto& rec = t.item(v);
    rec.occurrences = detail::parse_double(f.substr(t1 + 1, t2 - t1 - 1), "scores file");
    auto rest = f.substr(t2 + 1);
    while (!rest.empty()) {
      const auto semi = rest.find(';');
      const auto piece = rest.substr(0, semi);
      const auto eq = piece.find('=');
      if (eq == std::string_view::npos) throw CorruptionError("scores file: malformed entry");
      try {
        rec.entries.push_back({PathId::parse(piece.substr(0, eq)), detail::parse_double(piece.substr(eq + 1), "scores file")});
      } catch (const InputError& e) {
        throw CorruptionError(std::string("scores file: ") + e.what());
      }
      if (semi == std::string_view::npos) break;
      rest = rest.substr(semi + 1);
    }
    if (rec.entries.size() > capacity) throw CorruptionError("scores file: more entries than capacity");
  }
  return t;
}

// ---------------------------------------------------------------------------

namespace detail {

template <class Fn>
void for_each_checkpoint_tensor(const Checkpoint& c, Fn&& fn) {
  StructureParams::for_each_tensor(c.params, [&](const std::string& name, std::size_t r, std::size_t k,
                                                 std::span<const double> v) { fn("structure." + name, r, k, v); });
  const auto& w = c.softmax.item_output_embeddings;
  fn(std::string("softmax.item_output_embeddings"), w.rows, w.cols, std::span<const double>(w.values));
}

inline std::uint64_t manifest_hash(nlohmann::json manifest) {
  manifest.erase("manifest_hash");
  return fnv1a64(manifest.dump());
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "tensors");
  nlohmann::json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["version"] = kCheckpointVersion;
  manifest["config"] = to_json(c.config);
  manifest["epochs_done"] = c.epochs_done;
  manifest["item_count"] = c.item_count();
  manifest["metadata"] = c.metadata;
  manifest["tensors"] = nlohmann::json::array();
  detail::for_each_checkpoint_tensor(c, [&](const std::string& name, std::size_t r, std::size_t k,
                                            std::span<const double> v) {
    const auto blob = encode_tensor(r, k, v);
    const std::string file = "tensors/" + name + ".bin";
    detail::write_file(dir / file, blob);
    manifest["tensors"].push_back({{"name", name}, {"file", file}, {"rows", r}, {"cols", k},
                                   {"checksum", hex64(fnv1a64(blob))}});
  });
  std::string ids;
  for (auto id : c.item_ids) ids += std::to_string(id) + '\n';
  const std::pair<std::string, std::string> files[] = {
      {"mapping.tsv", encode_mapping(c.mapping)}, {"scores.tsv", encode_scores(c.scores)}, {"item_ids.txt", ids}};
  manifest["files"] = nlohmann::json::object();
  for (const auto& [file, bytes] : files) {
    detail::write_file(dir / file, bytes);
    manifest["files"][file] = hex64(fnv1a64(bytes));
  }
  manifest["manifest_hash"] = hex64(detail::manifest_hash(manifest));
  detail::write_file(dir / "manifest.json", manifest.dump(2) + '\n');
}

namespace detail {

inline nlohmann::json load_manifest(const std::filesystem::path& dir) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("checkpoint manifest: ") + e.what());
  }
  if (!m.is_object() || m.value("format", "") != kCheckpointFormat) {
    throw CorruptionError("checkpoint manifest: not a checkpoint");
  }
  const auto version = m.value("version", 0u);
  if (version != kCheckpointVersion) {
    throw MigrationError("checkpoint version " + std::to_string(version) + ", this build reads version " +
                         std::to_string(kCheckpointVersion));
  }
  if (m.value("manifest_hash", "") != hex64(manifest_hash(m))) {
    throw CorruptionError("checkpoint manifest: hash mismatch");
  }
  return m;
}

inline std::string read_checked(const std::filesystem::path& dir, const nlohmann::json& manifest,
                                const std::string& file) {
  const auto bytes = read_file(dir / file);
  if (hex64(fnv1a64(bytes)) != manifest.at("files").at(file).get<std::string>()) {
    throw CorruptionError("checkpoint: checksum mismatch for " + file);
  }
  return bytes;
}

}  // namespace detail

/// Reads only the manifest config and the item-path mapping.
inline ItemPathMapping load_mapping(const std::filesystem::path& dir) {
  const auto m = detail::load_manifest(dir);
  const auto cfg = em_config_from_json(m.at("config"));
  return decode_mapping(detail::read_checked(dir, m, "mapping.tsv"), cfg.structure.K, cfg.structure.D,
                        cfg.structure.J, m.at("item_count").get<std::size_t>());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto m = detail::load_manifest(dir);
  Checkpoint c;
  try {
    c.config = em_config_from_json(m.at("config"));
    c.epochs_done = m.at("epochs_done").get<std::size_t>();
    c.metadata = m.at("metadata");
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("checkpoint manifest: ") + e.what());
  }
  const auto V = m.at("item_count").get<std::size_t>();
  c.params = StructureParams::zeros(c.config.structure, V);
  c.softmax = SoftmaxModel::zeros(V, c.config.structure.emb_dim);

  std::vector<std::pair<std::string, std::span<double>>> targets;
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  StructureParams::for_each_tensor(c.params, [&](const std::string& name, std::size_t r, std::size_t k,
                                                 std::span<double> v) {
    targets.emplace_back("structure." + name, v);
    shapes.emplace_back(r, k);
  });
  targets.emplace_back("softmax.item_output_embeddings", std::span<double>(c.softmax.item_output_embeddings.values));
  shapes.emplace_back(V, c.config.structure.emb_dim);

  const auto& dirent = m.at("tensors");
  if (dirent.size() != targets.size()) throw CorruptionError("checkpoint: tensor directory size mismatch");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& e = dirent[i];
    const auto& [name, dest] = targets[i];
    if (e.at("name").get<std::string>() != name) throw CorruptionError("checkpoint: unexpected tensor " + name);
    const auto blob = detail::read_file(dir / e.at("file").get<std::string>());
    if (hex64(fnv1a64(blob)) != e.at("checksum").get<std::string>()) {
      throw CorruptionError("checkpoint: checksum mismatch for tensor " + name);
    }
    const auto t = decode_tensor(blob, name);
    if (t.rows != shapes[i].first || t.cols != shapes[i].second) {
      throw CorruptionError("checkpoint: shape mismatch for tensor " + name);
    }
    std::copy(t.values.begin(), t.values.end(), dest.begin());
  }

  const auto& s = c.config.structure;
  c.mapping = decode_mapping(detail::read_checked(dir, m, "mapping.tsv"), s.K, s.D, s.J, V);
  c.scores = decode_scores(detail::read_checked(dir, m, "scores.tsv"), V, s.S);
  std::istringstream ids(detail::read_checked(dir, m, "item_ids.txt"));
  std::string line;
  while (std::getline(ids, line)) {
    std::int64_t id = 0;
    if (!detail::parse_number(std::string_view(line), id)) throw CorruptionError("checkpoint: malformed item id");
    c.item_ids.push_back(id);
  }
  if (!c.item_ids.empty() && c.item_ids.size() != V) throw CorruptionError("checkpoint: item id list size mismatch");
  return c;
}

/// Snapshot of a trainer, ready to save.
inline Checkpoint make_checkpoint(const EmTrainer& t, std::vector<std::int64_t> item_ids = {}) {
  Checkpoint c;
  c.config = t.config();
  c.params = t.params();
  c.softmax = t.softmax();
  c.mapping = t.mapping();
  c.scores = t.score_table();
  c.epochs_done = t.epochs_done();
  c.item_ids = std::move(item_ids);
  return c;
}

}  // namespace dr
