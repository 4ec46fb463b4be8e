#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "xret/train_config.hpp"

namespace xret {

// count x dim matrix of embeddings, one per row. Stored as f32 on disk, f64 in memory.
struct EmbeddingSet {
  Matrix data;

  EmbeddingSet() = default;
  explicit EmbeddingSet(Matrix m) : data(std::move(m)) {}

  Index dim() const { return data.cols(); }
  Index count() const { return data.rows(); }

  // Rounds every value to the nearest f32, as a write/read cycle would.
  EmbeddingSet narrowed() const;
};

struct ManifestRecord {
  Index row = 0;
  std::string id;
  std::string lang;
  std::optional<std::string> image_id;
  std::optional<std::string> caption;

  bool operator==(const ManifestRecord&) const = default;
};

using Manifest = std::vector<ManifestRecord>;

// Embeddings plus the manifest describing their rows.
struct LabeledSet {
  EmbeddingSet embeddings;
  Manifest manifest;
};

struct TextImagePair {
  Index text_row = 0;
  Index image_row = 0;
  std::string lang;

  bool operator==(const TextImagePair&) const = default;
};

struct PairedDataset {
  EmbeddingSet text_embeddings;
  EmbeddingSet image_embeddings;
  std::vector<TextImagePair> pairs;
  std::unordered_map<Index, std::string> image_id_of;  // text row -> image id
};

struct Checkpoint {
  ProjectionConfig config;
  LossConfig loss_config;
  TrainConfig train_config;
  NetworkWeights weights;
  std::int64_t epochs_trained = 0;
  std::uint64_t seed = 0;
};

bool operator==(const Checkpoint& a, const Checkpoint& b);

// XEMB: "XEMB", u32 version=1, u32 dim, u32 count, count*dim f32, all little-endian.
std::string encode_embeddings(const EmbeddingSet& set);
EmbeddingSet decode_embeddings(std::string_view bytes);
EmbeddingSet read_embedding_file(const std::filesystem::path& path);
void write_embedding_file(const EmbeddingSet& set, const std::filesystem::path& path);

// One JSON object per line with keys row, id, lang, image_id?, caption?.
Manifest parse_manifest(std::string_view text);
std::string format_manifest(const Manifest& records);
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& records, const std::filesystem::path& path);

// Links each text record (optionally only those with lang == *lang_filter) to
// its image row, in text-manifest order.
PairedDataset join_pairs(EmbeddingSet text_set, const Manifest& text_manifest,
                         EmbeddingSet image_set, const Manifest& image_manifest,
                         const std::optional<std::string>& lang_filter);

// Image row for every text record's image_id, in text-manifest order.
std::vector<Index> resolve_image_rows(const Manifest& text_manifest, const Manifest& image_manifest,
                                      Index image_count);

// XCKP: "XCKP", u32 version=1, u32 header length, JSON header, then per block
// weight (out x in, row-major) and bias as f32, all little-endian.
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// 16 hex digits of FNV-1a over the encoded checkpoint.
std::string checkpoint_fingerprint(const Checkpoint& ckpt);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

}  // namespace xret
