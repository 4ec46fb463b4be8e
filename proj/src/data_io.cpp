#include "xret/data_io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace xret {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::string_view kEmbeddingMagic = "XEMB";
constexpr std::string_view kCheckpointMagic = "XCKP";
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::size_t kEmbeddingHeaderBytes = 16;

void put_u32(std::string& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<char>((v >> shift) & 0xffu));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int b = 3; b >= 0; --b) {
    v = (v << 8) | static_cast<unsigned char>(bytes[offset + static_cast<std::size_t>(b)]);
  }
  return v;
}

void put_f32(std::string& out, double value) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(value)));
}

double get_f32(std::string_view bytes, std::size_t offset) {
  return static_cast<double>(std::bit_cast<float>(get_u32(bytes, offset)));
}

std::uint32_t checked_u32(Index v, const char* what) {
  if (v < 0 || static_cast<std::uint64_t>(v) > std::numeric_limits<std::uint32_t>::max()) {
    throw DataError(std::string(what) + " does not fit in u32");
  }
  return static_cast<std::uint32_t>(v);
}

void require_finite(double v, const std::string& where) {
  if (!std::isfinite(v)) throw DataError("non-finite value in " + where);
}

// Row-major f32 payload into an existing matrix.
std::size_t read_matrix(std::string_view bytes, std::size_t offset, Matrix& m, const std::string& where) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      const double v = get_f32(bytes, offset);
      require_finite(v, where);
      m(i, j) = v;
      offset += 4;
    }
  }
  return offset;
}

ordered_json projection_to_json(const ProjectionConfig& c) {
  return {{"input_dim", c.input_dim},
          {"block_dims", c.block_dims},
          {"dropout_rates", c.dropout_rates},
          {"l2norm_flags", c.l2norm_flags},
          {"relu_flags", c.relu_flags}};
}

ProjectionConfig projection_from_json(const ordered_json& j) {
  ProjectionConfig c;
  c.input_dim = j.at("input_dim").get<Index>();
  c.block_dims = j.at("block_dims").get<std::vector<Index>>();
  c.dropout_rates = j.at("dropout_rates").get<std::vector<double>>();
  c.l2norm_flags = j.at("l2norm_flags").get<std::vector<bool>>();
  c.relu_flags = j.at("relu_flags").get<std::vector<bool>>();
  return c;
}

ordered_json loss_to_json(const LossConfig& c) {
  return {{"kind", to_string(c.kind)}, {"rho", c.rho},     {"alpha1", c.alpha1},
          {"alpha2", c.alpha2},        {"eta", c.eta},     {"denom_eps", c.denom_eps}};
}

LossConfig loss_from_json(const ordered_json& j) {
  LossConfig c;
  c.kind = loss_kind_from_string(j.at("kind").get<std::string>());
  c.rho = j.at("rho").get<double>();
  c.alpha1 = j.at("alpha1").get<double>();
  c.alpha2 = j.at("alpha2").get<double>();
  c.eta = j.at("eta").get<double>();
  c.denom_eps = j.at("denom_eps").get<double>();
  return c;
}

ordered_json train_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.adam.lr},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"adam_eps", c.adam.eps},
          {"seed", c.seed},
          {"loss", loss_to_json(c.loss)},
          {"normalize_inputs", c.normalize_inputs},
          {"log_every", c.log_every}};
}

TrainConfig train_from_json(const ordered_json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<Index>();
  c.adam.lr = j.at("lr").get<double>();
  c.adam.beta1 = j.at("beta1").get<double>();
  c.adam.beta2 = j.at("beta2").get<double>();
  c.adam.eps = j.at("adam_eps").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.loss = loss_from_json(j.at("loss"));
  c.normalize_inputs = j.at("normalize_inputs").get<bool>();
  c.log_every = j.at("log_every").get<int>();
  return c;
}

std::string describe_line(std::size_t line) { return "manifest line " + std::to_string(line) + ": "; }

}  // namespace

EmbeddingSet EmbeddingSet::narrowed() const {
  return EmbeddingSet(data.cast<float>().cast<double>());
}

bool operator==(const Checkpoint& a, const Checkpoint& b) {
  return a.config == b.config && a.loss_config == b.loss_config && a.train_config == b.train_config &&
         a.weights == b.weights && a.epochs_trained == b.epochs_trained && a.seed == b.seed;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write to '" + path.string() + "' failed");
}

// ---------------------------------------------------------------- embeddings

std::string encode_embeddings(const EmbeddingSet& set) {
  const auto dim = checked_u32(set.dim(), "embedding dim");
  const auto count = checked_u32(set.count(), "embedding count");
  std::string out;
  out.reserve(kEmbeddingHeaderBytes + 4u * static_cast<std::size_t>(dim) * count);
  out.append(kEmbeddingMagic);
  put_u32(out, kFormatVersion);
  put_u32(out, dim);
  put_u32(out, count);
  for (Index i = 0; i < set.count(); ++i) {
    for (Index j = 0; j < set.dim(); ++j) put_f32(out, set.data(i, j));
  }
  return out;
}

EmbeddingSet decode_embeddings(std::string_view bytes) {
  if (bytes.size() < kEmbeddingHeaderBytes || bytes.substr(0, 4) != kEmbeddingMagic) {
    throw DataError("embedding file: bad magic (expected XEMB)");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kFormatVersion) {
    throw DataError("embedding file: unsupported version " + std::to_string(version));
  }
  const std::uint64_t dim = get_u32(bytes, 8);
  const std::uint64_t count = get_u32(bytes, 12);
  if (dim == 0) throw DataError("embedding file: dim must be positive");
  const std::uint64_t expected = kEmbeddingHeaderBytes + 4 * dim * count;
  if (bytes.size() != expected) {
    throw DataError("embedding file: payload is " + std::to_string(bytes.size()) + " bytes, header implies " +
                    std::to_string(expected));
  }
  Matrix m(static_cast<Index>(count), static_cast<Index>(dim));
  read_matrix(bytes, kEmbeddingHeaderBytes, m, "embedding file");
  return EmbeddingSet(std::move(m));
}

EmbeddingSet read_embedding_file(const std::filesystem::path& path) {
  try {
    return decode_embeddings(read_file_bytes(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_embedding_file(const EmbeddingSet& set, const std::filesystem::path& path) {
  write_file_bytes(path, encode_embeddings(set));
}

// ---------------------------------------------------------------- manifests

Manifest parse_manifest(std::string_view text) {
  Manifest records;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(describe_line(line_no) + "malformed record: " + e.what());
    }
    if (!j.is_object()) throw DataError(describe_line(line_no) + "record must be an object");

    ManifestRecord rec;
    const auto row = j.find("row");
    if (row == j.end() || !row->is_number_integer() || row->get<std::int64_t>() < 0) {
      throw DataError(describe_line(line_no) + "'row' must be a non-negative integer");
    }
    rec.row = row->get<Index>();
    for (auto [key, field] : {std::pair{"id", &rec.id}, std::pair{"lang", &rec.lang}}) {
      const auto it = j.find(key);
      if (it == j.end() || !it->is_string()) {
        throw DataError(describe_line(line_no) + "'" + key + "' must be a string");
      }
      *field = it->get<std::string>();
    }
    for (auto [key, field] : {std::pair{"image_id", &rec.image_id}, std::pair{"caption", &rec.caption}}) {
      const auto it = j.find(key);
      if (it == j.end() || it->is_null()) continue;
      if (!it->is_string()) throw DataError(describe_line(line_no) + "'" + key + "' must be a string");
      *field = it->get<std::string>();
    }
    if (!seen.insert(rec.id).second) {
      throw DataError(describe_line(line_no) + "duplicate id '" + rec.id + "'");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::string format_manifest(const Manifest& records) {
  std::string out;
  for (const auto& r : records) {
    ordered_json j = {{"row", r.row}, {"id", r.id}, {"lang", r.lang}};
    if (r.image_id) j["image_id"] = *r.image_id;
    if (r.caption) j["caption"] = *r.caption;
    out += j.dump();
    out += '\n';
  }
  return out;
}

Manifest read_manifest(const std::filesystem::path& path) {
  try {
    return parse_manifest(read_file_bytes(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_manifest(const Manifest& records, const std::filesystem::path& path) {
  write_file_bytes(path, format_manifest(records));
}

// ---------------------------------------------------------------- joining

std::vector<Index> resolve_image_rows(const Manifest& text_manifest, const Manifest& image_manifest,
                                      Index image_count) {
  std::unordered_map<std::string, Index> row_of_image;
  row_of_image.reserve(image_manifest.size());
  for (const auto& rec : image_manifest) {
    if (rec.row >= image_count) {
      throw DataError("image record '" + rec.id + "' row " + std::to_string(rec.row) +
                      " out of range for " + std::to_string(image_count) + " image embeddings");
    }
    row_of_image.emplace(rec.id, rec.row);
  }
  std::vector<Index> rows;
  rows.reserve(text_manifest.size());
  for (const auto& rec : text_manifest) {
    if (!rec.image_id) throw DataError("text record '" + rec.id + "' has no image_id");
    const auto it = row_of_image.find(*rec.image_id);
    if (it == row_of_image.end()) {
      throw DataError("text record '" + rec.id + "' references unknown image '" + *rec.image_id + "'");
    }
    rows.push_back(it->second);
  }
  return rows;
}

PairedDataset join_pairs(EmbeddingSet text_set, const Manifest& text_manifest, EmbeddingSet image_set,
                         const Manifest& image_manifest, const std::optional<std::string>& lang_filter) {
  for (const auto& rec : text_manifest) {
    if (rec.row >= text_set.count()) {
      throw DataError("text record '" + rec.id + "' row " + std::to_string(rec.row) + " out of range for " +
                      std::to_string(text_set.count()) + " text embeddings");
    }
  }
  const std::vector<Index> image_rows = resolve_image_rows(text_manifest, image_manifest, image_set.count());

  PairedDataset ds;
  for (std::size_t k = 0; k < text_manifest.size(); ++k) {
    const auto& rec = text_manifest[k];
    if (lang_filter && rec.lang != *lang_filter) continue;
    ds.pairs.push_back({rec.row, image_rows[k], rec.lang});
    ds.image_id_of[rec.row] = *rec.image_id;
  }
  ds.text_embeddings = std::move(text_set);
  ds.image_embeddings = std::move(image_set);
  return ds;
}

// ---------------------------------------------------------------- checkpoints

std::string encode_checkpoint(const Checkpoint& ckpt) {
  ckpt.weights.check_against(ckpt.config);
  ordered_json layers = ordered_json::array();
  for (const auto& b : ckpt.weights.blocks) {
    layers.push_back({{"out", b.weight.rows()}, {"in", b.weight.cols()}});
  }
  const ordered_json header = {{"projection", projection_to_json(ckpt.config)},
                               {"loss", loss_to_json(ckpt.loss_config)},
                               {"train", train_to_json(ckpt.train_config)},
                               {"epochs_trained", ckpt.epochs_trained},
                               {"seed", ckpt.seed},
                               {"layers", layers}};
  const std::string header_text = header.dump();

  std::string out;
  out.append(kCheckpointMagic);
  put_u32(out, kFormatVersion);
  put_u32(out, checked_u32(static_cast<Index>(header_text.size()), "checkpoint header"));
  out += header_text;
  for (const auto& b : ckpt.weights.blocks) {
    for (Index i = 0; i < b.weight.rows(); ++i) {
      for (Index j = 0; j < b.weight.cols(); ++j) put_f32(out, b.weight(i, j));
    }
    for (Index i = 0; i < b.bias.size(); ++i) put_f32(out, b.bias(i));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 12 || bytes.substr(0, 4) != kCheckpointMagic) {
    throw DataError("checkpoint: bad magic (expected XCKP)");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kFormatVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const std::size_t header_len = get_u32(bytes, 8);
  if (bytes.size() < 12 + header_len) throw DataError("checkpoint: truncated header");

  Checkpoint ckpt;
  std::vector<std::pair<Index, Index>> shapes;
  try {
    const auto header = ordered_json::parse(bytes.substr(12, header_len));
    ckpt.config = projection_from_json(header.at("projection"));
    ckpt.loss_config = loss_from_json(header.at("loss"));
    ckpt.train_config = train_from_json(header.at("train"));
    ckpt.epochs_trained = header.at("epochs_trained").get<std::int64_t>();
    ckpt.seed = header.at("seed").get<std::uint64_t>();
    for (const auto& layer : header.at("layers")) {
      shapes.emplace_back(layer.at("out").get<Index>(), layer.at("in").get<Index>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed header: ") + e.what());
  }
  try {
    ckpt.config.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint: invalid projection config: ") + e.what());
  }

  std::uint64_t payload = 0;
  Index in = ckpt.config.input_dim;
  if (shapes.size() != ckpt.config.num_blocks()) throw DataError("checkpoint: layer list disagrees with config");
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    const auto [out, layer_in] = shapes[k];
    if (out != ckpt.config.block_dims[k] || layer_in != in) {
      throw DataError("checkpoint: layer " + std::to_string(k) + " shape disagrees with config");
    }
    payload += 4 * static_cast<std::uint64_t>(out) * static_cast<std::uint64_t>(layer_in + 1);
    in = out;
  }
  const std::size_t offset = 12 + header_len;
  if (bytes.size() - offset != payload) {
    throw DataError("checkpoint: payload is " + std::to_string(bytes.size() - offset) +
                    " bytes, header implies " + std::to_string(payload));
  }

  std::size_t cursor = offset;
  for (const auto& [out, layer_in] : shapes) {
    LinearBlock block{Matrix(out, layer_in), Vector(out)};
    cursor = read_matrix(bytes, cursor, block.weight, "checkpoint weights");
    for (Index i = 0; i < out; ++i) {
      block.bias(i) = get_f32(bytes, cursor);
      require_finite(block.bias(i), "checkpoint biases");
      cursor += 4;
    }
    ckpt.weights.blocks.push_back(std::move(block));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file_bytes(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string checkpoint_fingerprint(const Checkpoint& ckpt) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : encode_checkpoint(ckpt)) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace xret
