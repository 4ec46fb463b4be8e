#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "xret/data_io.hpp"

namespace xret {

enum class Distance { sqeuclidean, cosine };

std::string to_string(Distance d);
Distance distance_from_string(const std::string& name);

// For each query, how many gallery rows rank strictly ahead of its true row.
// Rows at equal distance rank by ascending gallery index.
std::vector<Index> true_match_ranks(const Matrix& queries, const Matrix& gallery,
                                    std::span<const Index> true_gallery_row,
                                    Distance distance = Distance::sqeuclidean);

double recall_at_k(const Matrix& queries, const Matrix& gallery, std::span<const Index> true_gallery_row, Index k,
                   Distance distance = Distance::sqeuclidean);

inline double recall_at_k(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                          std::span<const Index> true_gallery_row, Index k,
                          Distance distance = Distance::sqeuclidean) {
  return recall_at_k(queries.data, gallery.data, true_gallery_row, k, distance);
}

struct RecallRow {
  std::string lang;
  Index k = 0;
  double recall = 0.0;
  Index query_count = 0;
  Index gallery_size = 0;
};

struct RecallReport {
  std::string checkpoint_id;
  Distance distance = Distance::sqeuclidean;
  std::vector<Index> ks;
  std::vector<RecallRow> rows;  // language-major, K ascending in the order given

  double recall(const std::string& lang, Index k) const;
  std::vector<std::string> languages() const;
};

// Projects every text set through the checkpoint and ranks the shared image
// gallery. One row per (language, K); languages in first-seen manifest order.
RecallReport evaluate_zero_shot(const Checkpoint& ckpt, std::span<const LabeledSet> texts,
                                const LabeledSet& images, std::span<const Index> ks = {},
                                Distance distance = Distance::sqeuclidean);

std::string report_to_json(const RecallReport& report);
std::string report_to_csv(const RecallReport& report);
std::string report_to_table(const RecallReport& report);

struct AlignmentEntry {
  std::string lang_a;
  std::string lang_b;
  double paired_mean = 0.0;
  double mismatched_mean = 0.0;
  double ratio = 0.0;
};

// Row i of `a` is the translation of row i of `b`. The mismatched mean runs
// over all ordered pairs i != j, so the result is symmetric in (a, b).
AlignmentEntry alignment_score(const Matrix& a, const Matrix& b);

std::string alignment_to_json(std::span<const AlignmentEntry> entries);
std::string alignment_to_csv(std::span<const AlignmentEntry> entries);

struct ProjectionTable {
  std::vector<std::string> ids;
  std::vector<std::string> langs;
  Matrix values;
};

// `id,lang,v0..v{d-1}`, values printed as %.9e.
std::string format_projection_csv(const Checkpoint& ckpt, std::span<const LabeledSet> texts);
void export_projection_csv(const Checkpoint& ckpt, std::span<const LabeledSet> texts,
                           const std::filesystem::path& path);
ProjectionTable parse_projection_csv(std::string_view text);

}  // namespace xret
