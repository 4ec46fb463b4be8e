#include "xret/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "xret/losses.hpp"
#include "xret/trainer.hpp"

namespace xret {

namespace {

using ordered_json = nlohmann::ordered_json;

void check_ks(std::span<const Index> ks, Index gallery_size) {
  for (const Index k : ks) {
    if (k < 1 || k > gallery_size) {
      throw std::out_of_range("K=" + std::to_string(k) + " outside [1, " + std::to_string(gallery_size) + "]");
    }
  }
}

std::string format_double(double v, const char* fmt = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

}  // namespace

std::string to_string(Distance d) { return d == Distance::sqeuclidean ? "sqeuclidean" : "cosine"; }

Distance distance_from_string(const std::string& name) {
  if (name == "sqeuclidean") return Distance::sqeuclidean;
  if (name == "cosine") return Distance::cosine;
  throw std::invalid_argument("unknown distance '" + name + "'");
}

std::vector<Index> true_match_ranks(const Matrix& queries, const Matrix& gallery,
                                    std::span<const Index> true_gallery_row, Distance distance) {
  if (static_cast<Index>(true_gallery_row.size()) != queries.rows()) {
    throw ShapeError("recall: one true gallery row per query expected");
  }
  if (queries.rows() > 0 && queries.cols() != gallery.cols()) {
    throw ShapeError("recall: query and gallery widths differ");
  }
  for (const Index t : true_gallery_row) {
    if (t < 0 || t >= gallery.rows()) {
      throw std::out_of_range("recall: true gallery row " + std::to_string(t) + " out of range");
    }
  }

  Vector gallery_norms;
  if (distance == Distance::cosine) gallery_norms = gallery.rowwise().norm();

  std::vector<Index> ranks(true_gallery_row.size());
  Vector scores(gallery.rows());
  for (Index q = 0; q < queries.rows(); ++q) {
    const auto query = queries.row(q);
    if (distance == Distance::sqeuclidean) {
      for (Index g = 0; g < gallery.rows(); ++g) scores(g) = squared_distance(query, gallery.row(g));
    } else {
      const double qn = query.norm();
      for (Index g = 0; g < gallery.rows(); ++g) {
        const double denom = qn * gallery_norms(g);
        scores(g) = 1.0 - (denom > 0.0 ? query.dot(gallery.row(g)) / denom : 0.0);
      }
    }
    const Index truth = true_gallery_row[static_cast<std::size_t>(q)];
    const double target = scores(truth);
    Index ahead = 0;
    for (Index g = 0; g < gallery.rows(); ++g) {
      if (scores(g) < target || (scores(g) == target && g < truth)) ++ahead;
    }
    ranks[static_cast<std::size_t>(q)] = ahead;
  }
  return ranks;
}

double recall_at_k(const Matrix& queries, const Matrix& gallery, std::span<const Index> true_gallery_row, Index k,
                   Distance distance) {
  const Index ks[] = {k};
  check_ks(ks, gallery.rows());
  const auto ranks = true_match_ranks(queries, gallery, true_gallery_row, distance);
  if (ranks.empty()) return 0.0;
  Index hits = 0;
  for (const Index r : ranks) hits += r < k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double RecallReport::recall(const std::string& lang, Index k) const {
  for (const auto& r : rows) {
    if (r.lang == lang && r.k == k) return r.recall;
  }
  throw std::out_of_range("no recall row for " + lang + " @" + std::to_string(k));
}

std::vector<std::string> RecallReport::languages() const {
  std::vector<std::string> langs;
  for (const auto& r : rows) {
    if (langs.empty() || langs.back() != r.lang) langs.push_back(r.lang);
  }
  return langs;
}

RecallReport evaluate_zero_shot(const Checkpoint& ckpt, std::span<const LabeledSet> texts,
                                const LabeledSet& images, std::span<const Index> ks, Distance distance) {
  RecallReport report;
  report.distance = distance;
  report.ks = ks.empty() ? std::vector<Index>{1, 5, 10} : std::vector<Index>(ks.begin(), ks.end());
  check_ks(report.ks, images.embeddings.count());
  if (images.embeddings.dim() != ckpt.config.output_dim()) {
    throw ShapeError("evaluate: gallery width " + std::to_string(images.embeddings.dim()) +
                     " != projection output " + std::to_string(ckpt.config.output_dim()));
  }
  report.checkpoint_id = checkpoint_fingerprint(ckpt);

  struct LanguageQueries {
    std::string lang;
    std::vector<RowVector> rows;
    std::vector<Index> truth;
  };
  std::vector<LanguageQueries> groups;

  for (const auto& set : texts) {
    for (const auto& rec : set.manifest) {
      if (rec.row >= set.embeddings.count()) {
        throw DataError("text record '" + rec.id + "' row " + std::to_string(rec.row) + " out of range");
      }
    }
    const auto truth = resolve_image_rows(set.manifest, images.manifest, images.embeddings.count());
    const EmbeddingSet projected = project_texts(ckpt, set.embeddings);
    for (std::size_t r = 0; r < set.manifest.size(); ++r) {
      const auto& rec = set.manifest[r];
      auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.lang == rec.lang; });
      if (it == groups.end()) it = groups.insert(groups.end(), LanguageQueries{rec.lang, {}, {}});
      it->rows.push_back(projected.data.row(rec.row));
      it->truth.push_back(truth[r]);
    }
  }

  for (const auto& g : groups) {
    Matrix queries(static_cast<Index>(g.rows.size()), images.embeddings.dim());
    for (std::size_t i = 0; i < g.rows.size(); ++i) queries.row(static_cast<Index>(i)) = g.rows[i];
    const auto ranks = true_match_ranks(queries, images.embeddings.data, g.truth, distance);
    for (const Index k : report.ks) {
      Index hits = 0;
      for (const Index r : ranks) hits += r < k ? 1 : 0;
      const double recall = ranks.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(ranks.size());
      report.rows.push_back({g.lang, k, recall, static_cast<Index>(ranks.size()), images.embeddings.count()});
    }
  }
  return report;
}

std::string report_to_json(const RecallReport& report) {
  ordered_json rows = ordered_json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"lang", r.lang},
                    {"k", r.k},
                    {"recall", r.recall},
                    {"query_count", r.query_count},
                    {"gallery_size", r.gallery_size}});
  }
  const ordered_json j = {{"checkpoint", report.checkpoint_id},
                          {"distance", to_string(report.distance)},
                          {"k", report.ks},
                          {"results", rows}};
  return j.dump(2) + "\n";
}

std::string report_to_csv(const RecallReport& report) {
  std::string out = "lang,k,recall,query_count,gallery_size\n";
  for (const auto& r : report.rows) {
    out += csv_field(r.lang) + "," + std::to_string(r.k) + "," + format_double(r.recall) + "," +
           std::to_string(r.query_count) + "," + std::to_string(r.gallery_size) + "\n";
  }
  return out;
}

// Languages across, one line per K, recall in percent.
std::string report_to_table(const RecallReport& report) {
  const auto langs = report.languages();
  std::ostringstream out;
  char buf[32];
  out << "       ";
  for (const auto& l : langs) {
    std::snprintf(buf, sizeof buf, "%8s", l.c_str());
    out << buf;
  }
  out << '\n';
  for (const Index k : report.ks) {
    std::snprintf(buf, sizeof buf, "R@%-5lld", static_cast<long long>(k));
    out << buf;
    for (const auto& l : langs) {
      std::snprintf(buf, sizeof buf, "%8.1f", 100.0 * report.recall(l, k));
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

AlignmentEntry alignment_score(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("alignment_score: sets must have equal counts and widths");
  }
  const Index n = a.rows();
  if (n < 2) throw std::invalid_argument("alignment_score: at least two rows required");

  // sum_{i,j} |a_i - b_j|^2 = n sum|a_i|^2 + n sum|b_j|^2 - 2 (sum a_i).(sum b_j),
  // evaluated after a common shift to keep the cancellation small.
  const RowVector center = (a.colwise().sum() + b.colwise().sum()) / (2.0 * static_cast<double>(n));
  const Matrix ac = a.rowwise() - center;
  const Matrix bc = b.rowwise() - center;

  double paired = 0.0;
  for (Index i = 0; i < n; ++i) paired += squared_distance(ac.row(i), bc.row(i));
  const double nd = static_cast<double>(n);
  const double all_pairs = nd * ac.squaredNorm() + nd * bc.squaredNorm() -
                           2.0 * ac.colwise().sum().dot(bc.colwise().sum());
  const double mismatched = std::max(0.0, all_pairs - paired);

  AlignmentEntry e;
  e.paired_mean = paired / nd;
  e.mismatched_mean = mismatched / (nd * (nd - 1.0));
  if (e.mismatched_mean > 0.0) {
    e.ratio = e.paired_mean / e.mismatched_mean;
  } else {
    e.ratio = e.paired_mean == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  }
  return e;
}

std::string alignment_to_json(std::span<const AlignmentEntry> entries) {
  ordered_json arr = ordered_json::array();
  for (const auto& e : entries) {
    arr.push_back({{"lang_a", e.lang_a},
                   {"lang_b", e.lang_b},
                   {"paired_mean", e.paired_mean},
                   {"mismatched_mean", e.mismatched_mean},
                   {"ratio", e.ratio}});
  }
  return ordered_json{{"alignment", arr}}.dump(2) + "\n";
}

std::string alignment_to_csv(std::span<const AlignmentEntry> entries) {
  std::string out = "lang_a,lang_b,paired_mean,mismatched_mean,ratio\n";
  for (const auto& e : entries) {
    out += csv_field(e.lang_a) + "," + csv_field(e.lang_b) + "," + format_double(e.paired_mean) + "," +
           format_double(e.mismatched_mean) + "," + format_double(e.ratio) + "\n";
  }
  return out;
}

std::string format_projection_csv(const Checkpoint& ckpt, std::span<const LabeledSet> texts) {
  const Index dim = ckpt.config.output_dim();
  std::string out = "id,lang";
  for (Index j = 0; j < dim; ++j) out += ",v" + std::to_string(j);
  out += '\n';
  for (const auto& set : texts) {
    const EmbeddingSet projected = project_texts(ckpt, set.embeddings);
    for (const auto& rec : set.manifest) {
      if (rec.row >= projected.count()) {
        throw DataError("text record '" + rec.id + "' row " + std::to_string(rec.row) + " out of range");
      }
      out += csv_field(rec.id) + "," + csv_field(rec.lang);
      for (Index j = 0; j < dim; ++j) out += "," + format_double(projected.data(rec.row, j), "%.9e");
      out += '\n';
    }
  }
  return out;
}

void export_projection_csv(const Checkpoint& ckpt, std::span<const LabeledSet> texts,
                           const std::filesystem::path& path) {
  write_file_bytes(path, format_projection_csv(ckpt, texts));
}

ProjectionTable parse_projection_csv(std::string_view text) {
  std::vector<std::vector<std::string>> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    if (end > pos) lines.push_back(split_csv_line(text.substr(pos, end - pos)));
    pos = end + 1;
  }
  if (lines.empty() || lines[0].size() < 2) throw DataError("projection csv: missing header");
  const auto dim = static_cast<Index>(lines[0].size() - 2);
  ProjectionTable table;
  table.values.resize(static_cast<Index>(lines.size() - 1), dim);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto& f = lines[r];
    if (static_cast<Index>(f.size()) != dim + 2) {
      throw DataError("projection csv: line " + std::to_string(r + 1) + " has wrong column count");
    }
    table.ids.push_back(f[0]);
    table.langs.push_back(f[1]);
    for (Index j = 0; j < dim; ++j) {
      table.values(static_cast<Index>(r - 1), j) = std::stod(f[static_cast<std::size_t>(j + 2)]);
    }
  }
  return table;
}

}  // namespace xret
