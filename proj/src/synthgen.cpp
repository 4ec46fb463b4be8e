#include "xret/synthgen.hpp"

#include <cmath>
#include <unordered_set>

#include <json.hpp>

#include "xret/rng.hpp"

namespace xret {

namespace {

Matrix gaussian(Index rows, Index cols, double scale, Rng& rng) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

Vector gaussian_vector(Index n, double scale, Rng& rng) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

double inv_sqrt(Index n) { return 1.0 / std::sqrt(static_cast<double>(n)); }

std::string image_id(Index item) { return "img" + std::to_string(item); }

void init_split(SynthSplit& split, const SynthConfig& cfg, Index items) {
  split.texts.clear();
  for (std::size_t l = 0; l < cfg.languages.size(); ++l) {
    split.texts.push_back({EmbeddingSet(Matrix(items, cfg.text_dim)), {}});
  }
  split.images = {EmbeddingSet(Matrix(items, cfg.image_dim)), {}};
}

}  // namespace

void SynthConfig::validate() const {
  if (n_items <= 0 || latent_dim <= 0 || text_dim <= 0 || image_dim <= 0) {
    throw std::invalid_argument("synth: n_items and all dims must be positive");
  }
  if (n_holdout < 0) throw std::invalid_argument("synth: n_holdout must be >= 0");
  if (!(gamma >= 0.0) || !(sigma >= 0.0)) throw std::invalid_argument("synth: gamma and sigma must be >= 0");
  if (languages.empty()) throw std::invalid_argument("synth: at least one language is required");
  std::unordered_set<std::string> seen;
  for (const auto& l : languages) {
    if (l.empty() || !seen.insert(l).second) throw std::invalid_argument("synth: languages must be distinct and non-empty");
  }
}

SynthData generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const double text_scale = inv_sqrt(cfg.latent_dim * cfg.text_dim);
  const double image_scale = inv_sqrt(cfg.latent_dim * cfg.image_dim);
  const Matrix text_map = gaussian(cfg.text_dim, cfg.latent_dim, text_scale, rng);
  const Matrix image_map = gaussian(cfg.image_dim, cfg.latent_dim, image_scale, rng);
  std::vector<Matrix> lang_maps;
  for (std::size_t l = 0; l < cfg.languages.size(); ++l) {
    const Matrix perturbation = gaussian(cfg.text_dim, cfg.latent_dim, text_scale, rng);
    lang_maps.push_back(text_map + cfg.gamma * perturbation);
  }

  SynthData data;
  init_split(data.train, cfg, cfg.n_items);
  init_split(data.holdout, cfg, cfg.n_holdout);

  for (Index item = 0; item < cfg.n_items + cfg.n_holdout; ++item) {
    const bool train = item < cfg.n_items;
    SynthSplit& split = train ? data.train : data.holdout;
    const Index row = train ? item : item - cfg.n_items;

    const Vector z = gaussian_vector(cfg.latent_dim, 1.0, rng);
    for (std::size_t l = 0; l < cfg.languages.size(); ++l) {
      const Vector noise = gaussian_vector(cfg.text_dim, inv_sqrt(cfg.text_dim), rng);
      split.texts[l].embeddings.data.row(row) = (lang_maps[l] * z + cfg.sigma * noise).transpose();
      const auto& lang = cfg.languages[l];
      split.texts[l].manifest.push_back(
          {row, lang + "_" + std::to_string(item), lang, image_id(item), std::nullopt});
    }
    const Vector noise = gaussian_vector(cfg.image_dim, inv_sqrt(cfg.image_dim), rng);
    split.images.embeddings.data.row(row) = ((image_map * z).cwiseMax(0.0) + cfg.sigma * noise).transpose();
    split.images.manifest.push_back({row, image_id(item), "img", std::nullopt, std::nullopt});
  }
  return data;
}

std::string synth_config_to_json(const SynthConfig& cfg) {
  const nlohmann::ordered_json j = {{"n_items", cfg.n_items},       {"n_holdout", cfg.n_holdout},
                                    {"latent_dim", cfg.latent_dim}, {"text_dim", cfg.text_dim},
                                    {"image_dim", cfg.image_dim},   {"languages", cfg.languages},
                                    {"gamma", cfg.gamma},           {"sigma", cfg.sigma},
                                    {"seed", cfg.seed}};
  return j.dump(2) + "\n";
}

}  // namespace xret
