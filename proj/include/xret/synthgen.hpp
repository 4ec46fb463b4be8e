#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xret/data_io.hpp"

namespace xret {

// Synthetic multilingual corpus: item i has latent z_i ~ N(0, I);
// its text in language l is (A + gamma * D_l) z_i + sigma * noise and its
// image is relu(B z_i) + sigma * noise. A, D_l and B have N(0, 1/(latent_dim * rows))
// entries and noise coordinates are N(0, 1/dim), so texts have norm about 1,
// images about 1/sqrt(2), and the noise vector about sigma.
struct SynthConfig {
  Index n_items = 1000;
  Index n_holdout = 0;  // extra items generated after the training items
  Index latent_dim = 32;
  Index text_dim = 512;
  Index image_dim = 256;
  std::vector<std::string> languages{"en"};
  double gamma = 0.0;
  double sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SynthConfig&) const = default;
};

struct SynthSplit {
  std::vector<LabeledSet> texts;  // one per language, in cfg.languages order
  LabeledSet images;
};

struct SynthData {
  SynthSplit train;    // items [0, n_items)
  SynthSplit holdout;  // items [n_items, n_items + n_holdout)
};

// Draw order from one Rng(seed): A row-major, B row-major, D_l per language
// in order, then per item: z_i, the text noise of every language in order,
// the image noise.
SynthData generate(const SynthConfig& cfg);

std::string synth_config_to_json(const SynthConfig& cfg);

}  // namespace xret
