#pragma once

#include <cstdint>
#include <vector>

#include "xret/rng.hpp"
#include "xret/types.hpp"

namespace xret {

// Architecture of the text-side head. Block k computes
//   x <- l2norm?(relu?(dropout(x W_k^T + b_k)))
struct ProjectionConfig {
  Index input_dim = 1024;
  std::vector<Index> block_dims{1024, 2048, 2048};
  std::vector<double> dropout_rates{0.2, 0.1, 0.0};
  std::vector<bool> l2norm_flags{true, true, false};
  std::vector<bool> relu_flags{true, true, true};

  // Default flags for the given dims: ReLU everywhere, l2-norm on all but the last block.
  static ProjectionConfig stacked(Index input_dim, std::vector<Index> dims,
                                  std::vector<double> dropout);

  std::size_t num_blocks() const { return block_dims.size(); }
  Index output_dim() const { return block_dims.empty() ? input_dim : block_dims.back(); }
  void validate() const;

  bool operator==(const ProjectionConfig&) const = default;
};

struct LinearBlock {
  Matrix weight;  // out x in
  Vector bias;    // out
};

// One LinearBlock per block; also used to carry gradients and Adam moments.
struct NetworkWeights {
  std::vector<LinearBlock> blocks;

  NetworkWeights zeros_like() const;
  Index parameter_count() const;
  void check_against(const ProjectionConfig& config) const;
};

bool operator==(const NetworkWeights& a, const NetworkWeights& b);

enum class Mode { train, eval };

// Per-block dropout multipliers (0 or 1/keep). An empty matrix means no dropout.
using DropoutMasks = std::vector<Matrix>;

struct BlockCache {
  Matrix input;      // block input
  Matrix mask;       // dropout multipliers, empty when inactive
  Matrix activated;  // dropout(x W^T + b), the ReLU argument
  Matrix rectified;  // after ReLU, before normalization
  Vector norms;      // row norms of `rectified` (only when l2-normalized)
};

struct ForwardCache {
  std::vector<BlockCache> blocks;

  DropoutMasks masks() const;
};

struct ForwardPass {
  Matrix output;
  ForwardCache cache;
};

struct Gradients {
  NetworkWeights weights;
  Matrix input;
};

inline constexpr double kNormEps = 1e-12;

// v / (||v|| + 1e-12); zero maps to zero.
template <typename Derived>
typename Derived::PlainObject l2_normalize(const Eigen::MatrixBase<Derived>& v) {
  return v / (v.norm() + kNormEps);
}

// Row-wise l2_normalize.
Matrix l2_normalize_rows(const Matrix& rows);

// Uniform in +-sqrt(6 / fan_in), zero biases.
NetworkWeights init_weights(const ProjectionConfig& config, std::uint64_t seed);

ForwardPass forward(const NetworkWeights& weights, const ProjectionConfig& config,
                    const Matrix& batch, Mode mode, Rng& rng);

// Train-mode forward that replays previously drawn masks.
ForwardPass forward_with_masks(const NetworkWeights& weights, const ProjectionConfig& config,
                               const Matrix& batch, const DropoutMasks& masks);

// Eval-mode forward without a cache.
Matrix project(const NetworkWeights& weights, const ProjectionConfig& config, const Matrix& batch);

Gradients backward(const NetworkWeights& weights, const ProjectionConfig& config,
                   const ForwardCache& cache, const Matrix& output_grad);

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.99;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  bool operator==(const AdamConfig&) const = default;
};

struct AdamState {
  AdamConfig hyper;
  NetworkWeights m;
  NetworkWeights v;
  std::int64_t t = 0;

  static AdamState fresh(const NetworkWeights& weights, const AdamConfig& hyper);
};

void adam_step(AdamState& state, NetworkWeights& weights, const NetworkWeights& grads);

}  // namespace xret
