#include "xret/projection_net.hpp"

#include <cmath>
#include <string>

namespace xret {

namespace {

constexpr std::uint64_t kInitStream = 1;

void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

Matrix draw_mask(Index rows, Index cols, double rate, Rng& rng) {
  Matrix mask(rows, cols);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      mask(i, j) = rng.uniform() >= rate ? keep_scale : 0.0;
    }
  }
  return mask;
}

// Shared body of the three forward entry points. `masks` supplies dropout
// multipliers per block (may be empty per block); `cache` may be null.
Matrix run_blocks(const NetworkWeights& weights, const ProjectionConfig& config,
                  const Matrix& batch, const DropoutMasks& masks, ForwardCache* cache) {
  weights.check_against(config);
  require_shape(batch.cols() == config.input_dim,
                "forward: batch width " + std::to_string(batch.cols()) + " != input_dim " +
                    std::to_string(config.input_dim));
  if (cache) cache->blocks.assign(config.num_blocks(), BlockCache{});

  Matrix x = batch;
  for (std::size_t k = 0; k < config.num_blocks(); ++k) {
    const LinearBlock& block = weights.blocks[k];
    Matrix activated = x * block.weight.transpose();
    activated.rowwise() += block.bias.transpose();

    const bool has_mask = k < masks.size() && masks[k].size() > 0;
    if (has_mask) {
      require_shape(masks[k].rows() == activated.rows() && masks[k].cols() == activated.cols(),
                    "forward: dropout mask shape mismatch in block " + std::to_string(k));
      activated.array() *= masks[k].array();
    }

    Matrix rectified = config.relu_flags[k] ? Matrix(activated.cwiseMax(0.0)) : activated;

    Matrix out;
    Vector norms;
    if (config.l2norm_flags[k]) {
      out.resize(rectified.rows(), rectified.cols());
      norms.resize(rectified.rows());
      for (Index i = 0; i < rectified.rows(); ++i) {
        norms(i) = rectified.row(i).norm();
        out.row(i) = l2_normalize(rectified.row(i));
      }
    } else {
      out = rectified;
    }

    if (cache) {
      BlockCache& c = cache->blocks[k];
      c.input = std::move(x);
      if (has_mask) c.mask = masks[k];
      c.activated = std::move(activated);
      c.rectified = std::move(rectified);
      c.norms = std::move(norms);
    }
    x = std::move(out);
  }
  return x;
}

}  // namespace

ProjectionConfig ProjectionConfig::stacked(Index input_dim, std::vector<Index> dims,
                                           std::vector<double> dropout) {
  ProjectionConfig config;
  config.input_dim = input_dim;
  const std::size_t n = dims.size();
  config.block_dims = std::move(dims);
  config.dropout_rates = std::move(dropout);
  config.relu_flags.assign(n, true);
  config.l2norm_flags.assign(n, true);
  if (n > 0) config.l2norm_flags.back() = false;
  return config;
}

void ProjectionConfig::validate() const {
  if (input_dim <= 0) throw std::invalid_argument("input_dim must be positive");
  const std::size_t n = block_dims.size();
  if (n == 0) throw std::invalid_argument("at least one block is required");
  if (dropout_rates.size() != n || l2norm_flags.size() != n || relu_flags.size() != n) {
    throw std::invalid_argument("block_dims, dropout_rates, l2norm_flags and relu_flags must have equal length");
  }
  for (std::size_t k = 0; k < n; ++k) {
    if (block_dims[k] <= 0) throw std::invalid_argument("block dims must be positive");
    if (!(dropout_rates[k] >= 0.0 && dropout_rates[k] < 1.0)) {
      throw std::invalid_argument("dropout rates must lie in [0, 1)");
    }
  }
}

NetworkWeights NetworkWeights::zeros_like() const {
  NetworkWeights z;
  z.blocks.reserve(blocks.size());
  for (const auto& b : blocks) {
    z.blocks.push_back({Matrix::Zero(b.weight.rows(), b.weight.cols()), Vector::Zero(b.bias.size())});
  }
  return z;
}

Index NetworkWeights::parameter_count() const {
  Index n = 0;
  for (const auto& b : blocks) n += b.weight.size() + b.bias.size();
  return n;
}

void NetworkWeights::check_against(const ProjectionConfig& config) const {
  require_shape(blocks.size() == config.num_blocks(), "weights: block count does not match config");
  Index in = config.input_dim;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const Index out = config.block_dims[k];
    require_shape(blocks[k].weight.rows() == out && blocks[k].weight.cols() == in &&
                      blocks[k].bias.size() == out,
                  "weights: block " + std::to_string(k) + " shape does not chain");
    in = out;
  }
}

bool operator==(const NetworkWeights& a, const NetworkWeights& b) {
  if (a.blocks.size() != b.blocks.size()) return false;
  for (std::size_t k = 0; k < a.blocks.size(); ++k) {
    const auto& x = a.blocks[k];
    const auto& y = b.blocks[k];
    if (x.weight.rows() != y.weight.rows() || x.weight.cols() != y.weight.cols() ||
        x.bias.size() != y.bias.size()) {
      return false;
    }
    if (x.weight != y.weight || x.bias != y.bias) return false;
  }
  return true;
}

DropoutMasks ForwardCache::masks() const {
  DropoutMasks out;
  out.reserve(blocks.size());
  for (const auto& b : blocks) out.push_back(b.mask);
  return out;
}

Matrix l2_normalize_rows(const Matrix& rows) {
  Matrix out(rows.rows(), rows.cols());
  for (Index i = 0; i < rows.rows(); ++i) out.row(i) = l2_normalize(rows.row(i));
  return out;
}

NetworkWeights init_weights(const ProjectionConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, kInitStream));
  NetworkWeights w;
  Index in = config.input_dim;
  for (const Index out : config.block_dims) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in));
    LinearBlock block{Matrix(out, in), Vector::Zero(out)};
    for (Index i = 0; i < out; ++i) {
      for (Index j = 0; j < in; ++j) block.weight(i, j) = rng.uniform(-limit, limit);
    }
    w.blocks.push_back(std::move(block));
    in = out;
  }
  return w;
}

ForwardPass forward(const NetworkWeights& weights, const ProjectionConfig& config,
                    const Matrix& batch, Mode mode, Rng& rng) {
  DropoutMasks masks(config.num_blocks());
  if (mode == Mode::train) {
    for (std::size_t k = 0; k < config.num_blocks(); ++k) {
      if (config.dropout_rates[k] > 0.0) {
        masks[k] = draw_mask(batch.rows(), config.block_dims[k], config.dropout_rates[k], rng);
      }
    }
  }
  ForwardPass pass;
  pass.output = run_blocks(weights, config, batch, masks, &pass.cache);
  return pass;
}

ForwardPass forward_with_masks(const NetworkWeights& weights, const ProjectionConfig& config,
                               const Matrix& batch, const DropoutMasks& masks) {
  require_shape(masks.empty() || masks.size() == config.num_blocks(),
                "forward: one dropout mask slot per block expected");
  ForwardPass pass;
  pass.output = run_blocks(weights, config, batch, masks, &pass.cache);
  return pass;
}

Matrix project(const NetworkWeights& weights, const ProjectionConfig& config, const Matrix& batch) {
  return run_blocks(weights, config, batch, {}, nullptr);
}

Gradients backward(const NetworkWeights& weights, const ProjectionConfig& config,
                   const ForwardCache& cache, const Matrix& output_grad) {
  weights.check_against(config);
  require_shape(cache.blocks.size() == config.num_blocks(), "backward: cache/config block count mismatch");
  const Index batch = cache.blocks.front().input.rows();
  require_shape(output_grad.rows() == batch && output_grad.cols() == config.output_dim(),
                "backward: output gradient shape mismatch");

  Gradients grads;
  grads.weights.blocks.resize(config.num_blocks());
  Matrix g = output_grad;
  for (std::size_t k = config.num_blocks(); k-- > 0;) {
    const BlockCache& c = cache.blocks[k];
    require_shape(c.activated.rows() == batch && c.activated.cols() == config.block_dims[k],
                  "backward: cache does not match weights in block " + std::to_string(k));

    if (config.l2norm_flags[k]) {
      // d/dr [r / (s + eps)] with s = ||r||; a zero row has zero output and zero gradient.
      for (Index i = 0; i < batch; ++i) {
        const double s = c.norms(i);
        if (s == 0.0) {
          g.row(i).setZero();
          continue;
        }
        const double denom = s + kNormEps;
        const double dot = c.rectified.row(i).dot(g.row(i));
        g.row(i) = (g.row(i) - c.rectified.row(i) * (dot / (s * denom))) / denom;
      }
    }
    if (config.relu_flags[k]) {
      g.array() *= (c.activated.array() > 0.0).cast<double>();
    }
    if (c.mask.size() > 0) {
      g.array() *= c.mask.array();
    }

    LinearBlock& gb = grads.weights.blocks[k];
    gb.weight = g.transpose() * c.input;
    gb.bias = g.colwise().sum().transpose();
    g = g * weights.blocks[k].weight;
  }
  grads.input = std::move(g);
  return grads;
}

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("beta2 must lie in [0, 1)");
  if (!(eps >= 0.0)) throw std::invalid_argument("adam eps must be non-negative");
}

AdamState AdamState::fresh(const NetworkWeights& weights, const AdamConfig& hyper) {
  return AdamState{hyper, weights.zeros_like(), weights.zeros_like(), 0};
}

void adam_step(AdamState& state, NetworkWeights& weights, const NetworkWeights& grads) {
  const auto n = weights.blocks.size();
  require_shape(grads.blocks.size() == n && state.m.blocks.size() == n && state.v.blocks.size() == n,
                "adam_step: block count mismatch");
  for (std::size_t k = 0; k < n; ++k) {
    const auto& w = weights.blocks[k];
    for (const NetworkWeights* other : {&grads, static_cast<const NetworkWeights*>(&state.m), static_cast<const NetworkWeights*>(&state.v)}) {
      const auto& o = other->blocks[k];
      require_shape(o.weight.rows() == w.weight.rows() && o.weight.cols() == w.weight.cols() &&
                        o.bias.size() == w.bias.size(),
                    "adam_step: shape mismatch in block " + std::to_string(k));
    }
  }

  const AdamConfig& h = state.hyper;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double m_correction = 1.0 - std::pow(h.beta1, t);
  const double v_correction = 1.0 - std::pow(h.beta2, t);

  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = h.beta1 * m + (1.0 - h.beta1) * g;
    v = h.beta2 * v + (1.0 - h.beta2) * g.cwiseProduct(g);
    param.array() -= h.lr * (m.array() / m_correction) /
                     ((v.array() / v_correction).sqrt() + h.eps);
  };
  for (std::size_t k = 0; k < n; ++k) {
    update(weights.blocks[k].weight, state.m.blocks[k].weight, state.v.blocks[k].weight,
           grads.blocks[k].weight);
    update(weights.blocks[k].bias, state.m.blocks[k].bias, state.v.blocks[k].bias,
           grads.blocks[k].bias);
  }
}

}  // namespace xret
