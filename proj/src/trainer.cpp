#include "xret/trainer.hpp"

#include <cstdio>
#include <numeric>

namespace xret {

namespace {

constexpr std::uint64_t kTrainStream = 2;
constexpr Index kProjectChunk = 1024;

BatchStep finish_batch(const NetworkWeights& weights, const ProjectionConfig& config, const LossConfig& loss_cfg,
                       const Matrix& images, std::span<const std::string> image_ids, ForwardPass pass) {
  BatchStep step;
  step.mining = mine_hard_negatives(pass.output, images, image_ids);

  const Index n = pass.output.rows();
  TripletBatch triplets;
  triplets.te_an = pass.output;
  triplets.im_p = images;
  triplets.im_n.resize(n, images.cols());
  triplets.te_n.resize(n, pass.output.cols());
  for (Index i = 0; i < n; ++i) {
    const Index neg = step.mining.negative_index[static_cast<std::size_t>(i)];
    triplets.im_n.row(i) = images.row(neg);
    triplets.te_n.row(i) = pass.output.row(neg);
  }
  step.loss = compute_loss(triplets, loss_cfg);

  // te_n rows are outputs of the same pass, so their gradients land on the mined rows.
  Matrix output_grad = step.loss.grad_anchor;
  if (loss_cfg.kind == LossKind::m3l) {
    for (Index i = 0; i < n; ++i) {
      output_grad.row(step.mining.negative_index[static_cast<std::size_t>(i)]) += step.loss.grad_negative.row(i);
    }
  }
  step.grads = backward(weights, config, pass.cache, output_grad);
  return step;
}

Matrix maybe_normalize(Matrix rows, bool normalize) {
  return normalize ? l2_normalize_rows(rows) : rows;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
  if (log_every < 1) throw std::invalid_argument("log_every must be >= 1");
  adam.validate();
  loss.validate();
}

std::string format_loss_log(const LossLog& log) {
  std::string out = "epoch,batch,loss,mean_neg_dist\n";
  char buf[128];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%lld,%.17g,%.17g\n", e.epoch, static_cast<long long>(e.batch), e.loss,
                  e.mean_negative_distance);
    out += buf;
  }
  return out;
}

BatchStep batch_gradients(const NetworkWeights& weights, const ProjectionConfig& config, const LossConfig& loss,
                          const Matrix& texts, const Matrix& images, std::span<const std::string> image_ids,
                          const DropoutMasks& masks) {
  return finish_batch(weights, config, loss, images, image_ids, forward_with_masks(weights, config, texts, masks));
}

TrainResult train(const PairedDataset& dataset, const ProjectionConfig& config, const TrainConfig& train_cfg,
                  const EpochCallback& on_epoch) {
  config.validate();
  train_cfg.validate();
  const auto pair_count = static_cast<Index>(dataset.pairs.size());
  if (pair_count == 0) throw DataError("train: dataset has no pairs");
  if (dataset.text_embeddings.dim() != config.input_dim) {
    throw ShapeError("train: text width " + std::to_string(dataset.text_embeddings.dim()) + " != input_dim " +
                     std::to_string(config.input_dim));
  }
  if (dataset.image_embeddings.dim() != config.output_dim()) {
    throw ShapeError("train: image width " + std::to_string(dataset.image_embeddings.dim()) +
                     " != last block dim " + std::to_string(config.output_dim()));
  }
  if (train_cfg.batch_size > pair_count) {
    throw std::invalid_argument("train: batch_size exceeds the number of pairs");
  }

  TrainResult result;
  Checkpoint& ckpt = result.checkpoint;
  ckpt.config = config;
  ckpt.loss_config = train_cfg.loss;
  ckpt.train_config = train_cfg;
  ckpt.seed = train_cfg.seed;
  ckpt.weights = init_weights(config, train_cfg.seed);

  AdamState adam = AdamState::fresh(ckpt.weights, train_cfg.adam);
  Rng rng(derive_seed(train_cfg.seed, kTrainStream));

  std::vector<std::string> pair_image_ids;
  pair_image_ids.reserve(dataset.pairs.size());
  for (const auto& p : dataset.pairs) pair_image_ids.push_back(dataset.image_id_of.at(p.text_row));

  std::vector<std::size_t> order(dataset.pairs.size());
  const Index batch = train_cfg.batch_size;
  const Index steps_per_epoch = pair_count / batch;
  const Matrix& all_texts = dataset.text_embeddings.data;
  const Matrix& all_images = dataset.image_embeddings.data;

  Matrix texts(batch, config.input_dim);
  Matrix images(batch, config.output_dim());
  std::vector<std::string> ids(static_cast<std::size_t>(batch));

  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span(order));

    for (Index b = 0; b < steps_per_epoch; ++b) {
      for (Index r = 0; r < batch; ++r) {
        const std::size_t idx = order[static_cast<std::size_t>(b * batch + r)];
        const TextImagePair& p = dataset.pairs[idx];
        texts.row(r) = all_texts.row(p.text_row);
        images.row(r) = all_images.row(p.image_row);
        ids[static_cast<std::size_t>(r)] = pair_image_ids[idx];
      }
      ForwardPass pass = forward(ckpt.weights, config, maybe_normalize(texts, train_cfg.normalize_inputs),
                                 Mode::train, rng);
      const BatchStep step = finish_batch(ckpt.weights, config, train_cfg.loss, images, ids, std::move(pass));
      adam_step(adam, ckpt.weights, step.grads.weights);

      if (b % train_cfg.log_every == 0) {
        const auto& d = step.mining.negative_distance;
        const double mean_neg = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
        result.log.push_back({epoch, b, step.loss.loss, mean_neg});
      }
    }
    ckpt.epochs_trained = epoch + 1;
    if (on_epoch) on_epoch(epoch, ckpt);
  }
  return result;
}

EmbeddingSet project_texts(const Checkpoint& ckpt, const EmbeddingSet& texts) {
  if (texts.dim() != ckpt.config.input_dim) {
    throw ShapeError("project_texts: text width " + std::to_string(texts.dim()) + " != checkpoint input_dim " +
                     std::to_string(ckpt.config.input_dim));
  }
  Matrix out(texts.count(), ckpt.config.output_dim());
  for (Index start = 0; start < texts.count(); start += kProjectChunk) {
    const Index rows = std::min(kProjectChunk, texts.count() - start);
    Matrix chunk = maybe_normalize(texts.data.middleRows(start, rows), ckpt.train_config.normalize_inputs);
    out.middleRows(start, rows) = project(ckpt.weights, ckpt.config, chunk);
  }
  return EmbeddingSet(std::move(out));
}

}  // namespace xret
