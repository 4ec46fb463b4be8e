#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xret/data_io.hpp"
#include "xret/losses.hpp"
#include "xret/mining.hpp"
#include "xret/projection_net.hpp"
#include "xret/train_config.hpp"

namespace xret {

struct LossLogEntry {
  int epoch = 0;
  Index batch = 0;
  double loss = 0.0;
  double mean_negative_distance = 0.0;

  bool operator==(const LossLogEntry&) const = default;
};

using LossLog = std::vector<LossLogEntry>;

// CSV with header `epoch,batch,loss,mean_neg_dist`.
std::string format_loss_log(const LossLog& log);

struct BatchStep {
  LossResult loss;
  MiningResult mining;
  Gradients grads;
};

// One training objective evaluation on a mini-batch: project the texts once,
// mine negatives on those projections, score the triplets, and backpropagate
// the anchor and negative-text gradients through the shared pass.
// `masks` replays dropout; empty means no dropout.
BatchStep batch_gradients(const NetworkWeights& weights, const ProjectionConfig& config,
                          const LossConfig& loss, const Matrix& texts, const Matrix& images,
                          std::span<const std::string> image_ids, const DropoutMasks& masks = {});

struct TrainResult {
  Checkpoint checkpoint;
  LossLog log;
};

// Called after every completed epoch with its 0-based index (as in the log)
// and the checkpoint as of that epoch.
using EpochCallback = std::function<void(int epoch, const Checkpoint&)>;

TrainResult train(const PairedDataset& dataset, const ProjectionConfig& config, const TrainConfig& train_cfg,
                  const EpochCallback& on_epoch = {});

// Eval-mode projection of every row.
EmbeddingSet project_texts(const Checkpoint& ckpt, const EmbeddingSet& texts);

}  // namespace xret
