#include <doctest.h>

#include <random>

#include "xret/synthgen.hpp"
#include "xret/trainer.hpp"
#include "test_util.hpp"

using namespace xret;
using namespace xret::testing;

namespace {

std::vector<std::string> distinct_ids(Index n) {
  std::vector<std::string> ids;
  for (Index i = 0; i < n; ++i) ids.push_back("img" + std::to_string(i));
  return ids;
}

PairedDataset synthetic_pairs(Index items, Index text_dim, Index image_dim, std::uint64_t seed) {
  SynthConfig sc;
  sc.n_items = items;
  sc.text_dim = text_dim;
  sc.image_dim = image_dim;
  sc.latent_dim = 4;
  sc.sigma = 0.05;
  sc.seed = seed;
  SynthData d = generate(sc);
  return join_pairs(std::move(d.train.texts[0].embeddings), d.train.texts[0].manifest,
                    std::move(d.train.images.embeddings), d.train.images.manifest, "en");
}

}  // namespace

TEST_CASE("batch gradients route through anchor and negative-text rows") {
  std::mt19937_64 gen(77);
  std::uniform_int_distribution<int> dim(3, 12), blocks(1, 3);
  int configs = 0;
  for (int attempt = 0; attempt < 200 && configs < 20; ++attempt) {
    const Index in = dim(gen);
    std::vector<Index> dims;
    const int nb = blocks(gen);
    for (int k = 0; k < nb; ++k) dims.push_back(dim(gen));
    const auto cfg = ProjectionConfig::stacked(in, dims, std::vector<double>(dims.size(), 0.0));
    LossConfig loss;
    if (configs % 2) {
      loss.kind = LossKind::patr;
      loss.eta = 2.0;
    }
    auto w = init_weights(cfg, gen());
    for (auto& b : w.blocks) b.bias = random_matrix(gen, b.bias.size(), 1, 0.1);
    const Index n = 5;
    const Matrix texts = random_matrix(gen, n, in);
    const Matrix images = random_matrix(gen, n, cfg.output_dim(), 0.5).cwiseAbs();
    std::vector<std::string> ids = distinct_ids(n);
    ids[4] = ids[3];  // shared image exercises the id exclusion

    const BatchStep step = batch_gradients(w, cfg, loss, texts, images, ids);
    bool near_kink = false;
    const auto pass = forward_with_masks(w, cfg, texts, {});
    for (const auto& b : pass.cache.blocks) near_kink |= b.activated.cwiseAbs().minCoeff() < 1e-4;
    for (const double d : step.mining.negative_distance) near_kink |= std::abs(loss.eta - d) < 1e-4;
    if (near_kink) continue;
    ++configs;

    auto objective = [&](const NetworkWeights& ww) { return batch_gradients(ww, cfg, loss, texts, images, ids).loss.loss; };
    for (std::size_t k = 0; k < w.blocks.size(); ++k) {
      for (Index p = 0; p < w.blocks[k].weight.size(); ++p) {
        auto wp = w, wm = w;
        wp.blocks[k].weight.data()[p] += kFdStep;
        wm.blocks[k].weight.data()[p] -= kFdStep;
        const double fd = (objective(wp) - objective(wm)) / (2 * kFdStep);
        CHECK(relative_error(step.grads.weights.blocks[k].weight.data()[p], fd, step.loss.loss) < 1e-4);
      }
      for (Index p = 0; p < w.blocks[k].bias.size(); ++p) {
        auto wp = w, wm = w;
        wp.blocks[k].bias(p) += kFdStep;
        wm.blocks[k].bias(p) -= kFdStep;
        const double fd = (objective(wp) - objective(wm)) / (2 * kFdStep);
        CHECK(relative_error(step.grads.weights.blocks[k].bias(p), fd, step.loss.loss) < 1e-4);
      }
    }
  }
  CHECK(configs == 20);
}

namespace {

double epoch_mean(const LossLog& log, int epoch) {
  double sum = 0.0;
  int n = 0;
  for (const auto& e : log) {
    if (e.epoch == epoch) {
      sum += e.loss;
      ++n;
    }
  }
  return sum / n;
}

TrainConfig small_train(int epochs, Index batch, std::uint64_t seed) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch;
  t.seed = seed;
  return t;
}

}  // namespace

TEST_CASE("zero epochs leave the initial weights") {
  const auto data = synthetic_pairs(10, 6, 4, 1);
  const auto cfg = ProjectionConfig::stacked(6, {8, 4}, {0.2, 0.0});
  const auto r = train(data, cfg, small_train(0, 4, 42));
  CHECK(r.log.empty());
  CHECK(r.checkpoint.weights == init_weights(cfg, 42));
  CHECK(r.checkpoint.epochs_trained == 0);
}

TEST_CASE("one log entry per full batch") {
  const auto data = synthetic_pairs(23, 6, 4, 2);
  const auto cfg = ProjectionConfig::stacked(6, {8, 4}, {0.2, 0.0});
  for (const Index batch : {2, 5, 7, 23}) {
    const auto r = train(data, cfg, small_train(3, batch, 7));
    CHECK(r.log.size() == static_cast<std::size_t>(3 * (23 / batch)));
    for (std::size_t i = 0; i < r.log.size(); ++i) {
      CHECK(r.log[i].epoch == static_cast<int>(i / (23 / batch)));
      CHECK(r.log[i].batch == static_cast<Index>(i % (23 / batch)));
    }
  }
  auto sparse = small_train(2, 2, 7);
  sparse.log_every = 4;
  CHECK(train(data, cfg, sparse).log.size() == 2 * 3);  // batches 0, 4, 8 of 11
}

TEST_CASE("overfits a tiny dataset") {
  const auto data = synthetic_pairs(8, 16, 8, 3);
  const auto cfg = ProjectionConfig::stacked(16, {64, 8}, {0.0, 0.0});
  const auto r = train(data, cfg, small_train(300, 4, 11));
  const double first = epoch_mean(r.log, 0), last = epoch_mean(r.log, 299);
  CHECK(last < 0.1 * first);
}

TEST_CASE("training is reproducible and leaves images untouched") {
  const auto data = synthetic_pairs(30, 8, 6, 4);
  const Matrix images_before = data.image_embeddings.data;
  const auto cfg = ProjectionConfig::stacked(8, {12, 6}, {0.2, 0.1});
  auto t = small_train(4, 6, 99);
  const auto a = train(data, cfg, t);
  const auto b = train(data, cfg, t);
  CHECK(a.checkpoint == b.checkpoint);
  CHECK(a.log == b.log);
  CHECK(format_loss_log(a.log) == format_loss_log(b.log));
  CHECK(encode_checkpoint(a.checkpoint) == encode_checkpoint(b.checkpoint));
  CHECK(data.image_embeddings.data == images_before);

  t.seed = 100;
  CHECK_FALSE(train(data, cfg, t).checkpoint.weights == a.checkpoint.weights);
}

TEST_CASE("checkpoint records the run") {
  const auto data = synthetic_pairs(12, 8, 6, 5);
  const auto cfg = ProjectionConfig::stacked(8, {6}, {0.0});
  auto t = small_train(3, 4, 5);
  t.loss.kind = LossKind::patr;
  t.loss.eta = 3.0;
  std::vector<int> seen;
  std::vector<Checkpoint> snapshots;
  const auto r = train(data, cfg, t, [&](int epoch, const Checkpoint& c) {
    seen.push_back(epoch);
    snapshots.push_back(c);
  });
  CHECK(seen == std::vector<int>{0, 1, 2});
  CHECK(snapshots.back() == r.checkpoint);
  CHECK(snapshots[0].epochs_trained == 1);
  CHECK(r.checkpoint.epochs_trained == 3);
  CHECK(r.checkpoint.train_config == t);
  CHECK(r.checkpoint.loss_config == t.loss);
  CHECK(r.checkpoint.config == cfg);
  CHECK(r.checkpoint.seed == 5);
}

TEST_CASE("training rejects bad configurations") {
  const auto data = synthetic_pairs(10, 6, 4, 6);
  const auto cfg = ProjectionConfig::stacked(6, {4}, {0.0});
  CHECK_THROWS(train(data, cfg, small_train(1, 1, 0)));
  CHECK_THROWS(train(data, cfg, small_train(1, 11, 0)));
  CHECK_THROWS(train(data, cfg, small_train(-1, 4, 0)));
  CHECK_THROWS(train(data, ProjectionConfig::stacked(6, {5}, {0.0}), small_train(1, 4, 0)));
  CHECK_THROWS(train(data, ProjectionConfig::stacked(7, {4}, {0.0}), small_train(1, 4, 0)));
  PairedDataset empty = data;
  empty.pairs.clear();
  CHECK_THROWS(train(empty, cfg, small_train(1, 4, 0)));
}

TEST_CASE("project_texts") {
  std::mt19937_64 gen(8);
  Checkpoint c;
  c.config = ProjectionConfig{};
  c.weights = init_weights(c.config, 3);
  const EmbeddingSet texts(random_matrix(gen, 3, 1024));
  const auto a = project_texts(c, texts);
  CHECK(a.dim() == 2048);
  CHECK(a.count() == 3);
  CHECK(project_texts(c, texts).data == a.data);
  CHECK(project_texts(c, EmbeddingSet(Matrix(0, 1024))).count() == 0);
  CHECK_THROWS_AS(project_texts(c, EmbeddingSet(Matrix::Zero(2, 1023))), ShapeError);

  // Chunked projection matches one whole-batch eval pass.
  Checkpoint small;
  small.config = ProjectionConfig::stacked(5, {7, 3}, {0.5, 0.0});
  small.weights = init_weights(small.config, 4);
  const Matrix many = random_matrix(gen, 2500, 5);
  CHECK(project_texts(small, EmbeddingSet(many)).data == project(small.weights, small.config, many));

  small.train_config.normalize_inputs = true;
  CHECK(project_texts(small, EmbeddingSet(many)).data ==
        project(small.weights, small.config, l2_normalize_rows(many)));
}
