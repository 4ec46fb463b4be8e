#include "xret/mining.hpp"

#include <limits>

#include "xret/losses.hpp"

namespace xret {

MiningResult mine_hard_negatives(const Matrix& projected_texts, const Matrix& batch_images,
                                 std::span<const std::string> positive_image_ids) {
  const Index n = projected_texts.rows();
  if (batch_images.rows() != n || static_cast<Index>(positive_image_ids.size()) != n) {
    throw ShapeError("mine_hard_negatives: texts, images and ids must have equal row counts");
  }
  if (projected_texts.cols() != batch_images.cols()) {
    throw ShapeError("mine_hard_negatives: text and image widths differ");
  }

  MiningResult result;
  result.negative_index.resize(static_cast<std::size_t>(n));
  result.negative_distance.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const auto& own_id = positive_image_ids[static_cast<std::size_t>(i)];
    Index best = -1;
    double best_distance = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < n; ++j) {
      if (positive_image_ids[static_cast<std::size_t>(j)] == own_id) continue;
      const double d = squared_distance(projected_texts.row(i), batch_images.row(j));
      if (best < 0 || d < best_distance) {
        best = j;
        best_distance = d;
      }
    }
    if (best < 0) {
      throw DataError("mine_hard_negatives: anchor " + std::to_string(i) +
                      " has no negative (every batch image shares id '" + own_id + "')");
    }
    result.negative_index[static_cast<std::size_t>(i)] = best;
    result.negative_distance[static_cast<std::size_t>(i)] = best_distance;
  }
  return result;
}

}  // namespace xret
