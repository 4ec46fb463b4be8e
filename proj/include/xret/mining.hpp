#pragma once

#include <span>
#include <string>
#include <vector>

#include "xret/types.hpp"

namespace xret {

struct MiningResult {
  std::vector<Index> negative_index;
  std::vector<double> negative_distance;
};

// For each anchor text i, the batch image closest to it (squared distance)
// among those whose image id differs from anchor i's own. Ties go to the
// lowest batch index.
MiningResult mine_hard_negatives(const Matrix& projected_texts, const Matrix& batch_images,
                                 std::span<const std::string> positive_image_ids);

}  // namespace xret
