#pragma once

#include <cstdint>

#include "xret/losses.hpp"
#include "xret/projection_net.hpp"

namespace xret {

struct TrainConfig {
  int epochs = 50;
  Index batch_size = 128;
  AdamConfig adam;  // lr 0.001, beta1 0.99
  std::uint64_t seed = 0;
  LossConfig loss;
  bool normalize_inputs = false;
  int log_every = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

}  // namespace xret
