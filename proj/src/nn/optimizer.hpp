// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tensor/tape.hpp"

namespace mtr::nn {

struct SgdConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// SGD with momentum and L2 weight decay. Velocity buffers are keyed by
/// parameter name and created on first use.
struct OptimizerState {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::map<std::string, Tensor, std::less<>> velocity;
  /// (epoch, lr): from `epoch` on, the learning rate is `lr`. Sorted by epoch.
  std::vector<std::pair<std::size_t, double>> schedule;

  static OptimizerState from_config(const SgdConfig& config);

  /// Applies the schedule entry in effect at `epoch`, if any.
  void begin_epoch(std::size_t epoch);
};

/// One 10x drop at 90% of `epochs` (none when that lands on epoch 0).
std::vector<std::pair<std::size_t, double>> default_schedule(double learning_rate, std::size_t epochs);

/// For every parameter with a gradient:
///   v <- momentum v + g + weight_decay theta;  theta <- theta - lr v
/// then zeroes the gradient. Parameters without a gradient are left alone
/// (their head took no part in the loss). Throws InvalidArgument when no
/// parameter has a gradient.
void sgd_step(std::span<ad::Parameter* const> params, OptimizerState& state);

}  // namespace mtr::nn
