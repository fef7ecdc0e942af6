// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nn/task.hpp"
#include "tensor/tape.hpp"

namespace mtr::nn {

/// Per-pixel loss map [N, H, W] for a head output `pred` [N, C, H, W] and a
/// target [N, H, W]:
///   pixel cross-entropy: -log softmax(pred)[target class]
///   l1: |pred - target|
///   mse: (pred - target)^2
ad::Var per_pixel_loss(const ad::Var& pred, const Tensor& target, const TaskSpec& spec);

/// Mean of per_pixel_loss over every pixel of the batch.
ad::Var pixel_mean_loss(const ad::Var& pred, const Tensor& target, const TaskSpec& spec);

/// Checks a target's shape and, for cross-entropy, its class range.
void validate_target(const Tensor& target, const TaskSpec& spec, std::size_t batch);

}  // namespace mtr::nn
