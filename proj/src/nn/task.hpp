// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>

#include "tensor/tensor.hpp"

namespace mtr::nn {

enum class LossKind { kPixelCrossEntropy, kL1, kMse };

std::string_view to_string(LossKind kind);
LossKind loss_kind_from_string(std::string_view name);

struct TaskSpec {
  std::string name;
  LossKind loss = LossKind::kMse;
  double weight = 1.0;
  /// Per-example head output {channels, H, W}; channels is the class count for
  /// cross-entropy tasks and 1 otherwise.
  Shape output_shape;
  std::size_t head_depth = 2;

  std::size_t channels() const { return output_shape.at(0); }
  void validate() const;
};

/// Loss kinds and output shapes of the toy tasks (seg, depth, edge, keypoint,
/// recon) at the given resolution.
TaskSpec toy_task_spec(std::string_view name, std::size_t height, std::size_t width, std::size_t num_classes,
                       double weight = 1.0, std::size_t head_depth = 2);

/// Task name -> loss weight.
using WeightMap = std::map<std::string, double, std::less<>>;

}  // namespace mtr::nn
