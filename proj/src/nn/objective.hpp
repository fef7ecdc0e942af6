// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string_view>

#include "data/dataset.hpp"
#include "nn/model.hpp"
#include "nn/task.hpp"
#include "tensor/tape.hpp"

namespace mtr::nn {

/// Pixel-mean loss of one task's head on input `x` ([N, Cin, H, W]).
ad::Var task_loss(const SharedBackboneModel& model, ad::Tape& tape, const ad::Var& x, const Tensor& target,
                  std::string_view task);

/// sum_c weights[c] * task_loss_c. `targets` and `weights` must name the same
/// nonempty task set; every weight must be nonnegative. The trunk runs once
/// and feeds every head.
ad::Var multitask_loss(const SharedBackboneModel& model, ad::Tape& tape, const ad::Var& x,
                       const data::TargetMap& targets, const WeightMap& weights);

/// Weights {task: 1/M} for each task in `targets`.
WeightMap uniform_weights(const data::TargetMap& targets);

/// `targets` restricted to the tasks named in `weights`.
data::TargetMap select_targets(const data::TargetMap& targets, const WeightMap& weights);

/// Closures x -> loss for input-gradient computations. The model and target
/// tensors are captured by reference and must outlive the closure.
ad::InputLoss task_input_loss(const SharedBackboneModel& model, const Tensor& target, std::string_view task);
ad::InputLoss multitask_input_loss(const SharedBackboneModel& model, const data::TargetMap& targets,
                                   const WeightMap& weights);

}  // namespace mtr::nn
