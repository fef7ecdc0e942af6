// SPDX-License-Identifier: Apache-2.0
#include "nn/objective.hpp"

#include <string>

#include "common/error.hpp"
#include "nn/loss.hpp"
#include "tensor/ops.hpp"

namespace mtr::nn {

ad::Var task_loss(const SharedBackboneModel& model, ad::Tape& tape, const ad::Var& x, const Tensor& target,
                  std::string_view task) {
  const TaskSpec& spec = model.task(task);
  return pixel_mean_loss(model.forward(tape, x, task), target, spec);
}

ad::Var multitask_loss(const SharedBackboneModel& model, ad::Tape& tape, const ad::Var& x,
                       const data::TargetMap& targets, const WeightMap& weights) {
  if (targets.empty()) throw InvalidArgument("multi-task loss needs at least one task");
  if (targets.size() != weights.size()) throw InvalidArgument("targets and weights name different task sets");
  for (const auto& [name, w] : weights) {
    if (!targets.contains(name)) throw InvalidArgument("weight for task '" + name + "' has no target");
    if (!(w >= 0.0)) throw InvalidArgument("task '" + name + "': weight must be nonnegative");
    (void)model.task(name);
  }
  const ad::Var features = model.features(tape, x);
  ad::Var total;
  for (const auto& [name, target] : targets) {
    const ad::Var loss = pixel_mean_loss(model.head(tape, name, features), target, model.task(name));
    const ad::Var term = ad::scale(loss, weights.find(name)->second);
    total = total.valid() ? total + term : term;
  }
  return total;
}

WeightMap uniform_weights(const data::TargetMap& targets) {
  if (targets.empty()) throw InvalidArgument("multi-task loss needs at least one task");
  WeightMap w;
  for (const auto& [name, t] : targets) w[name] = 1.0 / static_cast<double>(targets.size());
  return w;
}

data::TargetMap select_targets(const data::TargetMap& targets, const WeightMap& weights) {
  data::TargetMap out;
  for (const auto& [name, w] : weights) {
    auto it = targets.find(name);
    if (it == targets.end()) throw InvalidArgument("no target for task '" + name + "'");
    out.emplace(name, it->second);
  }
  return out;
}

ad::InputLoss task_input_loss(const SharedBackboneModel& model, const Tensor& target, std::string_view task) {
  std::string name(task);
  (void)model.task(name);
  return [&model, &target, name](ad::Tape& tape, const ad::Var& x) {
    return task_loss(model, tape, x, target, name);
  };
}

ad::InputLoss multitask_input_loss(const SharedBackboneModel& model, const data::TargetMap& targets,
                                   const WeightMap& weights) {
  return [&model, &targets, &weights](ad::Tape& tape, const ad::Var& x) {
    return multitask_loss(model, tape, x, targets, weights);
  };
}

}  // namespace mtr::nn
