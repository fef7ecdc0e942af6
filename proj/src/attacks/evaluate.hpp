// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "attacks/attacks.hpp"
#include "data/dataset.hpp"
#include "nn/model.hpp"
#include "nn/task.hpp"

namespace mtr::attacks {

/// What an attack maximises: one task's loss, or a weighted joint loss.
struct AttackObjective {
  enum class Mode { kSingleTask, kMultiTask };

  Mode mode = Mode::kSingleTask;
  std::string task;        // kSingleTask
  nn::WeightMap weights;   // kMultiTask

  static AttackObjective single(std::string_view task);
  static AttackObjective multi(nn::WeightMap weights);

  void validate(const nn::SharedBackboneModel& model) const;
  std::string describe() const;
};

/// "miou" for cross-entropy tasks, "abs_error" for l1, "mse" otherwise.
std::string metric_name(const nn::TaskSpec& spec);
bool higher_is_better(std::string_view metric);

struct TaskMetric {
  std::string task;
  std::string metric;
  double clean = 0.0;
  double attacked = 0.0;
};

struct AttackEvaluation {
  std::vector<TaskMetric> rows;
  /// Random-start seed used for each example, in dataset order.
  std::vector<std::uint64_t> example_seeds;

  const TaskMetric& row(std::string_view task) const;
};

/// Dataset-level metric of each task in `tasks` on `images` (dataset targets).
std::vector<double> score_tasks(const nn::SharedBackboneModel& model, const data::Dataset& dataset,
                                const Tensor& images, const std::vector<std::string>& tasks);

/// Clean metric per task.
std::vector<TaskMetric> evaluate_clean(const nn::SharedBackboneModel& model, const data::Dataset& dataset,
                                       const std::vector<std::string>& tasks);

/// Attacks every example of `dataset` (example i uses seed derive_seed(config.seed, i))
/// and scores `tasks` on clean and attacked inputs. Examples are attacked in
/// chunks of `chunk` rows; each row's perturbation depends only on its own
/// loss gradient sign, so the chunk size does not change the result.
AttackEvaluation evaluate_under_attack(const nn::SharedBackboneModel& model, const data::Dataset& dataset,
                                       const AttackObjective& objective, const AttackConfig& config,
                                       const std::vector<std::string>& tasks, std::size_t chunk = 16);

/// The attacked inputs themselves, [N, C, H, W].
Tensor attack_dataset(const nn::SharedBackboneModel& model, const data::Dataset& dataset,
                      const AttackObjective& objective, const AttackConfig& config, std::size_t chunk = 16);

}  // namespace mtr::attacks
