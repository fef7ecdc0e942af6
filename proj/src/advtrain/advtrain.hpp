// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "attacks/attacks.hpp"
#include "attacks/evaluate.hpp"
#include "data/dataset.hpp"
#include "nn/model.hpp"
#include "nn/task.hpp"
#include "nn/train.hpp"

namespace mtr::advtrain {

/// Ordered task subsets S_t, each with its loss weights. The main task has
/// weight 1 and each auxiliary task lambda_a.
struct TaskCombinationSet {
  std::string main_task;
  std::vector<nn::WeightMap> subsets;

  /// {{main}}: the single-task baseline.
  static TaskCombinationSet single(const std::string& main_task);
  /// {{main}, {main, aux...}} with auxiliary weight lambda_a.
  static TaskCombinationSet with_auxiliary(const std::string& main_task, const std::vector<std::string>& aux,
                                           double lambda_a);

  void validate() const;
};

struct AdvTrainConfig {
  nn::TrainConfig train;
  /// PGD settings used to build x_adv; steps default to the schedule.
  attacks::AttackConfig attack;
  double lambda_a = 0.01;

  AdvTrainConfig();
  void validate() const;
};

/// One row per (epoch, subset).
struct HistoryRow {
  std::size_t epoch = 0;
  std::size_t subset = 0;
  double clean_loss = 0.0;  // L_t at x, averaged over minibatches
  double adv_loss = 0.0;    // L_t at x_adv, the minimised quantity
  std::size_t attack_gradient_passes = 0;
  std::size_t optimizer_steps = 0;
};

using HistoryCallback = std::function<void(const HistoryRow&)>;

/// Algorithm 1: for each minibatch and each S_t in order, maximise L_t with
/// PGD inside the ball, then take one optimizer step on L_t(x_adv). Each
/// minibatch's attack reads the weights as they are before that S_t's step.
std::vector<HistoryRow> adversarial_train(nn::SharedBackboneModel& model, const data::Dataset& dataset,
                                          const TaskCombinationSet& set, const AdvTrainConfig& config,
                                          const HistoryCallback& on_row = {});

struct RobustRow {
  std::string attack;  // "clean", "pgd50", "pgd100", "mim100"
  std::string task;
  std::string metric;
  double value = 0.0;
};

/// Clean, PGD50, PGD100 and MIM100 single-task attacks on `task` at
/// `epsilon`, scored on `task`.
std::vector<RobustRow> robust_eval(const nn::SharedBackboneModel& model, const data::Dataset& dataset,
                                   const std::string& task, double epsilon = 4.0, std::uint64_t seed = 0,
                                   std::size_t pgd_short = 50, std::size_t pgd_long = 100);

}  // namespace mtr::advtrain
