// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "data/dataset.hpp"
#include "nn/model.hpp"
#include "nn/optimizer.hpp"
#include "nn/task.hpp"

namespace mtr::nn {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  SgdConfig sgd;
  /// Applies default_schedule() when true.
  bool lr_drop = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double learning_rate = 0.0;
};

/// Minibatch index lists for one epoch: a permutation of [0, n) seeded by
/// (seed, epoch), cut into consecutive chunks; the last chunk may be short.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch);

/// Optimizer state with the config's SGD settings and schedule.
OptimizerState make_optimizer(const TrainConfig& config);

/// Forward, backward and one SGD step on the weighted loss; returns the loss.
double train_step(SharedBackboneModel& model, const Tensor& images, const data::TargetMap& targets,
                  const WeightMap& weights, OptimizerState& state);

using EpochCallback = std::function<void(const EpochStats&)>;

/// Plain (clean) training of the tasks named in `weights`.
std::vector<EpochStats> train(SharedBackboneModel& model, const data::Dataset& dataset, const WeightMap& weights,
                              const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace mtr::nn
