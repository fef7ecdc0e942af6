// SPDX-License-Identifier: Apache-2.0
#include "nn/train.hpp"

#include <algorithm>
#include <numeric>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "nn/objective.hpp"

namespace mtr::nn {

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("epochs must be positive");
  if (batch_size < 1) throw InvalidArgument("batch size must be positive");
  (void)OptimizerState::from_config(sgd);
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch) {
  if (batch_size < 1) throw InvalidArgument("batch size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(derive_seed(seed, "shuffle"), static_cast<std::uint64_t>(epoch)));
  // Fisher-Yates with an explicit draw so the order is identical across
  // standard library implementations.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < n; b += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch_size)));
  }
  return batches;
}

OptimizerState make_optimizer(const TrainConfig& config) {
  OptimizerState state = OptimizerState::from_config(config.sgd);
  if (config.lr_drop) state.schedule = default_schedule(config.sgd.learning_rate, config.epochs);
  return state;
}

double train_step(SharedBackboneModel& model, const Tensor& images, const data::TargetMap& targets,
                  const WeightMap& weights, OptimizerState& state) {
  ad::Tape tape(ad::GradMode::kAll);
  const ad::Var x = tape.constant(images);
  const ad::Var loss = multitask_loss(model, tape, x, targets, weights);
  tape.backward(loss);
  auto params = model.parameters();
  collect_gradients(tape, params);
  sgd_step(params, state);
  return loss.value()[0];
}

std::vector<EpochStats> train(SharedBackboneModel& model, const data::Dataset& dataset, const WeightMap& weights,
                              const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (dataset.size() == 0) throw InvalidArgument("training dataset is empty");
  OptimizerState state = make_optimizer(config);
  model.zero_grad();
  std::vector<EpochStats> history;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    state.begin_epoch(epoch);
    double total = 0.0;
    std::size_t seen = 0;
    for (const auto& idx : epoch_batches(dataset.size(), config.batch_size, config.seed, epoch)) {
      const data::Batch batch = dataset.batch(idx);
      const double loss = train_step(model, batch.images, select_targets(batch.targets, weights), weights, state);
      total += loss * static_cast<double>(idx.size());
      seen += idx.size();
    }
    EpochStats stats{epoch, total / static_cast<double>(seen), state.learning_rate};
    history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return history;
}

}  // namespace mtr::nn
