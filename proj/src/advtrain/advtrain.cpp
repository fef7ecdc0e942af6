// SPDX-License-Identifier: Apache-2.0
#include "advtrain/advtrain.hpp"

#include <set>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "nn/objective.hpp"

namespace mtr::advtrain {

TaskCombinationSet TaskCombinationSet::single(const std::string& main_task) {
  TaskCombinationSet s;
  s.main_task = main_task;
  s.subsets.push_back({{main_task, 1.0}});
  return s;
}

TaskCombinationSet TaskCombinationSet::with_auxiliary(const std::string& main_task,
                                                      const std::vector<std::string>& aux, double lambda_a) {
  if (!(lambda_a >= 0.0)) throw InvalidArgument("lambda_a must be nonnegative");
  TaskCombinationSet s = single(main_task);
  nn::WeightMap joint{{main_task, 1.0}};
  for (const std::string& a : aux) {
    if (a == main_task) throw InvalidArgument("auxiliary task equals the main task");
    joint[a] = lambda_a;
  }
  s.subsets.push_back(std::move(joint));
  return s;
}

void TaskCombinationSet::validate() const {
  if (subsets.empty()) throw InvalidArgument("task combination set is empty");
  for (const nn::WeightMap& s : subsets) {
    if (s.empty()) throw InvalidArgument("task combination set contains an empty subset");
    for (const auto& [name, w] : s) {
      if (!(w >= 0.0)) throw InvalidArgument("task '" + name + "': weight must be nonnegative");
    }
  }
}

AdvTrainConfig::AdvTrainConfig() {
  attack.kind = attacks::AttackKind::kPgd;
  attack.epsilon = 4.0;
  attack.step_size = 1.0;
  attack.random_start = true;
}

void AdvTrainConfig::validate() const {
  train.validate();
  attack.validate();
  if (attack.kind != attacks::AttackKind::kPgd) throw InvalidArgument("adversarial training uses pgd attacks");
  if (!(lambda_a >= 0.0)) throw InvalidArgument("lambda_a must be nonnegative");
}

std::vector<HistoryRow> adversarial_train(nn::SharedBackboneModel& model, const data::Dataset& dataset,
                                          const TaskCombinationSet& set, const AdvTrainConfig& config,
                                          const HistoryCallback& on_row) {
  config.validate();
  set.validate();
  for (const nn::WeightMap& s : set.subsets) {
    for (const auto& [name, w] : s) {
      if (!model.has_task(name)) throw InvalidArgument("task '" + name + "' in the combination set has no head");
      if (!dataset.targets.contains(name)) throw InvalidArgument("dataset has no target for task '" + name + "'");
    }
  }
  if (dataset.size() == 0) throw InvalidArgument("training dataset is empty");

  nn::OptimizerState state = nn::make_optimizer(config.train);
  model.zero_grad();
  const std::size_t steps = config.attack.resolved_steps();
  const std::uint64_t attack_seed = derive_seed(config.train.seed, "attack");
  std::vector<HistoryRow> history;
  std::size_t batch_counter = 0;
  for (std::size_t epoch = 0; epoch < config.train.epochs; ++epoch) {
    state.begin_epoch(epoch);
    std::vector<HistoryRow> rows(set.subsets.size());
    std::size_t seen = 0;
    for (const auto& idx : nn::epoch_batches(dataset.size(), config.train.batch_size, config.train.seed, epoch)) {
      const data::Batch batch = dataset.batch(idx);
      for (std::size_t t = 0; t < set.subsets.size(); ++t) {
        const nn::WeightMap& weights = set.subsets[t];
        const data::TargetMap targets = nn::select_targets(batch.targets, weights);
        const ad::InputLoss objective = nn::multitask_input_loss(model, targets, weights);
        attacks::AttackConfig ac = config.attack;
        ac.seed = derive_seed(derive_seed(attack_seed, static_cast<std::uint64_t>(batch_counter)),
                              static_cast<std::uint64_t>(t));
        Tensor x_adv;
        double clean_loss = 0.0;
        try {
          clean_loss = ad::evaluate_loss(objective, batch.images);
          x_adv = attacks::pgd(objective, batch.images, ac);
        } catch (const NumericError& e) {
          throw NumericError("adversarial training diverged at epoch " + std::to_string(epoch) + ", subset " +
                             std::to_string(t) + ": " + e.what());
        }
        const double adv_loss = nn::train_step(model, x_adv, targets, weights, state);
        const double w = static_cast<double>(idx.size());
        rows[t].clean_loss += clean_loss * w;
        rows[t].adv_loss += adv_loss * w;
        rows[t].attack_gradient_passes += config.attack.epsilon > 0.0 ? steps : 0;
        rows[t].optimizer_steps += 1;
      }
      seen += idx.size();
      ++batch_counter;
    }
    for (std::size_t t = 0; t < rows.size(); ++t) {
      rows[t].epoch = epoch;
      rows[t].subset = t;
      rows[t].clean_loss /= static_cast<double>(seen);
      rows[t].adv_loss /= static_cast<double>(seen);
      history.push_back(rows[t]);
      if (on_row) on_row(rows[t]);
    }
  }
  return history;
}

std::vector<RobustRow> robust_eval(const nn::SharedBackboneModel& model, const data::Dataset& dataset,
                                   const std::string& task, double epsilon, std::uint64_t seed,
                                   std::size_t pgd_short, std::size_t pgd_long) {
  const auto objective = attacks::AttackObjective::single(task);
  std::vector<RobustRow> out;
  const auto clean = attacks::evaluate_clean(model, dataset, {task});
  out.push_back({"clean", task, clean[0].metric, clean[0].clean});
  struct Suite {
    std::string name;
    attacks::AttackKind kind;
    std::size_t steps;
  };
  const Suite suites[] = {{"pgd" + std::to_string(pgd_short), attacks::AttackKind::kPgd, pgd_short},
                          {"pgd" + std::to_string(pgd_long), attacks::AttackKind::kPgd, pgd_long},
                          {"mim" + std::to_string(pgd_long), attacks::AttackKind::kMim, pgd_long}};
  for (const Suite& s : suites) {
    attacks::AttackConfig c;
    c.kind = s.kind;
    c.epsilon = epsilon;
    c.steps = s.steps;
    c.step_size = 1.0;
    c.random_start = s.kind == attacks::AttackKind::kPgd;
    c.seed = derive_seed(seed, s.name);
    const auto r = attacks::evaluate_under_attack(model, dataset, objective, c, {task});
    out.push_back({s.name, task, r.rows[0].metric, r.rows[0].attacked});
  }
  return out;
}

}  // namespace mtr::advtrain
