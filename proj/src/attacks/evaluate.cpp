// SPDX-License-Identifier: Apache-2.0
#include "attacks/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "metrics/metrics.hpp"
#include "nn/objective.hpp"

namespace mtr::attacks {

namespace {

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return idx;
}

/// Running dataset-level score of one task.
class TaskScorer {
 public:
  explicit TaskScorer(const nn::TaskSpec& spec) : spec_(spec), metric_(metric_name(spec)), confusion_(spec.channels()) {}

  void add(const Tensor& pred, const Tensor& target) {
    if (spec_.loss == nn::LossKind::kPixelCrossEntropy) {
      confusion_.add(metrics::argmax_classes(pred), metrics::class_indices(target, spec_.channels()));
      return;
    }
    const auto p = pred.data();
    const auto t = target.data();
    if (p.size() != t.size()) throw ShapeError("task '" + spec_.name + "': prediction and target sizes differ");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = p[i] - t[i];
      sum_ += spec_.loss == nn::LossKind::kL1 ? std::abs(d) : d * d;
    }
    count_ += p.size();
  }

  double value() const {
    if (spec_.loss == nn::LossKind::kPixelCrossEntropy) return confusion_.miou();
    if (count_ == 0) throw InvalidArgument("no pixels scored");
    return sum_ / static_cast<double>(count_);
  }

  const std::string& metric() const { return metric_; }

 private:
  nn::TaskSpec spec_;
  std::string metric_;
  metrics::ConfusionAccumulator confusion_;
  double sum_ = 0.0;
  std::size_t count_ = 0;
};

constexpr std::size_t kScoreChunk = 32;

void check_tasks(const nn::SharedBackboneModel& model, const data::Dataset& dataset,
                 const std::vector<std::string>& tasks) {
  if (tasks.empty()) throw InvalidArgument("no tasks to evaluate");
  for (const std::string& t : tasks) {
    if (!model.has_task(t)) throw InvalidArgument("metric requested for task '" + t + "' which the model lacks");
    if (!dataset.targets.contains(t)) throw InvalidArgument("dataset has no target for task '" + t + "'");
  }
}

}  // namespace

AttackObjective AttackObjective::single(std::string_view task) {
  AttackObjective o;
  o.mode = Mode::kSingleTask;
  o.task = std::string(task);
  return o;
}

AttackObjective AttackObjective::multi(nn::WeightMap weights) {
  AttackObjective o;
  o.mode = Mode::kMultiTask;
  o.weights = std::move(weights);
  return o;
}

void AttackObjective::validate(const nn::SharedBackboneModel& model) const {
  if (mode == Mode::kSingleTask) {
    (void)model.task(task);
    return;
  }
  if (weights.empty()) throw InvalidArgument("multi-task attack objective needs at least one task");
  for (const auto& [name, w] : weights) {
    (void)model.task(name);
    if (!(w >= 0.0)) throw InvalidArgument("task '" + name + "': weight must be nonnegative");
  }
}

std::string AttackObjective::describe() const {
  if (mode == Mode::kSingleTask) return "single:" + task;
  std::string s = "multi:";
  bool first = true;
  for (const auto& [name, w] : weights) {
    if (!first) s += "+";
    s += name;
    first = false;
  }
  return s;
}

std::string metric_name(const nn::TaskSpec& spec) {
  switch (spec.loss) {
    case nn::LossKind::kPixelCrossEntropy:
      return "miou";
    case nn::LossKind::kL1:
      return "abs_error";
    case nn::LossKind::kMse:
      return "mse";
  }
  return "?";
}

bool higher_is_better(std::string_view metric) { return metric == "miou"; }

const TaskMetric& AttackEvaluation::row(std::string_view task) const {
  for (const TaskMetric& r : rows) {
    if (r.task == task) return r;
  }
  throw InvalidArgument("no evaluation row for task '" + std::string(task) + "'");
}

std::vector<double> score_tasks(const nn::SharedBackboneModel& model, const data::Dataset& dataset,
                                const Tensor& images, const std::vector<std::string>& tasks) {
  check_tasks(model, dataset, tasks);
  if (images.shape() != dataset.images.shape()) throw ShapeError("scored images do not match the dataset");
  std::vector<TaskScorer> scorers;
  for (const std::string& t : tasks) scorers.emplace_back(model.task(t));
  const std::size_t n = dataset.size();
  for (std::size_t b = 0; b < n; b += kScoreChunk) {
    const auto idx = range(b, std::min(n, b + kScoreChunk));
    const Tensor x = data::take_rows(images, idx);
    ad::Tape tape(ad::GradMode::kInputsOnly);
    const ad::Var features = model.features(tape, tape.constant(x));
    for (std::size_t k = 0; k < tasks.size(); ++k) {
      const Tensor pred = model.head(tape, tasks[k], features).value();
      scorers[k].add(pred, data::take_rows(dataset.targets.find(tasks[k])->second, idx));
    }
  }
  std::vector<double> out;
  for (const TaskScorer& s : scorers) out.push_back(s.value());
  return out;
}

std::vector<TaskMetric> evaluate_clean(const nn::SharedBackboneModel& model, const data::Dataset& dataset,
                                       const std::vector<std::string>& tasks) {
  const std::vector<double> clean = score_tasks(model, dataset, dataset.images, tasks);
  std::vector<TaskMetric> rows;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    rows.push_back({tasks[k], metric_name(model.task(tasks[k])), clean[k], clean[k]});
  }
  return rows;
}

Tensor attack_dataset(const nn::SharedBackboneModel& model, const data::Dataset& dataset,
                      const AttackObjective& objective, const AttackConfig& config, std::size_t chunk) {
  objective.validate(model);
  config.validate();
  if (chunk < 1) throw InvalidArgument("attack chunk size must be positive");
  const std::size_t n = dataset.size();
  if (n == 0) throw InvalidArgument("cannot attack an empty dataset");
  Tensor out = dataset.images;
  const std::size_t per_row = out.numel() / n;
  for (std::size_t b = 0; b < n; b += chunk) {
    const auto idx = range(b, std::min(n, b + chunk));
    const data::Batch batch = dataset.batch(idx);
    AttackConfig c = config;
    c.row_seeds.clear();
    for (std::size_t i : idx) c.row_seeds.push_back(derive_seed(config.seed, static_cast<std::uint64_t>(i)));
    Tensor adv;
    if (objective.mode == AttackObjective::Mode::kSingleTask) {
      auto it = batch.targets.find(objective.task);
      if (it == batch.targets.end()) throw InvalidArgument("dataset has no target for task '" + objective.task + "'");
      adv = run_attack(nn::task_input_loss(model, it->second, objective.task), batch.images, c);
    } else {
      const data::TargetMap targets = nn::select_targets(batch.targets, objective.weights);
      adv = run_attack(nn::multitask_input_loss(model, targets, objective.weights), batch.images, c);
    }
    std::copy(adv.data().begin(), adv.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * per_row));
  }
  return out;
}

AttackEvaluation evaluate_under_attack(const nn::SharedBackboneModel& model, const data::Dataset& dataset,
                                       const AttackObjective& objective, const AttackConfig& config,
                                       const std::vector<std::string>& tasks, std::size_t chunk) {
  check_tasks(model, dataset, tasks);
  const Tensor adv = attack_dataset(model, dataset, objective, config, chunk);
  const std::vector<double> clean = score_tasks(model, dataset, dataset.images, tasks);
  const std::vector<double> attacked = score_tasks(model, dataset, adv, tasks);
  AttackEvaluation result;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    result.rows.push_back({tasks[k], metric_name(model.task(tasks[k])), clean[k], attacked[k]});
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    result.example_seeds.push_back(derive_seed(config.seed, static_cast<std::uint64_t>(i)));
  }
  return result;
}

}  // namespace mtr::attacks
