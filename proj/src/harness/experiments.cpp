// SPDX-License-Identifier: Apache-2.0
#include "harness/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "data/scene.hpp"
#include "metrics/metrics.hpp"
#include "nn/loss.hpp"
#include "vulnerability/vulnerability.hpp"

namespace mtr::harness {

namespace {

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

data::Dataset head(const data::Dataset& d, std::size_t n) {
  std::vector<std::size_t> idx(std::min(n, d.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return d.subset(idx);
}

/// Thread-safe wrapper around an optional logger.
class SyncLog {
 public:
  explicit SyncLog(const Logger& log) : log_(log) {}
  void operator()(const std::string& line) {
    if (!log_) return;
    std::lock_guard lock(mu_);
    log_(line);
  }

 private:
  const Logger& log_;
  std::mutex mu_;
};

struct MainScore {
  double clean = 0.0;
  double attacked = 0.0;
};

MainScore score_main(const nn::SharedBackboneModel& model, const data::Dataset& test, const std::string& main,
                     const attacks::AttackConfig& attack) {
  const auto r = attacks::evaluate_under_attack(model, test, attacks::AttackObjective::single(main), attack, {main});
  return {r.rows[0].clean, r.rows[0].attacked};
}

}  // namespace

SplitData make_data(const ExperimentSetup& setup) {
  return {data::generate_dataset(setup.train_size, setup.data_seed, setup.scene, "train"),
          data::generate_dataset(setup.test_size, setup.data_seed, setup.scene, "test")};
}

nn::ModelConfig model_config(const ExperimentSetup& setup, const std::vector<std::string>& tasks) {
  nn::ModelConfig c;
  c.in_channels = 1;
  c.height = setup.scene.height;
  c.width = setup.scene.width;
  c.trunk_width = setup.model.trunk_width;
  c.trunk_depth = setup.model.trunk_depth;
  c.head_width = setup.model.head_width;
  for (const std::string& t : tasks) {
    c.tasks.push_back(nn::toy_task_spec(t, c.height, c.width, setup.scene.num_classes, 1.0, setup.model.head_depth));
  }
  return c;
}

nn::SharedBackboneModel train_model(const ExperimentSetup& setup, const data::Dataset& train,
                                    const nn::WeightMap& weights) {
  std::vector<std::string> tasks;
  for (const auto& [name, w] : weights) tasks.push_back(name);
  nn::ModelConfig mc = model_config(setup, tasks);
  for (nn::TaskSpec& t : mc.tasks) t.weight = weights.find(t.name)->second;
  nn::SharedBackboneModel model = nn::SharedBackboneModel::build(mc, setup.model_seed);
  nn::train(model, train, weights, setup.train);
  return model;
}

double relative_improvement(const std::string& metric, double value, double baseline) {
  const double denom = std::abs(baseline) > 0.0 ? std::abs(baseline) : 1.0;
  return attacks::higher_is_better(metric) ? (value - baseline) / denom : (baseline - value) / denom;
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& job) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        {
          std::lock_guard lock(mu);
          if (error) return;
        }
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------

AttackMatrixConfig::AttackMatrixConfig() {
  attack.kind = attacks::AttackKind::kPgd;
  attack.epsilon = 4.0;
  attack.random_start = true;
}

AttackMatrixResult run_attack_matrix(const AttackMatrixConfig& config, const Logger& log) {
  if (config.tasks.size() < 2) throw InvalidArgument("attack matrix needs at least two tasks");
  if (config.lambdas.empty()) throw InvalidArgument("attack matrix needs at least one lambda_a");
  for (double l : config.lambdas) {
    if (!(l >= 0.0)) throw InvalidArgument("lambda_a must be nonnegative");
  }
  config.attack.validate();
  SyncLog out(log);
  const SplitData data = make_data(config.setup);

  struct Job {
    std::string main;
    std::string aux;  // empty for a baseline
    double lambda = 0.0;
  };
  std::vector<Job> jobs;
  for (const std::string& t : config.tasks) jobs.push_back({t, "", 0.0});
  for (const std::string& m : config.tasks)
    for (const std::string& a : config.tasks) {
      if (m == a) continue;
      for (double l : config.lambdas) jobs.push_back({m, a, l});
    }

  std::vector<MatrixCandidate> results(jobs.size());
  parallel_for(jobs.size(), config.workers, [&](std::size_t i) {
    const Job& job = jobs[i];
    nn::WeightMap weights{{job.main, 1.0}};
    if (!job.aux.empty()) weights[job.aux] = job.lambda;
    MatrixCandidate c;
    c.lambda = job.lambda;
    try {
      const nn::SharedBackboneModel model = train_model(config.setup, data.train, weights);
      const MainScore s = score_main(model, data.test, job.main, config.attack);
      c.clean = s.clean;
      c.attacked = s.attacked;
    } catch (const NumericError& e) {
      c.diverged = true;
      c.note = e.what();
    }
    results[i] = c;
    out("attack-matrix: main=" + job.main + (job.aux.empty() ? " baseline" : " aux=" + job.aux) +
        (c.diverged ? " diverged" : " clean=" + std::to_string(c.clean) + " attacked=" + std::to_string(c.attacked)));
  });

  AttackMatrixResult res;
  std::size_t j = 0;
  for (const std::string& t : config.tasks) {
    nn::TaskSpec spec = nn::toy_task_spec(t, config.setup.scene.height, config.setup.scene.width,
                                          config.setup.scene.num_classes);
    const MatrixCandidate& c = results[j++];
    res.baselines.push_back({t, attacks::metric_name(spec), c.clean, c.attacked, c.diverged, c.note});
  }
  auto baseline = [&](const std::string& t) -> const MatrixBaseline& {
    for (const MatrixBaseline& b : res.baselines) {
      if (b.task == t) return b;
    }
    throw InvalidArgument("no baseline for " + t);
  };
  std::size_t improved = 0;
  double abs_change = 0.0;
  double change = 0.0;
  for (const std::string& m : config.tasks)
    for (const std::string& a : config.tasks) {
      if (m == a) continue;
      MatrixCell cell;
      cell.main = m;
      cell.aux = a;
      const MatrixBaseline& b = baseline(m);
      cell.metric = b.metric;
      cell.baseline_clean = b.clean;
      cell.baseline_attacked = b.attacked;
      for (std::size_t k = 0; k < config.lambdas.size(); ++k) cell.candidates.push_back(results[j++]);
      const MatrixCandidate* best = nullptr;
      for (const MatrixCandidate& c : cell.candidates) {
        if (c.diverged) continue;
        if (!best || relative_improvement(cell.metric, c.attacked, best->attacked) > 0.0) best = &c;
      }
      if (!best || b.diverged) {
        cell.diverged = true;
        cell.note = b.diverged ? "baseline diverged" : "every lambda_a diverged";
      } else {
        cell.lambda = best->lambda;
        cell.clean = best->clean;
        cell.attacked = best->attacked;
        cell.attacked_gain = relative_improvement(cell.metric, cell.attacked, b.attacked);
        cell.clean_change = (cell.clean - b.clean) / (std::abs(b.clean) > 0.0 ? std::abs(b.clean) : 1.0);
        cell.improved = cell.attacked_gain > 0.0;
        ++res.scored;
        improved += cell.improved ? 1 : 0;
        abs_change += std::abs(cell.clean_change);
        change += cell.clean_change;
      }
      res.cells.push_back(cell);
    }
  if (res.scored > 0) {
    res.fraction_improved = static_cast<double>(improved) / static_cast<double>(res.scored);
    res.mean_abs_clean_change = abs_change / static_cast<double>(res.scored);
    res.mean_clean_change = change / static_cast<double>(res.scored);
  }
  return res;
}

// ---------------------------------------------------------------------------

AdvCompareConfig::AdvCompareConfig() {
  train_attack.kind = attacks::AttackKind::kPgd;
  train_attack.epsilon = 4.0;
  train_attack.random_start = true;
  eval_attack.kind = attacks::AttackKind::kPgd;
  eval_attack.epsilon = 4.0;
  eval_attack.random_start = true;
}

AdvCompareResult run_advtrain_comparison(const AdvCompareConfig& config, const Logger& log) {
  if (config.seeds.empty()) throw InvalidArgument("adversarial-training comparison needs at least one seed");
  const SplitData data = make_data(config.setup);
  std::vector<std::string> all{config.main_task};
  all.insert(all.end(), config.aux_tasks.begin(), config.aux_tasks.end());
  const std::string metric = attacks::metric_name(
      nn::toy_task_spec(config.main_task, config.setup.scene.height, config.setup.scene.width,
                        config.setup.scene.num_classes));
  AdvCompareResult res;
  for (std::uint64_t seed : config.seeds) {
    ExperimentSetup setup = config.setup;
    setup.model_seed = seed;
    setup.train.seed = seed;
    advtrain::AdvTrainConfig ac;
    ac.train = setup.train;
    ac.attack = config.train_attack;
    ac.lambda_a = config.lambda_a;
    auto run = [&](const advtrain::TaskCombinationSet& set, const std::vector<std::string>& tasks) {
      nn::SharedBackboneModel model = nn::SharedBackboneModel::build(model_config(setup, tasks), setup.model_seed);
      advtrain::adversarial_train(model, data.train, set, ac);
      return model;
    };
    const nn::SharedBackboneModel single = run(advtrain::TaskCombinationSet::single(config.main_task),
                                               {config.main_task});
    const nn::SharedBackboneModel multi =
        run(advtrain::TaskCombinationSet::with_auxiliary(config.main_task, config.aux_tasks, config.lambda_a), all);
    attacks::AttackConfig ea = config.eval_attack;
    ea.seed = derive_seed(config.eval_attack.seed, seed);
    const MainScore s = score_main(single, data.test, config.main_task, ea);
    const MainScore m = score_main(multi, data.test, config.main_task, ea);
    AdvCompareRow row;
    row.seed = seed;
    row.metric = metric;
    row.single_clean = s.clean;
    row.single_attacked = s.attacked;
    row.multi_clean = m.clean;
    row.multi_attacked = m.attacked;
    row.multi_wins = relative_improvement(metric, m.attacked, s.attacked) > 0.0;
    if (config.robust_suite) {
      row.single_suite = advtrain::robust_eval(single, data.test, config.main_task, config.eval_attack.epsilon, seed);
      row.multi_suite = advtrain::robust_eval(multi, data.test, config.main_task, config.eval_attack.epsilon, seed);
    }
    res.wins += row.multi_wins ? 1 : 0;
    if (log) {
      log("advtrain-compare: seed=" + std::to_string(seed) + " single attacked=" + std::to_string(s.attacked) +
          " multi attacked=" + std::to_string(m.attacked) + (row.multi_wins ? " (multi wins)" : ""));
    }
    res.rows.push_back(std::move(row));
  }
  return res;
}

// ---------------------------------------------------------------------------

SubsampleResult run_subsample(const nn::SharedBackboneModel& model, const data::Dataset& test,
                              const SubsampleConfig& config) {
  const nn::TaskSpec& spec = model.task(config.task);
  const std::size_t pixels = spec.output_shape[1] * spec.output_shape[2];
  if (config.ks.empty()) throw InvalidArgument("subsample curve needs at least one k");
  for (std::size_t i = 0; i < config.ks.size(); ++i) {
    if (config.ks[i] < 1 || config.ks[i] > pixels) {
      throw InvalidArgument("k=" + std::to_string(config.ks[i]) + " exceeds the output size " +
                            std::to_string(pixels));
    }
    if (i > 0 && config.ks[i] <= config.ks[i - 1]) throw InvalidArgument("k list must be ascending");
  }
  if (config.repeats < 1) throw InvalidArgument("repeats must be at least 1");
  const data::Dataset sample = head(test, config.examples);
  if (sample.size() == 0) throw InvalidArgument("subsample curve needs at least one example");
  auto it = sample.targets.find(config.task);
  if (it == sample.targets.end()) throw InvalidArgument("dataset has no target for task '" + config.task + "'");

  SubsampleResult res;
  res.ks = config.ks;
  const bool seg = spec.loss == nn::LossKind::kPixelCrossEntropy;
  if (config.attack) res.attacked_metric_name = seg ? "pixel_accuracy" : attacks::metric_name(spec);
  for (std::size_t k : config.ks) {
    vuln::CompensatedSum norm_acc;
    vuln::CompensatedSum metric_acc;
    for (std::size_t i = 0; i < sample.size(); ++i) {
      const data::Batch ex = sample.example(i);
      const Tensor& target = ex.targets.find(config.task)->second;
      Rng rng(derive_seed(derive_seed(config.seed, static_cast<std::uint64_t>(k)), i));
      for (std::size_t r = 0; r < config.repeats; ++r) {
        std::vector<std::size_t> idx = vuln::sample_pixels(pixels, k, rng);
        const ad::InputLoss loss = vuln::pixel_subset_loss(model, target, config.task, idx);
        norm_acc.add(l2_norm(ad::grad_wrt_input(loss, ex.images).data()));
        if (!config.attack) continue;
        attacks::AttackConfig ac = *config.attack;
        ac.seed = derive_seed(derive_seed(ac.seed, static_cast<std::uint64_t>(k)), i * config.repeats + r);
        const Tensor adv = attacks::run_attack(loss, ex.images, ac);
        const Tensor pred = nn::predict(model, adv, config.task);
        double m = 0.0;
        if (seg) {
          const auto cls = metrics::argmax_classes(pred);
          const auto truth = metrics::class_indices(target, spec.channels());
          for (std::size_t p : idx) m += cls[p] == truth[p] ? 1.0 : 0.0;
        } else {
          for (std::size_t p : idx) {
            const double d = pred[p] - target[p];
            m += spec.loss == nn::LossKind::kL1 ? std::abs(d) : d * d;
          }
        }
        metric_acc.add(m / static_cast<double>(idx.size()));
      }
    }
    const double denom = static_cast<double>(sample.size() * config.repeats);
    res.grad_norms.push_back(norm_acc.value() / denom);
    if (config.attack) res.attacked_metric.push_back(metric_acc.value() / denom);
  }
  if (res.ks.size() >= 2) {
    std::vector<double> kd(res.ks.begin(), res.ks.end());
    res.spearman = vuln::spearman(kd, res.grad_norms);
  }
  return res;
}

// ---------------------------------------------------------------------------

TheoryCheckResult run_theory_check(const TheoryCheckConfig& config) {
  if (config.tasks.empty() || config.rhos.empty()) throw InvalidArgument("theory check grid is empty");
  TheoryCheckResult res;
  const double sigma = std::sqrt(config.variance);
  for (std::size_t m : config.tasks) {
    for (std::size_t ri = 0; ri < config.rhos.size(); ++ri) {
      const double rho = config.rhos[ri];
      data::GradientSandboxSpec spec;
      spec.dimension = config.dimension;
      spec.tasks = m;
      spec.variance = config.variance;
      spec.rho = rho;
      spec.samples = config.samples;
      spec.seed = derive_seed(derive_seed(config.seed, static_cast<std::uint64_t>(m)), static_cast<std::uint64_t>(ri));
      try {
        spec.validate();
      } catch (const InvalidArgument& e) {
        res.warnings.push_back("skipping M=" + std::to_string(m) + " rho=" + std::to_string(rho) + ": " + e.what());
        continue;
      }
      if (!(config.variance > 0.0)) {
        res.warnings.push_back("skipping M=" + std::to_string(m) + ": variance must be positive for ratios");
        continue;
      }
      data::GradientSandbox sandbox(spec);
      const std::size_t d = spec.dimension;
      std::vector<double> buf(m * d);
      std::vector<double> r(d);
      std::vector<vuln::CompensatedSum> moments(m * m);
      vuln::CompensatedSum joint;
      for (std::size_t s = 0; s < spec.samples; ++s) {
        sandbox.next(buf);
        std::fill(r.begin(), r.end(), 0.0);
        for (std::size_t t = 0; t < m; ++t)
          for (std::size_t k = 0; k < d; ++k) r[k] += buf[t * d + k];
        for (double& v : r) v /= static_cast<double>(m);
        joint.add(dot(r, r));
        for (std::size_t a = 0; a < m; ++a)
          for (std::size_t b = 0; b <= a; ++b) {
            moments[a * m + b].add(dot(std::span<const double>(buf).subspan(a * d, d),
                                       std::span<const double>(buf).subspan(b * d, d)));
          }
      }
      std::vector<double> c(m * m);
      for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = 0; b <= a; ++b) {
          c[a * m + b] = c[b * m + a] = moments[a * m + b].value() / static_cast<double>(spec.samples);
        }
      TheoryRow row;
      row.tasks = m;
      row.rho = rho;
      row.empirical = std::sqrt(joint.value() / static_cast<double>(spec.samples)) / sigma;
      const double md = static_cast<double>(m);
      row.predicted = std::sqrt((1.0 + (md - 1.0) * rho) / md);
      row.uncorrelated = vuln::uncorrelated_prediction(m);
      row.rel_error = std::abs(row.empirical - row.predicted) / row.predicted;
      row.matrix_form = vuln::joint_norm_prediction(c, m);
      res.max_rel_error = std::max(res.max_rel_error, row.rel_error);
      res.rows.push_back(row);
    }
  }
  return res;
}

// ---------------------------------------------------------------------------

std::vector<SweepCell> run_sweep(const SweepConfig& config, const Logger& log) {
  if (config.task_sets.empty()) throw InvalidArgument("sweep needs at least one task set");
  for (const auto& ts : config.task_sets) {
    if (ts.empty()) throw InvalidArgument("sweep task sets must be nonempty");
  }
  SyncLog out(log);
  const SplitData data = make_data(config.setup);
  const data::Dataset vuln_sample = head(data.test, config.vuln_examples);
  std::vector<SweepCell> cells(config.task_sets.size());
  parallel_for(config.task_sets.size(), config.workers, [&](std::size_t i) {
    const std::vector<std::string>& tasks = config.task_sets[i];
    nn::WeightMap weights;
    for (const std::string& t : tasks) weights[t] = 1.0 / static_cast<double>(tasks.size());
    const nn::SharedBackboneModel model = train_model(config.setup, data.train, weights);
    SweepCell cell;
    cell.tasks = tasks;
    const vuln::VulnerabilityReport rep = vuln::vulnerability_report(model, vuln_sample, tasks);
    cell.joint_norm = rep.joint_norm;
    cell.predicted_ratio = rep.predicted_ratio;
    cell.predicted_ratio_uncorrelated = rep.predicted_ratio_uncorrelated;
    cell.task_norms = rep.task_norms;
    for (double eps : config.epsilons) {
      attacks::AttackConfig ac = config.attack;
      ac.epsilon = eps;
      const auto r = attacks::evaluate_under_attack(model, data.test, attacks::AttackObjective::multi(weights), ac,
                                                    tasks);
      for (const auto& row : r.rows) cell.attacked.push_back({eps, row.task, row.metric, row.clean, row.attacked});
    }
    out("sweep: tasks=" + join(tasks, "+") + " joint_norm=" + std::to_string(cell.joint_norm));
    cells[i] = std::move(cell);
  });
  return cells;
}

}  // namespace mtr::harness
