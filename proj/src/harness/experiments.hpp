// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "advtrain/advtrain.hpp"
#include "attacks/attacks.hpp"
#include "attacks/evaluate.hpp"
#include "data/dataset.hpp"
#include "data/sandbox.hpp"
#include "nn/model.hpp"
#include "nn/train.hpp"

namespace mtr::harness {

using Logger = std::function<void(const std::string&)>;

struct ModelShape {
  std::size_t trunk_width = 16;
  std::size_t trunk_depth = 3;
  std::size_t head_width = 16;
  std::size_t head_depth = 2;
};

/// Data, architecture and optimisation settings shared by the training
/// experiments.
struct ExperimentSetup {
  data::SceneParams scene;
  std::size_t train_size = 200;
  std::size_t test_size = 100;
  std::uint64_t data_seed = 1;
  ModelShape model;
  nn::TrainConfig train;
  std::uint64_t model_seed = 0;
};

struct SplitData {
  data::Dataset train;
  data::Dataset test;
};

/// Train and test splits from disjoint scene streams.
SplitData make_data(const ExperimentSetup& setup);

/// Toy task heads for `tasks` at the setup's resolution.
nn::ModelConfig model_config(const ExperimentSetup& setup, const std::vector<std::string>& tasks);

/// Builds and trains a model on `weights`; the tasks are the weight keys.
nn::SharedBackboneModel train_model(const ExperimentSetup& setup, const data::Dataset& train,
                                    const nn::WeightMap& weights);

/// Relative gain of `value` over `baseline`, signed so that positive means
/// better for the metric's direction.
double relative_improvement(const std::string& metric, double value, double baseline);

// ---------------------------------------------------------------------------
// Single-task attack matrix over (main, auxiliary) task pairs.

struct AttackMatrixConfig {
  ExperimentSetup setup;
  std::vector<std::string> tasks = {"seg", "depth", "edge", "keypoint", "recon"};
  std::vector<double> lambdas = {0.1, 0.01};
  attacks::AttackConfig attack;  // single-task attack on the main task
  std::size_t workers = 1;

  AttackMatrixConfig();
};

struct MatrixCandidate {
  double lambda = 0.0;
  double clean = 0.0;
  double attacked = 0.0;
  bool diverged = false;
  std::string note;
};

struct MatrixBaseline {
  std::string task;
  std::string metric;
  double clean = 0.0;
  double attacked = 0.0;
  bool diverged = false;
  std::string note;
};

struct MatrixCell {
  std::string main;
  std::string aux;
  std::string metric;
  std::vector<MatrixCandidate> candidates;
  /// Chosen lambda_a: the candidate with the better attacked metric.
  double lambda = 0.0;
  double clean = 0.0;
  double attacked = 0.0;
  double baseline_clean = 0.0;
  double baseline_attacked = 0.0;
  double attacked_gain = 0.0;  // relative_improvement(attacked, baseline_attacked)
  double clean_change = 0.0;   // (clean - baseline_clean) / |baseline_clean|
  bool improved = false;
  bool diverged = false;
  std::string note;
};

struct AttackMatrixResult {
  std::vector<MatrixBaseline> baselines;
  std::vector<MatrixCell> cells;
  std::size_t scored = 0;  // cells without divergence
  double fraction_improved = 0.0;
  double mean_abs_clean_change = 0.0;
  double mean_clean_change = 0.0;
};

AttackMatrixResult run_attack_matrix(const AttackMatrixConfig& config, const Logger& log = {});

// ---------------------------------------------------------------------------
// Multi-task versus single-task adversarial training.

struct AdvCompareConfig {
  ExperimentSetup setup;
  std::string main_task = "seg";
  std::vector<std::string> aux_tasks = {"depth"};
  double lambda_a = 0.01;
  attacks::AttackConfig train_attack;  // PGD used inside training
  attacks::AttackConfig eval_attack;   // single-task attack on the main task
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  /// Also runs the clean/PGD50/PGD100/MIM100 suite for each model.
  bool robust_suite = false;

  AdvCompareConfig();
};

struct AdvCompareRow {
  std::uint64_t seed = 0;
  std::string metric;
  double single_clean = 0.0;
  double single_attacked = 0.0;
  double multi_clean = 0.0;
  double multi_attacked = 0.0;
  bool multi_wins = false;
  std::vector<advtrain::RobustRow> single_suite;
  std::vector<advtrain::RobustRow> multi_suite;
};

struct AdvCompareResult {
  std::vector<AdvCompareRow> rows;
  std::size_t wins = 0;
};

AdvCompareResult run_advtrain_comparison(const AdvCompareConfig& config, const Logger& log = {});

// ---------------------------------------------------------------------------
// Gradient norm against output dimensionality.

struct SubsampleConfig {
  std::string task = "seg";
  std::vector<std::size_t> ks = {1, 4, 16, 64, 256, 1024};
  std::size_t repeats = 20;
  std::size_t examples = 16;  // leading test examples used
  std::uint64_t seed = 0;
  /// Companion curve: metric on the selected pixels under this attack on
  /// the subsampled loss. nullopt skips it.
  std::optional<attacks::AttackConfig> attack;
};

struct SubsampleResult {
  std::vector<std::size_t> ks;
  std::vector<double> grad_norms;
  std::vector<double> attacked_metric;  // empty without an attack
  std::string attacked_metric_name;
  double spearman = 0.0;
};

SubsampleResult run_subsample(const nn::SharedBackboneModel& model, const data::Dataset& test,
                              const SubsampleConfig& config);

// ---------------------------------------------------------------------------
// Closed-form checks on the Gaussian sandbox.

struct TheoryCheckConfig {
  std::vector<std::size_t> tasks = {1, 2, 4, 8, 16};
  std::vector<double> rhos = {0.0, 0.25, 0.5, 1.0};
  std::size_t dimension = 100;
  double variance = 1.0;
  std::size_t samples = 10000;
  std::uint64_t seed = 0;
  double tolerance = 0.05;
};

struct TheoryRow {
  std::size_t tasks = 0;
  double rho = 0.0;
  double empirical = 0.0;    // sqrt(E|R|^2) / sigma
  double predicted = 0.0;    // sqrt((1 + (M-1) rho) / M)
  double uncorrelated = 0.0;  // 1 / sqrt(M)
  double rel_error = 0.0;
  double matrix_form = 0.0;  // joint_norm_prediction of the empirical matrix
};

struct TheoryCheckResult {
  std::vector<TheoryRow> rows;
  std::vector<std::string> warnings;  // skipped grid entries
  double max_rel_error = 0.0;
};

TheoryCheckResult run_theory_check(const TheoryCheckConfig& config);

// ---------------------------------------------------------------------------
// Task-set x epsilon sweep under multi-task attacks.

struct SweepConfig {
  ExperimentSetup setup;
  std::vector<std::vector<std::string>> task_sets = {{"seg"}, {"seg", "depth"}, {"seg", "depth", "edge"}};
  std::vector<double> epsilons = {1, 2, 4, 8, 16};
  attacks::AttackConfig attack;  // epsilon is taken from the grid
  std::size_t vuln_examples = 32;
  std::size_t workers = 1;
};

struct SweepCell {
  std::vector<std::string> tasks;
  double joint_norm = 0.0;
  double predicted_ratio = 0.0;
  double predicted_ratio_uncorrelated = 0.0;
  std::vector<double> task_norms;
  struct Attacked {
    double epsilon = 0.0;
    std::string task;
    std::string metric;
    double clean = 0.0;
    double attacked = 0.0;
  };
  std::vector<Attacked> attacked;
};

std::vector<SweepCell> run_sweep(const SweepConfig& config, const Logger& log = {});

/// Runs job(i) for i in [0, n) on up to `workers` threads. The first
/// exception is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& job);

}  // namespace mtr::harness
