// SPDX-License-Identifier: Apache-2.0
// Prints one PASS/FAIL line per acceptance criterion; exits nonzero if any fail.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "advtrain/advtrain.hpp"
#include "attacks/attacks.hpp"
#include "attacks/evaluate.hpp"
#include "common/rng.hpp"
#include "data/scene.hpp"
#include "harness/experiments.hpp"
#include "nn/train.hpp"
#include "random_network.hpp"
#include "tensor/ops.hpp"
#include "vulnerability/vulnerability.hpp"

namespace {

using namespace mtr;

struct Outcome {
  bool pass = false;
  std::string detail;
};

Tensor uniform_tensor(const Shape& s, Rng& rng, double lo, double hi) {
  Tensor t(s);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

ad::InputLoss linear_loss(const Tensor& w) {
  return [w](ad::Tape& tape, const ad::Var& x) { return ad::sum(ad::mul(x, tape.constant(w))); };
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome autodiff_correctness() {
  Rng rng(20240601);
  std::size_t components = 0, failures = 0;
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const testing::RandomNetwork net = testing::make_random_network(rng);
    const testing::GradCheckResult r = testing::check_random_network(net, 1e-4, 1e-7);
    components += r.components;
    failures += r.failures;
    worst = std::max(worst, r.worst);
  }
  return {failures == 0, std::to_string(components) + " components, " + std::to_string(failures) +
                             " failures, worst rel " + fmt("%.2e", worst)};
}

Outcome theory_rows(const std::vector<double>& rhos, bool rho_one_no_gain) {
  harness::TheoryCheckConfig cfg;
  cfg.tasks = {1, 2, 4, 8, 16};
  cfg.rhos = rhos;
  cfg.dimension = 100;
  cfg.variance = 1.0;
  cfg.samples = 10000;
  cfg.seed = 11;
  const harness::TheoryCheckResult r = harness::run_theory_check(cfg);
  bool ok = r.rows.size() == cfg.tasks.size() * rhos.size();
  double worst = 0.0, worst_rho_one = 0.0;
  for (const harness::TheoryRow& row : r.rows) {
    worst = std::max(worst, row.rel_error);
    if (rho_one_no_gain && row.rho == 1.0) worst_rho_one = std::max(worst_rho_one, std::abs(row.empirical - 1.0));
  }
  ok = ok && worst <= 0.05 && worst_rho_one <= 0.05;
  std::string detail = std::to_string(r.rows.size()) + " rows, max rel error " + fmt("%.4f", worst);
  if (rho_one_no_gain) detail += ", max |emp-1| at rho=1 " + fmt("%.4f", worst_rho_one);
  return {ok, detail};
}

Outcome first_order_exactness() {
  Rng rng(404);
  double worst_first_order = 0.0, worst_fgsm = 0.0;
  for (int m = 0; m < 20; ++m) {
    const Shape s{1, 1, 6, 6};
    const Tensor w = uniform_tensor(s, rng, -1.0, 1.0);
    // Interior points: with eps <= 16/255 no coordinate reaches the [0, 1] clip.
    const Tensor x = uniform_tensor(s, rng, 0.1, 0.9);
    const double r = std::uniform_real_distribution<double>(1e-3, 0.05)(rng);
    const std::vector<vuln::LossPoint> sample{{linear_loss(w), x}};
    for (double p : {2.0, vuln::kInfinity}) {
      const vuln::DualNormSpec norm{p};
      const double predicted = vuln::first_order_vulnerability(sample, r, norm);
      const double brute = vuln::empirical_delta_loss(linear_loss(w), x, r, norm, 64, static_cast<std::uint64_t>(m));
      worst_first_order = std::max(worst_first_order, std::abs(predicted - brute) / std::abs(brute));
    }
    const double eps = static_cast<double>(1 + m % 16);
    const Tensor adv = attacks::fgsm(linear_loss(w), x, eps);
    const double gain = ad::evaluate_loss(linear_loss(w), adv) - ad::evaluate_loss(linear_loss(w), x);
    const double expected = eps / 255.0 * l1_norm(w.data());
    worst_fgsm = std::max(worst_fgsm, std::abs(gain - expected) / expected);
  }
  return {worst_first_order <= 1e-9 && worst_fgsm <= 1e-9,
          "worst rel first-order " + fmt("%.2e", worst_first_order) + ", fgsm " + fmt("%.2e", worst_fgsm)};
}

Outcome attack_invariants() {
  Rng rng(505);
  std::uniform_int_distribution<std::size_t> dim(3, 6);
  std::size_t violations = 0, iterates = 0, mismatches = 0;
  for (int run = 0; run < 1000; ++run) {
    const Shape s{1 + static_cast<std::size_t>(run % 2), 1, dim(rng), dim(rng)};
    const Tensor x = uniform_tensor(s, rng, 0.0, 1.0);
    const Tensor k = uniform_tensor({2, 1, 3, 3}, rng, -2.0, 2.0);
    const Tensor c = uniform_tensor({s[0], 2, s[2], s[3]}, rng, -1.0, 1.0);
    const ad::InputLoss loss = [k, c](ad::Tape& tape, const ad::Var& v) {
      return ad::sum(ad::mul(ad::sigmoid(ad::conv2d(v, tape.constant(k))), tape.constant(c)));
    };
    attacks::AttackConfig cfg;
    cfg.kind = run % 2 ? attacks::AttackKind::kMim : attacks::AttackKind::kPgd;
    cfg.epsilon = static_cast<double>(std::uniform_int_distribution<int>(1, 16)(rng));
    cfg.steps = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
    cfg.step_size = std::uniform_real_distribution<double>(0.25, 4.0)(rng);
    cfg.random_start = run % 3 != 0;
    cfg.seed = static_cast<std::uint64_t>(run);
    attacks::AttackTrace trace;
    trace.record_iterates = true;
    attacks::run_attack(loss, x, cfg, &trace);
    for (const Tensor& it : trace.iterates) {
      ++iterates;
      for (std::size_t i = 0; i < it.numel(); ++i) {
        const bool in_ball = std::abs(it[i] - x[i]) <= cfg.epsilon / 255.0 + 1e-12;
        if (!in_ball || it[i] < 0.0 || it[i] > 1.0) {
          ++violations;
          break;
        }
      }
    }
    attacks::AttackConfig one;
    one.epsilon = cfg.epsilon;
    one.steps = 1;
    one.step_size = cfg.epsilon;
    one.random_start = false;
    if (!(attacks::pgd(loss, x, one) == attacks::fgsm(loss, x, cfg.epsilon))) ++mismatches;
  }
  std::vector<std::size_t> schedule;
  for (double e : {1.0, 2.0, 4.0, 8.0, 16.0}) schedule.push_back(attacks::pgd_step_schedule(e));
  const bool schedule_ok = schedule == std::vector<std::size_t>{2, 3, 5, 10, 20};
  return {violations == 0 && mismatches == 0 && schedule_ok && iterates > 1000,
          std::to_string(iterates) + " iterates, " + std::to_string(violations) + " violations, " +
              std::to_string(mismatches) + " PGD/FGSM mismatches, schedule " + (schedule_ok ? "ok" : "wrong")};
}

harness::ExperimentSetup toy_setup(std::size_t hw, std::size_t train, std::size_t test, std::size_t epochs) {
  harness::ExperimentSetup s;
  s.scene.height = hw;
  s.scene.width = hw;
  s.train_size = train;
  s.test_size = test;
  s.data_seed = 1;
  s.model = {8, 2, 8, 2};
  s.train.epochs = epochs;
  s.train.batch_size = 16;
  s.train.sgd.learning_rate = 0.05;
  s.model_seed = 0;
  return s;
}

Outcome subsample_curve() {
  const harness::ExperimentSetup setup = toy_setup(32, 96, 16, 6);
  const harness::SplitData data = harness::make_data(setup);
  const nn::SharedBackboneModel model = harness::train_model(setup, data.train, {{"seg", 1.0}});
  harness::SubsampleConfig cfg;
  cfg.ks = {1, 4, 16, 64, 256, 1024};
  cfg.repeats = 20;
  cfg.examples = 8;
  const harness::SubsampleResult r = harness::run_subsample(model, data.test, cfg);
  bool monotone = true;
  for (std::size_t i = 1; i < r.grad_norms.size(); ++i) monotone = monotone && r.grad_norms[i] <= r.grad_norms[i - 1];
  std::ostringstream d;
  d << "norms";
  for (double v : r.grad_norms) d << ' ' << fmt("%.3g", v);
  d << ", spearman " << fmt("%.3f", r.spearman);
  return {monotone && r.spearman <= -0.9, d.str()};
}

Outcome auxiliary_matrix() {
  harness::AttackMatrixConfig cfg;
  cfg.setup = toy_setup(16, 160, 48, 8);
  cfg.tasks = {"seg", "depth", "edge", "keypoint", "recon"};
  cfg.lambdas = {0.1, 0.01};
  const harness::AttackMatrixResult r = harness::run_attack_matrix(cfg);
  const bool ok = r.scored == 20 && r.fraction_improved >= 0.6 && r.mean_abs_clean_change <= 0.10;
  return {ok, "improved " + fmt("%.2f", r.fraction_improved) + " of " + std::to_string(r.scored) +
                  " pairs, mean |clean change| " + fmt("%.3f", r.mean_abs_clean_change)};
}

Outcome multitask_adversarial_training() {
  harness::AdvCompareConfig cfg;
  cfg.setup = toy_setup(16, 200, 48, 20);
  cfg.main_task = "seg";
  cfg.aux_tasks = {"depth"};
  cfg.lambda_a = 0.01;
  cfg.seeds = {0, 1, 2, 3, 4};
  const harness::AdvCompareResult r = harness::run_advtrain_comparison(cfg);
  std::ostringstream d;
  d << "multi-task wins " << r.wins << "/" << r.rows.size() << " (single vs multi attacked:";
  for (const auto& row : r.rows) d << ' ' << fmt("%.3f", row.single_attacked) << '/' << fmt("%.3f", row.multi_attacked);
  d << ')';
  return {r.wins >= 3, d.str()};
}

Outcome reduction_identities() {
  const data::SceneParams scene = toy_setup(8, 0, 0, 0).scene;
  const data::Dataset train = data::generate_dataset(24, 5, scene, "train");
  const data::Dataset test = data::generate_dataset(8, 5, scene, "test");
  harness::ExperimentSetup setup = toy_setup(8, 24, 8, 3);
  const nn::ModelConfig mc = harness::model_config(setup, {"seg", "depth"});
  auto plain = nn::SharedBackboneModel::build(mc, 4);
  auto adv = nn::SharedBackboneModel::build(mc, 4);
  nn::train(plain, train, {{"seg", 1.0}}, setup.train);
  advtrain::AdvTrainConfig ac;
  ac.train = setup.train;
  ac.attack.epsilon = 0.0;
  advtrain::adversarial_train(adv, train, advtrain::TaskCombinationSet::single("seg"), ac);
  bool bitwise = true;
  const auto pp = plain.parameters(), pa = adv.parameters();
  for (std::size_t i = 0; i < pp.size(); ++i) bitwise = bitwise && pp[i]->value == pa[i]->value;

  bool exact = true;
  const auto clean = attacks::evaluate_clean(plain, test, {"seg", "depth"});
  for (attacks::AttackKind kind : {attacks::AttackKind::kFgsm, attacks::AttackKind::kPgd, attacks::AttackKind::kMim}) {
    attacks::AttackConfig c;
    c.kind = kind;
    c.epsilon = 0.0;
    c.random_start = true;
    const auto r = attacks::evaluate_under_attack(plain, test, attacks::AttackObjective::single("seg"), c,
                                                  {"seg", "depth"});
    for (std::size_t i = 0; i < r.rows.size(); ++i)
      exact = exact && r.rows[i].attacked == r.rows[i].clean && r.rows[i].clean == clean[i].clean;
  }
  return {bitwise && exact, std::string("adv-train eps=0 ") + (bitwise ? "bitwise equal" : "differs") +
                                ", eps=0 evaluation " + (exact ? "equals clean" : "differs")};
}

Outcome scale_invariance() {
  harness::ExperimentSetup setup = toy_setup(8, 32, 12, 3);
  const harness::SplitData data = harness::make_data(setup);
  const std::vector<std::string> tasks{"seg", "depth", "edge"};
  const nn::SharedBackboneModel model =
      harness::train_model(setup, data.train, {{"seg", 1.0}, {"depth", 1.0}, {"edge", 1.0}});
  const vuln::VulnerabilityReport base = vuln::vulnerability_report(model, data.test, tasks, 1.0);
  double worst_norm = 0.0, worst_theory = 0.0;
  for (double s : {0.1, 10.0}) {
    const vuln::VulnerabilityReport r = vuln::vulnerability_report(model, data.test, tasks, s);
    for (std::size_t c = 0; c < tasks.size(); ++c)
      worst_norm = std::max(worst_norm, std::abs(r.task_norms[c] - s * base.task_norms[c]) / (s * base.task_norms[c]));
    worst_norm = std::max(worst_norm, std::abs(r.joint_norm - s * base.joint_norm) / (s * base.joint_norm));
    worst_theory = std::max(worst_theory, std::abs(r.predicted_ratio - base.predicted_ratio));
  }
  return {worst_norm <= 1e-9 && worst_theory <= 1e-12,
          "worst norm rel " + fmt("%.2e", worst_norm) + ", predicted_ratio drift " + fmt("%.2e", worst_theory)};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;  // 0 when no runtime bound applies
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "autodiff matches finite differences", 60, autodiff_correctness},
      {2, "joint norm follows 1/sqrt(M) at rho=0", 60, [] { return theory_rows({0.0}, false); }},
      {3, "joint norm follows the correlated law", 120, [] { return theory_rows({0.25, 0.5, 1.0}, true); }},
      {4, "first-order vulnerability exact on linear models", 0, first_order_exactness},
      {5, "attack invariants", 0, attack_invariants},
      {6, "gradient norm falls with output dimension", 300, subsample_curve},
      {7, "auxiliary tasks harden single-task attacks", 1800, auxiliary_matrix},
      {8, "multi-task adversarial training beats single-task", 1800, multitask_adversarial_training},
      {9, "reduction identities", 0, reduction_identities},
      {10, "vulnerability report is loss-scale covariant", 0, scale_invariance},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_seconds > 0 && secs > c.budget_seconds) {
      o.pass = false;
      o.detail += ", over the " + fmt("%.0f", c.budget_seconds) + " s budget";
    }
    std::printf("CRITERION %d %s: %s: %s (%.1f s)\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
