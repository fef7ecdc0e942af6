// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "advtrain/advtrain.hpp"
#include "attacks/evaluate.hpp"
#include "common/error.hpp"
#include "nn/train.hpp"
#include "test_util.hpp"

namespace mtr {
namespace {

using testing::small_model;
using testing::small_scene;

TEST(CombinationSet, Construction) {
  const auto single = advtrain::TaskCombinationSet::single("seg");
  ASSERT_EQ(single.subsets.size(), 1u);
  EXPECT_EQ(single.subsets[0], (nn::WeightMap{{"seg", 1.0}}));

  const auto multi = advtrain::TaskCombinationSet::with_auxiliary("seg", {"depth", "edge"}, 0.01);
  ASSERT_EQ(multi.subsets.size(), 2u);
  EXPECT_EQ(multi.subsets[0], (nn::WeightMap{{"seg", 1.0}}));
  EXPECT_EQ(multi.subsets[1], (nn::WeightMap{{"seg", 1.0}, {"depth", 0.01}, {"edge", 0.01}}));
  for (const auto& s : multi.subsets) EXPECT_TRUE(s.contains("seg"));

  EXPECT_THROW(advtrain::TaskCombinationSet::with_auxiliary("seg", {"seg"}, 0.01), InvalidArgument);
  EXPECT_THROW(advtrain::TaskCombinationSet::with_auxiliary("seg", {"depth"}, -0.1), InvalidArgument);
  advtrain::TaskCombinationSet empty;
  EXPECT_THROW(empty.validate(), InvalidArgument);
  empty.subsets.push_back({});
  EXPECT_THROW(empty.validate(), InvalidArgument);
}

TEST(AdvTrainConfig, Defaults) {
  const advtrain::AdvTrainConfig c;
  EXPECT_EQ(c.lambda_a, 0.01);
  EXPECT_EQ(c.attack.kind, attacks::AttackKind::kPgd);
  EXPECT_EQ(c.attack.epsilon, 4.0);
  EXPECT_EQ(c.attack.resolved_steps(), 5u);
  advtrain::AdvTrainConfig bad;
  bad.attack.kind = attacks::AttackKind::kFgsm;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

nn::TrainConfig quick_train(std::size_t epochs) {
  nn::TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 8;
  tc.sgd.learning_rate = 0.05;
  tc.seed = 31;
  return tc;
}

TEST(AdversarialTraining, ZeroRadiusSingleSetReproducesPlainTraining) {
  const data::Dataset ds = data::generate_dataset(20, 1, small_scene());
  const nn::ModelConfig mc = small_model({"seg", "depth"});
  auto plain = nn::SharedBackboneModel::build(mc, 8);
  auto adv = nn::SharedBackboneModel::build(mc, 8);
  const auto hist = nn::train(plain, ds, {{"seg", 1.0}}, quick_train(3));

  advtrain::AdvTrainConfig ac;
  ac.train = quick_train(3);
  ac.attack.epsilon = 0.0;
  const auto rows = advtrain::adversarial_train(adv, ds, advtrain::TaskCombinationSet::single("seg"), ac);
  const auto pp = plain.parameters(), pa = adv.parameters();
  for (std::size_t i = 0; i < pp.size(); ++i) EXPECT_EQ(pp[i]->value, pa[i]->value) << pp[i]->name;
  ASSERT_EQ(rows.size(), hist.size());
  for (std::size_t e = 0; e < rows.size(); ++e) {
    EXPECT_EQ(rows[e].adv_loss, rows[e].clean_loss);
    EXPECT_EQ(rows[e].attack_gradient_passes, 0u);
  }
}

TEST(AdversarialTraining, BudgetAccountingAndHeadDisjointness) {
  const data::Dataset ds = data::generate_dataset(20, 2, small_scene());
  const nn::ModelConfig mc = small_model({"seg", "depth", "edge"});
  auto m = nn::SharedBackboneModel::build(mc, 3);
  const auto untouched = nn::SharedBackboneModel::build(mc, 3);
  advtrain::AdvTrainConfig ac;
  ac.train = quick_train(2);
  ac.attack.steps = 3;
  std::size_t callbacks = 0;
  const auto rows = advtrain::adversarial_train(
      m, ds, advtrain::TaskCombinationSet::with_auxiliary("seg", {"depth"}, 0.01), ac,
      [&](const advtrain::HistoryRow&) { ++callbacks; });
  const std::size_t minibatches = 3;  // ceil(20 / 8)
  ASSERT_EQ(rows.size(), 2u * 2u);
  EXPECT_EQ(callbacks, rows.size());
  std::size_t passes = 0;
  for (const auto& r : rows) {
    EXPECT_EQ(r.optimizer_steps, minibatches);
    EXPECT_EQ(r.attack_gradient_passes, 3u * minibatches);
    EXPECT_GE(r.adv_loss, 0.0);
    passes += r.attack_gradient_passes;
  }
  EXPECT_EQ(rows[1].subset, 1u);
  EXPECT_EQ(rows[2].epoch, 1u);
  // |S| x steps x minibatches per epoch.
  EXPECT_EQ(passes, 2u * (2u * 3u * minibatches));
  // The edge head takes part in no subset and must not move.
  const auto he = m.head_parameters("edge");
  const auto hu = untouched.head_parameters("edge");
  for (std::size_t i = 0; i < he.size(); ++i) EXPECT_EQ(he[i]->value, hu[i]->value);
}

TEST(AdversarialTraining, Errors) {
  const data::Dataset ds = data::generate_dataset(4, 2, small_scene());
  auto m = nn::SharedBackboneModel::build(small_model({"seg"}), 3);
  advtrain::AdvTrainConfig ac;
  ac.train = quick_train(1);
  EXPECT_THROW(advtrain::adversarial_train(m, ds, advtrain::TaskCombinationSet::with_auxiliary("seg", {"edge"}, 0.01),
                                           ac),
               InvalidArgument);
}

TEST(AdversarialTraining, Deterministic) {
  const data::Dataset ds = data::generate_dataset(12, 2, small_scene());
  advtrain::AdvTrainConfig ac;
  ac.train = quick_train(2);
  auto a = nn::SharedBackboneModel::build(small_model({"seg", "edge"}), 1);
  auto b = nn::SharedBackboneModel::build(small_model({"seg", "edge"}), 1);
  const auto set = advtrain::TaskCombinationSet::with_auxiliary("seg", {"edge"}, 0.01);
  const auto ra = advtrain::adversarial_train(a, ds, set, ac);
  const auto rb = advtrain::adversarial_train(b, ds, set, ac);
  for (std::size_t i = 0; i < ra.size(); ++i) EXPECT_EQ(ra[i].adv_loss, rb[i].adv_loss);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) EXPECT_EQ(a.parameters()[i]->value, b.parameters()[i]->value);
}

class RobustEval : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const data::Dataset train = data::generate_dataset(64, 4, small_scene(), "train");
    test_ = new data::Dataset(data::generate_dataset(16, 4, small_scene(), "test"));
    const nn::ModelConfig mc = small_model({"seg"}, 8, 8);
    clean_ = new nn::SharedBackboneModel(nn::SharedBackboneModel::build(mc, 2));
    robust_ = new nn::SharedBackboneModel(nn::SharedBackboneModel::build(mc, 2));
    nn::train(*clean_, train, {{"seg", 1.0}}, quick_train(10));
    advtrain::AdvTrainConfig ac;
    ac.train = quick_train(10);
    ac.attack.epsilon = 8.0;
    advtrain::adversarial_train(*robust_, train, advtrain::TaskCombinationSet::single("seg"), ac);
  }
  static void TearDownTestSuite() {
    delete test_;
    delete clean_;
    delete robust_;
  }
  static data::Dataset* test_;
  static nn::SharedBackboneModel* clean_;
  static nn::SharedBackboneModel* robust_;
};

data::Dataset* RobustEval::test_ = nullptr;
nn::SharedBackboneModel* RobustEval::clean_ = nullptr;
nn::SharedBackboneModel* RobustEval::robust_ = nullptr;

double row_value(const std::vector<advtrain::RobustRow>& rows, const std::string& attack) {
  for (const auto& r : rows)
    if (r.attack == attack) return r.value;
  ADD_FAILURE() << "no row " << attack;
  return 0.0;
}

TEST_F(RobustEval, SuiteRowsAndStepMonotonicity) {
  const auto rows = advtrain::robust_eval(*clean_, *test_, "seg", 8.0, 3, 10, 20);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].attack, "clean");
  EXPECT_EQ(rows[1].attack, "pgd10");
  EXPECT_EQ(rows[2].attack, "pgd20");
  EXPECT_EQ(rows[3].attack, "mim20");
  for (const auto& r : rows) EXPECT_EQ(r.metric, "miou");
  EXPECT_LT(row_value(rows, "pgd10"), row_value(rows, "clean"));
  // More steps never help the defender beyond noise.
  EXPECT_LE(row_value(rows, "pgd20"), row_value(rows, "pgd10") + 0.02);
}

TEST_F(RobustEval, AdversarialTrainingImprovesAttackedMetric) {
  const auto plain = advtrain::robust_eval(*clean_, *test_, "seg", 8.0, 3, 10, 20);
  const auto robust = advtrain::robust_eval(*robust_, *test_, "seg", 8.0, 3, 10, 20);
  EXPECT_GT(row_value(robust, "pgd10"), row_value(plain, "pgd10"));
}

}  // namespace
}  // namespace mtr
