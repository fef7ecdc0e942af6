// SPDX-License-Identifier: Apache-2.0
// Links only the shared library and its public header.
#include <gtest/gtest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtrlab/mtrlab.h"

namespace {

namespace fs = std::filesystem;

class ScratchDir {
 public:
  ScratchDir() : path_(fs::temp_directory_path() / ("mtrlab_capi_" + std::to_string(::getpid()) + "_" + next())) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  static std::string next() {
    static int n = 0;
    return std::to_string(n++);
  }
  fs::path path_;
};

constexpr const char* kScene = R"({"height": 8, "width": 8})";
constexpr const char* kModel = R"({"height": 8, "width": 8, "trunk_width": 4, "head_width": 4, "tasks": ["seg", "depth"]})";

TEST(CApi, StatusHelpers) {
  EXPECT_STRNE(mtr_version(), "");
  EXPECT_STREQ(mtr_status_name(MTR_OK), "ok");
  EXPECT_EQ(mtr_exit_code(MTR_OK), 0);
  EXPECT_EQ(mtr_exit_code(MTR_CONFIG_ERROR), 2);
  EXPECT_EQ(mtr_exit_code(MTR_INVALID_ARGUMENT), 2);
  EXPECT_EQ(mtr_exit_code(MTR_NUMERIC_ERROR), 3);
  EXPECT_EQ(mtr_exit_code(MTR_THRESHOLD_VIOLATION), 4);
  EXPECT_EQ(mtr_exit_code(MTR_IO_ERROR), 1);
  EXPECT_EQ(mtr_exit_code(MTR_FORMAT_ERROR), 1);
  EXPECT_EQ(mtr_exit_code(MTR_INTERNAL_ERROR), 1);
  const std::string names = mtr_command_names();
  EXPECT_NE(names.find("theory-check\n"), std::string::npos);
  mtr_string_free(nullptr);
}

TEST(CApi, NullArgumentsAreRejected) {
  size_t n = 0;
  EXPECT_EQ(mtr_dataset_size(nullptr, &n), MTR_INVALID_ARGUMENT);
  EXPECT_NE(std::string(mtr_last_error()).size(), 0u);
  EXPECT_EQ(mtr_pgd_step_schedule(4.0, nullptr), MTR_INVALID_ARGUMENT);
  EXPECT_EQ(mtr_model_create(kModel, 0, nullptr), MTR_INVALID_ARGUMENT);
  mtr_dataset_free(nullptr);
  mtr_model_free(nullptr);
}

TEST(CApi, NumericHelpers) {
  size_t steps = 0;
  ASSERT_EQ(mtr_pgd_step_schedule(4.0, &steps), MTR_OK);
  EXPECT_EQ(steps, 5u);
  ASSERT_EQ(mtr_pgd_step_schedule(16.0, &steps), MTR_OK);
  EXPECT_EQ(steps, 20u);
  EXPECT_EQ(mtr_pgd_step_schedule(-1.0, &steps), MTR_INVALID_ARGUMENT);

  const std::vector<double> c{1.0, 0.5, 0.5, 1.0};
  double v = 0.0;
  ASSERT_EQ(mtr_joint_norm_prediction(c.data(), 2, &v), MTR_OK);
  EXPECT_NEAR(v, std::sqrt(0.75), 1e-12);
  const std::vector<double> bad{1.0, 0.5, 0.0, 1.0};
  EXPECT_EQ(mtr_joint_norm_prediction(bad.data(), 2, &v), MTR_INVALID_ARGUMENT);
  ASSERT_EQ(mtr_uncorrelated_prediction(4, &v), MTR_OK);
  EXPECT_NEAR(v, 0.5, 1e-15);
  EXPECT_EQ(mtr_uncorrelated_prediction(0, &v), MTR_INVALID_ARGUMENT);
}

TEST(CApi, DatasetRoundTrip) {
  ScratchDir dir;
  mtr_dataset* ds = nullptr;
  ASSERT_EQ(mtr_dataset_generate(kScene, 6, 3, "train", &ds), MTR_OK) << mtr_last_error();
  size_t n = 0;
  ASSERT_EQ(mtr_dataset_size(ds, &n), MTR_OK);
  EXPECT_EQ(n, 6u);
  ASSERT_EQ(mtr_dataset_write(ds, (dir / "d.mtds").c_str()), MTR_OK);
  mtr_dataset* back = nullptr;
  ASSERT_EQ(mtr_dataset_read((dir / "d.mtds").c_str(), &back), MTR_OK);
  ASSERT_EQ(mtr_dataset_size(back, &n), MTR_OK);
  EXPECT_EQ(n, 6u);
  mtr_dataset_free(back);
  mtr_dataset_free(ds);

  EXPECT_EQ(mtr_dataset_generate(R"({"height": 8, "colour": 1})", 6, 3, "train", &ds), MTR_CONFIG_ERROR);
  EXPECT_NE(std::string(mtr_last_error()).find("colour"), std::string::npos);
  EXPECT_EQ(mtr_dataset_generate("{not json", 6, 3, "train", &ds), MTR_CONFIG_ERROR);
  EXPECT_EQ(mtr_dataset_read((dir / "missing.mtds").c_str(), &ds), MTR_IO_ERROR);
  {
    FILE* f = std::fopen((dir / "junk.mtds").c_str(), "wb");
    std::fputs("JUNKJUNK", f);
    std::fclose(f);
  }
  EXPECT_EQ(mtr_dataset_read((dir / "junk.mtds").c_str(), &ds), MTR_FORMAT_ERROR);
}

TEST(CApi, ModelTrainEvaluateSaveLoad) {
  ScratchDir dir;
  mtr_dataset* train = nullptr;
  mtr_dataset* test = nullptr;
  ASSERT_EQ(mtr_dataset_generate(kScene, 16, 1, "train", &train), MTR_OK);
  ASSERT_EQ(mtr_dataset_generate(kScene, 6, 1, "test", &test), MTR_OK);
  mtr_model* model = nullptr;
  ASSERT_EQ(mtr_model_create(kModel, 2, &model), MTR_OK) << mtr_last_error();
  size_t params = 0;
  ASSERT_EQ(mtr_model_parameter_count(model, &params), MTR_OK);
  EXPECT_GT(params, 0u);
  ASSERT_EQ(mtr_model_train(model, train, R"({"seg": 1, "depth": 1})", R"({"epochs": 1, "batch_size": 8})"), MTR_OK)
      << mtr_last_error();
  EXPECT_EQ(mtr_model_train(model, train, R"({"edge": 1})", "{}"), MTR_INVALID_ARGUMENT);

  char* clean = nullptr;
  ASSERT_EQ(mtr_model_evaluate(model, test, nullptr, nullptr, &clean), MTR_OK) << mtr_last_error();
  const auto cj = nlohmann::json::parse(clean);
  mtr_string_free(clean);
  ASSERT_EQ(cj.size(), 2u);
  for (const auto& r : cj) EXPECT_EQ(r.at("clean"), r.at("attacked"));

  char* zero = nullptr;
  ASSERT_EQ(mtr_model_evaluate(model, test, R"({"task": "seg"})", R"({"kind": "pgd", "epsilon": 0})", &zero), MTR_OK)
      << mtr_last_error();
  const auto zj = nlohmann::json::parse(zero);
  mtr_string_free(zero);
  for (std::size_t i = 0; i < zj.size(); ++i) {
    EXPECT_EQ(zj[i].at("attacked"), zj[i].at("clean"));
    EXPECT_EQ(zj[i].at("clean"), cj[i].at("clean"));
  }
  char* out = nullptr;
  EXPECT_EQ(mtr_model_evaluate(model, test, R"({"task": "seg", "weights": {}})", "{}", &out), MTR_CONFIG_ERROR);

  ASSERT_EQ(mtr_model_save(model, (dir / "m.mtck").c_str()), MTR_OK);
  mtr_model* loaded = nullptr;
  ASSERT_EQ(mtr_model_load((dir / "m.mtck").c_str(), &loaded), MTR_OK);
  size_t loaded_params = 0;
  ASSERT_EQ(mtr_model_parameter_count(loaded, &loaded_params), MTR_OK);
  EXPECT_EQ(loaded_params, params);
  char* again = nullptr;
  ASSERT_EQ(mtr_model_evaluate(loaded, test, nullptr, nullptr, &again), MTR_OK);
  const auto aj = nlohmann::json::parse(again);
  mtr_string_free(again);
  // Checkpoints store f32, so metrics agree to single precision.
  for (std::size_t i = 0; i < aj.size(); ++i)
    EXPECT_NEAR(aj[i].at("clean").get<double>(), cj[i].at("clean").get<double>(), 1e-4);

  mtr_model_free(loaded);
  mtr_model_free(model);
  mtr_dataset_free(test);
  mtr_dataset_free(train);
}

void collect(const char* line, void* user) { static_cast<std::vector<std::string>*>(user)->emplace_back(line); }

TEST(CApi, RunCommand) {
  ScratchDir dir;
  std::vector<std::string> lines;
  const std::string out = dir / "theory";
  ASSERT_EQ(mtr_run_command("theory-check", R"({"tasks": [1, 2], "rhos": [0.0], "samples": 500, "dimension": 8, "enforce": false})",
                            out.c_str(), 1, 5, 0, 0, collect, &lines),
            MTR_OK)
      << mtr_last_error();
  EXPECT_FALSE(lines.empty());
  EXPECT_TRUE(fs::exists(fs::path(out) / "run.json"));
  const auto manifest = nlohmann::json::parse(std::ifstream(fs::path(out) / "run.json"));
  EXPECT_EQ(manifest.at("seeds").at("seed"), 5);

  EXPECT_EQ(mtr_run_command("theory-check", R"({"tasks": [1, 2], "rhos": [0.0], "samples": 200, "tolerance": 1e-9})",
                            (dir / "tight").c_str(), 0, 0, 0, 0, nullptr, nullptr),
            MTR_THRESHOLD_VIOLATION);
  EXPECT_EQ(mtr_run_command("nope", "{}", (dir / "x").c_str(), 0, 0, 0, 0, nullptr, nullptr), MTR_CONFIG_ERROR);
  EXPECT_EQ(mtr_run_command("theory-check", "{}", (dir / "x").c_str(), 0, 0, 1, 0, nullptr, nullptr),
            MTR_CONFIG_ERROR);
}

}  // namespace
