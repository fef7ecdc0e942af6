// SPDX-License-Identifier: Apache-2.0
#include "mtrlab/mtrlab.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "attacks/evaluate.hpp"
#include "common/alloc.hpp"
#include "common/error.hpp"
#include "common/json_reader.hpp"
#include "data/dataset_io.hpp"
#include "data/scene.hpp"
#include "harness/commands.hpp"
#include "harness/config.hpp"
#include "nn/checkpoint.hpp"
#include "nn/train.hpp"
#include "vulnerability/vulnerability.hpp"

struct mtr_dataset {
  mtr::data::Dataset value;
};

struct mtr_model {
  mtr::nn::SharedBackboneModel value;
};

namespace {

thread_local std::string g_last_error;

mtr_status to_c(mtr::harness::Status s) { return static_cast<mtr_status>(static_cast<int>(s)); }

template <typename F>
mtr_status guard(F&& f) {
  g_last_error.clear();
  try {
    f();
    return MTR_OK;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return to_c(mtr::harness::classify(e));
  } catch (...) {
    g_last_error = "unknown error";
    return MTR_INTERNAL_ERROR;
  }
}

void require(const void* p, const char* what) {
  if (!p) throw mtr::InvalidArgument(std::string(what) + " must not be NULL");
}

nlohmann::json parse(const char* text, const char* what) {
  require(text, what);
  return mtr::harness::parse_json_text(text, what);
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* mtr_version(void) { return MTRLAB_VERSION; }

const char* mtr_last_error(void) { return g_last_error.c_str(); }

const char* mtr_status_name(mtr_status status) {
  return mtr::harness::status_name(static_cast<mtr::harness::Status>(status)).data();
}

int mtr_exit_code(mtr_status status) { return mtr::harness::exit_code(static_cast<mtr::harness::Status>(status)); }

void mtr_string_free(char* s) { std::free(s); }

void mtr_tune_allocator(void) { mtr::tune_allocator(); }

mtr_status mtr_dataset_generate(const char* scene_json, size_t examples, uint64_t seed, const char* split,
                                mtr_dataset** out) {
  return guard([&] {
    require(out, "out");
    require(split, "split");
    const nlohmann::json j = parse(scene_json, "scene_json");
    const mtr::data::SceneParams p = mtr::harness::parse_scene(mtr::JsonObject(j, "scene"));
    *out = new mtr_dataset{mtr::data::generate_dataset(examples, seed, p, split)};
  });
}

mtr_status mtr_dataset_read(const char* path, mtr_dataset** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new mtr_dataset{mtr::data::read_dataset(path)};
  });
}

mtr_status mtr_dataset_write(const mtr_dataset* dataset, const char* path) {
  return guard([&] {
    require(dataset, "dataset");
    require(path, "path");
    mtr::data::write_dataset(dataset->value, path);
  });
}

mtr_status mtr_dataset_size(const mtr_dataset* dataset, size_t* out) {
  return guard([&] {
    require(dataset, "dataset");
    require(out, "out");
    *out = dataset->value.size();
  });
}

void mtr_dataset_free(mtr_dataset* dataset) { delete dataset; }

mtr_status mtr_model_create(const char* model_json, uint64_t seed, mtr_model** out) {
  return guard([&] {
    require(out, "out");
    const nlohmann::json j = parse(model_json, "model_json");
    *out = new mtr_model{mtr::nn::SharedBackboneModel::build(mtr::nn::model_config_from_json(j), seed)};
  });
}

mtr_status mtr_model_load(const char* path, mtr_model** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new mtr_model{mtr::nn::load_checkpoint(path)};
  });
}

mtr_status mtr_model_save(const mtr_model* model, const char* path) {
  return guard([&] {
    require(model, "model");
    require(path, "path");
    mtr::nn::save_checkpoint(model->value, path);
  });
}

mtr_status mtr_model_parameter_count(const mtr_model* model, size_t* out) {
  return guard([&] {
    require(model, "model");
    require(out, "out");
    *out = model->value.parameter_count();
  });
}

mtr_status mtr_model_train(mtr_model* model, const mtr_dataset* dataset, const char* weights_json,
                           const char* train_json) {
  return guard([&] {
    require(model, "model");
    require(dataset, "dataset");
    const mtr::nn::WeightMap w = mtr::harness::parse_weights(parse(weights_json, "weights_json"), "weights");
    const nlohmann::json t = parse(train_json, "train_json");
    mtr::nn::train(model->value, dataset->value, w, mtr::harness::parse_train(mtr::JsonObject(t, "train")));
  });
}

mtr_status mtr_model_evaluate(const mtr_model* model, const mtr_dataset* dataset, const char* objective_json,
                              const char* attack_json, char** out_json) {
  return guard([&] {
    require(model, "model");
    require(dataset, "dataset");
    require(out_json, "out_json");
    const std::vector<std::string> tasks = model->value.task_names();
    std::vector<mtr::attacks::TaskMetric> rows;
    if (attack_json) {
      const nlohmann::json oj = parse(objective_json, "objective_json");
      mtr::JsonObject o(oj, "objective");
      mtr::attacks::AttackObjective objective;
      if (o.has("task") == o.has("weights")) throw mtr::ConfigError("objective: give exactly one of task or weights");
      if (o.has("task")) {
        objective = mtr::attacks::AttackObjective::single(o.required<std::string>("task"));
      } else {
        objective = mtr::attacks::AttackObjective::multi(mtr::harness::parse_weights(o.raw("weights"), "weights"));
      }
      o.finish();
      const nlohmann::json aj = parse(attack_json, "attack_json");
      const mtr::attacks::AttackConfig ac = mtr::harness::parse_attack(mtr::JsonObject(aj, "attack"));
      rows = mtr::attacks::evaluate_under_attack(model->value, dataset->value, objective, ac, tasks).rows;
    } else {
      rows = mtr::attacks::evaluate_clean(model->value, dataset->value, tasks);
      for (auto& r : rows) r.attacked = r.clean;
    }
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows) {
      out.push_back({{"task", r.task}, {"metric", r.metric}, {"clean", r.clean}, {"attacked", r.attacked}});
    }
    *out_json = dup(out.dump());
  });
}

void mtr_model_free(mtr_model* model) { delete model; }

mtr_status mtr_pgd_step_schedule(double epsilon, size_t* out_steps) {
  return guard([&] {
    require(out_steps, "out_steps");
    *out_steps = mtr::attacks::pgd_step_schedule(epsilon);
  });
}

mtr_status mtr_joint_norm_prediction(const double* c, size_t m, double* out) {
  return guard([&] {
    require(c, "c");
    require(out, "out");
    *out = mtr::vuln::joint_norm_prediction(std::span<const double>(c, m * m), m);
  });
}

mtr_status mtr_uncorrelated_prediction(size_t m, double* out) {
  return guard([&] {
    require(out, "out");
    *out = mtr::vuln::uncorrelated_prediction(m);
  });
}

mtr_status mtr_run_command(const char* command, const char* config_json, const char* out_dir, int has_seed,
                           uint64_t seed, int has_workers, size_t workers, mtr_log_fn log, void* user) {
  return guard([&] {
    require(command, "command");
    require(config_json, "config_json");
    mtr::harness::CommandOptions opt;
    if (out_dir) opt.out_dir = out_dir;
    if (has_seed) opt.seed = seed;
    if (has_workers) opt.workers = workers;
    if (log) opt.log = [log, user](const std::string& line) { log(line.c_str(), user); };
    mtr::harness::run_command(command, config_json, opt);
  });
}

const char* mtr_command_names(void) {
  static const std::string names = [] {
    std::string s;
    for (const std::string& n : mtr::harness::command_names()) s += n + "\n";
    return s;
  }();
  return names.c_str();
}

}  // extern "C"
