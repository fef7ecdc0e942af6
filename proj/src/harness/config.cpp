// SPDX-License-Identifier: Apache-2.0
#include "harness/config.hpp"

#include <cmath>

#include "data/dataset_io.hpp"
#include "data/scene.hpp"

namespace mtr::harness {

data::SceneParams parse_scene(JsonObject o) {
  data::SceneParams p;
  p.height = o.optional<std::size_t>("height", p.height);
  p.width = o.optional<std::size_t>("width", p.width);
  p.num_classes = o.optional<std::size_t>("num_classes", p.num_classes);
  p.min_shapes = o.optional<std::size_t>("min_shapes", p.min_shapes);
  p.max_shapes = o.optional<std::size_t>("max_shapes", p.max_shapes);
  p.correlated = o.optional<bool>("correlated", p.correlated);
  p.noise = o.optional<double>("noise", p.noise);
  o.finish();
  try {
    p.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(o.path() + ": " + e.what());
  }
  return p;
}

nlohmann::json scene_to_json(const data::SceneParams& p) {
  return {{"height", p.height},         {"width", p.width},           {"num_classes", p.num_classes},
          {"min_shapes", p.min_shapes}, {"max_shapes", p.max_shapes}, {"correlated", p.correlated},
          {"noise", p.noise}};
}

ModelShape parse_model_shape(JsonObject o) {
  ModelShape m;
  m.trunk_width = o.optional<std::size_t>("trunk_width", m.trunk_width);
  m.trunk_depth = o.optional<std::size_t>("trunk_depth", m.trunk_depth);
  m.head_width = o.optional<std::size_t>("head_width", m.head_width);
  m.head_depth = o.optional<std::size_t>("head_depth", m.head_depth);
  o.finish();
  if (m.trunk_width < 1 || m.trunk_depth < 1 || m.head_width < 1 || m.head_depth < 1) {
    throw ConfigError(o.path() + ": widths and depths must be positive");
  }
  return m;
}

nlohmann::json model_shape_to_json(const ModelShape& m) {
  return {{"trunk_width", m.trunk_width},
          {"trunk_depth", m.trunk_depth},
          {"head_width", m.head_width},
          {"head_depth", m.head_depth}};
}

nn::TrainConfig parse_train(JsonObject o) {
  nn::TrainConfig t;
  t.epochs = o.optional<std::size_t>("epochs", t.epochs);
  t.batch_size = o.optional<std::size_t>("batch_size", t.batch_size);
  t.sgd.learning_rate = o.optional<double>("learning_rate", t.sgd.learning_rate);
  t.sgd.momentum = o.optional<double>("momentum", t.sgd.momentum);
  t.sgd.weight_decay = o.optional<double>("weight_decay", t.sgd.weight_decay);
  t.lr_drop = o.optional<bool>("lr_drop", t.lr_drop);
  t.seed = o.optional<std::uint64_t>("seed", t.seed);
  o.finish();
  try {
    t.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(o.path() + ": " + e.what());
  }
  return t;
}

nlohmann::json train_to_json(const nn::TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.sgd.learning_rate},
          {"momentum", t.sgd.momentum},
          {"weight_decay", t.sgd.weight_decay},
          {"lr_drop", t.lr_drop},
          {"seed", t.seed}};
}

attacks::AttackConfig parse_attack(JsonObject o, const attacks::AttackConfig& defaults) {
  attacks::AttackConfig a = defaults;
  if (o.has("kind")) {
    try {
      a.kind = attacks::attack_kind_from_string(o.required<std::string>("kind"));
    } catch (const InvalidArgument& e) {
      throw ConfigError(o.path() + ": " + e.what());
    }
  }
  a.epsilon = o.optional<double>("epsilon", a.epsilon);
  if (o.has("steps")) {
    const nlohmann::json& s = o.raw("steps");
    if (s.is_null() || (s.is_string() && s.get<std::string>() == "auto")) {
      a.steps.reset();
    } else if (s.is_number_integer() && s.get<std::int64_t>() > 0) {
      a.steps = s.get<std::size_t>();
    } else {
      throw ConfigError(o.child_path("steps") + ": expected a positive integer or \"auto\"");
    }
  }
  a.step_size = o.optional<double>("step_size", a.step_size);
  a.random_start = o.optional<bool>("random_start", a.random_start);
  a.momentum = o.optional<double>("momentum", a.momentum);
  a.seed = o.optional<std::uint64_t>("seed", a.seed);
  o.finish();
  try {
    a.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(o.path() + ": " + e.what());
  }
  return a;
}

nlohmann::json attack_to_json(const attacks::AttackConfig& a) {
  nlohmann::json j = {{"kind", std::string(attacks::to_string(a.kind))},
                      {"epsilon", a.epsilon},
                      {"step_size", a.step_size},
                      {"random_start", a.random_start},
                      {"momentum", a.momentum},
                      {"seed", a.seed}};
  j["steps"] = a.steps ? nlohmann::json(*a.steps) : nlohmann::json("auto");
  return j;
}

ExperimentSetup parse_setup(JsonObject o) {
  ExperimentSetup s;
  if (o.has("scene")) s.scene = parse_scene(o.object("scene"));
  s.train_size = o.optional<std::size_t>("train_size", s.train_size);
  s.test_size = o.optional<std::size_t>("test_size", s.test_size);
  s.data_seed = o.optional<std::uint64_t>("data_seed", s.data_seed);
  if (o.has("model")) s.model = parse_model_shape(o.object("model"));
  if (o.has("train")) s.train = parse_train(o.object("train"));
  s.model_seed = o.optional<std::uint64_t>("model_seed", s.model_seed);
  o.finish();
  if (s.train_size < 1 || s.test_size < 1) throw ConfigError(o.path() + ": split sizes must be positive");
  return s;
}

nlohmann::json setup_to_json(const ExperimentSetup& s) {
  return {{"scene", scene_to_json(s.scene)},
          {"train_size", s.train_size},
          {"test_size", s.test_size},
          {"data_seed", s.data_seed},
          {"model", model_shape_to_json(s.model)},
          {"train", train_to_json(s.train)},
          {"model_seed", s.model_seed}};
}

nn::WeightMap parse_weights(const nlohmann::json& v, const std::string& path) {
  nn::WeightMap w;
  if (v.is_array()) {
    for (const nlohmann::json& t : v) {
      if (!t.is_string()) throw ConfigError(path + ": task names must be strings");
      if (!w.emplace(t.get<std::string>(), 1.0).second) throw ConfigError(path + ": duplicate task " + t.dump());
    }
  } else if (v.is_object()) {
    for (const auto& [name, weight] : v.items()) {
      if (!weight.is_number()) throw ConfigError(path + "." + name + ": expected a number");
      const double x = weight.get<double>();
      if (!(x >= 0.0) || !std::isfinite(x)) throw ConfigError(path + "." + name + ": weight must be finite and >= 0");
      w.emplace(name, x);
    }
  } else {
    throw ConfigError(path + ": expected a task list or a {task: weight} object");
  }
  if (w.empty()) throw ConfigError(path + ": at least one task is required");
  for (const auto& [name, x] : w) {
    if (!data::is_toy_task(name)) throw ConfigError(path + ": unknown task '" + name + "'");
  }
  return w;
}

nlohmann::json weights_to_json(const nn::WeightMap& w) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, x] : w) j[name] = x;
  return j;
}

data::Dataset DataSource::load() const {
  if (path) return data::read_dataset(*path);
  return data::generate_dataset(size, seed, scene, split);
}

DataSource parse_data_source(const nlohmann::json& v, const std::string& path, const std::string& default_split) {
  DataSource d;
  d.split = default_split;
  if (v.is_string()) {
    d.path = std::filesystem::path(v.get<std::string>());
    if (!std::filesystem::is_regular_file(*d.path)) {
      throw ConfigError(path + ": dataset file '" + d.path->string() + "' does not exist");
    }
    return d;
  }
  JsonObject o(v, path);
  if (o.has("scene")) d.scene = parse_scene(o.object("scene"));
  d.size = o.optional<std::size_t>("size", d.size);
  d.seed = o.optional<std::uint64_t>("seed", d.seed);
  d.split = o.optional<std::string>("split", d.split);
  o.finish();
  if (d.size < 1) throw ConfigError(path + ": size must be positive");
  return d;
}

nlohmann::json data_source_to_json(const DataSource& d) {
  if (d.path) return d.path->string();
  return {{"scene", scene_to_json(d.scene)}, {"size", d.size}, {"seed", d.seed}, {"split", d.split}};
}

nlohmann::json parse_json_text(std::string_view text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(what + ": invalid JSON: " + e.what());
  }
}

}  // namespace mtr::harness
