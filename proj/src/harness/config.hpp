// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "common/json_reader.hpp"
#include "harness/experiments.hpp"
#include "json.hpp"

namespace mtr::harness {

// Every parser rejects unknown keys with ConfigError and fills unspecified
// keys with defaults; every *_to_json writes all keys, so a snapshot parses
// back to the same value.

data::SceneParams parse_scene(JsonObject o);
nlohmann::json scene_to_json(const data::SceneParams& p);

ModelShape parse_model_shape(JsonObject o);
nlohmann::json model_shape_to_json(const ModelShape& m);

nn::TrainConfig parse_train(JsonObject o);
nlohmann::json train_to_json(const nn::TrainConfig& t);

attacks::AttackConfig parse_attack(JsonObject o, const attacks::AttackConfig& defaults = {});
nlohmann::json attack_to_json(const attacks::AttackConfig& a);

ExperimentSetup parse_setup(JsonObject o);
nlohmann::json setup_to_json(const ExperimentSetup& s);

nn::WeightMap parse_weights(const nlohmann::json& v, const std::string& path);
nlohmann::json weights_to_json(const nn::WeightMap& w);

/// A dataset read from an MTDS file or generated from a scene stream.
struct DataSource {
  std::optional<std::filesystem::path> path;
  data::SceneParams scene;
  std::size_t size = 100;
  std::uint64_t seed = 1;
  std::string split = "test";

  data::Dataset load() const;
};
/// Either a path string or {"scene", "size", "seed", "split"}.
DataSource parse_data_source(const nlohmann::json& v, const std::string& path,
                             const std::string& default_split = "test");
nlohmann::json data_source_to_json(const DataSource& d);

/// Parses JSON text; syntax errors become ConfigError.
nlohmann::json parse_json_text(std::string_view text, const std::string& what);

}  // namespace mtr::harness
