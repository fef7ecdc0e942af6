// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>

#include "json.hpp"

#include "nn/model.hpp"

namespace mtr::nn {

inline constexpr char kCheckpointMagic[4] = {'M', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian):
//   "MTCK" | u32 version | u32 len, model-config JSON bytes | u32 count
//   count x (u32 len, name bytes | u32 rank | rank x u32 dim | f32 payload)
// Values are stored as 32-bit floats; loading widens them back to double.
void save_checkpoint(const SharedBackboneModel& model, const std::filesystem::path& path);
SharedBackboneModel load_checkpoint(const std::filesystem::path& path);

nlohmann::json model_config_to_json(const ModelConfig& config);
/// Strict: unknown keys are a ConfigError. `path` prefixes error messages.
ModelConfig model_config_from_json(const nlohmann::json& value, const std::string& path = "model");

}  // namespace mtr::nn
