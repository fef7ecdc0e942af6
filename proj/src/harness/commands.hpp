// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "harness/experiments.hpp"
#include "harness/manifest.hpp"

namespace mtr::harness {

/// Error classes as seen by callers of the C API and the CLI.
enum class Status {
  kOk = 0,
  kInvalidArgument = 1,
  kConfig = 2,
  kNumeric = 3,
  kThreshold = 4,
  kIo = 5,
  kFormat = 6,
  kInternal = 7,
};

Status classify(const std::exception& e) noexcept;
/// 0 ok, 2 config or invalid argument, 3 numeric, 4 threshold, 1 otherwise.
int exit_code(Status s) noexcept;
std::string_view status_name(Status s) noexcept;

struct CommandOptions {
  std::filesystem::path out_dir = ".";
  /// Replaces the command's seeds; see the README for which ones.
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  Logger log;
};

struct CommandResult {
  RunManifest manifest;
  std::vector<std::string> warnings;
};

const std::vector<std::string>& command_names();

/// Parses `config_json`, runs `command`, writes its outputs and run.json
/// under options.out_dir. Outputs are written before a ThresholdError is
/// raised so that failing runs remain inspectable.
CommandResult run_command(std::string_view command, std::string_view config_json, const CommandOptions& options);

}  // namespace mtr::harness
