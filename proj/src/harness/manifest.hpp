// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace mtr::harness {

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(std::string_view bytes);

struct ManifestEntry {
  std::string path;  // relative to the run directory
  std::string sha256;
  std::uintmax_t bytes = 0;
};

/// run.json: the effective config, tool version, wall-clock and a digest per
/// emitted file.
struct RunManifest {
  std::string command;
  std::string tool_version;
  nlohmann::json config;
  nlohmann::json seeds;
  std::string started_at;  // UTC, ISO 8601
  double wall_clock_seconds = 0.0;
  std::vector<ManifestEntry> outputs;

  /// Digests `relative` inside `root` and appends it (replacing an earlier
  /// entry with the same path).
  void add_output(const std::filesystem::path& root, const std::string& relative);

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& value);
  void write(const std::filesystem::path& root) const;
  static RunManifest read(const std::filesystem::path& root);
};

inline constexpr const char* kManifestName = "run.json";

struct DigestMismatch {
  std::string path;
  std::string expected;
  std::string actual;  // empty when the file is missing
};

/// Recomputes every listed digest under `root`.
std::vector<DigestMismatch> verify_manifest(const RunManifest& manifest, const std::filesystem::path& root);

std::string utc_timestamp();

}  // namespace mtr::harness
