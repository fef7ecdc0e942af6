// SPDX-License-Identifier: Apache-2.0
#include "harness/manifest.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <memory>

#include "common/error.hpp"
#include "common/json_reader.hpp"
#include "harness/csv.hpp"

namespace mtr::harness {

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256 init failed");
  }
  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw Error("sha256 update failed");
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md, &len) != 1) throw Error("sha256 final failed");
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out += digits[md[i] >> 4];
      out += digits[md[i] & 15];
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Sha256 h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

void RunManifest::add_output(const std::filesystem::path& root, const std::string& relative) {
  const std::filesystem::path full = root / relative;
  ManifestEntry e{relative, sha256_file(full), std::filesystem::file_size(full)};
  for (ManifestEntry& existing : outputs) {
    if (existing.path == relative) {
      existing = e;
      return;
    }
  }
  outputs.push_back(e);
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json files = nlohmann::json::array();
  for (const ManifestEntry& e : outputs) files.push_back({{"path", e.path}, {"sha256", e.sha256}, {"bytes", e.bytes}});
  return {{"command", command},       {"tool_version", tool_version},
          {"config", config},         {"seeds", seeds},
          {"started_at", started_at}, {"wall_clock_seconds", wall_clock_seconds},
          {"outputs", files}};
}

RunManifest RunManifest::from_json(const nlohmann::json& value) {
  JsonObject o(value, kManifestName);
  RunManifest m;
  m.command = o.required<std::string>("command");
  m.tool_version = o.required<std::string>("tool_version");
  m.config = o.raw("config");
  m.seeds = o.raw("seeds");
  m.started_at = o.required<std::string>("started_at");
  m.wall_clock_seconds = o.required<double>("wall_clock_seconds");
  const nlohmann::json& files = o.raw("outputs");
  if (!files.is_array()) throw FormatError(FormatError::Kind::kMalformed, "run.json: outputs must be an array");
  for (const nlohmann::json& f : files) {
    JsonObject e(f, "run.json.outputs[]");
    ManifestEntry entry;
    entry.path = e.required<std::string>("path");
    entry.sha256 = e.required<std::string>("sha256");
    entry.bytes = e.required<std::uintmax_t>("bytes");
    e.finish();
    m.outputs.push_back(entry);
  }
  o.finish();
  return m;
}

void RunManifest::write(const std::filesystem::path& root) const {
  write_text(root / kManifestName, to_json().dump(2) + "\n");
}

RunManifest RunManifest::read(const std::filesystem::path& root) {
  const std::string text = read_text(root / kManifestName);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Kind::kMalformed, (root / kManifestName).string() + ": " + e.what());
  }
  try {
    return from_json(value);
  } catch (const ConfigError& e) {
    throw FormatError(FormatError::Kind::kMalformed, (root / kManifestName).string() + ": " + e.what());
  }
}

std::vector<DigestMismatch> verify_manifest(const RunManifest& manifest, const std::filesystem::path& root) {
  std::vector<DigestMismatch> bad;
  for (const ManifestEntry& e : manifest.outputs) {
    const std::filesystem::path full = root / e.path;
    if (!std::filesystem::is_regular_file(full)) {
      bad.push_back({e.path, e.sha256, ""});
      continue;
    }
    const std::string actual = sha256_file(full);
    if (actual != e.sha256) bad.push_back({e.path, e.sha256, actual});
  }
  return bad;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace mtr::harness
