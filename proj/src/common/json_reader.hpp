// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <set>
#include <string>
#include <string_view>

#include "common/error.hpp"
#include "json.hpp"

namespace mtr {

/// Read-once view over a JSON object that rejects keys nobody asked for.
/// Call finish() after reading every field.
class JsonObject {
 public:
  JsonObject(const nlohmann::json& value, std::string path) : value_(value), path_(std::move(path)) {
    if (!value_.is_object()) throw ConfigError(path_ + ": expected a JSON object");
  }

  bool has(std::string_view key) const { return value_.contains(std::string(key)); }

  template <typename T>
  T required(std::string_view key) {
    const std::string k(key);
    if (!value_.contains(k)) throw ConfigError(path_ + ": missing required key '" + k + "'");
    return convert<T>(k);
  }

  template <typename T>
  T optional(std::string_view key, T fallback) {
    const std::string k(key);
    if (!value_.contains(k)) return fallback;
    return convert<T>(k);
  }

  const nlohmann::json& raw(std::string_view key) {
    const std::string k(key);
    if (!value_.contains(k)) throw ConfigError(path_ + ": missing required key '" + k + "'");
    used_.insert(k);
    return value_.at(k);
  }

  JsonObject object(std::string_view key) { return JsonObject(raw(key), child_path(key)); }

  std::string child_path(std::string_view key) const { return path_ + "." + std::string(key); }
  const std::string& path() const { return path_; }

  void finish() const {
    for (const auto& item : value_.items()) {
      if (!used_.count(item.key())) throw ConfigError(path_ + ": unknown key '" + item.key() + "'");
    }
  }

 private:
  template <typename T>
  T convert(const std::string& k) {
    used_.insert(k);
    const nlohmann::json& v = value_.at(k);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path_ + "." + k + ": expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path_ + "." + k + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned() == false && v.get<long long>() < 0) {
          throw ConfigError(path_ + "." + k + ": expected a nonnegative integer");
        }
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path_ + "." + k + ": expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path_ + "." + k + ": expected a string");
    }
    try {
      return v.get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path_ + "." + k + ": " + e.what());
    }
  }

  const nlohmann::json& value_;
  std::string path_;
  std::set<std::string> used_;
};

}  // namespace mtr
