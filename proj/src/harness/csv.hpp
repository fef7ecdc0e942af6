// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mtr::harness {

/// Shortest round-trip-safe rendering used in every CSV ("%.10g"; nan/inf spelled out).
std::string format_number(double v);

/// Comma-separated table. Lines starting with '#' are comments; fields never
/// contain commas or newlines.
class CsvTable {
 public:
  CsvTable() = default;
  explicit CsvTable(std::vector<std::string> header);

  const std::vector<std::string>& header() const noexcept { return header_; }
  const std::vector<std::vector<std::string>>& rows() const noexcept { return rows_; }
  std::vector<std::string>& comments() noexcept { return comments_; }
  const std::vector<std::string>& comments() const noexcept { return comments_; }
  std::size_t size() const noexcept { return rows_.size(); }

  void add_row(std::vector<std::string> row);
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
  const std::string& at(std::size_t row, std::string_view name) const;
  double number(std::size_t row, std::string_view name) const;
  std::vector<double> numbers(std::string_view name) const;

  std::string to_string() const;
  void write(const std::filesystem::path& path) const;
  static CsvTable parse(std::string_view text);
  static CsvTable read(const std::filesystem::path& path);

 private:
  std::vector<std::string> comments_;
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Writes `text` to `path`, creating parent directories.
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace mtr::harness
