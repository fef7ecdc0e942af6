// SPDX-License-Identifier: Apache-2.0
#include "harness/csv.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "common/error.hpp"

namespace mtr::harness {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

void CsvTable::add_row(std::vector<std::string> row) {
  if (row.size() != header_.size()) {
    throw InvalidArgument("csv row has " + std::to_string(row.size()) + " fields, header has " +
                          std::to_string(header_.size()));
  }
  for (const std::string& f : row) {
    if (f.find_first_of(",\n\r") != std::string::npos) throw InvalidArgument("csv field contains a separator: " + f);
  }
  rows_.push_back(std::move(row));
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header_.size(); ++i) {
    if (header_[i] == name) return i;
  }
  throw InvalidArgument("csv has no column '" + std::string(name) + "'");
}

bool CsvTable::has_column(std::string_view name) const {
  for (const std::string& h : header_) {
    if (h == name) return true;
  }
  return false;
}

const std::string& CsvTable::at(std::size_t row, std::string_view name) const { return rows_.at(row).at(column(name)); }

double CsvTable::number(std::size_t row, std::string_view name) const {
  const std::string& s = at(row, name);
  if (s == "nan") return std::nan("");
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) {
    throw FormatError(FormatError::Kind::kMalformed, "csv field '" + s + "' is not a number");
  }
  return v;
}

std::vector<double> CsvTable::numbers(std::string_view name) const {
  std::vector<double> out;
  for (std::size_t r = 0; r < rows_.size(); ++r) out.push_back(number(r, name));
  return out;
}

std::string CsvTable::to_string() const {
  std::string out;
  for (const std::string& c : comments_) out += "# " + c + "\n";
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out += ',';
      out += fields[i];
    }
    out += '\n';
  };
  line(header_);
  for (const auto& r : rows_) line(r);
  return out;
}

void CsvTable::write(const std::filesystem::path& path) const { write_text(path, to_string()); }

CsvTable CsvTable::parse(std::string_view text) {
  CsvTable t;
  bool have_header = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line.front() == '#') {
      line.remove_prefix(1);
      if (!line.empty() && line.front() == ' ') line.remove_prefix(1);
      t.comments_.emplace_back(line);
      continue;
    }
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      fields.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (!have_header) {
      t.header_ = std::move(fields);
      have_header = true;
    } else {
      if (fields.size() != t.header_.size()) {
        throw FormatError(FormatError::Kind::kMalformed, "csv row " + std::to_string(t.rows_.size() + 1) +
                                                             " has the wrong number of fields");
      }
      t.rows_.push_back(std::move(fields));
    }
  }
  if (!have_header) throw FormatError(FormatError::Kind::kTruncated, "csv has no header");
  return t;
}

CsvTable CsvTable::read(const std::filesystem::path& path) { return parse(read_text(path)); }

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace mtr::harness
