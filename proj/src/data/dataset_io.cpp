// SPDX-License-Identifier: Apache-2.0
#include "data/dataset_io.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "common/binary_io.hpp"
#include "common/error.hpp"

namespace mtr::data {

namespace {

std::uint32_t narrow(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) throw InvalidArgument(std::string(what) + " too large to store");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  const std::size_t n = dataset.size();
  if (n == 0) throw InvalidArgument("write_dataset: empty dataset");
  const std::size_t h = dataset.params.height, w = dataset.params.width, hw = h * w;
  if (dataset.images.shape() != Shape{n, 1, h, w}) throw ShapeError("write_dataset: image tensor shape mismatch");

  std::vector<std::string> stored;
  for (const auto& [name, t] : dataset.targets) {
    if (name == "recon") continue;
    if (t.shape() != Shape{n, h, w}) throw ShapeError("write_dataset: target '" + name + "' shape mismatch");
    stored.push_back(name);
  }

  ByteWriter out;
  out.bytes(std::string_view(kDatasetMagic, 4));
  out.u32(kDatasetVersion);
  out.u32(narrow(n, "sample count"));
  out.u32(narrow(h, "height"));
  out.u32(narrow(w, "width"));
  out.u32(narrow(dataset.params.num_classes, "class count"));
  out.u32(narrow(stored.size(), "task count"));
  for (const std::string& name : stored) out.string(name);

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < hw; ++p) out.f32(static_cast<float>(dataset.images[i * hw + p]));
    for (const std::string& name : stored) {
      const Tensor& t = dataset.targets.at(name);
      for (std::size_t p = 0; p < hw; ++p) {
        const double v = t[i * hw + p];
        if (name == "seg") {
          if (v < 0.0 || v > 65535.0 || v != std::floor(v)) throw InvalidArgument("write_dataset: bad class index");
          out.u16(static_cast<std::uint16_t>(v));
        } else {
          out.f32(static_cast<float>(v));
        }
      }
    }
  }
  out.write_file(path);
}

Dataset read_dataset(const std::filesystem::path& path) {
  ByteReader in = ByteReader::from_file(path);
  if (in.remaining() < 4) throw FormatError(FormatError::Kind::kTruncated, "truncated payload: file shorter than magic");
  if (in.bytes(4) != std::string_view(kDatasetMagic, 4)) {
    throw FormatError(FormatError::Kind::kBadMagic, "bad magic: not an MTDS dataset file");
  }
  const std::uint32_t version = in.u32();
  if (version != kDatasetVersion) {
    throw FormatError(FormatError::Kind::kVersionMismatch,
                      "version mismatch: file has " + std::to_string(version) + ", expected " +
                          std::to_string(kDatasetVersion));
  }
  const std::size_t n = in.u32(), h = in.u32(), w = in.u32(), k = in.u32();
  if (n == 0 || h < 8 || w < 8 || k < 2) throw FormatError(FormatError::Kind::kMalformed, "malformed dataset header");
  const std::uint32_t task_count = in.u32();
  if (task_count > 64) throw FormatError(FormatError::Kind::kMalformed, "malformed dataset header: task count");
  std::vector<std::string> tasks;
  for (std::uint32_t i = 0; i < task_count; ++i) tasks.push_back(in.string(256));

  const std::size_t hw = h * w;
  std::size_t per_sample = 4 * hw;
  for (const std::string& name : tasks) per_sample += (name == "seg" ? 2 : 4) * hw;
  if (in.remaining() < per_sample * n) throw FormatError(FormatError::Kind::kTruncated, "truncated payload");

  Dataset ds;
  ds.params.height = h;
  ds.params.width = w;
  ds.params.num_classes = k;
  ds.images = Tensor(Shape{n, 1, h, w});
  for (const std::string& name : tasks) ds.targets.emplace(name, Tensor(Shape{n, h, w}));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < hw; ++p) ds.images[i * hw + p] = in.f32();
    for (const std::string& name : tasks) {
      Tensor& t = ds.targets.at(name);
      for (std::size_t p = 0; p < hw; ++p) {
        t[i * hw + p] = name == "seg" ? static_cast<double>(in.u16()) : static_cast<double>(in.f32());
      }
    }
  }
  if (!in.at_end()) throw FormatError(FormatError::Kind::kMalformed, "trailing bytes after dataset payload");
  if (!all_finite(ds.images.data())) throw FormatError(FormatError::Kind::kMalformed, "non-finite image values");
  ds.targets.insert_or_assign("recon", ds.images.reshaped(Shape{n, h, w}));
  return ds;
}

}  // namespace mtr::data
