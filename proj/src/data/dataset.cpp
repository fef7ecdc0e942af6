// SPDX-License-Identifier: Apache-2.0
#include "data/dataset.hpp"

#include <algorithm>

#include "common/error.hpp"

namespace mtr::data {

bool is_toy_task(std::string_view name) {
  return std::find(kToyTasks.begin(), kToyTasks.end(), name) != kToyTasks.end();
}

Tensor take_rows(const Tensor& t, std::span<const std::size_t> rows) {
  if (t.rank() < 1) throw ShapeError("take_rows: scalar tensor");
  if (rows.empty()) throw InvalidArgument("take_rows: empty row set");
  const std::size_t n = t.dim(0);
  const std::size_t stride = t.numel() / n;
  Shape shape = t.shape();
  shape[0] = rows.size();
  Tensor out(shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) throw InvalidArgument("take_rows: row index out of range");
    const auto src = t.data().subspan(rows[r] * stride, stride);
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(r * stride));
  }
  return out;
}

Batch Dataset::batch(std::span<const std::size_t> indices) const {
  Batch b{take_rows(images, indices), {}};
  for (const auto& [name, t] : targets) b.targets.emplace(name, take_rows(t, indices));
  return b;
}

Batch Dataset::example(std::size_t index) const {
  const std::size_t idx[] = {index};
  return batch(idx);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.params = params;
  Batch b = batch(indices);
  out.images = std::move(b.images);
  out.targets = std::move(b.targets);
  if (!scene_seeds.empty()) {
    for (std::size_t i : indices) out.scene_seeds.push_back(scene_seeds.at(i));
  }
  return out;
}

std::vector<std::string> Dataset::task_names() const {
  std::vector<std::string> names;
  for (const auto& [name, t] : targets) names.push_back(name);
  return names;
}

bool Dataset::same_content(const Dataset& other) const {
  return params.height == other.params.height && params.width == other.params.width &&
         params.num_classes == other.params.num_classes && images == other.images && targets == other.targets;
}

}  // namespace mtr::data
