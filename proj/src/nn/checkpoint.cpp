// SPDX-License-Identifier: Apache-2.0
#include "nn/checkpoint.hpp"

#include <cstring>
#include <limits>

#include "common/binary_io.hpp"
#include "common/error.hpp"
#include "common/json_reader.hpp"

namespace mtr::nn {

namespace {

using nlohmann::json;

constexpr std::uint32_t kMaxRank = 8;

void write_param(ByteWriter& w, const ad::Parameter& p) {
  w.string(p.name);
  w.u32(static_cast<std::uint32_t>(p.value.rank()));
  for (std::size_t d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : p.value.data()) w.f32(static_cast<float>(v));
}

ad::Parameter read_param(ByteReader& r) {
  ad::Parameter p;
  p.name = r.string(4096);
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > kMaxRank) {
    throw FormatError(FormatError::Kind::kMalformed, "parameter '" + p.name + "' has invalid rank");
  }
  Shape shape(rank);
  std::size_t numel = 1;
  for (auto& d : shape) {
    d = r.u32();
    if (d == 0) throw FormatError(FormatError::Kind::kMalformed, "parameter '" + p.name + "' has a zero dimension");
    numel *= d;
  }
  if (numel > r.remaining() / 4) throw FormatError(FormatError::Kind::kTruncated, "truncated payload");
  std::vector<double> values(numel);
  for (double& v : values) v = static_cast<double>(r.f32());
  p.value = Tensor(std::move(shape), std::move(values));
  if (!all_finite(p.value.data())) {
    throw FormatError(FormatError::Kind::kMalformed, "parameter '" + p.name + "' holds non-finite values");
  }
  p.grad = Tensor(p.value.shape(), 0.0);
  return p;
}

TaskSpec task_from_json(const json& value, const std::string& path, std::size_t height, std::size_t width,
                        std::size_t num_classes) {
  if (value.is_string()) return toy_task_spec(value.get<std::string>(), height, width, num_classes);
  JsonObject o(value, path);
  TaskSpec t;
  t.name = o.required<std::string>("name");
  if (o.has("loss")) {
    try {
      t.loss = loss_kind_from_string(o.required<std::string>("loss"));
    } catch (const InvalidArgument& e) {
      throw ConfigError(path + ": " + e.what());
    }
    t.output_shape = o.required<Shape>("output_shape");
  } else {
    t = toy_task_spec(t.name, height, width, num_classes);
    if (o.has("output_shape")) t.output_shape = o.required<Shape>("output_shape");
  }
  t.weight = o.optional<double>("weight", 1.0);
  t.head_depth = o.optional<std::size_t>("head_depth", t.head_depth);
  o.finish();
  return t;
}

}  // namespace

json model_config_to_json(const ModelConfig& config) {
  json tasks = json::array();
  for (const TaskSpec& t : config.tasks) {
    tasks.push_back({{"name", t.name},
                     {"loss", std::string(to_string(t.loss))},
                     {"weight", t.weight},
                     {"output_shape", t.output_shape},
                     {"head_depth", t.head_depth}});
  }
  return {{"in_channels", config.in_channels}, {"height", config.height},
          {"width", config.width},             {"trunk_width", config.trunk_width},
          {"trunk_depth", config.trunk_depth}, {"head_width", config.head_width},
          {"tasks", tasks}};
}

ModelConfig model_config_from_json(const json& value, const std::string& path) {
  JsonObject o(value, path);
  ModelConfig c;
  c.in_channels = o.optional<std::size_t>("in_channels", c.in_channels);
  c.height = o.optional<std::size_t>("height", c.height);
  c.width = o.optional<std::size_t>("width", c.width);
  c.trunk_width = o.optional<std::size_t>("trunk_width", c.trunk_width);
  c.trunk_depth = o.optional<std::size_t>("trunk_depth", c.trunk_depth);
  c.head_width = o.optional<std::size_t>("head_width", c.head_width);
  const auto num_classes = o.optional<std::size_t>("num_classes", 4);
  const json& tasks = o.raw("tasks");
  if (!tasks.is_array()) throw ConfigError(o.child_path("tasks") + ": expected an array");
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const std::string p = o.child_path("tasks") + "[" + std::to_string(i) + "]";
    try {
      c.tasks.push_back(task_from_json(tasks[i], p, c.height, c.width, num_classes));
    } catch (const ConfigError&) {
      throw;
    } catch (const InvalidArgument& e) {
      throw ConfigError(p + ": " + e.what());
    }
  }
  o.finish();
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return c;
}

void save_checkpoint(const SharedBackboneModel& model, const std::filesystem::path& path) {
  ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.string(model_config_to_json(model.config()).dump());
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const ad::Parameter* p : params) write_param(w, *p);
  w.write_file(path);
}

SharedBackboneModel load_checkpoint(const std::filesystem::path& path) {
  ByteReader r = ByteReader::from_file(path);
  if (r.remaining() < 4 || r.bytes(4) != std::string_view(kCheckpointMagic, 4)) {
    throw FormatError(FormatError::Kind::kBadMagic, path.string() + ": bad magic (not an MTCK checkpoint)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(FormatError::Kind::kVersionMismatch, path.string() + ": checkpoint version " +
                                                               std::to_string(version) + ", expected " +
                                                               std::to_string(kCheckpointVersion));
  }
  ModelConfig config;
  try {
    config = model_config_from_json(json::parse(r.string()), "checkpoint.config");
  } catch (const json::exception& e) {
    throw FormatError(FormatError::Kind::kMalformed, path.string() + ": bad config block: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(FormatError::Kind::kMalformed, path.string() + ": " + e.what());
  }
  // Rebuild the layer structure from the config, then fill in stored values.
  SharedBackboneModel model = SharedBackboneModel::build(config, 0);
  std::map<std::string, ad::Parameter*, std::less<>> by_name;
  for (ad::Parameter* p : model.parameters()) by_name.emplace(p->name, p);
  const std::uint32_t count = r.u32();
  if (count != by_name.size()) {
    throw FormatError(FormatError::Kind::kMalformed, path.string() + ": parameter count " + std::to_string(count) +
                                                         " does not match the model config");
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    ad::Parameter p = read_param(r);
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw FormatError(FormatError::Kind::kMalformed, path.string() + ": unexpected parameter '" + p.name + "'");
    }
    if (p.value.shape() != it->second->value.shape()) {
      throw FormatError(FormatError::Kind::kMalformed, path.string() + ": parameter '" + p.name + "' has shape " +
                                                           shape_to_string(p.value.shape()) + ", expected " +
                                                           shape_to_string(it->second->value.shape()));
    }
    *it->second = std::move(p);
    by_name.erase(it);
  }
  if (!r.at_end()) throw FormatError(FormatError::Kind::kMalformed, path.string() + ": trailing bytes");
  return model;
}

}  // namespace mtr::nn
