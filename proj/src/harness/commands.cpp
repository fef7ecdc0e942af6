// SPDX-License-Identifier: Apache-2.0
#include "harness/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>

#include "advtrain/advtrain.hpp"
#include "attacks/evaluate.hpp"
#include "common/error.hpp"
#include "common/json_reader.hpp"
#include "data/dataset_io.hpp"
#include "data/scene.hpp"
#include "harness/config.hpp"
#include "harness/csv.hpp"
#include "harness/svg.hpp"
#include "nn/checkpoint.hpp"
#include "vulnerability/vulnerability.hpp"

namespace mtr::harness {

Status classify(const std::exception& e) noexcept {
  if (dynamic_cast<const ConfigError*>(&e)) return Status::kConfig;
  if (dynamic_cast<const InvalidArgument*>(&e)) return Status::kInvalidArgument;
  if (dynamic_cast<const NumericError*>(&e)) return Status::kNumeric;
  if (dynamic_cast<const ThresholdError*>(&e)) return Status::kThreshold;
  if (dynamic_cast<const FormatError*>(&e)) return Status::kFormat;
  if (dynamic_cast<const IoError*>(&e)) return Status::kIo;
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return Status::kIo;
  return Status::kInternal;
}

int exit_code(Status s) noexcept {
  switch (s) {
    case Status::kOk: return 0;
    case Status::kConfig:
    case Status::kInvalidArgument: return 2;
    case Status::kNumeric: return 3;
    case Status::kThreshold: return 4;
    default: return 1;
  }
}

std::string_view status_name(Status s) noexcept {
  switch (s) {
    case Status::kOk: return "ok";
    case Status::kInvalidArgument: return "invalid_argument";
    case Status::kConfig: return "config_error";
    case Status::kNumeric: return "numeric_error";
    case Status::kThreshold: return "threshold_violation";
    case Status::kIo: return "io_error";
    case Status::kFormat: return "format_error";
    case Status::kInternal: return "internal_error";
  }
  return "unknown";
}

namespace {

std::string num(double v) { return format_number(v); }
std::string num(std::size_t v) { return std::to_string(v); }

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

/// Output directory, manifest and wall clock of one invocation.
class Run {
 public:
  Run(std::string command, const CommandOptions& options)
      : options_(options), start_(std::chrono::steady_clock::now()) {
    manifest_.command = std::move(command);
    manifest_.tool_version = MTRLAB_VERSION;
    manifest_.started_at = utc_timestamp();
    std::filesystem::create_directories(options_.out_dir);
  }

  void set_config(nlohmann::json config, nlohmann::json seeds) {
    manifest_.config = std::move(config);
    manifest_.seeds = std::move(seeds);
  }

  std::filesystem::path path(const std::string& relative) const { return options_.out_dir / relative; }

  /// Writes the CSV with a provenance comment naming the command and seeds.
  void emit_csv(const std::string& relative, CsvTable table) {
    table.comments().insert(table.comments().begin(),
                            "mtrlab " + manifest_.command + " seeds=" + manifest_.seeds.dump());
    table.write(path(relative));
    record(relative);
  }

  void emit_text(const std::string& relative, std::string_view text) {
    write_text(path(relative), text);
    record(relative);
  }

  /// Registers a file already written under the output directory.
  void record(const std::string& relative) { manifest_.add_output(options_.out_dir, relative); }

  void log(const std::string& line) const {
    if (options_.log) options_.log(line);
  }
  const Logger& logger() const { return options_.log; }
  void warn(const std::string& w) {
    warnings_.push_back(w);
    log("warning: " + w);
  }

  CommandResult finish() {
    manifest_.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    manifest_.write(options_.out_dir);
    char secs[32];
    std::snprintf(secs, sizeof secs, "%.1f", manifest_.wall_clock_seconds);
    log(manifest_.command + ": wrote " + std::to_string(manifest_.outputs.size()) + " output(s) to " +
        options_.out_dir.string() + " in " + secs + " s");
    return {manifest_, warnings_};
  }

 private:
  const CommandOptions& options_;
  std::chrono::steady_clock::time_point start_;
  RunManifest manifest_;
  std::vector<std::string> warnings_;
};

nn::SharedBackboneModel load_model(const nlohmann::json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path + ": expected a checkpoint path");
  const std::filesystem::path p = v.get<std::string>();
  if (!std::filesystem::is_regular_file(p)) throw ConfigError(path + ": checkpoint '" + p.string() + "' does not exist");
  return nn::load_checkpoint(p);
}

std::vector<std::string> parse_names(const nlohmann::json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path + ": expected a list of task names");
  std::vector<std::string> out;
  for (const nlohmann::json& t : v) {
    if (!t.is_string()) throw ConfigError(path + ": task names must be strings");
    out.push_back(t.get<std::string>());
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(const nlohmann::json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path + ": expected a list");
  std::vector<T> out;
  for (const nlohmann::json& x : v) {
    if constexpr (std::is_integral_v<T>) {
      if (!x.is_number_integer() || x.get<std::int64_t>() < 0) throw ConfigError(path + ": expected nonnegative integers");
    } else {
      if (!x.is_number()) throw ConfigError(path + ": expected numbers");
    }
    out.push_back(x.get<T>());
  }
  return out;
}

void check_tasks(const nn::SharedBackboneModel& model, const std::vector<std::string>& tasks, const std::string& path) {
  for (const std::string& t : tasks) {
    if (!model.has_task(t)) throw ConfigError(path + ": model has no task '" + t + "'");
  }
}

CsvTable clean_metrics_table(const nn::SharedBackboneModel& model, const data::Dataset& ds) {
  CsvTable t({"task", "metric", "value"});
  for (const attacks::TaskMetric& m : attacks::evaluate_clean(model, ds, model.task_names())) {
    t.add_row({m.task, m.metric, num(m.clean)});
  }
  return t;
}

nn::ModelConfig config_for(const data::SceneParams& scene, const ModelShape& shape,
                           const std::vector<std::string>& tasks, const nn::WeightMap& weights) {
  ExperimentSetup s;
  s.scene = scene;
  s.model = shape;
  nn::ModelConfig mc = model_config(s, tasks);
  for (nn::TaskSpec& t : mc.tasks) {
    auto it = weights.find(t.name);
    if (it != weights.end()) t.weight = it->second;
  }
  return mc;
}

// ---------------------------------------------------------------------------

CommandResult cmd_gen_data(JsonObject o, const CommandOptions& opt) {
  Run run("gen-data", opt);
  data::SceneParams scene;
  if (o.has("scene")) scene = parse_scene(o.object("scene"));
  const std::size_t train_size = o.optional<std::size_t>("train_size", 200);
  const std::size_t test_size = o.optional<std::size_t>("test_size", 100);
  std::uint64_t seed = o.optional<std::uint64_t>("seed", 1);
  o.finish();
  if (opt.seed) seed = *opt.seed;
  if (train_size < 1 && test_size < 1) throw ConfigError("config: nothing to generate");
  run.set_config({{"scene", scene_to_json(scene)}, {"train_size", train_size}, {"test_size", test_size}, {"seed", seed}},
                 {{"seed", seed}});
  CsvTable summary({"split", "examples", "height", "width", "seed"});
  for (const auto& [split, n] : {std::pair<std::string, std::size_t>{"train", train_size}, {"test", test_size}}) {
    if (n == 0) continue;
    const data::Dataset ds = data::generate_dataset(n, seed, scene, split);
    data::write_dataset(ds, run.path(split + ".mtds"));
    run.record(split + ".mtds");
    summary.add_row({split, num(n), num(scene.height), num(scene.width), std::to_string(seed)});
    run.log("gen-data: wrote " + split + ".mtds (" + std::to_string(n) + " examples)");
  }
  run.emit_csv("datasets.csv", summary);
  return run.finish();
}

struct TrainInputs {
  DataSource train_data;
  std::optional<DataSource> eval_data;
  ModelShape shape;
  nn::TrainConfig train;
  std::uint64_t model_seed = 0;
};

TrainInputs parse_train_inputs(JsonObject& o, const CommandOptions& opt) {
  TrainInputs in;
  in.train_data = parse_data_source(o.raw("train_data"), o.child_path("train_data"), "train");
  if (o.has("eval_data")) in.eval_data = parse_data_source(o.raw("eval_data"), o.child_path("eval_data"));
  if (o.has("model")) in.shape = parse_model_shape(o.object("model"));
  if (o.has("train")) in.train = parse_train(o.object("train"));
  in.model_seed = o.optional<std::uint64_t>("model_seed", 0);
  if (opt.seed) {
    in.model_seed = *opt.seed;
    in.train.seed = *opt.seed;
  }
  return in;
}

nlohmann::json train_inputs_json(const TrainInputs& in) {
  nlohmann::json j = {{"train_data", data_source_to_json(in.train_data)},
                      {"model", model_shape_to_json(in.shape)},
                      {"train", train_to_json(in.train)},
                      {"model_seed", in.model_seed}};
  if (in.eval_data) j["eval_data"] = data_source_to_json(*in.eval_data);
  return j;
}

CommandResult cmd_train(JsonObject o, const CommandOptions& opt) {
  Run run("train", opt);
  TrainInputs in = parse_train_inputs(o, opt);
  const nn::WeightMap weights = parse_weights(o.raw("tasks"), o.child_path("tasks"));
  o.finish();
  nlohmann::json snapshot = train_inputs_json(in);
  snapshot["tasks"] = weights_to_json(weights);
  run.set_config(snapshot, {{"model_seed", in.model_seed}, {"train.seed", in.train.seed}});

  const data::Dataset train = in.train_data.load();
  std::vector<std::string> tasks;
  for (const auto& [t, w] : weights) tasks.push_back(t);
  nn::SharedBackboneModel model =
      nn::SharedBackboneModel::build(config_for(train.params, in.shape, tasks, weights), in.model_seed);
  CsvTable history({"epoch", "mean_loss", "learning_rate"});
  nn::train(model, train, weights, in.train, [&](const nn::EpochStats& s) {
    history.add_row({num(s.epoch), num(s.mean_loss), num(s.learning_rate)});
    run.log("train: epoch " + std::to_string(s.epoch) + " loss " + num(s.mean_loss));
  });
  nn::save_checkpoint(model, run.path("model.mtck"));
  run.record("model.mtck");
  run.emit_csv("history.csv", history);
  if (in.eval_data) run.emit_csv("metrics.csv", clean_metrics_table(model, in.eval_data->load()));
  return run.finish();
}

CommandResult cmd_advtrain(JsonObject o, const CommandOptions& opt) {
  Run run("advtrain", opt);
  TrainInputs in = parse_train_inputs(o, opt);
  const std::string main = o.required<std::string>("main_task");
  const std::vector<std::string> aux = o.has("aux_tasks") ? parse_names(o.raw("aux_tasks"), o.child_path("aux_tasks"))
                                                          : std::vector<std::string>{};
  advtrain::AdvTrainConfig ac;
  ac.lambda_a = o.optional<double>("lambda_a", ac.lambda_a);
  if (o.has("attack")) ac.attack = parse_attack(o.object("attack"), ac.attack);
  if (opt.seed) ac.attack.seed = *opt.seed;
  const bool robust = o.optional<bool>("robust_suite", false);
  o.finish();
  ac.train = in.train;
  if (!data::is_toy_task(main)) throw ConfigError("config.main_task: unknown task '" + main + "'");
  const advtrain::TaskCombinationSet set = aux.empty() ? advtrain::TaskCombinationSet::single(main)
                                                       : advtrain::TaskCombinationSet::with_auxiliary(main, aux, ac.lambda_a);
  try {
    set.validate();
    ac.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  nlohmann::json snapshot = train_inputs_json(in);
  snapshot["main_task"] = main;
  snapshot["aux_tasks"] = aux;
  snapshot["lambda_a"] = ac.lambda_a;
  snapshot["attack"] = attack_to_json(ac.attack);
  snapshot["robust_suite"] = robust;
  run.set_config(snapshot,
                 {{"model_seed", in.model_seed}, {"train.seed", in.train.seed}, {"attack.seed", ac.attack.seed}});

  const data::Dataset train = in.train_data.load();
  std::vector<std::string> tasks{main};
  tasks.insert(tasks.end(), aux.begin(), aux.end());
  nn::WeightMap weights{{main, 1.0}};
  for (const std::string& a : aux) weights[a] = ac.lambda_a;
  nn::SharedBackboneModel model =
      nn::SharedBackboneModel::build(config_for(train.params, in.shape, tasks, weights), in.model_seed);
  CsvTable history({"epoch", "subset", "clean_loss", "adv_loss", "attack_gradient_passes", "optimizer_steps"});
  advtrain::adversarial_train(model, train, set, ac, [&](const advtrain::HistoryRow& r) {
    history.add_row({num(r.epoch), num(r.subset), num(r.clean_loss), num(r.adv_loss), num(r.attack_gradient_passes),
                     num(r.optimizer_steps)});
    run.log("advtrain: epoch " + std::to_string(r.epoch) + " subset " + std::to_string(r.subset) + " adv loss " +
            num(r.adv_loss));
  });
  nn::save_checkpoint(model, run.path("model.mtck"));
  run.record("model.mtck");
  run.emit_csv("history.csv", history);
  if (in.eval_data) {
    const data::Dataset eval = in.eval_data->load();
    run.emit_csv("metrics.csv", clean_metrics_table(model, eval));
    if (robust) {
      CsvTable t({"attack", "task", "metric", "value"});
      for (const advtrain::RobustRow& r : advtrain::robust_eval(model, eval, main, ac.attack.epsilon, ac.attack.seed)) {
        t.add_row({r.attack, r.task, r.metric, num(r.value)});
      }
      run.emit_csv("robust.csv", t);
    }
  } else if (robust) {
    throw ConfigError("config.robust_suite requires eval_data");
  }
  return run.finish();
}

CommandResult cmd_attack_eval(JsonObject o, const CommandOptions& opt) {
  Run run("attack-eval", opt);
  const nlohmann::json ckpt = o.raw("checkpoint");
  const nn::SharedBackboneModel model = load_model(ckpt, o.child_path("checkpoint"));
  const DataSource source = parse_data_source(o.raw("data"), o.child_path("data"));
  attacks::AttackObjective objective;
  {
    JsonObject ob = o.object("objective");
    if (ob.has("task") == ob.has("weights")) {
      throw ConfigError(ob.path() + ": give exactly one of 'task' (single-task) or 'weights' (multi-task)");
    }
    if (ob.has("task")) {
      objective = attacks::AttackObjective::single(ob.required<std::string>("task"));
    } else {
      objective = attacks::AttackObjective::multi(parse_weights(ob.raw("weights"), ob.child_path("weights")));
    }
    ob.finish();
  }
  std::vector<attacks::AttackConfig> configs;
  const nlohmann::json& list = o.raw("attacks");
  if (!list.is_array() || list.empty()) throw ConfigError("config.attacks: expected a nonempty list");
  for (std::size_t i = 0; i < list.size(); ++i) {
    configs.push_back(parse_attack(JsonObject(list[i], "config.attacks[" + std::to_string(i) + "]")));
    if (opt.seed) configs.back().seed = *opt.seed;
  }
  std::vector<std::string> tasks =
      o.has("tasks") ? parse_names(o.raw("tasks"), o.child_path("tasks")) : model.task_names();
  o.finish();
  check_tasks(model, tasks, "config.tasks");
  try {
    objective.validate(model);
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config.objective: ") + e.what());
  }
  nlohmann::json attacks_json = nlohmann::json::array();
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& c : configs) {
    attacks_json.push_back(attack_to_json(c));
    seeds.push_back(c.seed);
  }
  nlohmann::json obj_json = objective.mode == attacks::AttackObjective::Mode::kSingleTask
                                ? nlohmann::json{{"task", objective.task}}
                                : nlohmann::json{{"weights", weights_to_json(objective.weights)}};
  run.set_config({{"checkpoint", ckpt}, {"data", data_source_to_json(source)}, {"objective", obj_json},
                  {"attacks", attacks_json}, {"tasks", tasks}},
                 {{"attack.seed", seeds}});
  const data::Dataset ds = source.load();
  CsvTable t({"attack", "kind", "epsilon", "steps", "seed", "objective", "task", "metric", "clean", "attacked"});
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const attacks::AttackConfig& c = configs[i];
    const attacks::AttackEvaluation r = attacks::evaluate_under_attack(model, ds, objective, c, tasks);
    for (const attacks::TaskMetric& m : r.rows) {
      t.add_row({num(i), std::string(attacks::to_string(c.kind)), num(c.epsilon), num(c.resolved_steps()),
                 std::to_string(c.seed), objective.describe(), m.task, m.metric, num(m.clean), num(m.attacked)});
    }
    run.log("attack-eval: attack " + std::to_string(i) + " done");
  }
  run.emit_csv("attack_eval.csv", t);
  return run.finish();
}

CommandResult cmd_vuln_scan(JsonObject o, const CommandOptions& opt) {
  Run run("vuln-scan", opt);
  const nlohmann::json ckpt = o.raw("checkpoint");
  const nn::SharedBackboneModel model = load_model(ckpt, o.child_path("checkpoint"));
  const DataSource source = parse_data_source(o.raw("data"), o.child_path("data"));
  const std::vector<std::string> tasks =
      o.has("tasks") ? parse_names(o.raw("tasks"), o.child_path("tasks")) : model.task_names();
  const std::size_t examples = o.optional<std::size_t>("examples", 32);
  const double scale = o.optional<double>("loss_scale", 1.0);
  o.finish();
  check_tasks(model, tasks, "config.tasks");
  if (examples < 2) throw ConfigError("config.examples: need at least 2 examples for a covariance");
  if (!(scale > 0.0)) throw ConfigError("config.loss_scale: must be positive");
  run.set_config({{"checkpoint", ckpt}, {"data", data_source_to_json(source)}, {"tasks", tasks},
                  {"examples", examples}, {"loss_scale", scale}},
                 nlohmann::json::object());
  data::Dataset ds = source.load();
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < std::min(examples, ds.size()); ++i) idx.push_back(i);
  ds = ds.subset(idx);
  const vuln::VulnerabilityReport r = vuln::vulnerability_report(model, ds, tasks, scale);
  CsvTable t({"quantity", "task", "value"});
  for (std::size_t i = 0; i < tasks.size(); ++i) t.add_row({"task_norm", tasks[i], num(r.task_norms[i])});
  const std::string all = join(tasks, "+");
  t.add_row({"joint_norm", all, num(r.joint_norm)});
  t.add_row({"joint_rms", all, num(r.joint_rms)});
  t.add_row({"predicted_ratio", all, num(r.predicted_ratio)});
  t.add_row({"predicted_ratio_raw", all, num(r.predicted_ratio_raw)});
  t.add_row({"equicorrelated_prediction", all, num(r.equicorrelated_prediction)});
  t.add_row({"predicted_ratio_uncorrelated", all, num(r.predicted_ratio_uncorrelated)});
  t.add_row({"samples", all, num(r.samples)});
  run.emit_csv("vulnerability.csv", t);
  CsvTable c({"task_i", "task_j", "centered", "raw", "raw_stderr"});
  const std::size_t m = tasks.size();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      c.add_row({tasks[i], tasks[j], num(r.covariance.centered[i * m + j]), num(r.covariance.raw[i * m + j]),
                 num(r.covariance.raw_stderr[i * m + j])});
    }
  run.emit_csv("covariance.csv", c);
  return run.finish();
}

CommandResult cmd_subsample_curve(JsonObject o, const CommandOptions& opt) {
  Run run("subsample-curve", opt);
  const nlohmann::json ckpt = o.raw("checkpoint");
  const nn::SharedBackboneModel model = load_model(ckpt, o.child_path("checkpoint"));
  const DataSource source = parse_data_source(o.raw("data"), o.child_path("data"));
  SubsampleConfig cfg;
  cfg.task = o.optional<std::string>("task", cfg.task);
  if (o.has("ks")) cfg.ks = parse_list<std::size_t>(o.raw("ks"), o.child_path("ks"));
  cfg.repeats = o.optional<std::size_t>("repeats", cfg.repeats);
  cfg.examples = o.optional<std::size_t>("examples", cfg.examples);
  cfg.seed = o.optional<std::uint64_t>("seed", cfg.seed);
  if (o.has("attack")) cfg.attack = parse_attack(o.object("attack"));
  o.finish();
  if (opt.seed) {
    cfg.seed = *opt.seed;
    if (cfg.attack) cfg.attack->seed = *opt.seed;
  }
  check_tasks(model, {cfg.task}, "config.task");
  nlohmann::json snap = {{"checkpoint", ckpt}, {"data", data_source_to_json(source)}, {"task", cfg.task},
                         {"ks", cfg.ks}, {"repeats", cfg.repeats}, {"examples", cfg.examples}, {"seed", cfg.seed}};
  nlohmann::json seeds = {{"seed", cfg.seed}};
  if (cfg.attack) {
    snap["attack"] = attack_to_json(*cfg.attack);
    seeds["attack.seed"] = cfg.attack->seed;
  }
  run.set_config(snap, seeds);
  const SubsampleResult r = run_subsample(model, source.load(), cfg);
  std::vector<std::string> header{"k", "mean_grad_norm"};
  if (cfg.attack) header.push_back("attacked_" + r.attacked_metric_name);
  CsvTable t(header);
  t.comments().push_back("spearman=" + num(r.spearman));
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    std::vector<std::string> row{num(r.ks[i]), num(r.grad_norms[i])};
    if (cfg.attack) row.push_back(num(r.attacked_metric[i]));
    t.add_row(row);
  }
  run.emit_csv("subsample.csv", t);
  const CsvTable back = CsvTable::read(run.path("subsample.csv"));
  LinePlot plot{"Subsampled-output gradient norm (" + cfg.task + ")", "output pixels k", "mean gradient L2 norm",
                true, {{"gradient norm", back.numbers("k"), back.numbers("mean_grad_norm")}}};
  run.emit_text("subsample.svg", render_line_plot(plot));
  if (cfg.attack) {
    const std::string col = header.back();
    LinePlot companion{"Attacked " + r.attacked_metric_name + " on selected pixels (" + cfg.task + ")",
                       "output pixels k", col, true, {{col, back.numbers("k"), back.numbers(col)}}};
    run.emit_text("subsample_attacked.svg", render_line_plot(companion));
  }
  return run.finish();
}

CommandResult cmd_theory_check(JsonObject o, const CommandOptions& opt) {
  Run run("theory-check", opt);
  TheoryCheckConfig cfg;
  if (o.has("tasks")) cfg.tasks = parse_list<std::size_t>(o.raw("tasks"), o.child_path("tasks"));
  if (o.has("rhos")) cfg.rhos = parse_list<double>(o.raw("rhos"), o.child_path("rhos"));
  cfg.dimension = o.optional<std::size_t>("dimension", cfg.dimension);
  cfg.variance = o.optional<double>("variance", cfg.variance);
  cfg.samples = o.optional<std::size_t>("samples", cfg.samples);
  cfg.seed = o.optional<std::uint64_t>("seed", cfg.seed);
  cfg.tolerance = o.optional<double>("tolerance", cfg.tolerance);
  const bool enforce = o.optional<bool>("enforce", true);
  o.finish();
  if (opt.seed) cfg.seed = *opt.seed;
  if (!(cfg.tolerance > 0.0)) throw ConfigError("config.tolerance: must be positive");
  run.set_config({{"tasks", cfg.tasks}, {"rhos", cfg.rhos}, {"dimension", cfg.dimension}, {"variance", cfg.variance},
                  {"samples", cfg.samples}, {"seed", cfg.seed}, {"tolerance", cfg.tolerance}, {"enforce", enforce}},
                 {{"seed", cfg.seed}});
  const TheoryCheckResult r = run_theory_check(cfg);
  for (const std::string& w : r.warnings) run.warn(w);
  CsvTable t({"tasks", "rho", "empirical", "predicted", "uncorrelated", "rel_error", "matrix_form"});
  for (const TheoryRow& row : r.rows) {
    t.add_row({num(row.tasks), num(row.rho), num(row.empirical), num(row.predicted), num(row.uncorrelated),
               num(row.rel_error), num(row.matrix_form)});
  }
  run.emit_csv("theory.csv", t);

  const CsvTable back = CsvTable::read(run.path("theory.csv"));
  LinePlot plot{"Joint gradient norm vs number of tasks", "tasks M", "sqrt(E|R|^2) / sigma", true, {}};
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> emp, pred;
  std::map<double, double> cor;
  for (std::size_t i = 0; i < back.size(); ++i) {
    const std::string rho = back.at(i, "rho");
    emp[rho].first.push_back(back.number(i, "tasks"));
    emp[rho].second.push_back(back.number(i, "empirical"));
    pred[rho].first.push_back(back.number(i, "tasks"));
    pred[rho].second.push_back(back.number(i, "predicted"));
    cor[back.number(i, "tasks")] = back.number(i, "uncorrelated");
  }
  for (const auto& [rho, xy] : emp) plot.series.push_back({"empirical rho=" + rho, xy.first, xy.second});
  for (const auto& [rho, xy] : pred) {
    plot.series.push_back({"sqrt((1+(M-1)rho)/M) rho=" + rho, xy.first, xy.second, true, false});
  }
  Series inv{"1/sqrt(M)", {}, {}, true, false};
  for (const auto& [m, v] : cor) {
    inv.x.push_back(m);
    inv.y.push_back(v);
  }
  plot.series.push_back(inv);
  run.emit_text("theory.svg", render_line_plot(plot));
  CommandResult res = run.finish();
  if (enforce && r.max_rel_error > cfg.tolerance) {
    throw ThresholdError("theory-check: max relative error " + num(r.max_rel_error) + " exceeds tolerance " +
                         num(cfg.tolerance));
  }
  return res;
}

CommandResult cmd_attack_matrix(JsonObject o, const CommandOptions& opt) {
  Run run("attack-matrix", opt);
  AttackMatrixConfig cfg;
  if (o.has("setup")) cfg.setup = parse_setup(o.object("setup"));
  if (o.has("tasks")) cfg.tasks = parse_names(o.raw("tasks"), o.child_path("tasks"));
  if (o.has("lambdas")) cfg.lambdas = parse_list<double>(o.raw("lambdas"), o.child_path("lambdas"));
  if (o.has("attack")) cfg.attack = parse_attack(o.object("attack"), cfg.attack);
  cfg.workers = o.optional<std::size_t>("workers", cfg.workers);
  o.finish();
  if (opt.seed) {
    cfg.setup.model_seed = *opt.seed;
    cfg.setup.train.seed = *opt.seed;
    cfg.attack.seed = *opt.seed;
  }
  if (opt.workers) cfg.workers = *opt.workers;
  for (const std::string& t : cfg.tasks) {
    if (!data::is_toy_task(t)) throw ConfigError("config.tasks: unknown task '" + t + "'");
  }
  run.set_config({{"setup", setup_to_json(cfg.setup)}, {"tasks", cfg.tasks}, {"lambdas", cfg.lambdas},
                  {"attack", attack_to_json(cfg.attack)}, {"workers", cfg.workers}},
                 {{"data_seed", cfg.setup.data_seed}, {"model_seed", cfg.setup.model_seed},
                  {"train.seed", cfg.setup.train.seed}, {"attack.seed", cfg.attack.seed}});
  const AttackMatrixResult r = run_attack_matrix(cfg, run.logger());

  CsvTable base({"task", "metric", "clean", "attacked", "diverged"});
  for (const MatrixBaseline& b : r.baselines) {
    base.add_row({b.task, b.metric, num(b.clean), num(b.attacked), b.diverged ? "1" : "0"});
  }
  run.emit_csv("baselines.csv", base);
  CsvTable cand({"main", "aux", "lambda", "clean", "attacked", "diverged"});
  CsvTable cells({"main", "aux", "metric", "lambda", "clean", "attacked", "baseline_clean", "baseline_attacked",
                  "attacked_gain", "clean_change", "improved", "diverged", "note"});
  for (const MatrixCell& c : r.cells) {
    for (const MatrixCandidate& k : c.candidates) {
      cand.add_row({c.main, c.aux, num(k.lambda), num(k.clean), num(k.attacked), k.diverged ? "1" : "0"});
    }
    std::string note = c.note;
    for (char& ch : note) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    const double nan = std::nan("");
    cells.add_row({c.main, c.aux, c.metric, num(c.diverged ? nan : c.lambda), num(c.diverged ? nan : c.clean),
                   num(c.diverged ? nan : c.attacked), num(c.baseline_clean), num(c.baseline_attacked),
                   num(c.diverged ? nan : c.attacked_gain), num(c.diverged ? nan : c.clean_change),
                   c.improved ? "1" : "0", c.diverged ? "1" : "0", note});
  }
  run.emit_csv("candidates.csv", cand);
  cells.comments().push_back("scored=" + num(r.scored) + " fraction_improved=" + num(r.fraction_improved) +
                             " mean_abs_clean_change=" + num(r.mean_abs_clean_change) +
                             " mean_clean_change=" + num(r.mean_clean_change));
  run.emit_csv("matrix.csv", cells);
  CsvTable summary({"scored", "fraction_improved", "mean_abs_clean_change", "mean_clean_change"});
  summary.add_row({num(r.scored), num(r.fraction_improved), num(r.mean_abs_clean_change), num(r.mean_clean_change)});
  run.emit_csv("summary.csv", summary);

  const CsvTable back = CsvTable::read(run.path("matrix.csv"));
  Heatmap map;
  map.title = "Attacked main-task gain over single-task baseline (rows: main, columns: auxiliary)";
  std::vector<std::string> names;
  for (std::size_t i = 0; i < back.size(); ++i) {
    for (const std::string& n : {back.at(i, "main"), back.at(i, "aux")}) {
      if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
    }
  }
  map.row_labels = names;
  map.col_labels = names;
  map.values.assign(names.size() * names.size(), std::nan(""));
  auto pos = [&](const std::string& n) {
    return static_cast<std::size_t>(std::find(names.begin(), names.end(), n) - names.begin());
  };
  for (std::size_t i = 0; i < back.size(); ++i) {
    map.values[pos(back.at(i, "main")) * names.size() + pos(back.at(i, "aux"))] = back.number(i, "attacked_gain");
  }
  run.emit_text("matrix.svg", render_heatmap(map));
  run.log("attack-matrix: " + num(r.fraction_improved) + " of scored pairs improved");
  return run.finish();
}

CommandResult cmd_advtrain_compare(JsonObject o, const CommandOptions& opt) {
  Run run("advtrain-compare", opt);
  AdvCompareConfig cfg;
  if (o.has("setup")) cfg.setup = parse_setup(o.object("setup"));
  cfg.main_task = o.optional<std::string>("main_task", cfg.main_task);
  if (o.has("aux_tasks")) cfg.aux_tasks = parse_names(o.raw("aux_tasks"), o.child_path("aux_tasks"));
  cfg.lambda_a = o.optional<double>("lambda_a", cfg.lambda_a);
  if (o.has("train_attack")) cfg.train_attack = parse_attack(o.object("train_attack"), cfg.train_attack);
  if (o.has("eval_attack")) cfg.eval_attack = parse_attack(o.object("eval_attack"), cfg.eval_attack);
  if (o.has("seeds")) cfg.seeds = parse_list<std::uint64_t>(o.raw("seeds"), o.child_path("seeds"));
  cfg.robust_suite = o.optional<bool>("robust_suite", cfg.robust_suite);
  o.finish();
  if (opt.seed) {
    for (std::uint64_t& s : cfg.seeds) s += *opt.seed;
  }
  if (cfg.aux_tasks.empty()) throw ConfigError("config.aux_tasks: need at least one auxiliary task");
  for (const std::string& t : cfg.aux_tasks) {
    if (!data::is_toy_task(t) || t == cfg.main_task) throw ConfigError("config.aux_tasks: invalid task '" + t + "'");
  }
  if (!data::is_toy_task(cfg.main_task)) throw ConfigError("config.main_task: unknown task '" + cfg.main_task + "'");
  run.set_config({{"setup", setup_to_json(cfg.setup)}, {"main_task", cfg.main_task}, {"aux_tasks", cfg.aux_tasks},
                  {"lambda_a", cfg.lambda_a}, {"train_attack", attack_to_json(cfg.train_attack)},
                  {"eval_attack", attack_to_json(cfg.eval_attack)}, {"seeds", cfg.seeds},
                  {"robust_suite", cfg.robust_suite}},
                 {{"data_seed", cfg.setup.data_seed}, {"seeds", cfg.seeds}, {"train_attack.seed", cfg.train_attack.seed},
                  {"eval_attack.seed", cfg.eval_attack.seed}});
  const AdvCompareResult r = run_advtrain_comparison(cfg, run.logger());
  CsvTable t({"seed", "metric", "single_clean", "single_attacked", "multi_clean", "multi_attacked", "multi_wins"});
  for (const AdvCompareRow& row : r.rows) {
    t.add_row({std::to_string(row.seed), row.metric, num(row.single_clean), num(row.single_attacked),
               num(row.multi_clean), num(row.multi_attacked), row.multi_wins ? "1" : "0"});
  }
  t.comments().push_back("wins=" + num(r.wins) + " of " + num(r.rows.size()));
  run.emit_csv("advtrain_compare.csv", t);
  if (cfg.robust_suite) {
    CsvTable s({"seed", "model", "attack", "task", "metric", "value"});
    for (const AdvCompareRow& row : r.rows) {
      for (const auto& [name, suite] : {std::pair{"single", &row.single_suite}, std::pair{"multi", &row.multi_suite}}) {
        for (const advtrain::RobustRow& x : *suite) {
          s.add_row({std::to_string(row.seed), name, x.attack, x.task, x.metric, num(x.value)});
        }
      }
    }
    run.emit_csv("robust.csv", s);
  }
  const CsvTable back = CsvTable::read(run.path("advtrain_compare.csv"));
  const std::string metric = back.size() ? back.at(0, "metric") : "metric";
  LinePlot plot{"Adversarially trained " + cfg.main_task + ": attacked " + metric + " per seed", "seed",
                "attacked " + metric, false,
                {{"single-task", back.numbers("seed"), back.numbers("single_attacked")},
                 {"multi-task", back.numbers("seed"), back.numbers("multi_attacked")}}};
  run.emit_text("advtrain_compare.svg", render_line_plot(plot));
  return run.finish();
}

CommandResult cmd_sweep(JsonObject o, const CommandOptions& opt) {
  Run run("sweep", opt);
  SweepConfig cfg;
  cfg.attack.random_start = true;
  if (o.has("setup")) cfg.setup = parse_setup(o.object("setup"));
  if (o.has("task_sets")) {
    const nlohmann::json& v = o.raw("task_sets");
    if (!v.is_array()) throw ConfigError("config.task_sets: expected a list of task lists");
    cfg.task_sets.clear();
    for (const nlohmann::json& s : v) cfg.task_sets.push_back(parse_names(s, "config.task_sets[]"));
  }
  if (o.has("epsilons")) cfg.epsilons = parse_list<double>(o.raw("epsilons"), o.child_path("epsilons"));
  if (o.has("attack")) cfg.attack = parse_attack(o.object("attack"), cfg.attack);
  cfg.vuln_examples = o.optional<std::size_t>("vuln_examples", cfg.vuln_examples);
  cfg.workers = o.optional<std::size_t>("workers", cfg.workers);
  o.finish();
  if (opt.seed) {
    cfg.setup.model_seed = *opt.seed;
    cfg.setup.train.seed = *opt.seed;
    cfg.attack.seed = *opt.seed;
  }
  if (opt.workers) cfg.workers = *opt.workers;
  for (const auto& set : cfg.task_sets) {
    if (set.empty()) throw ConfigError("config.task_sets: task sets must be nonempty");
    for (const std::string& t : set) {
      if (!data::is_toy_task(t)) throw ConfigError("config.task_sets: unknown task '" + t + "'");
    }
  }
  for (double e : cfg.epsilons) {
    if (!(e >= 0.0)) throw ConfigError("config.epsilons: must be nonnegative");
  }
  if (cfg.vuln_examples < 2) throw ConfigError("config.vuln_examples: need at least 2");
  run.set_config({{"setup", setup_to_json(cfg.setup)}, {"task_sets", cfg.task_sets}, {"epsilons", cfg.epsilons},
                  {"attack", attack_to_json(cfg.attack)}, {"vuln_examples", cfg.vuln_examples},
                  {"workers", cfg.workers}},
                 {{"data_seed", cfg.setup.data_seed}, {"model_seed", cfg.setup.model_seed},
                  {"train.seed", cfg.setup.train.seed}, {"attack.seed", cfg.attack.seed}});
  const std::vector<SweepCell> cells = run_sweep(cfg, run.logger());

  CsvTable summary({"tasks", "m", "joint_norm", "mean_task_norm", "norm_ratio", "predicted_ratio", "predicted_ratio_uncorrelated"});
  CsvTable attacked({"tasks", "epsilon", "task", "metric", "clean", "attacked"});
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const SweepCell& c = cells[i];
    const std::string name = join(c.tasks, "+");
    double mean_norm = 0.0;
    for (double n : c.task_norms) mean_norm += n;
    mean_norm /= static_cast<double>(c.task_norms.size());
    summary.add_row({name, num(c.tasks.size()), num(c.joint_norm), num(mean_norm), num(c.joint_norm / mean_norm),
                     num(c.predicted_ratio), num(c.predicted_ratio_uncorrelated)});
    const std::string dir = "cells/" + std::to_string(i) + "-" + name;
    CsvTable norms({"task", "task_norm"});
    for (std::size_t k = 0; k < c.tasks.size(); ++k) norms.add_row({c.tasks[k], num(c.task_norms[k])});
    run.emit_csv(dir + "/task_norms.csv", norms);
    CsvTable cell_att({"epsilon", "task", "metric", "clean", "attacked"});
    for (const SweepCell::Attacked& a : c.attacked) {
      attacked.add_row({name, num(a.epsilon), a.task, a.metric, num(a.clean), num(a.attacked)});
      cell_att.add_row({num(a.epsilon), a.task, a.metric, num(a.clean), num(a.attacked)});
    }
    run.emit_csv(dir + "/attacked.csv", cell_att);
  }
  run.emit_csv("sweep.csv", summary);
  run.emit_csv("sweep_attacked.csv", attacked);

  const CsvTable back = CsvTable::read(run.path("sweep.csv"));
  LinePlot plot{"Joint gradient norm over mean task gradient norm", "tasks M", "ratio", true,
                {{"measured", back.numbers("m"), back.numbers("norm_ratio")},
                 {"prediction (measured covariance)", back.numbers("m"), back.numbers("predicted_ratio"), true},
                 {"1/sqrt(M)", back.numbers("m"), back.numbers("predicted_ratio_uncorrelated"), true, false}}};
  run.emit_text("sweep.svg", render_line_plot(plot));
  const CsvTable att = CsvTable::read(run.path("sweep_attacked.csv"));
  LinePlot eps_plot{"Attacked metric vs epsilon (multi-task attack)", "epsilon", "attacked metric", false, {}};
  std::map<std::string, Series> by;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < att.size(); ++i) {
    const std::string key = att.at(i, "tasks") + ": " + att.at(i, "task") + " " + att.at(i, "metric");
    if (!by.count(key)) {
      order.push_back(key);
      by[key].name = key;
    }
    by[key].x.push_back(att.number(i, "epsilon"));
    by[key].y.push_back(att.number(i, "attacked"));
  }
  for (const std::string& k : order) eps_plot.series.push_back(by[k]);
  run.emit_text("sweep_attacked.svg", render_line_plot(eps_plot));
  return run.finish();
}

CommandResult cmd_report(JsonObject o, const CommandOptions& opt) {
  Run run("report", opt);
  const nlohmann::json& runs = o.raw("runs");
  if (!runs.is_array() || runs.empty()) throw ConfigError("config.runs: expected a nonempty list of run directories");
  std::vector<std::filesystem::path> dirs;
  for (const nlohmann::json& r : runs) {
    if (!r.is_string()) throw ConfigError("config.runs: entries must be directory paths");
    dirs.emplace_back(r.get<std::string>());
    if (!std::filesystem::is_regular_file(dirs.back() / kManifestName)) {
      throw ConfigError("config.runs: no " + std::string(kManifestName) + " in '" + dirs.back().string() + "'");
    }
  }
  o.finish();
  run.set_config({{"runs", runs}}, nlohmann::json::object());
  CsvTable summary({"run", "command", "tool_version", "started_at", "wall_clock_seconds", "outputs", "mismatches",
                    "seeds"});
  CsvTable files({"run", "path", "bytes", "sha256", "status"});
  std::size_t bad_total = 0;
  for (const std::filesystem::path& d : dirs) {
    const RunManifest m = RunManifest::read(d);
    const std::vector<DigestMismatch> bad = verify_manifest(m, d);
    bad_total += bad.size();
    std::string seeds = m.seeds.dump();
    for (char& ch : seeds) {
      if (ch == ',') ch = ';';
    }
    summary.add_row({d.string(), m.command, m.tool_version, m.started_at, num(m.wall_clock_seconds),
                     num(m.outputs.size()), num(bad.size()), seeds});
    for (const ManifestEntry& e : m.outputs) {
      std::string status = "ok";
      for (const DigestMismatch& b : bad) {
        if (b.path == e.path) status = b.actual.empty() ? "missing" : "mismatch";
      }
      files.add_row({d.string(), e.path, num(static_cast<std::size_t>(e.bytes)), e.sha256, status});
    }
    for (const DigestMismatch& b : bad) {
      run.warn(d.string() + "/" + b.path + ": " + (b.actual.empty() ? "missing" : "digest mismatch"));
    }
  }
  run.emit_csv("report.csv", summary);
  run.emit_csv("digests.csv", files);
  CommandResult res = run.finish();
  if (bad_total > 0) throw IoError("report: " + std::to_string(bad_total) + " output(s) failed digest verification");
  return res;
}

using Handler = std::function<CommandResult(JsonObject, const CommandOptions&)>;

const std::map<std::string, Handler, std::less<>>& handlers() {
  static const std::map<std::string, Handler, std::less<>> table = {
      {"gen-data", cmd_gen_data},
      {"train", cmd_train},
      {"attack-eval", cmd_attack_eval},
      {"vuln-scan", cmd_vuln_scan},
      {"subsample-curve", cmd_subsample_curve},
      {"theory-check", cmd_theory_check},
      {"attack-matrix", cmd_attack_matrix},
      {"advtrain", cmd_advtrain},
      {"advtrain-compare", cmd_advtrain_compare},
      {"sweep", cmd_sweep},
      {"report", cmd_report},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [k, v] : handlers()) n.push_back(k);
    return n;
  }();
  return names;
}

CommandResult run_command(std::string_view command, std::string_view config_json, const CommandOptions& options) {
  auto it = handlers().find(command);
  if (it == handlers().end()) {
    throw ConfigError("unknown command '" + std::string(command) + "' (expected one of " + join(command_names(), ", ") +
                      ")");
  }
  if (options.workers && *options.workers < 1) throw ConfigError("--workers must be at least 1");
  const nlohmann::json config = parse_json_text(config_json, "config");
  return it->second(JsonObject(config, "config"), options);
}

}  // namespace mtr::harness
