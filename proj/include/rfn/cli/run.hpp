#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rfn/evalsuite/suite.hpp"
#include "rfn/geodata/dataset.hpp"
#include "rfn/models/train.hpp"
#include "rfn/synthgen/oracle.hpp"

namespace rfn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode { ok = 0, usage = 1, data = 2, divergence = 3 };

// ---- configuration ---------------------------------------------------------

// Every field the run configuration accepts, with its default. Horizons use 0
// for the whole test split.
inline json default_config() {
  json model = models::to_json(models::ModelConfig{});
  model.erase("seed");
  model.erase("kl_anneal_epochs");
  return {
      {"data",
       {{"input", ""},
        {"dataset", "dataset"},
        {"checkpoint", ""},
        {"output", "out"},
        {"bin_width", 7200.0}}},
      {"preprocess",
       {{"delimiter", ","},
        {"time_column", "time"},
        {"longitude_column", "longitude"},
        {"latitude_column", "latitude"},
        {"duration_column", ""},
        {"end_time_column", ""},
        {"user_column", ""},
        {"lon_min", -74.03},
        {"lon_max", -73.75},
        {"lat_min", 40.63},
        {"lat_max", 40.85},
        {"min_duration", 0.0},
        {"max_duration", 0.0},
        {"dedup_window", 0.0}}},
      {"split", {{"train", 0.5}, {"val", 0.25}, {"test", 0.25}}},
      {"synth",
       {{"process", "crescent"},
        {"bins", 200},
        {"points_per_bin", 100.0},
        {"sigma", 0.05},
        {"stay", 0.7},
        {"seed", 0}}},
      {"model", model},
      {"training",
       {{"lr", 0.003},
        {"plateau_factor", 0.1},
        {"plateau_patience", 100},
        {"anneal_epochs", 100},
        {"max_epochs", 500},
        {"early_stopping_patience", 200},
        {"window", 0},
        {"clip_norm", 0.0},
        {"seed", 0}}},
      {"eval",
       {{"samples", 30},
        {"grid", 110},
        {"quantize_grid", 64},
        {"horizons", {2, 5, 10, 0}},
        {"repetitions", 5},
        {"rollout_samples", 0},
        {"rollouts", true},
        {"quantized", true},
        {"validation", true},
        {"step", -1}}},
      {"rollout", {{"start", -1}, {"horizon", 10}, {"samples", 0}}},
  };
}

inline void collect_fields(const json& node, const std::string& prefix,
                           std::vector<std::string>& out) {
  for (const auto& [key, value] : node.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object()) {
      collect_fields(value, path, out);
    } else {
      out.push_back(path);
    }
  }
}

inline std::vector<std::string> valid_fields() {
  std::vector<std::string> out;
  collect_fields(default_config(), "", out);
  return out;
}

inline UsageError unknown_field(const std::string& path) {
  std::string msg = "unknown config field '" + path + "'; valid fields:";
  for (const auto& f : valid_fields()) msg += "\n  " + f;
  return UsageError(msg);
}

// Converts `value` to the type of `like` or rejects it.
inline json coerce(const json& value, const json& like, const std::string& path) {
  auto bad = [&]() {
    return UsageError("config field '" + path + "' expects " + std::string(like.type_name()) +
                      ", got " + value.dump());
  };
  if (like.is_number_integer()) {
    if (value.is_number_integer()) return value;
    if (value.is_number_float() && value.get<double>() == std::floor(value.get<double>())) {
      return static_cast<long long>(value.get<double>());
    }
    throw bad();
  }
  if (like.is_number()) {
    if (value.is_number()) return value.get<double>();
    throw bad();
  }
  if (like.is_boolean() || like.is_string()) {
    if (value.type() == like.type()) return value;
    throw bad();
  }
  if (like.is_array()) {
    if (!value.is_array()) throw bad();
    for (const auto& v : value)
      if (!v.is_number_integer() || v.get<long long>() < 0) throw bad();
    return value;
  }
  throw bad();
}

// Overlays `patch` onto `cfg`; every key must exist in the defaults.
inline void merge_config(json& cfg, const json& patch, const std::string& prefix = "") {
  if (!patch.is_object()) throw UsageError("config must be an object of blocks");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!cfg.contains(key)) throw unknown_field(path);
    json& slot = cfg[key];
    if (slot.is_object()) {
      merge_config(slot, value, path);
    } else {
      slot = coerce(value, slot, path);
    }
  }
}

inline json parse_value(const std::string& text, const json& like, const std::string& path) {
  if (like.is_string()) return text;
  if (like.is_array()) {
    json arr = json::array();
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item == "full") {
        arr.push_back(0);
        continue;
      }
      auto v = geo::detail::parse_int(item);
      if (!v) throw UsageError("config field '" + path + "' expects a comma list, got " + text);
      arr.push_back(*v);
    }
    return coerce(arr, like, path);
  }
  if (like.is_boolean()) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw UsageError("config field '" + path + "' expects true or false, got " + text);
  }
  auto v = geo::detail::parse_double(text);
  if (!v) throw UsageError("config field '" + path + "' expects a number, got " + text);
  return coerce(json(*v), like, path);
}

// Dot-path override such as ("eval.samples", "30").
inline void apply_override(json& cfg, const std::string& path, const std::string& text) {
  json* node = &cfg;
  std::stringstream ss(path);
  std::string key;
  while (std::getline(ss, key, '.')) {
    if (!node->is_object() || !node->contains(key)) throw unknown_field(path);
    node = &(*node)[key];
  }
  if (node->is_object()) throw unknown_field(path);
  *node = parse_value(text, *node, path);
}

inline json load_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw UsageError("malformed config file " + path.string() + ": " + e.what());
  }
}

// Defaults, then the config file, then the dot-path flags in order.
inline json resolve_config(const std::string& file, const std::vector<std::string>& extras) {
  json cfg = default_config();
  if (!file.empty()) merge_config(cfg, load_config_file(file));
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0 || a.size() == 2) throw UsageError("unexpected argument '" + a + "'");
    const std::string body = a.substr(2);
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      apply_override(cfg, body.substr(0, eq), body.substr(eq + 1));
      continue;
    }
    if (i + 1 >= extras.size()) throw UsageError("flag '" + a + "' needs a value");
    apply_override(cfg, body, extras[++i]);
  }
  return cfg;
}

// ---- typed views of the configuration --------------------------------------

inline std::uint64_t root_seed(const json& cfg) {
  return cfg["training"]["seed"].get<std::uint64_t>();
}

inline std::size_t to_size(const json& v, const std::string& path) {
  const long long x = v.get<long long>();
  if (x < 0) throw UsageError("config field '" + path + "' must be non-negative");
  return static_cast<std::size_t>(x);
}

inline models::ModelConfig model_config(const json& cfg) {
  json m = cfg["model"];
  m["kl_anneal_epochs"] = to_size(cfg["training"]["anneal_epochs"], "training.anneal_epochs");
  m["seed"] = derive_seed(root_seed(cfg), "model");
  for (const char* f : {"mixture_count", "k", "feature_width", "feature_layers", "lstm_width",
                        "latent_width", "latent_hidden", "emission_hidden", "emission_layers",
                        "flow_depth"}) {
    to_size(m[f], std::string("model.") + f);
  }
  models::ModelConfig c = models::model_config_from_json(m);
  c.validate();
  return c;
}

inline models::TrainOptions train_options(const json& cfg) {
  const json& t = cfg["training"];
  models::TrainOptions o;
  o.learning_rate = t["lr"].get<double>();
  o.plateau_factor = t["plateau_factor"].get<double>();
  o.plateau_patience = t["plateau_patience"].get<long>();
  o.max_epochs = to_size(t["max_epochs"], "training.max_epochs");
  o.early_stopping_patience = to_size(t["early_stopping_patience"], "training.early_stopping_patience");
  o.window = to_size(t["window"], "training.window");
  o.clip_norm = t["clip_norm"].get<double>();
  o.seed = derive_seed(root_seed(cfg), "training");
  return o;
}

inline eval::SuiteOptions suite_options(const json& cfg) {
  const json& e = cfg["eval"];
  eval::SuiteOptions o;
  o.samples = to_size(e["samples"], "eval.samples");
  o.repetitions = to_size(e["repetitions"], "eval.repetitions");
  o.horizons = e["horizons"].get<std::vector<std::size_t>>();
  o.quantize_grid = to_size(e["quantize_grid"], "eval.quantize_grid");
  o.rollout_samples = to_size(e["rollout_samples"], "eval.rollout_samples");
  o.rollouts = e["rollouts"].get<bool>();
  o.quantized = e["quantized"].get<bool>();
  o.validation = e["validation"].get<bool>();
  o.seed = derive_seed(root_seed(cfg), "evaluation");
  return o;
}

inline geo::SplitConfig split_config(const json& cfg) {
  const json& s = cfg["split"];
  return {s["train"].get<double>(), s["val"].get<double>(), s["test"].get<double>()};
}

// ---- logging ---------------------------------------------------------------

// Verbosity from RFN_LOG_LEVEL: quiet, info (default) or debug.
struct Log {
  int level = 1;
  std::ostream* out = &std::cerr;

  static Log from_env(std::ostream& out) {
    Log l;
    l.out = &out;
    if (const char* v = std::getenv("RFN_LOG_LEVEL")) {
      const std::string s(v);
      if (s == "quiet" || s == "0") l.level = 0;
      else if (s == "debug" || s == "2") l.level = 2;
    }
    return l;
  }
  void info(const std::string& msg) const {
    if (level >= 1) *out << "rfn: " << msg << '\n';
  }
  void debug(const std::string& msg) const {
    if (level >= 2) *out << "rfn: " << msg << '\n';
  }
};

// ---- artifacts -------------------------------------------------------------

inline fs::path output_dir(const json& cfg) {
  fs::path dir = cfg["data"]["output"].get<std::string>();
  fs::create_directories(dir);
  return dir;
}

inline fs::path checkpoint_path(const json& cfg) {
  const std::string c = cfg["data"]["checkpoint"].get<std::string>();
  return c.empty() ? fs::path(cfg["data"]["output"].get<std::string>()) / "checkpoint.json" : fs::path(c);
}

inline geo::Dataset load_dataset(const json& cfg) {
  const fs::path dir = cfg["data"]["dataset"].get<std::string>();
  if (!fs::exists(dir / "manifest.json")) throw DataError("dataset not found: " + dir.string());
  return geo::read_dataset(dir);
}

inline std::unique_ptr<models::SequenceModel> load_model(const json& cfg, const geo::Dataset& ds) {
  const fs::path path = checkpoint_path(cfg);
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path.string());
  auto m = models::model_from_checkpoint(diff::load_checkpoint(path));
  if (m->config().k != ds.sequence.k) {
    throw DataError("checkpoint k=" + std::to_string(m->config().k) + " does not match dataset k=" +
                    std::to_string(ds.sequence.k));
  }
  return m;
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// Conditioning step of heatmap / quantize: eval.step, or the first test bin.
inline std::size_t conditioning_step(const json& cfg, const geo::Dataset& ds) {
  const long long s = cfg["eval"]["step"].get<long long>();
  const std::size_t step = s < 0 ? ds.split.test.begin : static_cast<std::size_t>(s);
  if (step >= ds.sequence.size()) {
    throw UsageError("eval.step " + std::to_string(step) + " lies beyond the sequence of " +
                     std::to_string(ds.sequence.size()) + " bins");
  }
  return step;
}

// ---- subcommands -----------------------------------------------------------

inline void cmd_preprocess(const json& cfg, const Log& log) {
  const json& p = cfg["preprocess"];
  const std::string input = cfg["data"]["input"].get<std::string>();
  if (input.empty()) throw UsageError("preprocess needs data.input");
  std::ifstream in(input);
  if (!in) throw DataError("input file not found: " + input);

  geo::TripSchema schema;
  schema.time_column = p["time_column"].get<std::string>();
  schema.longitude_column = p["longitude_column"].get<std::string>();
  schema.latitude_column = p["latitude_column"].get<std::string>();
  auto optional_column = [&](const char* key) -> std::optional<std::string> {
    std::string s = p[key].get<std::string>();
    return s.empty() ? std::nullopt : std::optional<std::string>(s);
  };
  schema.duration_column = optional_column("duration_column");
  schema.end_time_column = optional_column("end_time_column");
  schema.user_column = optional_column("user_column");
  const std::string delim = p["delimiter"].get<std::string>();
  if (delim.size() != 1) throw UsageError("preprocess.delimiter must be one character");
  schema.delimiter = delim[0];

  geo::FilterOptions filter;
  filter.box = {p["lon_min"].get<double>(), p["lon_max"].get<double>(), p["lat_min"].get<double>(),
                p["lat_max"].get<double>()};
  auto positive = [&](const char* key) -> std::optional<double> {
    const double v = p[key].get<double>();
    return v > 0.0 ? std::optional<double>(v) : std::nullopt;
  };
  filter.min_duration = positive("min_duration");
  filter.max_duration = positive("max_duration");
  filter.dedup_window = positive("dedup_window");

  const geo::ParseReport parsed = geo::parse_trips(in, schema);
  const geo::FilterReport kept = geo::filter_records(parsed.records, filter);
  geo::Dataset ds;
  ds.box = filter.box;
  ds.sequence = geo::bin_and_normalize(kept.records, filter.box, cfg["data"]["bin_width"].get<double>(),
                                       to_size(cfg["model"]["k"], "model.k"));
  ds.split = geo::split_indices(ds.sequence.size(), split_config(cfg));
  ds.counts = {{"parsed", parsed.records.size()},
               {"skipped_lines", parsed.skipped},
               {"removed_outside", kept.removed_outside},
               {"removed_duration", kept.removed_duration},
               {"removed_duplicate", kept.removed_duplicate},
               {"retained", kept.records.size()}};
  ds.source = {{"kind", "trips"}, {"input", input}};
  geo::write_dataset(ds, cfg["data"]["dataset"].get<std::string>());
  log.info("preprocess: " + std::to_string(kept.records.size()) + " records in " +
           std::to_string(ds.sequence.size()) + " bins (" + std::to_string(parsed.skipped) +
           " malformed lines skipped)");
}

inline void cmd_synth(const json& cfg, const Log& log) {
  const json& s = cfg["synth"];
  const std::string kind = s["process"].get<std::string>();
  const auto seed = s["seed"].get<std::uint64_t>();
  const double ppb = s["points_per_bin"].get<double>();
  synth::OracleProcess process;
  if (kind == "crescent") {
    process = synth::two_regime_crescent_process(seed, ppb, s["stay"].get<double>());
  } else if (kind == "single-gaussian") {
    process = synth::single_gaussian_process(seed, ppb, s["sigma"].get<double>());
  } else {
    throw UsageError("synth.process must be crescent or single-gaussian, got " + kind);
  }
  const std::size_t bins = to_size(s["bins"], "synth.bins");
  const double width = cfg["data"]["bin_width"].get<double>();
  const auto sample = synth::generate(process, bins, width);
  const auto ds = synth::to_dataset(process, sample, to_size(cfg["model"]["k"], "model.k"),
                                    split_config(cfg), width);
  geo::write_dataset(ds, cfg["data"]["dataset"].get<std::string>());
  log.info("synth: " + kind + ", " + std::to_string(bins) + " bins, " +
           std::to_string(ds.sequence.point_count()) + " points");
}

inline void cmd_train(const json& cfg, const Log& log) {
  const geo::Dataset ds = load_dataset(cfg);
  models::SequenceModel m(model_config(cfg));
  const models::TrainOptions opt = train_options(cfg);
  const fs::path dir = output_dir(cfg);
  std::ofstream train_log(dir / "train_log.jsonl");
  if (!train_log) throw DataError("cannot write " + (dir / "train_log.jsonl").string());
  log.info("train: " + m.config().model_id() + " with " +
           std::to_string(m.parameters().trainable_count()) + " trainable values");
  const models::TrainResult r = models::train(m, ds, opt, &train_log);
  diff::save_checkpoint(r.checkpoint, checkpoint_path(cfg));
  write_json(dir / "run_config.json", cfg);
  log.info("train: " + r.stop_reason + ", best epoch " + std::to_string(r.best_epoch));
  if (r.diverged) throw DivergenceError("training " + r.stop_reason);
}

inline void cmd_evaluate(const json& cfg, const Log& log) {
  const geo::Dataset ds = load_dataset(cfg);
  const auto m = load_model(cfg, ds);
  const eval::MetricsReport report = eval::evaluate_suite(*m, ds, suite_options(cfg));
  const fs::path path = output_dir(cfg) / "metrics.jsonl";
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  eval::write_metrics(report, out);
  for (const auto& r : report.records) {
    log.info("evaluate: " + r.split + " " + r.metric + " per point " + std::to_string(r.per_point));
  }
}

inline void cmd_rollout(const json& cfg, const Log& log) {
  const geo::Dataset ds = load_dataset(cfg);
  const auto m = load_model(cfg, ds);
  const json& r = cfg["rollout"];
  const long long s = r["start"].get<long long>();
  const std::size_t start = s < 0 ? ds.split.test.begin : static_cast<std::size_t>(s);
  std::size_t samples = to_size(r["samples"], "rollout.samples");
  if (samples == 0) samples = eval::mean_points_per_bin(ds.sequence, ds.split.train);
  Rng rng(derive_seed(root_seed(cfg), "rollout"));
  const auto before = models::filter_states(*m, ds.sequence, {0, std::min(start, ds.sequence.size())},
                                            nullptr, 1, rng);
  const auto trace = models::rollout(*m, ds.sequence, start, before,
                                     to_size(r["horizon"], "rollout.horizon"), samples, rng);
  json j = models::rollout_to_json(trace);
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    json pts = json::array();
    const auto& p = trace.steps[i].points;
    for (std::size_t n = 0; n < p.rows(); ++n) pts.push_back({p(n, 0), p(n, 1)});
    j["steps"][i]["points"] = pts;
    j["steps"][i]["frame"] = trace.steps[i].frame.storage();
  }
  j["model_id"] = m->config().model_id();
  j["k"] = ds.sequence.k;
  write_json(output_dir(cfg) / "rollout.json", j);
  log.info("rollout: " + std::to_string(trace.steps.size()) + " steps from bin " + std::to_string(start));
}

inline void cmd_heatmap(const json& cfg, const Log& log) {
  const geo::Dataset ds = load_dataset(cfg);
  const auto m = load_model(cfg, ds);
  const std::size_t step = conditioning_step(cfg, ds);
  Rng rng(derive_seed(root_seed(cfg), "heatmap"));
  const auto g = eval::grid_heatmap(*m, ds.sequence, ds.box, step, to_size(cfg["eval"]["grid"], "eval.grid"),
                                    to_size(cfg["eval"]["samples"], "eval.samples"), rng);
  eval::write_grid(g, output_dir(cfg), "heatmap");
  log.info("heatmap: " + std::to_string(g.m) + "x" + std::to_string(g.m) + " grid for bin " +
           std::to_string(step));
}

inline void cmd_quantize(const json& cfg, const Log& log) {
  const geo::Dataset ds = load_dataset(cfg);
  const auto m = load_model(cfg, ds);
  const std::size_t step = conditioning_step(cfg, ds);
  const std::size_t grid = to_size(cfg["eval"]["quantize_grid"], "eval.quantize_grid");
  Rng rng(derive_seed(root_seed(cfg), "quantize"));
  const auto g = eval::quantize(*m, ds.sequence, ds.box, step,
                                to_size(cfg["eval"]["samples"], "eval.samples"), rng, grid);
  const fs::path dir = output_dir(cfg);
  eval::write_grid(g, dir, "quantized");
  const auto [pts, excluded] = eval::inside_points(ds.sequence.bins[step].points);
  const eval::CategoricalScore score = eval::categorical_log_likelihood(g, geo::count_cells(pts, grid));
  write_json(dir / "quantized_score.json",
             {{"model_id", m->config().model_id()},
              {"step", step},
              {"grid", grid},
              {"points", pts.rows()},
              {"excluded", excluded},
              {"log_likelihood", score.degenerate ? json() : json(score.value)},
              {"degenerate", score.degenerate}});
  log.info("quantize: categorical log-likelihood " + std::to_string(score.value) + " for bin " +
           std::to_string(step));
}

// ---- entry point -------------------------------------------------------------

// Runs one subcommand; args excludes the program name. Returns the exit code.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  const Log log = Log::from_env(err);
  CLI::App app{"Recurrent flow networks: training, evaluation and sampling of spatio-temporal "
               "density models"};
  app.require_subcommand(1, 1);
  std::string config_file;
  struct Command {
    const char* name;
    const char* help;
    void (*fn)(const json&, const Log&);
  };
  const std::vector<Command> commands = {
      {"preprocess", "bin a delimited trip file into a dataset directory", cmd_preprocess},
      {"synth", "generate a synthetic dataset with a known oracle density", cmd_synth},
      {"train", "train a model on a dataset and write a checkpoint", cmd_train},
      {"evaluate", "write the metrics report of a checkpoint", cmd_evaluate},
      {"rollout", "sample an autoregressive rollout", cmd_rollout},
      {"heatmap", "write the one-step predictive log-density on a grid", cmd_heatmap},
      {"quantize", "write the quantized predictive distribution and its score", cmd_quantize},
      {"config", "print the resolved configuration", nullptr},
  };
  std::vector<CLI::App*> subs;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->allow_extras();
    sub->add_option("-c,--config", config_file, "JSON config file; --block.field VALUE overrides a field");
    subs.push_back(sub);
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return ExitCode::ok;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return ExitCode::usage;
  }
  try {
    for (std::size_t i = 0; i < commands.size(); ++i) {
      if (!subs[i]->parsed()) continue;
      const json cfg = resolve_config(config_file, subs[i]->remaining());
      if (!commands[i].fn) {
        out << cfg.dump(2) << '\n';
        return ExitCode::ok;
      }
      log.debug("config " + cfg.dump());
      commands[i].fn(cfg, log);
    }
    return ExitCode::ok;
  } catch (const UsageError& e) {
    err << "rfn: usage error: " << e.what() << '\n';
    return ExitCode::usage;
  } catch (const DivergenceError& e) {
    err << "rfn: divergence: " << e.what() << '\n';
    return ExitCode::divergence;
  } catch (const DomainError& e) {
    err << "rfn: numeric error: " << e.what() << '\n';
    return ExitCode::divergence;
  } catch (const std::exception& e) {
    err << "rfn: data error: " << e.what() << '\n';
    return ExitCode::data;
  }
}

}  // namespace rfn::cli
