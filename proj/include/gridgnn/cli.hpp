/*
 * Copyright 2026 The gridgnn Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Command-line front end: gen-data, train, eval, rollout, ablate, inspect.
// Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gridgnn/checkpoint.hpp"
#include "gridgnn/eval.hpp"

namespace gridgnn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;

/// Provenance record written next to each command's primary output. The
/// hash covers the command, effective configuration, input data and seed
/// (not paths or timing), so identical runs share it.
struct RunManifest {
  std::string command;
  std::string config_hash;
  std::string dataset_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;
  double wall_clock_seconds = 0.0;

  std::string hash() const {
    const nlohmann::json j = {{"command", command}, {"config_hash", config_hash}, {"dataset_hash", dataset_hash},
                              {"seed", seed}, {"version", kVersion}};
    return hex64(fnv1a(j.dump()));
  }

  void write(const std::string& primary_output) const {
    nlohmann::json files = nlohmann::json::object();
    for (const auto& o : outputs)
      if (std::filesystem::exists(o)) files[o] = file_hash(o);
    const nlohmann::json j = {{"format", "gridgnn-manifest"},
                              {"manifest", hash()},
                              {"command", command},
                              {"config_hash", config_hash},
                              {"dataset_hash", dataset_hash},
                              {"seed", seed},
                              {"version", kVersion},
                              {"outputs", files},
                              {"wall_clock_seconds", wall_clock_seconds}};
    write_file(primary_output + ".manifest.json", j.dump(2) + "\n");
  }
};

inline std::string json_hash(const nlohmann::json& j) { return hex64(fnv1a(j.dump())); }

inline nlohmann::json read_json(const std::string& path, const char* what) {
  if (!std::filesystem::exists(path)) throw IoError(std::string(what) + " not found: " + path);
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string(what) + " " + path + " is not valid JSON: " + e.what());
  }
}

inline Dataset read_dataset(const std::string& path) {
  if (!std::filesystem::exists(path)) throw IoError("dataset not found: " + path);
  return load_dataset(path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path);
  return load_checkpoint(path);
}

inline std::string with_manifest(const std::string& hash, const std::string& body) {
  return "# manifest " + hash + "\n" + body;
}

class Clock {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// Commands

struct GenDataOptions {
  std::string grid;
  std::size_t complete = 12;
  std::size_t initial_events = 200;
  std::uint64_t seed = 7;
  std::string out;
  std::string export_csv;  // directory for per-trajectory CSVs (optional)
};

inline int cmd_gen_data(const GenDataOptions& o, std::ostream& log) {
  const Clock clock;
  const GridSpec grid = read_json(o.grid, "grid spec").get<GridSpec>();
  RunManifest m;
  m.command = "gen-data";
  m.config_hash = json_hash({{"grid", grid}, {"complete", o.complete}, {"initial_events", o.initial_events}});
  m.seed = o.seed;
  Dataset ds = make_dataset(grid, o.complete, o.initial_events, o.seed);
  ds.manifest = m.hash();
  save_dataset(ds, o.out);
  m.outputs.push_back(o.out);
  if (!o.export_csv.empty()) {
    std::filesystem::create_directories(o.export_csv);
    for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
      const std::string path = (std::filesystem::path(o.export_csv) / ("trajectory_" + std::to_string(i) + ".csv")).string();
      write_file(path, with_manifest(ds.manifest, trajectory_csv(ds.trajectories[i], grid.betas())));
      m.outputs.push_back(path);
    }
  }
  m.wall_clock_seconds = clock.seconds();
  m.write(o.out);
  log << "wrote " << ds.trajectories.size() << " trajectories (" << ds.indices(true).size() << " test) to " << o.out
      << "\n";
  return kExitOk;
}

struct TrainOptions {
  std::string dataset;
  std::string model_config;
  std::string train_config;
  std::string out;
  std::string loss_csv;  // default: <out>.loss.csv
  std::optional<std::uint64_t> seed;
  std::optional<double> nu;
  std::optional<int> epochs;
  bool serial = false;
  bool resume = false;
  int checkpoint_every = 10;
  int log_every = 10;
  int stop_after = -1;  // stop after this many epochs (an interrupted run); -1 = run to completion
};

inline int cmd_train(const TrainOptions& o, std::ostream& log) {
  const Clock clock;
  const ModelConfig mc = read_json(o.model_config, "model config").get<ModelConfig>();
  TrainConfig tc = read_json(o.train_config, "train config").get<TrainConfig>();
  if (o.seed) tc.seed = *o.seed;
  if (o.nu) tc.nu = *o.nu;
  if (o.epochs) tc.epochs = *o.epochs;
  if (o.serial) tc.serial = true;
  tc.validate();
  if (o.checkpoint_every < 1) throw ArgumentError("--checkpoint-every must be >= 1");
  const Dataset ds = read_dataset(o.dataset);
  const std::string dataset_hash = file_hash(o.dataset);

  RunManifest m;
  m.command = "train";
  m.config_hash = json_hash({{"model", mc}, {"train", tc}});
  m.dataset_hash = dataset_hash;
  m.seed = tc.seed;
  const std::string loss_csv = o.loss_csv.empty() ? o.out + ".loss.csv" : o.loss_csv;

  const TrainingData data = prepare_training(ds, mc);
  Checkpoint ck;
  ck.model_config = mc;
  ck.train_config = tc;
  ck.normalizer = data.normalizer;
  ck.normalizer_source = data.normalizer_source;
  ck.scaling_k = data.graph.scaling_k;
  ck.dt = data.dt;
  ck.grid_hash = grid_hash(ds.grid);
  ck.dataset_hash = dataset_hash;
  ck.manifest = m.hash();
  if (o.resume && std::filesystem::exists(o.out)) {
    Checkpoint prev = load_checkpoint(o.out);
    if (!(prev.model_config == mc) || prev.dataset_hash != dataset_hash)
      throw ArgumentError("cannot resume: checkpoint was trained with a different model config or dataset");
    TrainConfig a = prev.train_config, b = tc;
    a.epochs = b.epochs = 0;
    if (!(a == b)) throw ArgumentError("cannot resume: train config differs from the checkpoint's");
    ck.state = std::move(prev.state);
    log << "resuming at epoch " << ck.state.next_epoch << "\n";
  } else {
    ck.state.model = Model(mc, derive_seed(tc.seed, 0x6d6f64656cULL));
    ck.state.adam = Adam(ck.state.model.params());
  }
  auto save = [&] {
    save_checkpoint(ck, o.out);
    write_file(loss_csv, with_manifest(ck.manifest, history_csv(ck.state.history)));
  };
  train(ck.state, data, tc, [&](const TrainState& s) {
    const EpochRecord& r = s.history.back();
    if (o.log_every > 0 && (r.epoch % o.log_every == 0 || r.epoch + 1 == tc.epochs))
      log << "epoch " << r.epoch << " l1 " << fmt_double(r.loss.l1) << " l2 " << fmt_double(r.loss.l2) << " lr "
          << fmt_double(r.lr) << "\n";
    if ((r.epoch + 1) % o.checkpoint_every == 0) save();
  }, o.stop_after);
  save();
  m.outputs = {o.out, loss_csv};
  m.wall_clock_seconds = clock.seconds();
  m.write(o.out);
  log << "wrote " << o.out << " and " << loss_csv << "\n";
  return kExitOk;
}

/// Rebuilds the evaluation context stored in a checkpoint.
struct LoadedModel {
  Checkpoint ck;
  GraphContext graph;
};

inline LoadedModel load_model(const std::string& checkpoint, const Dataset& ds) {
  LoadedModel lm{read_checkpoint(checkpoint), {}};
  if (lm.ck.grid_hash != grid_hash(ds.grid))
    throw ArgumentError("dataset grid does not match the checkpoint's grid");
  lm.graph = GraphContext::from(ds.grid.graph, lm.ck.scaling_k);
  return lm;
}

struct EvalOptions {
  std::string checkpoint;
  std::string dataset;
  std::string horizons = "200,700";
  std::string out;
  bool baseline = false;
};

inline int cmd_eval(const EvalOptions& o, std::ostream& log) {
  const Clock clock;
  const auto horizons = parse_horizons(o.horizons);
  const Dataset ds = read_dataset(o.dataset);
  LoadedModel lm = load_model(o.checkpoint, ds);
  RunManifest m;
  m.command = "eval";
  m.config_hash = json_hash({{"checkpoint", file_hash(o.checkpoint)}, {"horizons", horizons}, {"baseline", o.baseline}});
  m.dataset_hash = file_hash(o.dataset);
  const MetricReport rep = evaluate_model(lm.ck.state.model, lm.ck.normalizer, lm.graph, ds, horizons);
  std::string csv = "# units: normalized (min-max over the training split)\npredictor," + metric_csv_header(horizons) + "\n";
  csv += "model," + metric_csv_row(rep, horizons) + "\n";
  if (o.baseline) {
    const MetricReport b = evaluate_linear_baseline(ds, lm.ck.normalizer,
                                                    static_cast<std::size_t>(lm.ck.model_config.input_steps), horizons);
    csv += "linear_baseline," + metric_csv_row(b, horizons) + "\n";
  }
  write_file(o.out, with_manifest(m.hash(), csv));
  m.outputs = {o.out};
  m.wall_clock_seconds = clock.seconds();
  m.write(o.out);
  log << csv;
  return kExitOk;
}

struct RolloutOptions {
  std::string checkpoint;
  std::string dataset;
  std::size_t trajectory = 0;
  std::size_t horizon = 700;
  std::optional<std::size_t> start;
  std::string out;
};

inline int cmd_rollout(const RolloutOptions& o, std::ostream& log) {
  const Clock clock;
  const Dataset ds = read_dataset(o.dataset);
  LoadedModel lm = load_model(o.checkpoint, ds);
  if (o.trajectory >= ds.trajectories.size())
    throw ArgumentError("trajectory id " + std::to_string(o.trajectory) + " out of range (dataset has " +
                        std::to_string(ds.trajectories.size()) + ")");
  const auto c = static_cast<std::size_t>(lm.ck.model_config.input_steps);
  const PreparedTrajectory t = prepare_trajectory(ds, o.trajectory, lm.ck.normalizer, c);
  const std::size_t start = o.start.value_or(c - 1);
  const RolloutResult r =
      rollout(model_predictor(lm.ck.state.model, lm.graph), t, lm.ck.normalizer, ds.dt(), start, o.horizon);
  RunManifest m;
  m.command = "rollout";
  m.config_hash = json_hash({{"checkpoint", file_hash(o.checkpoint)}, {"trajectory", o.trajectory},
                             {"horizon", o.horizon}, {"start", start}});
  m.dataset_hash = file_hash(o.dataset);
  write_file(o.out, with_manifest(m.hash(), trace_csv(r, t)));
  m.outputs = {o.out};
  m.wall_clock_seconds = clock.seconds();
  m.write(o.out);
  log << "rolled out " << r.steps() << " steps" << (r.diverged ? " (diverged)" : "") << " to " << o.out << "\n";
  return kExitOk;
}

struct AblateOptions {
  std::string grid;
  std::string dataset;
  std::uint64_t seed = 0;
  std::optional<int> epochs;
  std::string out;
};

inline int cmd_ablate(const AblateOptions& o, std::ostream& log) {
  const Clock clock;
  const nlohmann::json gj = read_json(o.grid, "ablation grid");
  AblationGrid grid = parse_ablation_grid(gj);
  if (o.epochs) grid.train.epochs = *o.epochs;
  grid.train.validate();
  const Dataset ds = read_dataset(o.dataset);
  RunManifest m;
  m.command = "ablate";
  m.config_hash = json_hash({{"grid", gj}, {"epochs", grid.train.epochs}});
  m.dataset_hash = file_hash(o.dataset);
  m.seed = o.seed;
  const auto rows = ablation_run(grid, ds, o.seed, [&](const AblationRow& r) {
    log << r.entry.name << ": E1 " << fmt_double(r.report.one_step_rmse) << "\n";
  });
  write_file(o.out, with_manifest(m.hash(), ablation_csv(rows, grid.horizons)));
  m.outputs = {o.out};
  m.wall_clock_seconds = clock.seconds();
  m.write(o.out);
  return kExitOk;
}

inline int cmd_inspect(const std::string& path, std::ostream& out) {
  if (!std::filesystem::exists(path)) throw IoError("file not found: " + path);
  const std::string magic = container::peek_magic(path);
  nlohmann::json j;
  if (magic == kDatasetMagic) {
    const Dataset ds = load_dataset(path);
    std::size_t steps = 0;
    for (const auto& t : ds.trajectories) steps += t.steps();
    j = {{"type", "dataset"}, {"grid", ds.grid.name}, {"grid_hash", grid_hash(ds.grid)}, {"n_buses", ds.grid.n()},
         {"dt", ds.dt()}, {"seed", ds.seed}, {"counts", ds.counts}, {"trajectories", ds.trajectories.size()},
         {"train", ds.indices(false).size()}, {"test", ds.indices(true).size()}, {"total_steps", steps},
         {"manifest", ds.manifest}, {"file_hash", file_hash(path)}};
  } else if (magic == kCheckpointMagic) {
    nlohmann::json h = checkpoint_header(path);
    const auto& hist = h.at("history");
    j = {{"type", "checkpoint"}, {"model_config", h.at("model_config")}, {"train_config", h.at("train_config")},
         {"parameter_count", h.at("parameter_count")}, {"next_epoch", h.at("next_epoch")},
         {"dataset_hash", h.at("dataset_hash")}, {"manifest", h.at("manifest")},
         {"epochs_logged", hist.size()}, {"file_hash", file_hash(path)}};
    if (!hist.empty()) j["last_epoch"] = {{"epoch", hist.back()[0]}, {"l1", hist.back()[1]}, {"l2", hist.back()[2]}};
  } else {
    j = read_json(path, "file");
    if (j.value("format", std::string()) != "gridgnn-manifest") throw IoError("unrecognized file: " + path);
  }
  out << j.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Argument parsing

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"gridgnn: physics-informed graph network surrogate for networked microgrid transients"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  GenDataOptions gen;
  auto* g = app.add_subcommand("gen-data", "simulate a transient-response dataset");
  g->add_option("--grid", gen.grid, "grid spec JSON")->required();
  g->add_option("--complete", gen.complete, "number of complete responses")->capture_default_str();
  g->add_option("--initial-events", gen.initial_events, "number of events in initial responses")->capture_default_str();
  g->add_option("--seed", gen.seed, "random seed")->capture_default_str();
  g->add_option("--out", gen.out, "output dataset file")->required();
  g->add_option("--export-csv", gen.export_csv, "directory for per-trajectory CSV exports");

  TrainOptions tr;
  std::uint64_t seed = 0;
  double nu = 1.0;
  int epochs = 0;
  auto* t = app.add_subcommand("train", "train a model");
  t->add_option("--dataset", tr.dataset, "dataset file")->required();
  t->add_option("--model-config", tr.model_config, "model config JSON")->required();
  t->add_option("--train-config", tr.train_config, "train config JSON")->required();
  t->add_option("--out", tr.out, "output checkpoint")->required();
  t->add_option("--loss-csv", tr.loss_csv, "loss history CSV (default <out>.loss.csv)");
  auto* t_seed = t->add_option("--seed", seed, "override the training seed");
  auto* t_nu = t->add_option("--nu", nu, "override the physics-loss weight");
  auto* t_epochs = t->add_option("--epochs", epochs, "override the epoch count");
  t->add_flag("--serial", tr.serial, "bit-exact serial execution");
  t->add_flag("--resume", tr.resume, "continue from the checkpoint at --out if present");
  t->add_option("--checkpoint-every", tr.checkpoint_every, "epochs between checkpoints")->capture_default_str();
  t->add_option("--log-every", tr.log_every, "epochs between progress lines (0 = quiet)")->capture_default_str();
  t->add_option("--stop-after", tr.stop_after, "stop after this many epochs, keeping the full schedule")
      ->check(CLI::NonNegativeNumber);

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "one-step and cumulative metrics on the test split");
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  e->add_option("--dataset", ev.dataset, "dataset file")->required();
  e->add_option("--horizons", ev.horizons, "comma-separated rollout horizons")->capture_default_str();
  e->add_option("--out", ev.out, "metrics CSV")->required();
  e->add_flag("--baseline", ev.baseline, "add the ridge linear baseline row");

  RolloutOptions ro;
  std::size_t start = 0;
  auto* r = app.add_subcommand("rollout", "closed-loop trace of one trajectory");
  r->add_option("--checkpoint", ro.checkpoint, "checkpoint file")->required();
  r->add_option("--dataset", ro.dataset, "dataset file")->required();
  r->add_option("--trajectory", ro.trajectory, "trajectory index")->required();
  r->add_option("--horizon", ro.horizon, "steps to roll out")->capture_default_str();
  auto* r_start = r->add_option("--start", start, "start step (default C - 1)");
  r->add_option("--out", ro.out, "trace CSV")->required();

  AblateOptions ab;
  auto* a = app.add_subcommand("ablate", "train and evaluate a grid of configurations");
  a->add_option("--grid", ab.grid, "ablation grid JSON")->required();
  a->add_option("--dataset", ab.dataset, "dataset file")->required();
  a->add_option("--seed", ab.seed, "seed shared by every entry")->capture_default_str();
  auto* a_epochs = a->add_option("--epochs", epochs, "override the epoch count");
  a->add_option("--out", ab.out, "table CSV")->required();

  std::string inspect_path;
  auto* i = app.add_subcommand("inspect", "summarize a dataset, checkpoint or manifest");
  i->add_option("path", inspect_path, "file to inspect")->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }
  try {
    if (*g) return cmd_gen_data(gen, out);
    if (*t) {
      if (*t_seed) tr.seed = seed;
      if (*t_nu) tr.nu = nu;
      if (*t_epochs) tr.epochs = epochs;
      return cmd_train(tr, out);
    }
    if (*e) return cmd_eval(ev, out);
    if (*r) {
      if (*r_start) ro.start = start;
      return cmd_rollout(ro, out);
    }
    if (*a) {
      if (*a_epochs) ab.epochs = epochs;
      return cmd_ablate(ab, out);
    }
    if (*i) return cmd_inspect(inspect_path, out);
  } catch (const NumericalError& ex) {
    err << "numerical failure: " << ex.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args);
}

}  // namespace gridgnn::cli
