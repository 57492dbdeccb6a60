// SPDX-License-Identifier: Apache-2.0
//
// spreadnet: ensemble-spread emulation pipeline.
//
// Subcommands: gen, stats, split, train, eval, baseline, gradcheck.
// Exit codes: 0 success, 1 usage error (bad flags/config/missing inputs),
// 2 runtime error. Every subcommand takes one optional --config file of
// key=value lines; command-line flags override file values.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spreadnet/checkpoint.hpp"
#include "spreadnet/dataio.hpp"
#include "spreadnet/eval.hpp"
#include "spreadnet/gradcheck.hpp"
#include "spreadnet/kvfile.hpp"
#include "spreadnet/model.hpp"
#include "spreadnet/synth.hpp"
#include "spreadnet/train.hpp"

namespace {

namespace fs = std::filesystem;
using namespace spreadnet;

/// Problems the user can fix on the command line; mapped to exit code 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// key=value config support: each entry pairs a CLI option with a setter so
/// file values can be applied wherever the flag was not given explicitly.
class OptionTable {
 public:
  void add(CLI::Option* option, const std::string& key,
           std::function<void(const std::string&)> setter) {
    keys_.push_back(key);
    entries_[key] = {option, std::move(setter)};
  }

  void apply_config(const std::string& path, const std::string& stage) const {
    std::ifstream in(path);
    if (!in) throw UsageError(stage + ": cannot open config file: " + path);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      while (!line.empty() && (line.back() == ' ' || line.back() == '\t')) line.pop_back();
      size_t start = 0;
      while (start < line.size() && (line[start] == ' ' || line[start] == '\t')) ++start;
      line.erase(0, start);
      if (line.empty()) continue;
      const size_t eq = line.find('=');
      if (eq == std::string::npos) {
        throw UsageError(stage + ": malformed config line " + std::to_string(lineno) +
                         " (expected key=value): " + line);
      }
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 1);
      auto it = entries_.find(key);
      if (it == entries_.end()) {
        std::string valid;
        for (const std::string& k : keys_) {
          if (!valid.empty()) valid += ", ";
          valid += k;
        }
        throw UsageError(stage + ": unknown config key '" + key +
                         "' (valid keys: " + valid + ")");
      }
      if (it->second.option->count() > 0) continue;  // explicit flag wins
      try {
        it->second.setter(value);
      } catch (const std::exception& e) {
        throw UsageError(stage + ": bad config value for '" + key + "': " + e.what());
      }
    }
  }

 private:
  struct Entry {
    CLI::Option* option;
    std::function<void(const std::string&)> setter;
  };
  std::vector<std::string> keys_;
  std::map<std::string, Entry> entries_;
};

template <typename T>
T parse_scalar(const std::string& v);

template <>
uint64_t parse_scalar<uint64_t>(const std::string& v) {
  return std::stoull(v);
}
template <>
int64_t parse_scalar<int64_t>(const std::string& v) {
  return std::stoll(v);
}
template <>
double parse_scalar<double>(const std::string& v) {
  return std::stod(v);
}
template <>
std::string parse_scalar<std::string>(const std::string& v) {
  return v;
}
template <>
bool parse_scalar<bool>(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("expected a boolean, got '" + v + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& v) {
  std::vector<T> out;
  size_t pos = 0;
  while (pos <= v.size()) {
    const size_t comma = std::min(v.find(',', pos), v.size());
    const std::string item = v.substr(pos, comma - pos);
    if (!item.empty()) out.push_back(parse_scalar<T>(item));
    pos = comma + 1;
  }
  return out;
}

/// Registers a flag plus its config-file key in one step.
template <typename T>
CLI::Option* bind_opt(CLI::App* app, OptionTable& table, const std::string& flag,
                      const std::string& key, T& target, const std::string& desc) {
  CLI::Option* opt = app->add_option(flag, target, desc);
  table.add(opt, key, [&target](const std::string& v) { target = parse_scalar<T>(v); });
  return opt;
}

template <typename T>
CLI::Option* bind_opt_list(CLI::App* app, OptionTable& table, const std::string& flag,
                           const std::string& key, std::vector<T>& target,
                           const std::string& desc) {
  CLI::Option* opt = app->add_option(flag, target, desc)->delimiter(',');
  table.add(opt, key, [&target](const std::string& v) { target = parse_list<T>(v); });
  return opt;
}

void bind_flag(CLI::App* app, OptionTable& table, const std::string& flag,
               const std::string& key, bool& target, const std::string& desc) {
  CLI::Option* opt = app->add_flag(flag, target, desc);
  table.add(opt, key, [&target](const std::string& v) { target = parse_scalar<bool>(v); });
}

void require_file(const std::string& path, const std::string& stage) {
  if (!fs::exists(path)) throw UsageError(stage + ": missing file: " + path);
}

void require_dir(const std::string& path, const std::string& stage) {
  if (!fs::is_directory(path)) throw UsageError(stage + ": missing directory: " + path);
}

/// Runs `body`, rephrasing any failure as "<stage>: <what>" with the original
/// exception category kept (invalid_argument stays a usage problem).
template <typename Body>
void run_stage(const std::string& stage, Body&& body) {
  try {
    body();
  } catch (const UsageError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw UsageError(stage + ": " + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(stage + ": " + e.what());
  }
}

std::vector<std::string> split_paths(const std::string& dir,
                                     const std::vector<std::string>& ids) {
  std::vector<std::string> paths;
  paths.reserve(ids.size());
  for (const std::string& id : ids) paths.push_back(dir + "/" + id + ".esg");
  return paths;
}

// ---------------------------------------------------------------- gen

struct GenOptions {
  std::string out;
  std::string config;
  size_t samples = 0;
  uint64_t seed = 0;
  size_t members = 10;
  size_t lat = 20;
  size_t lon = 32;
  size_t epochs = 1;
  std::vector<int64_t> test_epochs;
  double train_frac = 0.8;
  double sigma = 1e-4;
  double forcing = 8.0;
  double dt = 0.01;
  size_t steps_per_unit = 10;
  size_t spinup = 500;
  bool perturbed_control = false;
};

int run_gen(const GenOptions& opt) {
  run_stage("gen: dataset generation", [&] {
    if (opt.samples == 0) throw std::invalid_argument("--samples must be >= 1");
    fs::create_directories(opt.out);

    GridSpec grid = GridSpec::desk_default();
    grid.n_lat = opt.lat;
    grid.n_lon = opt.lon;

    GenConfig cfg;
    cfg.spec = std::make_shared<GridSpec>(grid);
    cfg.n_members = opt.members;
    cfg.ic_perturbation_sigma = opt.sigma;
    cfg.forcing = opt.forcing;
    cfg.dt = opt.dt;
    cfg.steps_per_time_unit = opt.steps_per_unit;
    cfg.spinup_steps = opt.spinup;
    cfg.perturbed_control = opt.perturbed_control;
    cfg.seed = opt.seed;

    std::set<int64_t> test_tags(opt.test_epochs.begin(), opt.test_epochs.end());
    DatasetResult result = generate_dataset(cfg, opt.samples, opt.epochs, test_tags,
                                            opt.train_frac, opt.out);
    std::printf("gen: wrote %zu samples to %s\n", result.paths.size(), opt.out.c_str());
    std::printf("gen: split %zu train / %zu val / %zu test -> %s\n",
                result.manifest.train_ids.size(), result.manifest.val_ids.size(),
                result.manifest.test_ids.size(), result.manifest_path.c_str());
  });
  return 0;
}

// ---------------------------------------------------------------- stats

struct StatsOptions {
  std::string data;
  std::string manifest;
  std::string out;
  std::string config;
};

int run_stats(const StatsOptions& opt) {
  SplitManifest manifest;
  run_stage("stats: reading split manifest", [&] {
    require_file(opt.manifest, "stats");
    manifest = read_manifest(opt.manifest);
  });
  run_stage("stats: computing train-split statistics", [&] {
    require_dir(opt.data, "stats");
    DatasetStats stats = compute_dataset_stats(split_paths(opt.data, manifest.train_ids));
    save_stats(stats, opt.out);
    std::printf("stats: %zu train samples -> %s\n", manifest.train_ids.size(),
                opt.out.c_str());
  });
  return 0;
}

// ---------------------------------------------------------------- split

struct SplitOptions {
  std::string data;
  std::string out;
  std::string config;
  uint64_t seed = 0;
  double train_frac = 0.8;
  std::vector<int64_t> test_epochs;
};

int run_split(const SplitOptions& opt) {
  run_stage("split: building manifest", [&] {
    require_dir(opt.data, "split");
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(opt.data)) {
      if (entry.path().extension() == ".esg") files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
      throw std::invalid_argument("no .esg files in directory: " + opt.data);
    }
    std::vector<SampleKey> keys;
    for (const std::string& file : files) {
      KvFile meta = KvFile::load(file + ".meta");
      keys.push_back({fs::path(file).stem().string(), meta.get_i64("epoch_tag")});
    }
    std::set<int64_t> test_tags(opt.test_epochs.begin(), opt.test_epochs.end());
    SplitManifest manifest = split_dataset(keys, opt.seed, opt.train_frac, test_tags);
    write_manifest(manifest, opt.out);
    std::printf("split: %zu train / %zu val / %zu test -> %s\n",
                manifest.train_ids.size(), manifest.val_ids.size(),
                manifest.test_ids.size(), opt.out.c_str());
  });
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  std::string data;
  std::string manifest;
  std::string stats;
  std::string out;
  std::string config;
  uint64_t seed = 0;
  size_t batch = 8;
  size_t steps = 100;
  double lr = 1e-3;
  size_t workers = 1;
  size_t checkpoint_every = 50;
  size_t m_trajectories = 1;
  std::string variant = "standard";
  std::string temporal_mode = "none";
  size_t base = 32;
  size_t depth = 2;
  size_t target_param = 3;
  size_t target_time = 2;
  std::vector<size_t> input_times = {0, 1, 2};
  size_t temporal_level = 2;
};

TaskSpec task_from(const TrainOptions& opt) {
  TaskSpec task;
  task.target_param = opt.target_param;
  task.target_time = opt.target_time;
  task.input_times = opt.input_times;
  task.temporal_level = opt.temporal_level;
  return task;
}

int run_train(const TrainOptions& opt) {
  SplitManifest manifest;
  DatasetStats stats;
  run_stage("train: reading inputs", [&] {
    require_file(opt.manifest, "train");
    require_dir(opt.data, "train");
    require_file(opt.stats, "train");
    manifest = read_manifest(opt.manifest);
    if (manifest.train_ids.empty()) {
      throw std::invalid_argument("manifest has an empty train split: " + opt.manifest);
    }
    stats = load_stats(opt.stats);
  });

  const TaskSpec task = task_from(opt);
  const TemporalMode mode = parse_temporal_mode(opt.temporal_mode);

  ModelSpec mspec;
  TrainData data;
  run_stage("train: preparing training tensors", [&] {
    const EnsembleSample first = read_esg(opt.data + "/" + manifest.train_ids[0] + ".esg");
    mspec.in_channels = task_input_channels(*first.spec, mode, task, opt.m_trajectories);
    mspec.out_channels = 1;
    mspec.base_channels = opt.base;
    mspec.depth = opt.depth;
    mspec.conv_variant = parse_conv_variant(opt.variant);
    mspec.temporal_mode = mode;
    mspec.n_levels = mode == TemporalMode::kNone ? first.spec->n_levels : 1;
    mspec.seed = opt.seed;
    data = load_training_data(opt.data, manifest, stats, mode, task, opt.m_trajectories);
  });

  run_stage("train: optimization", [&] {
    TrainConfig cfg;
    cfg.batch_size = opt.batch;
    cfg.steps = opt.steps;
    cfg.learning_rate = opt.lr;
    cfg.n_workers = opt.workers;
    cfg.seed = opt.seed;
    cfg.checkpoint_every = opt.checkpoint_every;
    cfg.m_trajectories = opt.m_trajectories;

    UNet model(mspec);
    std::printf("train: %zu parameters, %zu train / %zu val samples\n",
                model.param_count(), data.train_inputs.size(), data.val_inputs.size());
    TrainResult result = train_model(model, data, cfg);

    fs::create_directories(opt.out);
    const std::string ckpt = opt.out + "/checkpoint.esg";
    const std::string curve = opt.out + "/curve.csv";
    save_checkpoint(model, ckpt);
    write_curve_csv(result.curve, curve);
    std::printf("train: final train mse %.6g", result.final_train_mse);
    if (result.best_step > 0) {
      std::printf(", best val rmse %.6g at step %zu", result.best_val_rmse,
                  result.best_step);
    }
    std::printf("\ntrain: checkpoint -> %s\ntrain: curve -> %s\n", ckpt.c_str(),
                curve.c_str());
  });
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
  std::string data;
  std::string manifest;
  std::string stats;
  std::string checkpoint;
  std::string out;
  std::string config;
  size_t m_trajectories = 1;
  size_t heatmaps = 4;
  size_t heatmap_level = 2;
  size_t target_param = 3;
  size_t target_time = 2;
  std::vector<size_t> input_times = {0, 1, 2};
  size_t temporal_level = 2;
};

int run_eval(const EvalOptions& opt) {
  SplitManifest manifest;
  DatasetStats stats;
  run_stage("eval: reading inputs", [&] {
    require_file(opt.manifest, "eval");
    require_file(opt.stats, "eval");
    require_file(opt.checkpoint, "eval");
    require_dir(opt.data, "eval");
    manifest = read_manifest(opt.manifest);
    if (manifest.test_ids.empty()) {
      throw std::invalid_argument("manifest has an empty test split: " + opt.manifest);
    }
    stats = load_stats(opt.stats);
  });

  run_stage("eval: scoring test split", [&] {
    UNet model = load_checkpoint(opt.checkpoint);

    EvalConfig cfg;
    cfg.mode = model.spec().temporal_mode;
    cfg.task.target_param = opt.target_param;
    cfg.task.target_time = opt.target_time;
    cfg.task.input_times = opt.input_times;
    cfg.task.temporal_level = opt.temporal_level;
    cfg.m_trajectories = opt.m_trajectories;
    fs::create_directories(opt.out);
    cfg.heatmap_dir = opt.out;
    cfg.max_heatmaps = opt.heatmaps;
    cfg.heatmap_level = opt.heatmap_level;

    const LinearBaseline baseline = fit_spread_baseline(
        split_paths(opt.data, manifest.train_ids), 0, cfg.task.target_time);
    const EvalReport report = evaluate(model, split_paths(opt.data, manifest.test_ids),
                                       stats, baseline, cfg);
    write_eval_report_txt(report, opt.out + "/report.txt");
    write_eval_report_csv(report, opt.out + "/report.csv");
    std::printf("eval: %zu test samples\n", report.n_samples);
    std::printf("eval: model rmse        %.9f\n", report.model_rmse);
    std::printf("eval: linear baseline   %.9f\n", report.linear_rmse);
    for (size_t m = 1; m <= report.member_ladder_rmse.size(); ++m) {
      std::printf("eval: %zu-member spread  %.9f\n", m, report.member_ladder_rmse[m - 1]);
    }
    std::printf("eval: report -> %s\n", (opt.out + "/report.txt").c_str());
  });
  return 0;
}

// ---------------------------------------------------------------- baseline

struct BaselineOptions {
  std::string data;
  std::string manifest;
  std::string out;
  std::string config;
  size_t target_time = 2;
};

int run_baseline(const BaselineOptions& opt) {
  SplitManifest manifest;
  run_stage("baseline: reading inputs", [&] {
    require_file(opt.manifest, "baseline");
    require_dir(opt.data, "baseline");
    manifest = read_manifest(opt.manifest);
    if (manifest.train_ids.empty()) {
      throw std::invalid_argument("manifest has an empty train split: " + opt.manifest);
    }
  });
  run_stage("baseline: fitting and scoring", [&] {
    const LinearBaseline baseline = fit_spread_baseline(
        split_paths(opt.data, manifest.train_ids), 0, opt.target_time);
    save_baseline(baseline, opt.out);
    std::printf("baseline: fit %zu planes from %zu train samples -> %s\n",
                baseline.slope.size(), manifest.train_ids.size(), opt.out.c_str());

    if (!manifest.test_ids.empty()) {
      double sq_sum = 0.0, count = 0.0;
      for (const std::string& path : split_paths(opt.data, manifest.test_ids)) {
        const EnsembleSample sample = read_esg(path);
        std::vector<Field> at_t0, at_target;
        for (const auto& member : sample.members) {
          at_t0.push_back(member[0]);
          at_target.push_back(member[opt.target_time]);
        }
        const Field pred = predict_linear_baseline(baseline, ensemble_spread(at_t0));
        const Field truth = ensemble_spread(at_target);
        for (size_t i = 0; i < pred.values().size(); ++i) {
          const double d = pred.values()[i] - truth.values()[i];
          sq_sum += d * d;
          count += 1.0;
        }
      }
      std::printf("baseline: test rmse (all planes) %.9f over %zu samples\n",
                  std::sqrt(sq_sum / count), manifest.test_ids.size());
    }
  });
  return 0;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckOptions {
  uint64_t seed = 0;
  std::string config;
};

int run_gradcheck(const GradcheckOptions& opt) {
  bool all_pass = true;
  run_stage("gradcheck: layer sweep", [&] {
    for (const GradCheckResult& r : run_layer_grad_checks(opt.seed)) {
      std::printf("%-16s max_rel_err %.3e  (threshold %.0e)  %s\n", r.layer.c_str(),
                  r.max_rel_err, r.threshold, r.pass() ? "ok" : "FAIL");
      all_pass = all_pass && r.pass();
    }
  });
  if (!all_pass) {
    std::fprintf(stderr, "gradcheck: at least one layer exceeded its threshold\n");
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ensemble-spread emulation pipeline"};
  app.require_subcommand(1);

  GenOptions gen;
  OptionTable gen_table;
  CLI::App* gen_cmd = app.add_subcommand("gen", "generate a synthetic ensemble dataset");
  gen_cmd->add_option("--config", gen.config, "key=value config file");
  bind_opt(gen_cmd, gen_table, "--out", "out", gen.out, "output directory")->required();
  bind_opt(gen_cmd, gen_table, "--samples", "samples", gen.samples, "sample count")->required();
  bind_opt(gen_cmd, gen_table, "--seed", "seed", gen.seed, "master RNG seed");
  bind_opt(gen_cmd, gen_table, "--members", "members", gen.members, "ensemble members");
  bind_opt(gen_cmd, gen_table, "--lat", "lat", gen.lat, "latitude points");
  bind_opt(gen_cmd, gen_table, "--lon", "lon", gen.lon, "longitude points");
  bind_opt(gen_cmd, gen_table, "--epochs", "epochs", gen.epochs, "epoch tags to spread over");
  bind_opt_list(gen_cmd, gen_table, "--test-epochs", "test_epochs", gen.test_epochs,
            "epoch tags held out as the test split");
  bind_opt(gen_cmd, gen_table, "--train-frac", "train_frac", gen.train_frac,
       "train fraction of the non-test pool");
  bind_opt(gen_cmd, gen_table, "--sigma", "sigma", gen.sigma, "initial perturbation sigma");
  bind_opt(gen_cmd, gen_table, "--forcing", "forcing", gen.forcing, "Lorenz-96 forcing F");
  bind_opt(gen_cmd, gen_table, "--dt", "dt", gen.dt, "RK4 step size");
  bind_opt(gen_cmd, gen_table, "--steps-per-unit", "steps_per_unit", gen.steps_per_unit,
       "integration steps per forecast-time unit");
  bind_opt(gen_cmd, gen_table, "--spinup", "spinup", gen.spinup, "spin-up steps");
  bind_flag(gen_cmd, gen_table, "--perturbed-control", "perturbed_control",
            gen.perturbed_control, "perturb every member (no control)");

  StatsOptions stats;
  OptionTable stats_table;
  CLI::App* stats_cmd =
      app.add_subcommand("stats", "compute train-split standardization statistics");
  stats_cmd->add_option("--config", stats.config, "key=value config file");
  bind_opt(stats_cmd, stats_table, "--data", "data", stats.data, "dataset directory")->required();
  bind_opt(stats_cmd, stats_table, "--manifest", "manifest", stats.manifest, "split manifest")
      ->required();
  bind_opt(stats_cmd, stats_table, "--out", "out", stats.out, "output stats file")->required();

  SplitOptions split;
  OptionTable split_table;
  CLI::App* split_cmd = app.add_subcommand("split", "write a train/val/test manifest");
  split_cmd->add_option("--config", split.config, "key=value config file");
  bind_opt(split_cmd, split_table, "--data", "data", split.data, "dataset directory")->required();
  bind_opt(split_cmd, split_table, "--out", "out", split.out, "manifest path")->required();
  bind_opt(split_cmd, split_table, "--seed", "seed", split.seed, "shuffle seed");
  bind_opt(split_cmd, split_table, "--train-frac", "train_frac", split.train_frac,
       "train fraction");
  bind_opt_list(split_cmd, split_table, "--test-epochs", "test_epochs", split.test_epochs,
            "epoch tags held out as test");

  TrainOptions train;
  OptionTable train_table;
  CLI::App* train_cmd = app.add_subcommand("train", "train a spread-emulation model");
  train_cmd->add_option("--config", train.config, "key=value config file");
  bind_opt(train_cmd, train_table, "--data", "data", train.data, "dataset directory")->required();
  bind_opt(train_cmd, train_table, "--manifest", "manifest", train.manifest, "split manifest")
      ->required();
  bind_opt(train_cmd, train_table, "--stats", "stats", train.stats, "statistics file")
      ->required();
  bind_opt(train_cmd, train_table, "--out", "out", train.out, "output directory")->required();
  bind_opt(train_cmd, train_table, "--seed", "seed", train.seed, "training seed");
  bind_opt(train_cmd, train_table, "--batch", "batch", train.batch, "batch size");
  bind_opt(train_cmd, train_table, "--steps", "steps", train.steps, "optimization steps");
  bind_opt(train_cmd, train_table, "--lr", "lr", train.lr, "learning rate");
  bind_opt(train_cmd, train_table, "--workers", "workers", train.workers, "worker threads");
  bind_opt(train_cmd, train_table, "--checkpoint-every", "checkpoint_every",
       train.checkpoint_every, "validation cadence in steps");
  bind_opt(train_cmd, train_table, "--m-trajectories", "m_trajectories", train.m_trajectories,
       "input trajectories packed as channels");
  bind_opt(train_cmd, train_table, "--variant", "variant", train.variant,
       "conv variant: standard|full|affine|separable");
  bind_opt(train_cmd, train_table, "--temporal-mode", "temporal_mode", train.temporal_mode,
       "none|spread_channels|spread_channels_plus_ip");
  bind_opt(train_cmd, train_table, "--base", "base", train.base, "base channel count");
  bind_opt(train_cmd, train_table, "--depth", "depth", train.depth, "pooling stages");
  bind_opt(train_cmd, train_table, "--target-param", "target_param", train.target_param,
       "predicted parameter index");
  bind_opt(train_cmd, train_table, "--target-time", "target_time", train.target_time,
       "predicted forecast-time index");
  bind_opt_list(train_cmd, train_table, "--input-times", "input_times", train.input_times,
            "forecast-time indices packed as input");
  bind_opt(train_cmd, train_table, "--temporal-level", "temporal_level", train.temporal_level,
       "level slice for temporal modes");

  EvalOptions eval;
  OptionTable eval_table;
  CLI::App* eval_cmd = app.add_subcommand("eval", "score a checkpoint on the test split");
  eval_cmd->add_option("--config", eval.config, "key=value config file");
  bind_opt(eval_cmd, eval_table, "--data", "data", eval.data, "dataset directory")->required();
  bind_opt(eval_cmd, eval_table, "--manifest", "manifest", eval.manifest, "split manifest")
      ->required();
  bind_opt(eval_cmd, eval_table, "--stats", "stats", eval.stats, "statistics file")->required();
  bind_opt(eval_cmd, eval_table, "--checkpoint", "checkpoint", eval.checkpoint,
       "model checkpoint")
      ->required();
  bind_opt(eval_cmd, eval_table, "--out", "out", eval.out, "output directory")->required();
  bind_opt(eval_cmd, eval_table, "--m-trajectories", "m_trajectories", eval.m_trajectories,
       "input trajectories packed as channels");
  bind_opt(eval_cmd, eval_table, "--heatmaps", "heatmaps", eval.heatmaps,
       "squared-error heatmaps to write");
  bind_opt(eval_cmd, eval_table, "--heatmap-level", "heatmap_level", eval.heatmap_level,
       "level index for heatmaps");
  bind_opt(eval_cmd, eval_table, "--target-param", "target_param", eval.target_param,
       "predicted parameter index");
  bind_opt(eval_cmd, eval_table, "--target-time", "target_time", eval.target_time,
       "predicted forecast-time index");
  bind_opt_list(eval_cmd, eval_table, "--input-times", "input_times", eval.input_times,
            "forecast-time indices packed as input");
  bind_opt(eval_cmd, eval_table, "--temporal-level", "temporal_level", eval.temporal_level,
       "level slice for temporal modes");

  BaselineOptions baseline;
  OptionTable baseline_table;
  CLI::App* baseline_cmd =
      app.add_subcommand("baseline", "fit and score the linear spread baseline");
  baseline_cmd->add_option("--config", baseline.config, "key=value config file");
  bind_opt(baseline_cmd, baseline_table, "--data", "data", baseline.data, "dataset directory")
      ->required();
  bind_opt(baseline_cmd, baseline_table, "--manifest", "manifest", baseline.manifest,
       "split manifest")
      ->required();
  bind_opt(baseline_cmd, baseline_table, "--out", "out", baseline.out, "baseline file")
      ->required();
  bind_opt(baseline_cmd, baseline_table, "--target-time", "target_time", baseline.target_time,
       "predicted forecast-time index");

  GradcheckOptions gradcheck;
  OptionTable gradcheck_table;
  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference check of every layer");
  gradcheck_cmd->add_option("--config", gradcheck.config, "key=value config file");
  bind_opt(gradcheck_cmd, gradcheck_table, "--seed", "seed", gradcheck.seed, "input seed");

  try {
    app.parse(argc, argv);

    if (gen_cmd->parsed() && !gen.config.empty()) gen_table.apply_config(gen.config, "gen");
    if (stats_cmd->parsed() && !stats.config.empty()) {
      stats_table.apply_config(stats.config, "stats");
    }
    if (split_cmd->parsed() && !split.config.empty()) {
      split_table.apply_config(split.config, "split");
    }
    if (train_cmd->parsed() && !train.config.empty()) {
      train_table.apply_config(train.config, "train");
    }
    if (eval_cmd->parsed() && !eval.config.empty()) {
      eval_table.apply_config(eval.config, "eval");
    }
    if (baseline_cmd->parsed() && !baseline.config.empty()) {
      baseline_table.apply_config(baseline.config, "baseline");
    }
    if (gradcheck_cmd->parsed() && !gradcheck.config.empty()) {
      gradcheck_table.apply_config(gradcheck.config, "gradcheck");
    }

    if (gen_cmd->parsed()) return run_gen(gen);
    if (stats_cmd->parsed()) return run_stats(stats);
    if (split_cmd->parsed()) return run_split(split);
    if (train_cmd->parsed()) return run_train(train);
    if (eval_cmd->parsed()) return run_eval(eval);
    if (baseline_cmd->parsed()) return run_baseline(baseline);
    if (gradcheck_cmd->parsed()) return run_gradcheck(gradcheck);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "spreadnet: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "spreadnet: %s\n", e.what());
    return 2;
  }
}
