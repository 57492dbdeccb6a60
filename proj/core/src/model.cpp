// SPDX-License-Identifier: Apache-2.0
#include "spreadnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "spreadnet/dataio.hpp"
#include "spreadnet/kvfile.hpp"
#include "spreadnet/ops.hpp"

namespace spreadnet {

const char* temporal_mode_name(TemporalMode mode) {
  switch (mode) {
    case TemporalMode::kNone: return "none";
    case TemporalMode::kSpreadChannels: return "spread_channels";
    case TemporalMode::kSpreadChannelsPlusIp: return "spread_channels_plus_ip";
  }
  throw std::logic_error("unknown TemporalMode");
}

TemporalMode parse_temporal_mode(const std::string& name) {
  if (name == "none") return TemporalMode::kNone;
  if (name == "spread_channels") return TemporalMode::kSpreadChannels;
  if (name == "spread_channels_plus_ip") return TemporalMode::kSpreadChannelsPlusIp;
  throw std::invalid_argument("unknown temporal mode '" + name +
                              "' (expected none, spread_channels, or "
                              "spread_channels_plus_ip)");
}

void ModelSpec::validate() const {
  if (in_channels == 0 || out_channels == 0 || base_channels == 0) {
    throw std::invalid_argument("ModelSpec: channel counts must be >= 1");
  }
  if (depth < 1) throw std::invalid_argument("ModelSpec: depth must be >= 1");
  if (n_levels == 0) throw std::invalid_argument("ModelSpec: n_levels must be >= 1");
  if (temporal_mode != TemporalMode::kNone && n_levels != 1) {
    throw std::invalid_argument(
        "ModelSpec: temporal modes predict one pressure level at a time; "
        "n_levels must be 1");
  }
}

Tensor& ModelParams::add(const std::string& name, Tensor value) {
  if (tensors_.count(name)) {
    throw std::invalid_argument("duplicate parameter name '" + name + "'");
  }
  order_.push_back(name);
  return tensors_.emplace(name, std::move(value)).first->second;
}

bool ModelParams::has(const std::string& name) const { return tensors_.count(name) > 0; }

Tensor& ModelParams::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

size_t ModelParams::total_values() const {
  size_t total = 0;
  for (const auto& name : order_) total += tensors_.at(name).size();
  return total;
}

BatchNormState& ModelParams::add_norm(const std::string& name, size_t channels) {
  if (norms_.count(name)) {
    throw std::invalid_argument("duplicate norm state name '" + name + "'");
  }
  norm_order_.push_back(name);
  BatchNormState state;
  state.running_mean.assign(channels, 0.0);
  state.running_var.assign(channels, 0.0);
  return norms_.emplace(name, std::move(state)).first->second;
}

BatchNormState& ModelParams::norm_at(const std::string& name) {
  auto it = norms_.find(name);
  if (it == norms_.end()) throw std::out_of_range("unknown norm state '" + name + "'");
  return it->second;
}

const BatchNormState& ModelParams::norm_at(const std::string& name) const {
  auto it = norms_.find(name);
  if (it == norms_.end()) throw std::out_of_range("unknown norm state '" + name + "'");
  return it->second;
}

std::vector<UNet::BlockDef> UNet::plan_blocks(const ModelSpec& spec) {
  std::vector<BlockDef> blocks;
  const size_t b = spec.base_channels;
  size_t c_prev = spec.in_channels;
  for (size_t s = 0; s < spec.depth; ++s) {
    const size_t c = b << s;
    blocks.push_back({"enc" + std::to_string(s) + ".conv1", c_prev, c});
    blocks.push_back({"enc" + std::to_string(s) + ".conv2", c, c});
    c_prev = c;
  }
  const size_t c_bottom = b << spec.depth;
  blocks.push_back({"bottleneck.conv1", c_prev, c_bottom});
  blocks.push_back({"bottleneck.conv2", c_bottom, c_bottom});
  for (size_t s = spec.depth; s-- > 0;) {
    const size_t c = b << s;
    const size_t c_up = b << (s + 1);
    blocks.push_back({"dec" + std::to_string(s) + ".conv1", c_up + c, c});
    blocks.push_back({"dec" + std::to_string(s) + ".conv2", c, c});
  }
  return blocks;
}

UNet::UNet(const ModelSpec& spec) : spec_(spec) {
  spec_.validate();
  blocks_ = plan_blocks(spec_);
  register_parameters();
}

UNet::UNet(const ModelSpec& spec, ModelParams params) : spec_(spec) {
  spec_.validate();
  blocks_ = plan_blocks(spec_);
  // Build a reference instance to know the expected names and shapes, then
  // adopt the provided tensors after checking them.
  UNet reference(spec);
  const auto& want = reference.params_;
  if (want.names().size() != params.names().size()) {
    throw std::invalid_argument("checkpoint has " + std::to_string(params.names().size()) +
                                " parameter tensors, model needs " +
                                std::to_string(want.names().size()));
  }
  for (size_t i = 0; i < want.names().size(); ++i) {
    const std::string& name = want.names()[i];
    if (params.names()[i] != name) {
      throw std::invalid_argument("checkpoint parameter order mismatch: expected '" +
                                  name + "', got '" + params.names()[i] + "'");
    }
    if (params.at(name).shape() != want.at(name).shape()) {
      throw std::invalid_argument("checkpoint parameter '" + name + "' has shape " +
                                  shape_to_string(params.at(name).shape()) +
                                  ", model needs " +
                                  shape_to_string(want.at(name).shape()));
    }
  }
  if (params.norm_names() != want.norm_names()) {
    throw std::invalid_argument("checkpoint norm-state names do not match the model");
  }
  params_ = std::move(params);
}

void UNet::register_parameters() {
  Rng rng(spec_.seed);
  const size_t P = spec_.n_levels;
  const size_t k3 = 3 * 3 * 3;

  auto add_block = [&](const BlockDef& blk) {
    const size_t ci = blk.c_in, co = blk.c_out;
    switch (spec_.conv_variant) {
      case ConvVariant::kStandard:
        params_.add(blk.name + ".weight",
                    he_uniform(Shape{co, ci, 3, 3, 3}, ci * k3, rng));
        params_.add(blk.name + ".bias", Tensor(Shape{co}));
        break;
      case ConvVariant::kFull:
        params_.add(blk.name + ".weight",
                    he_uniform(Shape{P, co, ci, 3, 3, 3}, ci * k3, rng));
        params_.add(blk.name + ".bias", Tensor(Shape{P, co}));
        break;
      case ConvVariant::kAffine:
        params_.add(blk.name + ".weight",
                    he_uniform(Shape{co, ci, 3, 3, 3}, ci * k3, rng));
        params_.add(blk.name + ".bias", Tensor(Shape{co}));
        params_.add(blk.name + ".scale", Tensor::full(Shape{co, P}, 1.0));
        params_.add(blk.name + ".shift", Tensor(Shape{co, P}));
        break;
      case ConvVariant::kSeparable:
        params_.add(blk.name + ".horiz", he_uniform(Shape{co, ci, 3, 3}, ci * 9, rng));
        params_.add(blk.name + ".vert", he_uniform(Shape{co, co, 3}, co * 3, rng));
        params_.add(blk.name + ".bias", Tensor(Shape{co}));
        break;
    }
    params_.add(blk.name + ".gamma", Tensor::full(Shape{co}, 1.0));
    params_.add(blk.name + ".beta", Tensor(Shape{co}));
    params_.add_norm(blk.name, co);
  };

  for (const BlockDef& blk : blocks_) add_block(blk);
  params_.add("head.weight", he_uniform(Shape{spec_.out_channels, spec_.base_channels,
                                               1, 1, 1},
                                        spec_.base_channels, rng));
  params_.add("head.bias", Tensor(Shape{spec_.out_channels}));

  const size_t expected = expected_param_count(spec_);
  if (params_.total_values() != expected) {
    throw std::logic_error("parameter-count audit failed: registered " +
                           std::to_string(params_.total_values()) + ", formula gives " +
                           std::to_string(expected));
  }
}

size_t UNet::expected_param_count(const ModelSpec& spec) {
  spec.validate();
  size_t total = 0;
  for (const BlockDef& blk : plan_blocks(spec)) {
    ConvSpec conv;
    conv.in_channels = blk.c_in;
    conv.out_channels = blk.c_out;
    conv.k_depth = conv.k_lat = conv.k_lon = 3;
    conv.variant = spec.conv_variant;
    total += conv_param_count(conv, spec.n_levels);
    total += 2 * blk.c_out;  // gamma + beta
  }
  total += spec.base_channels * spec.out_channels + spec.out_channels;  // 1x1x1 head
  return total;
}

Tensor UNet::watch_param(Tape* tape, const std::string& name,
                         std::vector<std::pair<std::string, Tensor>>* watched) const {
  const Tensor& p = params_.at(name);
  if (!tape || !watched) return p;
  Tensor tracked = tape->watch(p);
  watched->emplace_back(name, tracked);
  return tracked;
}

Tensor UNet::block_forward(Tape* tape, const Tensor& x, const BlockDef& block,
                           bool train, std::vector<BatchNormStats>* captured,
                           std::vector<std::pair<std::string, Tensor>>* watched) {
  Tensor y;
  switch (spec_.conv_variant) {
    case ConvVariant::kStandard:
      y = conv3d(tape, x, watch_param(tape, block.name + ".weight", watched),
                 watch_param(tape, block.name + ".bias", watched));
      break;
    case ConvVariant::kFull:
      y = conv_full(tape, x, watch_param(tape, block.name + ".weight", watched),
                    watch_param(tape, block.name + ".bias", watched));
      break;
    case ConvVariant::kAffine:
      y = conv3d(tape, x, watch_param(tape, block.name + ".weight", watched),
                 watch_param(tape, block.name + ".bias", watched));
      y = affine_level(tape, y, watch_param(tape, block.name + ".scale", watched),
                       watch_param(tape, block.name + ".shift", watched));
      break;
    case ConvVariant::kSeparable:
      y = conv_separable(tape, x, watch_param(tape, block.name + ".horiz", watched),
                         watch_param(tape, block.name + ".vert", watched),
                         watch_param(tape, block.name + ".bias", watched));
      break;
  }

  const Tensor gamma = watch_param(tape, block.name + ".gamma", watched);
  const Tensor beta = watch_param(tape, block.name + ".beta", watched);
  BatchNormState& state = params_.norm_at(block.name);
  if (train && captured) {
    BatchNormStats stats;
    y = batchnorm(tape, y, gamma, beta, /*train=*/true, nullptr, &stats);
    captured->push_back(std::move(stats));
  } else if (train) {
    y = batchnorm(tape, y, gamma, beta, /*train=*/true, &state, nullptr);
  } else {
    y = batchnorm(tape, y, gamma, beta, /*train=*/false, &state, nullptr);
  }
  return relu(tape, y);
}

Tensor UNet::forward(Tape* tape, const Tensor& x, bool train,
                     std::vector<BatchNormStats>* captured,
                     std::vector<std::pair<std::string, Tensor>>* watched) {
  if (x.rank() != 4) {
    throw std::invalid_argument("forward: expected [C][P][H][W] input, got shape " +
                                shape_to_string(x.shape()));
  }
  if (x.dim(0) != spec_.in_channels) {
    throw std::invalid_argument("forward: expected " + std::to_string(spec_.in_channels) +
                                " input channels, got " + std::to_string(x.dim(0)));
  }
  if (x.dim(1) != spec_.n_levels) {
    throw std::invalid_argument("forward: expected " + std::to_string(spec_.n_levels) +
                                " levels, got " + std::to_string(x.dim(1)));
  }
  const size_t div = size_t(1) << spec_.depth;
  if (x.dim(2) % div != 0 || x.dim(3) % div != 0) {
    throw std::invalid_argument("forward: lat/lon dims (" + std::to_string(x.dim(2)) +
                                "," + std::to_string(x.dim(3)) +
                                ") must be divisible by 2^depth = " + std::to_string(div));
  }

  size_t bi = 0;
  Tensor a = x;
  std::vector<Tensor> skips;
  for (size_t s = 0; s < spec_.depth; ++s) {
    a = block_forward(tape, a, blocks_[bi++], train, captured, watched);
    a = block_forward(tape, a, blocks_[bi++], train, captured, watched);
    skips.push_back(a);
    a = maxpool3d(tape, a);
  }
  a = block_forward(tape, a, blocks_[bi++], train, captured, watched);
  a = block_forward(tape, a, blocks_[bi++], train, captured, watched);
  for (size_t s = spec_.depth; s-- > 0;) {
    a = upsample3d(tape, a);
    a = concat(tape, {a, skips[s]}, 0);
    a = block_forward(tape, a, blocks_[bi++], train, captured, watched);
    a = block_forward(tape, a, blocks_[bi++], train, captured, watched);
  }
  return conv3d(tape, a, watch_param(tape, "head.weight", watched),
                watch_param(tape, "head.bias", watched));
}

void UNet::apply_norm_updates(const std::vector<BatchNormStats>& stats) {
  const size_t n = params_.norm_names().size();
  if (n == 0 || stats.size() % n != 0) {
    throw std::invalid_argument("apply_norm_updates: got " + std::to_string(stats.size()) +
                                " stat entries, not a multiple of " + std::to_string(n) +
                                " norm layers");
  }
  for (size_t off = 0; off < stats.size(); off += n) {
    for (size_t i = 0; i < n; ++i) {
      batchnorm_update(params_.norm_at(params_.norm_names()[i]), stats[off + i]);
    }
  }
}

void DatasetStats::validate() const {
  field.validate();
  if (spread.empty()) throw std::invalid_argument("DatasetStats: no spread statistics");
  for (const NormStats& s : spread) s.validate();
}

DatasetStats compute_dataset_stats(const std::vector<std::string>& esg_paths) {
  if (esg_paths.empty()) {
    throw std::invalid_argument("compute_dataset_stats: no samples given");
  }
  DatasetStats stats;
  GridSpecPtr grid;
  NormAccumulator field_acc(1, 1);
  std::vector<NormAccumulator> spread_acc;

  for (const std::string& path : esg_paths) {
    EnsembleSample sample = read_esg(path);
    if (!grid) {
      grid = sample.spec;
      field_acc = NormAccumulator(grid->n_params, grid->n_levels);
      spread_acc.assign(grid->n_times(), NormAccumulator(grid->n_params, grid->n_levels));
    } else if (!(*grid == *sample.spec)) {
      throw std::runtime_error("compute_dataset_stats: grid mismatch in " + path);
    }
    for (const auto& member : sample.members) {
      for (const Field& f : member) field_acc.add(f);
    }
    for (size_t t = 0; t < grid->n_times(); ++t) {
      std::vector<Field> at_time;
      at_time.reserve(sample.n_members());
      for (const auto& member : sample.members) at_time.push_back(member[t]);
      spread_acc[t].add(ensemble_spread(at_time));
    }
  }

  stats.field = field_acc.finalize();
  for (const auto& acc : spread_acc) stats.spread.push_back(acc.finalize());
  stats.validate();
  return stats;
}

void save_stats(const DatasetStats& stats, const std::string& path) {
  stats.validate();
  KvFile kv;
  kv.set_u64("n_params", stats.field.n_params);
  kv.set_u64("n_levels", stats.field.n_levels);
  kv.set_u64("n_times", stats.spread.size());
  kv.set_f64("std_floor", stats.field.std_floor);
  kv.set_f64_list("field.mean", stats.field.mean);
  kv.set_f64_list("field.std", stats.field.std);
  for (size_t t = 0; t < stats.spread.size(); ++t) {
    kv.set_f64_list("spread." + std::to_string(t) + ".mean", stats.spread[t].mean);
    kv.set_f64_list("spread." + std::to_string(t) + ".std", stats.spread[t].std);
  }
  kv.save(path);
}

DatasetStats load_stats(const std::string& path) {
  KvFile kv = KvFile::load(path);
  DatasetStats stats;
  stats.field.n_params = kv.get_u64("n_params");
  stats.field.n_levels = kv.get_u64("n_levels");
  stats.field.std_floor = kv.get_f64("std_floor");
  stats.field.mean = kv.get_f64_list("field.mean");
  stats.field.std = kv.get_f64_list("field.std");
  const size_t n_times = kv.get_u64("n_times");
  for (size_t t = 0; t < n_times; ++t) {
    NormStats s;
    s.n_params = stats.field.n_params;
    s.n_levels = stats.field.n_levels;
    s.std_floor = stats.field.std_floor;
    s.mean = kv.get_f64_list("spread." + std::to_string(t) + ".mean");
    s.std = kv.get_f64_list("spread." + std::to_string(t) + ".std");
    stats.spread.push_back(std::move(s));
  }
  stats.validate();
  return stats;
}

void TaskSpec::validate(const GridSpec& grid) const {
  if (target_param >= grid.n_params) {
    throw std::invalid_argument("TaskSpec: target_param " + std::to_string(target_param) +
                                " out of range (grid has " +
                                std::to_string(grid.n_params) + " params)");
  }
  if (target_time >= grid.n_times()) {
    throw std::invalid_argument("TaskSpec: target_time " + std::to_string(target_time) +
                                " out of range (grid has " +
                                std::to_string(grid.n_times()) + " forecast times)");
  }
  if (input_times.empty()) throw std::invalid_argument("TaskSpec: no input times");
  for (size_t t : input_times) {
    if (t >= grid.n_times()) {
      throw std::invalid_argument("TaskSpec: input time index " + std::to_string(t) +
                                  " out of range");
    }
  }
  if (temporal_level >= grid.n_levels) {
    throw std::invalid_argument("TaskSpec: temporal_level " +
                                std::to_string(temporal_level) + " out of range (grid has " +
                                std::to_string(grid.n_levels) + " levels)");
  }
}

namespace {

std::vector<size_t> temporal_input_times(const TaskSpec& task) {
  std::vector<size_t> times;
  for (size_t t : task.input_times) {
    if (t < task.target_time) times.push_back(t);
  }
  if (times.empty()) {
    throw std::invalid_argument(
        "temporal mode needs at least one input time before the target time");
  }
  return times;
}

/// [1][H][W] slice of one (param, level) plane.
Tensor level_slice(const Field& field, size_t param, size_t level) {
  const GridSpec& g = field.spec();
  const size_t hw = g.spatial_points();
  Tensor out(Shape{1, g.n_lat, g.n_lon});
  const double* src = field.values().data() + (param * g.n_levels + level) * hw;
  std::copy(src, src + hw, out.mutable_data());
  return out;
}

std::vector<Field> fields_at_time(const EnsembleSample& sample, size_t t) {
  std::vector<Field> fields;
  fields.reserve(sample.n_members());
  for (const auto& member : sample.members) fields.push_back(member[t]);
  return fields;
}

}  // namespace

size_t task_input_channels(const GridSpec& grid, TemporalMode mode, const TaskSpec& task,
                           size_t m_trajectories) {
  task.validate(grid);
  switch (mode) {
    case TemporalMode::kNone:
      return m_trajectories * task.input_times.size() * grid.n_params;
    case TemporalMode::kSpreadChannels:
      return temporal_input_times(task).size();
    case TemporalMode::kSpreadChannelsPlusIp:
      return temporal_input_times(task).size() + grid.n_params;
  }
  throw std::logic_error("unknown TemporalMode");
}

Tensor make_model_input(const EnsembleSample& sample, const DatasetStats& stats,
                        TemporalMode mode, const TaskSpec& task, size_t m_trajectories) {
  sample.validate();
  const GridSpec& grid = *sample.spec;
  task.validate(grid);

  if (mode == TemporalMode::kNone) {
    if (m_trajectories == 0 || m_trajectories > sample.n_members()) {
      throw std::invalid_argument("make_model_input: m_trajectories " +
                                  std::to_string(m_trajectories) +
                                  " out of range (sample has " +
                                  std::to_string(sample.n_members()) + " members)");
    }
    // A reduced standardized copy of the selected members/times, packed
    // member-major by channel_pack.
    auto reduced_spec = std::make_shared<GridSpec>(grid);
    reduced_spec->forecast_times.clear();
    for (size_t t : task.input_times) {
      reduced_spec->forecast_times.push_back(grid.forecast_times[t]);
    }
    EnsembleSample reduced;
    reduced.spec = reduced_spec;
    reduced.sample_id = sample.sample_id;
    reduced.control_index = sample.control_index;
    reduced.members.resize(m_trajectories);
    for (size_t m = 0; m < m_trajectories; ++m) {
      for (size_t t : task.input_times) {
        Field std_field = standardize(sample.members[m][t], stats.field);
        reduced.members[m].emplace_back(reduced_spec, std::move(std_field.values()));
      }
    }
    std::vector<size_t> member_sel(m_trajectories);
    for (size_t m = 0; m < m_trajectories; ++m) member_sel[m] = m;
    std::vector<size_t> time_sel(task.input_times.size());
    for (size_t t = 0; t < time_sel.size(); ++t) time_sel[t] = t;
    std::vector<size_t> param_sel(grid.n_params);
    for (size_t p = 0; p < param_sel.size(); ++p) param_sel[p] = p;
    return channel_pack(reduced, member_sel, time_sel, param_sel);
  }

  // Temporal modes: spread channels (plus optional control params) on one level.
  const std::vector<size_t> times = temporal_input_times(task);
  std::vector<ExtraChannel> extras;
  for (size_t t : times) {
    Field spread = ensemble_spread(fields_at_time(sample, t));
    Field std_spread = standardize(spread, stats.spread.at(t));
    extras.push_back(ExtraChannel{"spread_t" + std::to_string(t),
                                  level_slice(std_spread, task.target_param,
                                              task.temporal_level)});
  }
  if (mode == TemporalMode::kSpreadChannelsPlusIp) {
    const size_t control = sample.control_index >= 0 ? size_t(sample.control_index) : 0;
    Field std_control = standardize(sample.members[control][times[0]], stats.field);
    for (size_t p = 0; p < grid.n_params; ++p) {
      extras.push_back(ExtraChannel{"ip_" + grid.param_names[p],
                                    level_slice(std_control, p, task.temporal_level)});
    }
  }
  return channel_pack(sample, {}, {}, {}, extras);
}

Tensor make_model_target(const EnsembleSample& sample, const DatasetStats& stats,
                         TemporalMode mode, const TaskSpec& task) {
  sample.validate();
  const GridSpec& grid = *sample.spec;
  task.validate(grid);

  Field spread = ensemble_spread(fields_at_time(sample, task.target_time));
  Field std_spread = standardize(spread, stats.spread.at(task.target_time));
  const size_t hw = grid.spatial_points();

  if (mode == TemporalMode::kNone) {
    Tensor out(Shape{1, grid.n_levels, grid.n_lat, grid.n_lon});
    const double* src =
        std_spread.values().data() + task.target_param * grid.n_levels * hw;
    std::copy(src, src + grid.n_levels * hw, out.mutable_data());
    return out;
  }
  Tensor out(Shape{1, 1, grid.n_lat, grid.n_lon});
  const double* src = std_spread.values().data() +
                      (task.target_param * grid.n_levels + task.temporal_level) * hw;
  std::copy(src, src + hw, out.mutable_data());
  return out;
}

}  // namespace spreadnet
