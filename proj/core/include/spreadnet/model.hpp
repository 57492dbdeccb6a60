// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "spreadnet/grids.hpp"
#include "spreadnet/layers.hpp"
#include "spreadnet/tape.hpp"
#include "spreadnet/tensor.hpp"

namespace spreadnet {

/// What the network consumes.
///  - kNone: raw member fields, channels = members x times x params.
///  - kSpreadChannels: ensemble spread at the forecast times before the
///    target, one pressure level at a time (the level axis collapses to 1).
///  - kSpreadChannelsPlusIp: same plus the control member's parameter fields
///    at the first forecast time on that level.
enum class TemporalMode { kNone, kSpreadChannels, kSpreadChannelsPlusIp };

const char* temporal_mode_name(TemporalMode mode);
TemporalMode parse_temporal_mode(const std::string& name);

struct ModelSpec {
  size_t in_channels = 18;
  size_t out_channels = 1;
  size_t base_channels = 32;
  size_t depth = 2;  // pooling stages
  ConvVariant conv_variant = ConvVariant::kStandard;
  TemporalMode temporal_mode = TemporalMode::kNone;
  size_t n_levels = 7;  // pressure levels the model operates on (1 in temporal modes)
  uint64_t seed = 0;

  void validate() const;
};

/// Named parameter tensors plus batchnorm running statistics. Names are
/// unique; registration order is the canonical (checkpoint, optimizer)
/// iteration order.
class ModelParams {
 public:
  Tensor& add(const std::string& name, Tensor value);
  bool has(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  size_t total_values() const;

  BatchNormState& add_norm(const std::string& name, size_t channels);
  BatchNormState& norm_at(const std::string& name);
  const BatchNormState& norm_at(const std::string& name) const;
  const std::vector<std::string>& norm_names() const { return norm_order_; }

 private:
  std::vector<std::string> order_;
  std::vector<std::string> norm_order_;
  std::unordered_map<std::string, Tensor> tensors_;
  std::unordered_map<std::string, BatchNormState> norms_;
};

/// U-Net over [C][P][H][W] volumes:
///   encoder: depth stages of conv-norm-relu, conv-norm-relu, maxpool,
///            channels doubling from base_channels;
///   bottleneck: two conv blocks;
///   decoder: depth stages of upsample, skip concat, two conv blocks;
///   head: 1x1x1 standard convolution to out_channels.
/// conv_variant selects every non-head convolution; the affine variant is
/// conv3d followed by affine_level. All non-head kernels are 3x3x3.
/// Initialization is deterministic in spec.seed (He-uniform weights, zero
/// biases/shifts/beta, unit scales/gamma).
class UNet {
 public:
  explicit UNet(const ModelSpec& spec);          // fresh deterministic init
  UNet(const ModelSpec& spec, ModelParams params);  // adopt loaded parameters

  const ModelSpec& spec() const { return spec_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  /// Single-sample forward, x is [in_channels][P][H][W]. H and W must be
  /// divisible by 2^depth.
  ///
  /// train=true, captured!=nullptr: batch statistics are appended to
  ///   `captured` (one entry per norm layer, in norm_names() order) and the
  ///   stored running stats are NOT touched — safe to call concurrently.
  /// train=true, captured==nullptr: running stats get the EMA update inline.
  /// train=false: running stats are used (error if never initialized).
  ///
  /// When `watched` is non-null every parameter is watched on `tape` and the
  /// (name, tracked tensor) pairs are appended so the caller can query
  /// gradients per parameter.
  Tensor forward(Tape* tape, const Tensor& x, bool train,
                 std::vector<BatchNormStats>* captured = nullptr,
                 std::vector<std::pair<std::string, Tensor>>* watched = nullptr);

  /// Applies EMA running-stat updates captured from forward(), in norm layer
  /// order. `stats` holds norm_names().size() entries per sample,
  /// concatenated sample after sample.
  void apply_norm_updates(const std::vector<BatchNormStats>& stats);

  size_t param_count() const { return params_.total_values(); }
  static size_t expected_param_count(const ModelSpec& spec);

 private:
  struct BlockDef {
    std::string name;
    size_t c_in = 0;
    size_t c_out = 0;
  };

  Tensor block_forward(Tape* tape, const Tensor& x, const BlockDef& block, bool train,
                       std::vector<BatchNormStats>* captured,
                       std::vector<std::pair<std::string, Tensor>>* watched);
  Tensor watch_param(Tape* tape, const std::string& name,
                     std::vector<std::pair<std::string, Tensor>>* watched) const;
  static std::vector<BlockDef> plan_blocks(const ModelSpec& spec);
  void register_parameters();  // build-time; asserts the parameter-count formula

  ModelSpec spec_;
  ModelParams params_;
  std::vector<BlockDef> blocks_;
};

/// Standardization statistics of a dataset split: per-(param, level) moments
/// of the raw member fields pooled over members and forecast times, plus
/// per-(param, level) moments of the ensemble spread at each forecast time.
struct DatasetStats {
  NormStats field;
  std::vector<NormStats> spread;  // indexed by forecast-time position

  void validate() const;
};

DatasetStats compute_dataset_stats(const std::vector<std::string>& esg_paths);
void save_stats(const DatasetStats& stats, const std::string& path);
DatasetStats load_stats(const std::string& path);

/// The learning task: which spread is predicted and what is packed as input.
struct TaskSpec {
  size_t target_param = 3;  // "t" in the default parameter set
  size_t target_time = 2;   // index into GridSpec::forecast_times
  std::vector<size_t> input_times = {0, 1, 2};
  size_t temporal_level = 2;  // level slice used by the temporal modes

  void validate(const GridSpec& grid) const;
};

/// Channel count make_model_input produces for this configuration.
size_t task_input_channels(const GridSpec& grid, TemporalMode mode, const TaskSpec& task,
                           size_t m_trajectories);

/// Standardized input tensor for one sample.
/// kNone: members 0..m_trajectories-1 at task.input_times, all params,
///        standardized per (param, level), packed member-major via
///        channel_pack -> [m*T*params][P][H][W].
/// temporal modes: standardized spread at input times before the target
///        (plus the control's param fields at the first input time for
///        kSpreadChannelsPlusIp), sliced at task.temporal_level
///        -> [C][1][H][W].
Tensor make_model_input(const EnsembleSample& sample, const DatasetStats& stats,
                        TemporalMode mode, const TaskSpec& task, size_t m_trajectories);

/// Standardized target: the full-ensemble spread of task.target_param at
/// task.target_time -> [1][P][H][W] (or [1][1][H][W] in temporal modes).
Tensor make_model_target(const EnsembleSample& sample, const DatasetStats& stats,
                         TemporalMode mode, const TaskSpec& task);

}  // namespace spreadnet
