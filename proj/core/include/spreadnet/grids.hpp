// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "spreadnet/tensor.hpp"

namespace spreadnet {

/// Geometry of one dataset: parameter, level, latitude and longitude counts
/// plus the forecast-time axis. level_values are descriptive (hPa labels).
struct GridSpec {
  size_t n_params = 0;
  size_t n_levels = 0;
  size_t n_lat = 0;
  size_t n_lon = 0;
  std::vector<double> level_values;
  std::vector<std::string> param_names;
  std::vector<int> forecast_times;  // hour offsets, strictly increasing, starts at 0

  size_t points_per_field() const { return n_params * n_levels * n_lat * n_lon; }
  size_t spatial_points() const { return n_lat * n_lon; }
  size_t n_times() const { return forecast_times.size(); }

  /// Throws std::invalid_argument on any violated invariant.
  void validate() const;

  bool operator==(const GridSpec& other) const;

  /// Desk-scale default: 6 parameters x 7 levels x 20 lat x 32 lon,
  /// forecast times 0/3/6 h.
  static GridSpec desk_default();
};

using GridSpecPtr = std::shared_ptr<const GridSpec>;

/// One trajectory at one time: real values on [param][level][lat][lon].
class Field {
 public:
  Field() = default;
  explicit Field(GridSpecPtr spec);
  Field(GridSpecPtr spec, std::vector<double> values);

  const GridSpec& spec() const { return *spec_; }
  const GridSpecPtr& spec_ptr() const { return spec_; }
  const std::vector<double>& values() const { return data_; }
  std::vector<double>& values() { return data_; }

  size_t index(size_t param, size_t level, size_t lat, size_t lon) const;
  double at(size_t param, size_t level, size_t lat, size_t lon) const;
  double& at(size_t param, size_t level, size_t lat, size_t lon);

  /// Checks size and finiteness.
  void validate() const;

 private:
  GridSpecPtr spec_;
  std::vector<double> data_;
};

/// All member fields at all forecast times for one initial condition.
/// members[m][t] is member m at forecast_times[t].
struct EnsembleSample {
  GridSpecPtr spec;
  std::vector<std::vector<Field>> members;
  int control_index = -1;  // -1 = no unperturbed member
  std::string sample_id;
  int64_t epoch_tag = 0;

  size_t n_members() const { return members.size(); }
  void validate() const;
};

/// Per-(parameter, level) standardization statistics.
struct NormStats {
  size_t n_params = 0;
  size_t n_levels = 0;
  std::vector<double> mean;  // [n_params][n_levels]
  std::vector<double> std;   // [n_params][n_levels], >= std_floor
  double std_floor = 1e-6;

  size_t index(size_t param, size_t level) const { return param * n_levels + level; }
  void validate() const;
};

/// Streaming accumulator behind compute_norm_stats. Welford per (param, level)
/// pooled over every lat/lon point of every field added.
class NormAccumulator {
 public:
  NormAccumulator(size_t n_params, size_t n_levels);
  void add(const Field& field);
  /// Population statistics (divisor N); std clamped below by std_floor.
  NormStats finalize(double std_floor = 1e-6) const;
  size_t count() const { return static_cast<size_t>(fields_seen_); }

 private:
  size_t n_params_;
  size_t n_levels_;
  int64_t fields_seen_ = 0;
  std::vector<int64_t> n_;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

Field ensemble_mean(const std::vector<Field>& members);

/// Pointwise sample standard deviation (divisor M-1). Requires M >= 2.
Field ensemble_spread(const std::vector<Field>& members);

NormStats compute_norm_stats(const std::vector<Field>& fields, double std_floor = 1e-6);

Field standardize(const Field& field, const NormStats& stats);
Field destandardize(const Field& field, const NormStats& stats);

/// A [levels][lat][lon] volume used as an extra input channel.
struct ExtraChannel {
  std::string name;
  Tensor volume;  // rank 3
};

/// Concatenates member/time/parameter selections of `sample` into a
/// [C][levels][lat][lon] tensor. Channel order is member-major: all channels
/// of member_subset[0] first (its times in time_subset order, each time's
/// params in param_subset order), then member_subset[1], and so on; extras
/// are appended last in the order given. C = |members|*|times|*|params| +
/// |extras|. With an empty member/time/param selection the level count is
/// taken from the extras, which lets single-level slices be packed.
Tensor channel_pack(const EnsembleSample& sample,
                    const std::vector<size_t>& member_subset,
                    const std::vector<size_t>& time_subset,
                    const std::vector<size_t>& param_subset,
                    const std::vector<ExtraChannel>& extras = {});

/// Flat channel index of (member mi, time ti, param pi) in channel_pack
/// output, given the subset sizes used for the pack.
size_t packed_channel_index(size_t mi, size_t ti, size_t pi,
                            size_t n_times_selected, size_t n_params_selected);

}  // namespace spreadnet
