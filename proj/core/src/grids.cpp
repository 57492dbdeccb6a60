// SPDX-License-Identifier: Apache-2.0
#include "spreadnet/grids.hpp"

#include <cmath>
#include <stdexcept>

namespace spreadnet {

void GridSpec::validate() const {
  if (n_params < 1 || n_levels < 1 || n_lat < 1 || n_lon < 1) {
    throw std::invalid_argument("grid spec: all counts must be >= 1");
  }
  if (level_values.size() != n_levels) {
    throw std::invalid_argument("grid spec: " + std::to_string(level_values.size()) +
                                " level values for " + std::to_string(n_levels) + " levels");
  }
  if (param_names.size() != n_params) {
    throw std::invalid_argument("grid spec: " + std::to_string(param_names.size()) +
                                " param names for " + std::to_string(n_params) + " params");
  }
  if (forecast_times.empty() || forecast_times.front() != 0) {
    throw std::invalid_argument("grid spec: forecast times must start at 0");
  }
  for (size_t i = 1; i < forecast_times.size(); ++i) {
    if (forecast_times[i] <= forecast_times[i - 1]) {
      throw std::invalid_argument("grid spec: forecast times must be strictly increasing");
    }
  }
}

bool GridSpec::operator==(const GridSpec& other) const {
  return n_params == other.n_params && n_levels == other.n_levels &&
         n_lat == other.n_lat && n_lon == other.n_lon &&
         level_values == other.level_values && param_names == other.param_names &&
         forecast_times == other.forecast_times;
}

GridSpec GridSpec::desk_default() {
  GridSpec spec;
  spec.n_params = 6;
  spec.n_levels = 7;
  spec.n_lat = 20;
  spec.n_lon = 32;
  spec.level_values = {1000, 925, 850, 700, 500, 300, 200};
  spec.param_names = {"u", "v", "z", "t", "r", "cc"};
  spec.forecast_times = {0, 3, 6};
  spec.validate();
  return spec;
}

Field::Field(GridSpecPtr spec)
    : spec_(std::move(spec)), data_(spec_->points_per_field(), 0.0) {}

Field::Field(GridSpecPtr spec, std::vector<double> values)
    : spec_(std::move(spec)), data_(std::move(values)) {
  validate();
}

size_t Field::index(size_t param, size_t level, size_t lat, size_t lon) const {
  return ((param * spec_->n_levels + level) * spec_->n_lat + lat) * spec_->n_lon + lon;
}

double Field::at(size_t param, size_t level, size_t lat, size_t lon) const {
  return data_[index(param, level, lat, lon)];
}

double& Field::at(size_t param, size_t level, size_t lat, size_t lon) {
  return data_[index(param, level, lat, lon)];
}

void Field::validate() const {
  if (!spec_) {
    throw std::invalid_argument("field: no grid spec");
  }
  if (data_.size() != spec_->points_per_field()) {
    throw std::invalid_argument("field: " + std::to_string(data_.size()) +
                                " values for a grid of " +
                                std::to_string(spec_->points_per_field()) + " points");
  }
  for (double v : data_) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("field: non-finite value");
    }
  }
}

void EnsembleSample::validate() const {
  if (!spec) {
    throw std::invalid_argument("sample: no grid spec");
  }
  spec->validate();
  for (const auto& per_time : members) {
    if (per_time.size() != spec->n_times()) {
      throw std::invalid_argument("sample: member has " + std::to_string(per_time.size()) +
                                  " times, spec has " + std::to_string(spec->n_times()));
    }
    for (const auto& field : per_time) {
      if (!(field.spec() == *spec)) {
        throw std::invalid_argument("sample: member field spec mismatch");
      }
    }
  }
  if (control_index >= 0 && static_cast<size_t>(control_index) >= members.size()) {
    throw std::invalid_argument("sample: control index " + std::to_string(control_index) +
                                " out of range");
  }
}

void NormStats::validate() const {
  if (mean.size() != n_params * n_levels || std.size() != n_params * n_levels) {
    throw std::invalid_argument("norm stats: array sizes do not match counts");
  }
  if (!(std_floor > 0.0)) {
    throw std::invalid_argument("norm stats: std_floor must be positive");
  }
  for (double s : std) {
    if (!(s >= std_floor)) {
      throw std::invalid_argument("norm stats: std below floor");
    }
  }
}

NormAccumulator::NormAccumulator(size_t n_params, size_t n_levels)
    : n_params_(n_params),
      n_levels_(n_levels),
      n_(n_params * n_levels, 0),
      mean_(n_params * n_levels, 0.0),
      m2_(n_params * n_levels, 0.0) {}

void NormAccumulator::add(const Field& field) {
  const GridSpec& spec = field.spec();
  if (spec.n_params != n_params_ || spec.n_levels != n_levels_) {
    throw std::invalid_argument("norm stats: field has " + std::to_string(spec.n_params) +
                                "x" + std::to_string(spec.n_levels) +
                                " (param x level), accumulator expects " +
                                std::to_string(n_params_) + "x" + std::to_string(n_levels_));
  }
  const size_t hw = spec.spatial_points();
  const double* data = field.values().data();
  for (size_t p = 0; p < n_params_; ++p) {
    for (size_t l = 0; l < n_levels_; ++l) {
      const size_t slot = p * n_levels_ + l;
      const double* slab = data + (p * n_levels_ + l) * hw;
      int64_t n = n_[slot];
      double mean = mean_[slot];
      double m2 = m2_[slot];
      for (size_t i = 0; i < hw; ++i) {
        ++n;
        const double delta = slab[i] - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (slab[i] - mean);
      }
      n_[slot] = n;
      mean_[slot] = mean;
      m2_[slot] = m2;
    }
  }
  ++fields_seen_;
}

NormStats NormAccumulator::finalize(double std_floor) const {
  if (fields_seen_ == 0) {
    throw std::invalid_argument("norm stats: no fields accumulated");
  }
  NormStats stats;
  stats.n_params = n_params_;
  stats.n_levels = n_levels_;
  stats.std_floor = std_floor;
  stats.mean = mean_;
  stats.std.resize(mean_.size());
  for (size_t i = 0; i < mean_.size(); ++i) {
    const double var = m2_[i] / static_cast<double>(n_[i]);
    stats.std[i] = std::max(std::sqrt(std::max(var, 0.0)), std_floor);
  }
  return stats;
}

namespace {

void require_shared_spec(const char* op, const std::vector<Field>& members) {
  if (members.empty()) {
    throw std::invalid_argument(std::string(op) + ": empty member list");
  }
  const GridSpec& first = members.front().spec();
  for (const auto& m : members) {
    if (!(m.spec() == first)) {
      throw std::invalid_argument(std::string(op) + ": members have mismatched grid specs");
    }
  }
}

}  // namespace

Field ensemble_mean(const std::vector<Field>& members) {
  require_shared_spec("ensemble_mean", members);
  Field out(members.front().spec_ptr());
  auto& acc = out.values();
  for (const auto& m : members) {
    const auto& v = m.values();
    for (size_t i = 0; i < acc.size(); ++i) {
      acc[i] += v[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(members.size());
  for (double& v : acc) {
    v *= inv;
  }
  return out;
}

Field ensemble_spread(const std::vector<Field>& members) {
  require_shared_spec("ensemble_spread", members);
  const size_t m_count = members.size();
  if (m_count < 2) {
    throw std::invalid_argument("ensemble_spread: need at least 2 members, got " +
                                std::to_string(m_count));
  }
  // Welford over members, pointwise; sample variance uses divisor M-1.
  Field mean_f(members.front().spec_ptr());
  Field m2_f(members.front().spec_ptr());
  auto& mean = mean_f.values();
  auto& m2 = m2_f.values();
  for (size_t m = 0; m < m_count; ++m) {
    const auto& v = members[m].values();
    const double inv_n = 1.0 / static_cast<double>(m + 1);
    for (size_t i = 0; i < mean.size(); ++i) {
      const double delta = v[i] - mean[i];
      mean[i] += delta * inv_n;
      m2[i] += delta * (v[i] - mean[i]);
    }
  }
  Field out(members.front().spec_ptr());
  auto& spread = out.values();
  const double inv = 1.0 / static_cast<double>(m_count - 1);
  for (size_t i = 0; i < spread.size(); ++i) {
    spread[i] = std::sqrt(std::max(m2[i] * inv, 0.0));
  }
  return out;
}

NormStats compute_norm_stats(const std::vector<Field>& fields, double std_floor) {
  if (fields.empty()) {
    throw std::invalid_argument("compute_norm_stats: empty field stream");
  }
  NormAccumulator acc(fields.front().spec().n_params, fields.front().spec().n_levels);
  for (const auto& f : fields) {
    acc.add(f);
  }
  return acc.finalize(std_floor);
}

namespace {

Field apply_norm(const Field& field, const NormStats& stats, bool inverse) {
  const GridSpec& spec = field.spec();
  if (spec.n_params != stats.n_params || spec.n_levels != stats.n_levels) {
    throw std::invalid_argument("standardize: field " + std::to_string(spec.n_params) + "x" +
                                std::to_string(spec.n_levels) + " vs stats " +
                                std::to_string(stats.n_params) + "x" +
                                std::to_string(stats.n_levels) + " (param x level)");
  }
  Field out(field.spec_ptr());
  const size_t hw = spec.spatial_points();
  const double* in = field.values().data();
  double* dst = out.values().data();
  for (size_t p = 0; p < spec.n_params; ++p) {
    for (size_t l = 0; l < spec.n_levels; ++l) {
      const size_t slot = stats.index(p, l);
      const double mean = stats.mean[slot];
      const double sd = stats.std[slot];
      const size_t base = (p * spec.n_levels + l) * hw;
      if (inverse) {
        for (size_t i = 0; i < hw; ++i) {
          dst[base + i] = in[base + i] * sd + mean;
        }
      } else {
        const double inv_sd = 1.0 / sd;
        for (size_t i = 0; i < hw; ++i) {
          dst[base + i] = (in[base + i] - mean) * inv_sd;
        }
      }
    }
  }
  return out;
}

}  // namespace

Field standardize(const Field& field, const NormStats& stats) {
  return apply_norm(field, stats, false);
}

Field destandardize(const Field& field, const NormStats& stats) {
  return apply_norm(field, stats, true);
}

size_t packed_channel_index(size_t mi, size_t ti, size_t pi,
                            size_t n_times_selected, size_t n_params_selected) {
  return (mi * n_times_selected + ti) * n_params_selected + pi;
}

Tensor channel_pack(const EnsembleSample& sample,
                    const std::vector<size_t>& member_subset,
                    const std::vector<size_t>& time_subset,
                    const std::vector<size_t>& param_subset,
                    const std::vector<ExtraChannel>& extras) {
  const GridSpec& spec = *sample.spec;
  for (size_t m : member_subset) {
    if (m >= sample.n_members()) {
      throw std::out_of_range("channel_pack: member index " + std::to_string(m) +
                              " out of range (" + std::to_string(sample.n_members()) + ")");
    }
  }
  for (size_t t : time_subset) {
    if (t >= spec.n_times()) {
      throw std::out_of_range("channel_pack: time index " + std::to_string(t) +
                              " out of range (" + std::to_string(spec.n_times()) + ")");
    }
  }
  for (size_t p : param_subset) {
    if (p >= spec.n_params) {
      throw std::out_of_range("channel_pack: param index " + std::to_string(p) +
                              " out of range (" + std::to_string(spec.n_params) + ")");
    }
  }

  const size_t sample_channels = member_subset.size() * time_subset.size() * param_subset.size();
  size_t levels = spec.n_levels;
  if (sample_channels == 0) {
    if (extras.empty()) {
      throw std::invalid_argument("channel_pack: empty selection and no extra channels");
    }
    levels = extras.front().volume.dim(0);
  }
  const size_t hw = spec.spatial_points();
  for (const auto& extra : extras) {
    const Shape want{levels, spec.n_lat, spec.n_lon};
    if (extra.volume.shape() != want) {
      throw std::invalid_argument("channel_pack: extra channel '" + extra.name + "' has shape " +
                                  shape_to_string(extra.volume.shape()) + ", expected " +
                                  shape_to_string(want));
    }
  }

  const size_t n_channels = sample_channels + extras.size();
  Tensor out(Shape{n_channels, levels, spec.n_lat, spec.n_lon});
  double* dst = out.mutable_data();
  const size_t channel_size = levels * hw;

  size_t channel = 0;
  for (size_t m : member_subset) {
    for (size_t t : time_subset) {
      const Field& field = sample.members[m][t];
      for (size_t p : param_subset) {
        const double* src = field.values().data() + p * spec.n_levels * hw;
        std::copy(src, src + channel_size, dst + channel * channel_size);
        ++channel;
      }
    }
  }
  for (const auto& extra : extras) {
    std::copy(extra.volume.data(), extra.volume.data() + channel_size,
              dst + channel * channel_size);
    ++channel;
  }
  return out;
}

}  // namespace spreadnet
