// SPDX-License-Identifier: Apache-2.0
#include "spreadnet/linear_baseline.hpp"

#include <cmath>
#include <stdexcept>

#include "spreadnet/kvfile.hpp"

namespace spreadnet {

void LinearBaseline::validate() const {
  if (n_params == 0 || n_levels == 0) {
    throw std::invalid_argument("LinearBaseline: empty grid");
  }
  const size_t n = n_params * n_levels;
  if (slope.size() != n || intercept.size() != n) {
    throw std::invalid_argument("LinearBaseline: coefficient size mismatch");
  }
  for (size_t i = 0; i < n; ++i) {
    if (!std::isfinite(slope[i]) || !std::isfinite(intercept[i])) {
      throw std::invalid_argument("LinearBaseline: non-finite coefficient");
    }
  }
}

void BaselineAccumulator::add(const Field& input, const Field& target) {
  const GridSpec& grid = input.spec();
  if (!(target.spec() == grid)) {
    throw std::invalid_argument("BaselineAccumulator: input/target grid mismatch");
  }
  if (count_.empty()) {
    n_params_ = grid.n_params;
    n_levels_ = grid.n_levels;
    hw_ = grid.spatial_points();
    const size_t n_planes = n_params_ * n_levels_;
    count_.assign(n_planes, 0.0);
    mean_x_.assign(n_planes, 0.0);
    mean_y_.assign(n_planes, 0.0);
    m2x_.assign(n_planes, 0.0);
    cxy_.assign(n_planes, 0.0);
  } else if (grid.n_params != n_params_ || grid.n_levels != n_levels_ ||
             grid.spatial_points() != hw_) {
    throw std::invalid_argument("BaselineAccumulator: grid changed between pairs");
  }
  // Bivariate Welford per plane: running means plus the centered second
  // moment of x and the x/y co-moment.
  for (size_t plane = 0; plane < count_.size(); ++plane) {
    const double* xs = input.values().data() + plane * hw_;
    const double* ys = target.values().data() + plane * hw_;
    for (size_t i = 0; i < hw_; ++i) {
      count_[plane] += 1.0;
      const double dx = xs[i] - mean_x_[plane];
      mean_x_[plane] += dx / count_[plane];
      mean_y_[plane] += (ys[i] - mean_y_[plane]) / count_[plane];
      m2x_[plane] += dx * (xs[i] - mean_x_[plane]);
      cxy_[plane] += dx * (ys[i] - mean_y_[plane]);
    }
  }
}

LinearBaseline BaselineAccumulator::finalize() const {
  if (count_.empty()) {
    throw std::invalid_argument("BaselineAccumulator: no training pairs");
  }
  LinearBaseline baseline;
  baseline.n_params = n_params_;
  baseline.n_levels = n_levels_;
  baseline.slope.resize(count_.size());
  baseline.intercept.resize(count_.size());
  for (size_t plane = 0; plane < count_.size(); ++plane) {
    const double a = m2x_[plane] > 0.0 ? cxy_[plane] / m2x_[plane] : 0.0;
    baseline.slope[plane] = a;
    baseline.intercept[plane] = mean_y_[plane] - a * mean_x_[plane];
  }
  baseline.validate();
  return baseline;
}

LinearBaseline fit_linear_baseline(const std::vector<std::pair<Field, Field>>& pairs) {
  BaselineAccumulator acc;
  for (const auto& [input, target] : pairs) acc.add(input, target);
  if (pairs.empty()) {
    throw std::invalid_argument("fit_linear_baseline: no training pairs");
  }
  return acc.finalize();
}

Field predict_linear_baseline(const LinearBaseline& baseline, const Field& input) {
  baseline.validate();
  const GridSpec& grid = input.spec();
  if (grid.n_params != baseline.n_params || grid.n_levels != baseline.n_levels) {
    throw std::invalid_argument("predict_linear_baseline: field grid (" +
                                std::to_string(grid.n_params) + " params, " +
                                std::to_string(grid.n_levels) +
                                " levels) does not match fitted coefficients");
  }
  Field out(input.spec_ptr());
  const size_t hw = grid.spatial_points();
  for (size_t plane = 0; plane < baseline.slope.size(); ++plane) {
    const double a = baseline.slope[plane];
    const double b = baseline.intercept[plane];
    const double* src = input.values().data() + plane * hw;
    double* dst = out.values().data() + plane * hw;
    for (size_t i = 0; i < hw; ++i) dst[i] = a * src[i] + b;
  }
  return out;
}

void save_baseline(const LinearBaseline& baseline, const std::string& path) {
  baseline.validate();
  KvFile kv;
  kv.set_u64("n_params", baseline.n_params);
  kv.set_u64("n_levels", baseline.n_levels);
  kv.set_f64_list("slope", baseline.slope);
  kv.set_f64_list("intercept", baseline.intercept);
  kv.save(path);
}

LinearBaseline load_baseline(const std::string& path) {
  KvFile kv = KvFile::load(path);
  LinearBaseline baseline;
  baseline.n_params = kv.get_u64("n_params");
  baseline.n_levels = kv.get_u64("n_levels");
  baseline.slope = kv.get_f64_list("slope");
  baseline.intercept = kv.get_f64_list("intercept");
  baseline.validate();
  return baseline;
}

}  // namespace spreadnet
