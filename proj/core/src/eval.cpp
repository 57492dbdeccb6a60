// SPDX-License-Identifier: Apache-2.0
#include "spreadnet/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "spreadnet/dataio.hpp"

namespace spreadnet {

void EvalReport::validate() const {
  auto check = [](double v, const char* what) {
    if (!(std::isfinite(v) && v >= 0.0)) {
      throw std::invalid_argument(std::string("EvalReport: ") + what +
                                  " is not a finite non-negative RMSE");
    }
  };
  check(model_rmse, "model_rmse");
  check(linear_rmse, "linear_rmse");
  for (double v : model_rmse_per_level) check(v, "per-level rmse");
  for (double v : member_ladder_rmse) check(v, "member ladder rmse");
}

namespace {

/// Accumulates sum of squared errors and the element count.
struct SqAcc {
  double sum = 0.0;
  double count = 0.0;
  void add(double diff) {
    sum += diff * diff;
    count += 1.0;
  }
  double rmse() const { return count > 0.0 ? std::sqrt(sum / count) : 0.0; }
};

std::vector<Field> fields_at_time(const EnsembleSample& sample, size_t t) {
  std::vector<Field> fields;
  fields.reserve(sample.n_members());
  for (const auto& member : sample.members) fields.push_back(member[t]);
  return fields;
}

/// Spread of members {0..m-1}; the one-member "spread" is zero by definition.
Field subset_spread(const EnsembleSample& sample, size_t m, size_t t) {
  if (m == 1) return Field(sample.spec);
  std::vector<Field> fields;
  fields.reserve(m);
  for (size_t i = 0; i < m; ++i) fields.push_back(sample.members[i][t]);
  return ensemble_spread(fields);
}

}  // namespace

EvalReport evaluate_with_predictor(const Predictor& predict,
                                   const std::vector<std::string>& test_paths,
                                   const DatasetStats& stats, const LinearBaseline& baseline,
                                   const EvalConfig& cfg) {
  if (test_paths.empty()) throw std::invalid_argument("evaluate: empty test split");

  SqAcc model_acc, linear_acc;
  std::vector<SqAcc> level_acc;
  std::vector<SqAcc> ladder_acc;
  EvalReport report;

  for (const std::string& path : test_paths) {
    const EnsembleSample sample = read_esg(path);
    const GridSpec& grid = *sample.spec;
    cfg.task.validate(grid);
    const size_t hw = grid.spatial_points();
    const size_t tp = cfg.task.target_param;

    // Evaluated planes of the target parameter: all levels in raw mode, the
    // single temporal level otherwise.
    std::vector<size_t> levels;
    if (cfg.mode == TemporalMode::kNone) {
      for (size_t l = 0; l < grid.n_levels; ++l) levels.push_back(l);
    } else {
      levels.push_back(cfg.task.temporal_level);
    }
    if (level_acc.empty()) level_acc.resize(levels.size());
    if (ladder_acc.empty()) ladder_acc.resize(sample.n_members() - 1);

    const Field full_spread = ensemble_spread(fields_at_time(sample, cfg.task.target_time));

    // (a) model prediction, destandardized per level.
    const Tensor input = make_model_input(sample, stats, cfg.mode, cfg.task,
                                          cfg.m_trajectories);
    const Tensor pred = predict(sample, input);
    const NormStats& tstats = stats.spread.at(cfg.task.target_time);
    if (pred.size() != levels.size() * hw) {
      throw std::runtime_error("evaluate: prediction has " + std::to_string(pred.size()) +
                               " values, expected " + std::to_string(levels.size() * hw));
    }
    std::vector<double> pred_phys(pred.size());
    for (size_t li = 0; li < levels.size(); ++li) {
      const size_t stat_idx = tstats.index(tp, levels[li]);
      for (size_t i = 0; i < hw; ++i) {
        pred_phys[li * hw + i] =
            pred.data()[li * hw + i] * tstats.std[stat_idx] + tstats.mean[stat_idx];
      }
    }
    for (size_t li = 0; li < levels.size(); ++li) {
      const double* truth = full_spread.values().data() + (tp * grid.n_levels + levels[li]) * hw;
      for (size_t i = 0; i < hw; ++i) {
        const double d = pred_phys[li * hw + i] - truth[i];
        model_acc.add(d);
        level_acc[li].add(d);
      }
    }

    // (b) m-member sample-spread estimators.
    for (size_t m = 1; m < sample.n_members(); ++m) {
      const Field est = subset_spread(sample, m, cfg.task.target_time);
      for (size_t li = 0; li < levels.size(); ++li) {
        const size_t off = (tp * grid.n_levels + levels[li]) * hw;
        const double* e = est.values().data() + off;
        const double* truth = full_spread.values().data() + off;
        for (size_t i = 0; i < hw; ++i) ladder_acc[m - 1].add(e[i] - truth[i]);
      }
    }

    // (c) linear baseline from the spread at the first forecast time.
    const Field t0_spread = ensemble_spread(fields_at_time(sample, 0));
    const Field lin = predict_linear_baseline(baseline, t0_spread);
    for (size_t li = 0; li < levels.size(); ++li) {
      const size_t off = (tp * grid.n_levels + levels[li]) * hw;
      const double* e = lin.values().data() + off;
      const double* truth = full_spread.values().data() + off;
      for (size_t i = 0; i < hw; ++i) linear_acc.add(e[i] - truth[i]);
    }

    // (d) squared-error heatmaps for the first few samples.
    if (!cfg.heatmap_dir.empty() && report.heatmap_paths.size() / 2 < cfg.max_heatmaps) {
      size_t li = 0;
      while (li + 1 < levels.size() && levels[li] != cfg.heatmap_level) ++li;
      Tensor sq(Shape{grid.n_lat, grid.n_lon});
      const double* truth =
          full_spread.values().data() + (tp * grid.n_levels + levels[li]) * hw;
      for (size_t i = 0; i < hw; ++i) {
        const double d = pred_phys[li * hw + i] - truth[i];
        sq.mutable_data()[i] = d * d;
      }
      const std::string stem = cfg.heatmap_dir + "/" + sample.sample_id + "_sqerr_level" +
                               std::to_string(levels[li]);
      write_heatmap(sq, stem);
      report.heatmap_paths.push_back(stem + ".csv");
      report.heatmap_paths.push_back(stem + ".pgm");
    }
    ++report.n_samples;
  }

  report.model_rmse = model_acc.rmse();
  report.linear_rmse = linear_acc.rmse();
  for (const SqAcc& acc : level_acc) report.model_rmse_per_level.push_back(acc.rmse());
  for (const SqAcc& acc : ladder_acc) report.member_ladder_rmse.push_back(acc.rmse());
  report.validate();
  return report;
}

EvalReport evaluate(UNet& model, const std::vector<std::string>& test_paths,
                    const DatasetStats& stats, const LinearBaseline& baseline,
                    const EvalConfig& cfg) {
  Predictor predict = [&model](const EnsembleSample&, const Tensor& input) {
    return model.forward(nullptr, input, /*train=*/false);
  };
  return evaluate_with_predictor(predict, test_paths, stats, baseline, cfg);
}

LinearBaseline fit_spread_baseline(const std::vector<std::string>& esg_paths,
                                   size_t input_time, size_t target_time) {
  if (esg_paths.empty()) {
    throw std::invalid_argument("fit_spread_baseline: no training files");
  }
  BaselineAccumulator acc;
  for (const std::string& path : esg_paths) {
    const EnsembleSample sample = read_esg(path);
    if (input_time >= sample.spec->n_times() || target_time >= sample.spec->n_times()) {
      throw std::invalid_argument("fit_spread_baseline: time index out of range for " +
                                  path);
    }
    acc.add(ensemble_spread(fields_at_time(sample, input_time)),
            ensemble_spread(fields_at_time(sample, target_time)));
  }
  return acc.finalize();
}

void write_eval_report_txt(const EvalReport& report, const std::string& path) {
  report.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  char buf[128];
  out << "spread estimation report (" << report.n_samples << " test samples)\n";
  out << "RMSE vs full-ensemble spread, physical units\n\n";
  std::snprintf(buf, sizeof buf, "  %-24s %.9f\n", "model", report.model_rmse);
  out << buf;
  std::snprintf(buf, sizeof buf, "  %-24s %.9f\n", "linear baseline", report.linear_rmse);
  out << buf;
  for (size_t m = 1; m <= report.member_ladder_rmse.size(); ++m) {
    std::snprintf(buf, sizeof buf, "  %zu-member spread", m);
    std::string name = buf;
    std::snprintf(buf, sizeof buf, "  %-24s %.9f\n", name.c_str() + 2,
                  report.member_ladder_rmse[m - 1]);
    out << buf;
  }
  out << "\nper-level model RMSE\n";
  for (size_t li = 0; li < report.model_rmse_per_level.size(); ++li) {
    std::snprintf(buf, sizeof buf, "  level %-18zu %.9f\n", li,
                  report.model_rmse_per_level[li]);
    out << buf;
  }
  if (!report.heatmap_paths.empty()) {
    out << "\nheatmaps\n";
    for (const std::string& p : report.heatmap_paths) out << "  " << p << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_eval_report_csv(const EvalReport& report, const std::string& path) {
  report.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  char buf[64];
  out << "metric,rmse\n";
  auto row = [&](const std::string& name, double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << name << ',' << buf << '\n';
  };
  row("model", report.model_rmse);
  row("linear_baseline", report.linear_rmse);
  for (size_t m = 1; m <= report.member_ladder_rmse.size(); ++m) {
    row("spread_m" + std::to_string(m), report.member_ladder_rmse[m - 1]);
  }
  for (size_t li = 0; li < report.model_rmse_per_level.size(); ++li) {
    row("model_level" + std::to_string(li), report.model_rmse_per_level[li]);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_variant_table(const std::vector<std::pair<std::string, double>>& rows,
                         const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out << "variant,rmse\n";
  char buf[64];
  for (const auto& [name, rmse] : rows) {
    std::snprintf(buf, sizeof buf, "%.9f", rmse);
    out << name << ',' << buf << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace spreadnet
