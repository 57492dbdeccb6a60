// SPDX-License-Identifier: Apache-2.0
#include "spreadnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "spreadnet/rng.hpp"

namespace spreadnet {

void GenConfig::validate() const {
  if (!spec) throw std::invalid_argument("GenConfig.spec is null");
  spec->validate();
  if (!(dt > 0.0)) throw std::invalid_argument("GenConfig.dt must be > 0");
  if (!std::isfinite(forcing)) throw std::invalid_argument("GenConfig.forcing must be finite");
  if (n_members < 2) throw std::invalid_argument("GenConfig.n_members must be >= 2");
  if (!(ic_perturbation_sigma >= 0.0)) {
    throw std::invalid_argument("GenConfig.ic_perturbation_sigma must be >= 0");
  }
  if (steps_per_time_unit == 0) {
    throw std::invalid_argument("GenConfig.steps_per_time_unit must be >= 1");
  }
  if (spec->spatial_points() < 4) {
    throw std::invalid_argument("GenConfig grid needs n_lat*n_lon >= 4 for Lorenz-96");
  }
  for (size_t i = 1; i < spec->forecast_times.size(); ++i) {
    if (spec->forecast_times[i] < spec->forecast_times[i - 1]) {
      throw std::invalid_argument("GenConfig forecast_times must be nondecreasing");
    }
  }
}

namespace {

void check_state(const std::vector<double>& state) {
  if (state.size() < 4) {
    throw std::invalid_argument("lorenz96 state needs at least 4 components, got " +
                                std::to_string(state.size()));
  }
  for (double v : state) {
    if (!std::isfinite(v)) throw std::invalid_argument("lorenz96 state is non-finite");
  }
}

/// dx_i/dt for one ring, cyclic neighbors.
void lorenz96_deriv_ring(const double* x, double* dx, size_t n, double forcing) {
  for (size_t i = 0; i < n; ++i) {
    const double xp1 = x[(i + 1) % n];
    const double xm1 = x[(i + n - 1) % n];
    const double xm2 = x[(i + n - 2) % n];
    dx[i] = (xp1 - xm2) * xm1 - x[i] + forcing;
  }
}

/// Derivative of a whole level stack [n_levels][ring] for one param,
/// including the cross-level coupling.
struct StackDeriv {
  size_t n_levels;
  size_t ring;
  double forcing;

  std::vector<double> operator()(const std::vector<double>& x) const {
    std::vector<double> dx(x.size());
    for (size_t l = 0; l < n_levels; ++l) {
      lorenz96_deriv_ring(x.data() + l * ring, dx.data() + l * ring, ring, forcing);
    }
    if (n_levels > 1) {
      for (size_t l = 0; l < n_levels; ++l) {
        const double* below = l > 0 ? x.data() + (l - 1) * ring : nullptr;
        const double* above = l + 1 < n_levels ? x.data() + (l + 1) * ring : nullptr;
        double* d = dx.data() + l * ring;
        for (size_t i = 0; i < ring; ++i) {
          const double lo = below ? below[i] : 0.0;
          const double hi = above ? above[i] : 0.0;
          d[i] += kLevelCoupling * (lo - hi);
        }
      }
    }
    return dx;
  }
};

}  // namespace

std::vector<double> lorenz96_step(const std::vector<double>& state, double forcing,
                                  double dt) {
  check_state(state);
  const size_t n = state.size();
  auto deriv = [n, forcing](const std::vector<double>& x) {
    std::vector<double> dx(n);
    lorenz96_deriv_ring(x.data(), dx.data(), n, forcing);
    return dx;
  };
  return rk4_step(deriv, state, dt);
}

EnsembleSample generate_ensemble(const GenConfig& cfg, uint64_t sample_seed) {
  cfg.validate();
  const GridSpec& spec = *cfg.spec;
  const size_t ring = spec.spatial_points();
  const size_t stack = spec.n_levels * ring;

  Rng root = Rng::derive(cfg.seed, sample_seed);
  const uint64_t base_seed = root.next();
  const uint64_t perturb_root = root.next();

  // Base state: one coupled level stack per param, spun up onto the attractor.
  Rng base_rng(base_seed);
  std::vector<std::vector<double>> base(spec.n_params);
  for (size_t p = 0; p < spec.n_params; ++p) {
    std::vector<double>& x = base[p];
    x.resize(stack);
    for (double& v : x) v = cfg.forcing + base_rng.gaussian();
    const StackDeriv deriv{spec.n_levels, ring, cfg.forcing};
    for (size_t s = 0; s < cfg.spinup_steps; ++s) x = rk4_step(deriv, x, cfg.dt);
    check_state(x);
  }

  // Forecast times in whole RK4 steps from t=0.
  std::vector<size_t> time_steps;
  time_steps.reserve(spec.n_times());
  for (double t : spec.forecast_times) {
    const double steps = t * double(cfg.steps_per_time_unit);
    time_steps.push_back(size_t(std::llround(steps)));
  }

  EnsembleSample sample;
  sample.spec = cfg.spec;
  sample.control_index = cfg.perturbed_control ? -1 : 0;
  sample.epoch_tag = 0;
  sample.members.resize(cfg.n_members);

  for (size_t m = 0; m < cfg.n_members; ++m) {
    // Initial condition: base plus member-specific noise. Member rngs are
    // derived independently so members are exchangeable.
    Rng member_rng = Rng::derive(perturb_root, m);
    const bool perturb = cfg.perturbed_control || m != 0;
    std::vector<std::vector<double>> state(spec.n_params);
    for (size_t p = 0; p < spec.n_params; ++p) {
      state[p] = base[p];
      if (perturb && cfg.ic_perturbation_sigma > 0.0) {
        for (double& v : state[p]) {
          v += member_rng.gaussian(0.0, cfg.ic_perturbation_sigma);
        }
      } else if (perturb) {
        // Keep the draw count identical across members so sigma=0 and
        // sigma>0 runs consume the same stream.
        for (size_t i = 0; i < stack; ++i) member_rng.gaussian();
      }
    }

    auto& fields = sample.members[m];
    fields.reserve(spec.n_times());
    size_t step_now = 0;
    const StackDeriv deriv{spec.n_levels, ring, cfg.forcing};
    for (size_t ti = 0; ti < spec.n_times(); ++ti) {
      for (; step_now < time_steps[ti]; ++step_now) {
        for (size_t p = 0; p < spec.n_params; ++p) {
          state[p] = rk4_step(deriv, state[p], cfg.dt);
        }
      }
      Field field(cfg.spec);
      for (size_t p = 0; p < spec.n_params; ++p) {
        check_state(state[p]);
        // Stack memory is [level][lat*lon], exactly the field layout per param.
        std::copy(state[p].begin(), state[p].end(),
                  field.values().begin() + ptrdiff_t(p * stack));
      }
      fields.push_back(std::move(field));
    }
  }

  char id[32];
  std::snprintf(id, sizeof id, "sample_%016llx", (unsigned long long)sample_seed);
  sample.sample_id = id;
  sample.validate();
  return sample;
}

DatasetResult generate_dataset(const GenConfig& cfg, size_t n_samples, size_t n_epochs,
                               const std::set<int64_t>& test_epoch_tags,
                               double train_frac, const std::string& out_dir) {
  cfg.validate();
  if (n_samples == 0) throw std::invalid_argument("n_samples must be >= 1");
  if (n_epochs == 0) throw std::invalid_argument("n_epochs must be >= 1");
  std::filesystem::create_directories(out_dir);

  DatasetResult result;
  std::vector<SampleKey> keys;
  keys.reserve(n_samples);
  for (size_t k = 0; k < n_samples; ++k) {
    EnsembleSample sample = generate_ensemble(cfg, uint64_t(k));
    char name[32];
    std::snprintf(name, sizeof name, "sample_%06zu", k);
    sample.sample_id = name;
    sample.epoch_tag = int64_t(k * n_epochs / n_samples);
    const std::string path = (std::filesystem::path(out_dir) / (std::string(name) + ".esg")).string();
    write_esg(sample, path);
    result.paths.push_back(path);
    keys.push_back(SampleKey{sample.sample_id, sample.epoch_tag});
  }

  result.manifest = split_dataset(keys, cfg.seed, train_frac, test_epoch_tags);
  result.manifest_path = (std::filesystem::path(out_dir) / "manifest.txt").string();
  write_manifest(result.manifest, result.manifest_path);
  return result;
}

}  // namespace spreadnet
