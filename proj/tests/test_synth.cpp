// SPDX-License-Identifier: Apache-2.0
//
// Tests for the chaotic-ensemble generator: RK4 accuracy against the exact
// exponential, the Lorenz-96 equilibrium, sensitive dependence on initial
// conditions, perturbation-free determinism and dataset emission.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <memory>
#include <set>
#include <vector>

#include "spreadnet/dataio.hpp"
#include "spreadnet/grids.hpp"
#include "spreadnet/synth.hpp"
#include "test_util.hpp"

using namespace spreadnet;
using spreadnet::testing::TempDir;
using spreadnet::testing::read_binary_file;
using spreadnet::testing::tiny_grid;

namespace {

GenConfig tiny_config(uint64_t seed = 0) {
  GenConfig cfg;
  cfg.spec = tiny_grid(2, 3, 4, 6);  // rings of length 24
  cfg.seed = seed;
  cfg.spinup_steps = 100;  // short spinup keeps unit tests fast
  return cfg;
}

double field_distance(const Field& a, const Field& b) {
  double ss = 0.0;
  for (size_t i = 0; i < a.values().size(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    ss += d * d;
  }
  return std::sqrt(ss);
}

double mean_spread(const Field& spread) {
  double sum = 0.0;
  for (double v : spread.values()) sum += v;
  return sum / double(spread.values().size());
}

}  // namespace

TEST_CASE("rk4_step reproduces the exact exponential to O(dt^5)") {
  // dx/dt = -x from 1.0: one step of size 0.01 must match e^-0.01 far below
  // the dt^5 = 1e-10 truncation scale.
  auto deriv = [](const std::vector<double>& x) {
    std::vector<double> d(x.size());
    for (size_t i = 0; i < x.size(); ++i) d[i] = -x[i];
    return d;
  };
  const std::vector<double> out = rk4_step(deriv, {1.0}, 0.01);
  REQUIRE(out.size() == 1);
  CHECK(std::abs(out[0] - std::exp(-0.01)) < 1e-12);

  // 100 steps stay within the accumulated truncation budget.
  std::vector<double> state = {1.0};
  for (int i = 0; i < 100; ++i) state = rk4_step(deriv, state, 0.01);
  CHECK(std::abs(state[0] - std::exp(-1.0)) < 1e-10);
}

TEST_CASE("the all-F state is a Lorenz-96 equilibrium") {
  // At x_i = F every term cancels: (F - F) * F - F + F = 0, so RK4 returns
  // the state exactly (all stage derivatives are identically zero).
  const double forcing = 8.0;
  std::vector<double> state(12, forcing);
  const std::vector<double> next = lorenz96_step(state, forcing, 0.01);
  CHECK(next == state);
}

TEST_CASE("lorenz96_step needs at least 4 components and finite input") {
  CHECK_THROWS(lorenz96_step({1.0, 2.0, 3.0}, 8.0, 0.01));
  CHECK_THROWS(lorenz96_step({1.0, 2.0, 3.0, std::nan("")}, 8.0, 0.01));
}

TEST_CASE("nearby trajectories diverge (sensitive dependence)") {
  // Two states 1e-8 apart; after 1000 steps at F=8 the gap must exceed 1e-6.
  std::vector<double> a(40);
  for (size_t i = 0; i < a.size(); ++i) a[i] = 8.0 + 0.01 * std::sin(double(i));
  std::vector<double> b = a;
  b[0] += 1e-8;

  for (int i = 0; i < 1000; ++i) {
    a = lorenz96_step(a, 8.0, 0.01);
    b = lorenz96_step(b, 8.0, 0.01);
  }
  double gap = 0.0;
  for (size_t i = 0; i < a.size(); ++i) gap = std::max(gap, std::abs(a[i] - b[i]));
  CHECK(gap > 1e-6);
  for (double v : a) CHECK(std::isfinite(v));
}

TEST_CASE("generate_ensemble is deterministic and shaped by the grid") {
  GenConfig cfg = tiny_config(3);
  const EnsembleSample s1 = generate_ensemble(cfg, 7);
  const EnsembleSample s2 = generate_ensemble(cfg, 7);
  REQUIRE(s1.n_members() == cfg.n_members);
  REQUIRE(s1.members[0].size() == cfg.spec->n_times());
  CHECK(s1.control_index == 0);  // member 0 is the unperturbed control

  for (size_t m = 0; m < s1.n_members(); ++m) {
    for (size_t t = 0; t < cfg.spec->n_times(); ++t) {
      CHECK(s1.members[m][t].values() == s2.members[m][t].values());
    }
  }

  // A different sample seed gives a different trajectory.
  const EnsembleSample s3 = generate_ensemble(cfg, 8);
  CHECK(s1.members[0][0].values() != s3.members[0][0].values());
}

TEST_CASE("sigma = 0 makes every member identical and the spread exactly zero") {
  GenConfig cfg = tiny_config(5);
  cfg.ic_perturbation_sigma = 0.0;
  cfg.n_members = 4;
  const EnsembleSample s = generate_ensemble(cfg, 1);
  for (size_t m = 1; m < s.n_members(); ++m) {
    for (size_t t = 0; t < cfg.spec->n_times(); ++t) {
      CHECK(s.members[m][t].values() == s.members[0][t].values());
    }
  }
  std::vector<Field> at_end;
  for (const auto& member : s.members) at_end.push_back(member.back());
  const Field spread = ensemble_spread(at_end);
  for (double v : spread.values()) CHECK(v == 0.0);
}

TEST_CASE("perturbed_control removes the control designation") {
  GenConfig cfg = tiny_config(5);
  cfg.perturbed_control = true;
  const EnsembleSample s = generate_ensemble(cfg, 2);
  CHECK(s.control_index == -1);

  // With a perturbation every member differs from every other at t0.
  for (size_t m = 1; m < s.n_members(); ++m) {
    CHECK(s.members[m][0].values() != s.members[0][0].values());
  }
}

TEST_CASE("ensemble spread grows between the first and last forecast time") {
  GenConfig cfg = tiny_config(11);
  const int n_samples = 100;
  int grew = 0;
  for (int k = 0; k < n_samples; ++k) {
    const EnsembleSample s = generate_ensemble(cfg, uint64_t(k));
    std::vector<Field> t0_fields, t_last;
    for (const auto& member : s.members) {
      t0_fields.push_back(member.front());
      t_last.push_back(member.back());
    }
    if (mean_spread(ensemble_spread(t_last)) > mean_spread(ensemble_spread(t0_fields))) {
      ++grew;
    }
  }
  // Chaotic growth must dominate: at least 95% of samples.
  CHECK(grew >= 95);
}

TEST_CASE("spread growth over the 6 h window lands in the tuned 2-4x band") {
  GenConfig cfg = tiny_config(13);
  cfg.spinup_steps = 500;
  double sum_ratio = 0.0;
  const int n = 10;
  for (int k = 0; k < n; ++k) {
    const EnsembleSample s = generate_ensemble(cfg, uint64_t(100 + k));
    std::vector<Field> t0_fields, t_last;
    for (const auto& member : s.members) {
      t0_fields.push_back(member.front());
      t_last.push_back(member.back());
    }
    sum_ratio += mean_spread(ensemble_spread(t_last)) / mean_spread(ensemble_spread(t0_fields));
  }
  const double ratio = sum_ratio / n;
  CHECK(ratio > 1.5);
  CHECK(ratio < 6.0);
}

TEST_CASE("level coupling links the per-level rings") {
  // Param 0 / level 0 starts from the same seeded draws whether the grid has
  // one level or three (the level-0 initial values come first in the base
  // stream). A single-level grid has no coupling term, so any difference in
  // the evolved level-0 field is the cross-level coupling leaking in.
  GenConfig cfg = tiny_config(17);
  const EnsembleSample s = generate_ensemble(cfg, 3);

  auto spec_one = tiny_grid(2, 1, 4, 6);
  GenConfig cfg1 = cfg;
  cfg1.spec = spec_one;
  const EnsembleSample s1 = generate_ensemble(cfg1, 3);

  bool level0_differs = false;
  for (size_t la = 0; la < 4 && !level0_differs; ++la) {
    for (size_t lo = 0; lo < 6; ++lo) {
      if (s.members[0].back().at(0, 0, la, lo) != s1.members[0].back().at(0, 0, la, lo)) {
        level0_differs = true;
        break;
      }
    }
  }
  CHECK(level0_differs);
  CHECK(kLevelCoupling == 0.1);
}

TEST_CASE("config validation rejects nonsense") {
  GenConfig cfg = tiny_config(0);
  cfg.n_members = 1;
  CHECK_THROWS(cfg.validate());
  cfg = tiny_config(0);
  cfg.dt = 0.0;
  CHECK_THROWS(cfg.validate());
  cfg = tiny_config(0);
  cfg.ic_perturbation_sigma = -1.0;
  CHECK_THROWS(cfg.validate());
  cfg = tiny_config(0);
  cfg.spec = nullptr;
  CHECK_THROWS(cfg.validate());
  cfg = tiny_config(0);
  cfg.steps_per_time_unit = 0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("generate_dataset writes files, manifest and byte-deterministic output") {
  TempDir tmp_a("gen_a");
  TempDir tmp_b("gen_b");
  GenConfig cfg = tiny_config(21);

  const DatasetResult a = generate_dataset(cfg, 10, 5, {4}, 0.8, tmp_a.path());
  REQUIRE(a.paths.size() == 10);
  CHECK(a.manifest.total() == 10);
  CHECK(std::filesystem::exists(a.manifest_path));
  CHECK(a.manifest_path == tmp_a.path() + "/manifest.txt");

  // Epoch tags follow k * n_epochs / n_samples; tag 4 marks the test set,
  // which is samples 8 and 9 here (8*5/10 = 4).
  CHECK(a.manifest.test_ids.size() == 2);
  CHECK(a.manifest.train_ids.size() == 6);  // floor(0.8 * 8)
  CHECK(a.manifest.val_ids.size() == 2);

  // File naming and epoch tags on disk.
  CHECK(a.paths[0] == tmp_a.path() + "/sample_000000.esg");
  const EnsembleSample s0 = read_esg(a.paths[0]);
  CHECK(s0.sample_id == "sample_000000");
  CHECK(s0.epoch_tag == 0);
  const EnsembleSample s9 = read_esg(a.paths[9]);
  CHECK(s9.epoch_tag == 4);

  // Regenerating into a fresh directory is byte-identical file by file.
  const DatasetResult b = generate_dataset(cfg, 10, 5, {4}, 0.8, tmp_b.path());
  for (size_t i = 0; i < a.paths.size(); ++i) {
    CHECK(read_binary_file(a.paths[i]) == read_binary_file(b.paths[i]));
  }
  CHECK(spreadnet::testing::read_text_file(a.manifest_path) ==
        spreadnet::testing::read_text_file(b.manifest_path));

  // The manifest on disk matches the returned one.
  const SplitManifest m = read_manifest(a.manifest_path);
  CHECK(m.train_ids == a.manifest.train_ids);
  CHECK(m.test_ids == a.manifest.test_ids);
}
