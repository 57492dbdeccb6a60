// SPDX-License-Identifier: Apache-2.0
//
// Tests for grid geometry, ensemble statistics, standardization and channel
// packing. Numeric oracles are hand-computed sample statistics (spread uses
// divisor M-1, norm stats use population divisor N).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "spreadnet/grids.hpp"
#include "spreadnet/rng.hpp"
#include "test_util.hpp"

using namespace spreadnet;
using spreadnet::testing::tiny_grid;

namespace {

Field constant_field(GridSpecPtr spec, double value) {
  Field f(spec);
  for (double& v : f.values()) v = value;
  return f;
}

Field random_field(GridSpecPtr spec, Rng& rng) {
  Field f(spec);
  for (double& v : f.values()) v = rng.gaussian();
  return f;
}

/// Plain two-pass sample standard deviation, the independent oracle for the
/// streaming ensemble_spread implementation.
double two_pass_std(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= double(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / double(xs.size() - 1));
}

EnsembleSample make_sample(GridSpecPtr spec, size_t n_members, uint64_t seed) {
  EnsembleSample sample;
  sample.spec = spec;
  sample.sample_id = "s";
  Rng rng(seed);
  sample.members.resize(n_members);
  for (size_t m = 0; m < n_members; ++m) {
    for (size_t t = 0; t < spec->n_times(); ++t) {
      sample.members[m].push_back(random_field(spec, rng));
    }
  }
  return sample;
}

}  // namespace

TEST_CASE("GridSpec counts and validation") {
  const GridSpec g = GridSpec::desk_default();
  CHECK(g.n_params == 6);
  CHECK(g.n_levels == 7);
  CHECK(g.n_lat == 20);
  CHECK(g.n_lon == 32);
  CHECK(g.forecast_times == std::vector<int>{0, 3, 6});
  CHECK(g.points_per_field() == 6 * 7 * 20 * 32);
  CHECK(g.spatial_points() == 20 * 32);
  CHECK(g.n_times() == 3);
  CHECK_NOTHROW(g.validate());

  GridSpec bad = g;
  bad.forecast_times = {0, 6, 3};  // not increasing
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = g;
  bad.forecast_times = {1, 3};  // must start at 0
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = g;
  bad.param_names.pop_back();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = g;
  bad.n_lat = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("Field indexing is row-major [param][level][lat][lon]") {
  auto spec = tiny_grid();
  Field f(spec);
  CHECK(f.values().size() == spec->points_per_field());
  CHECK(f.index(0, 0, 0, 0) == 0);
  CHECK(f.index(0, 0, 0, 1) == 1);
  CHECK(f.index(0, 0, 1, 0) == spec->n_lon);
  CHECK(f.index(0, 1, 0, 0) == spec->n_lat * spec->n_lon);
  CHECK(f.index(1, 0, 0, 0) == spec->n_levels * spec->n_lat * spec->n_lon);

  f.at(1, 2, 3, 4) = 9.5;
  CHECK(f.at(1, 2, 3, 4) == 9.5);
  CHECK(f.values()[f.index(1, 2, 3, 4)] == 9.5);
}

TEST_CASE("Field validation rejects non-finite values") {
  auto spec = tiny_grid();
  Field f = constant_field(spec, 1.0);
  CHECK_NOTHROW(f.validate());
  f.values()[3] = std::nan("");
  CHECK_THROWS(f.validate());
}

TEST_CASE("ensemble_mean matches hand values") {
  auto spec = tiny_grid(1, 1, 1, 1);
  // Members carrying 1 and 3 -> mean 2; members 0..4 -> mean 2.
  std::vector<Field> two = {constant_field(spec, 1.0), constant_field(spec, 3.0)};
  CHECK(ensemble_mean(two).values()[0] == 2.0);

  std::vector<Field> five;
  for (int i = 0; i < 5; ++i) five.push_back(constant_field(spec, double(i)));
  CHECK(ensemble_mean(five).values()[0] == 2.0);
}

TEST_CASE("ensemble_spread matches hand-computed sample std") {
  auto spec = tiny_grid(1, 1, 1, 1);
  // Members 1 and 3: sample std with divisor M-1 is sqrt(2).
  std::vector<Field> two = {constant_field(spec, 1.0), constant_field(spec, 3.0)};
  CHECK(ensemble_spread(two).values()[0] ==
        doctest::Approx(1.4142135623730951).epsilon(1e-15));

  // Members 0..4: variance 10/4 = 2.5 -> sqrt(2.5).
  std::vector<Field> five;
  for (int i = 0; i < 5; ++i) five.push_back(constant_field(spec, double(i)));
  CHECK(ensemble_spread(five).values()[0] ==
        doctest::Approx(1.5811388300841898).epsilon(1e-15));

  CHECK_THROWS(ensemble_spread({constant_field(spec, 1.0)}));  // needs M >= 2
}

TEST_CASE("ensemble_spread agrees with a two-pass oracle everywhere") {
  auto spec = tiny_grid();
  Rng rng(17);
  std::vector<Field> members;
  for (int m = 0; m < 10; ++m) members.push_back(random_field(spec, rng));
  const Field spread = ensemble_spread(members);

  for (size_t i = 0; i < spec->points_per_field(); ++i) {
    std::vector<double> xs;
    for (const Field& f : members) xs.push_back(f.values()[i]);
    CHECK(std::abs(spread.values()[i] - two_pass_std(xs)) <= 1e-12);
  }
}

TEST_CASE("ensemble_spread is member-order invariant and shift invariant") {
  auto spec = tiny_grid();
  Rng rng(29);
  std::vector<Field> members;
  for (int m = 0; m < 6; ++m) members.push_back(random_field(spec, rng));
  const Field spread = ensemble_spread(members);

  std::vector<Field> permuted = {members[4], members[0], members[5],
                                 members[2], members[1], members[3]};
  const Field spread_perm = ensemble_spread(permuted);
  for (size_t i = 0; i < spec->points_per_field(); ++i) {
    CHECK(std::abs(spread.values()[i] - spread_perm.values()[i]) <= 1e-12);
  }

  // Adding the same constant to every member leaves the spread unchanged.
  std::vector<Field> shifted = members;
  for (Field& f : shifted) {
    for (double& v : f.values()) v += 100.0;
  }
  const Field spread_shift = ensemble_spread(shifted);
  for (size_t i = 0; i < spec->points_per_field(); ++i) {
    CHECK(std::abs(spread.values()[i] - spread_shift.values()[i]) <= 1e-9);
  }
}

TEST_CASE("compute_norm_stats uses population moments per (param, level)") {
  auto spec = tiny_grid(1, 1, 1, 2);
  // Two points 0 and 2: mean 1, population std sqrt(((0-1)^2+(2-1)^2)/2) = 1.
  Field f(spec);
  f.values() = {0.0, 2.0};
  const NormStats stats = compute_norm_stats({f});
  CHECK(stats.mean[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(stats.std[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("constant fields get the std floor") {
  auto spec = tiny_grid();
  const NormStats stats = compute_norm_stats({constant_field(spec, 5.0)});
  for (size_t i = 0; i < stats.std.size(); ++i) {
    CHECK(stats.mean[i] == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(stats.std[i] == 1e-6);
  }
}

TEST_CASE("standardize and destandardize are exact inverses") {
  auto spec = tiny_grid(1, 1, 1, 1);
  NormStats stats;
  stats.n_params = 1;
  stats.n_levels = 1;
  stats.mean = {5.0};
  stats.std = {2.0};

  Field f(spec);
  f.values() = {7.0};
  const Field z = standardize(f, stats);
  CHECK(z.values()[0] == doctest::Approx(1.0).epsilon(1e-15));  // (7-5)/2
  const Field back = destandardize(z, stats);
  CHECK(back.values()[0] == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("standardization of a dataset against its own stats is ~N(0,1)") {
  auto spec = tiny_grid();
  Rng rng(31);
  std::vector<Field> fields;
  for (int i = 0; i < 8; ++i) fields.push_back(random_field(spec, rng));
  const NormStats stats = compute_norm_stats(fields);

  // Pool the standardized values of plane (0,0) and check moments.
  double sum = 0.0, sumsq = 0.0;
  size_t n = 0;
  for (const Field& f : fields) {
    const Field z = standardize(f, stats);
    for (size_t la = 0; la < spec->n_lat; ++la) {
      for (size_t lo = 0; lo < spec->n_lon; ++lo) {
        const double v = z.at(0, 0, la, lo);
        sum += v;
        sumsq += v * v;
        ++n;
      }
    }
  }
  CHECK(std::abs(sum / double(n)) < 1e-10);
  CHECK(std::abs(sumsq / double(n) - 1.0) < 1e-10);
}

TEST_CASE("NormAccumulator streaming matches batch statistics") {
  auto spec = tiny_grid();
  Rng rng(37);
  std::vector<Field> fields;
  for (int i = 0; i < 5; ++i) fields.push_back(random_field(spec, rng));

  NormAccumulator acc(spec->n_params, spec->n_levels);
  for (const Field& f : fields) acc.add(f);
  const NormStats streamed = acc.finalize();
  const NormStats batch = compute_norm_stats(fields);

  REQUIRE(streamed.mean.size() == batch.mean.size());
  for (size_t i = 0; i < batch.mean.size(); ++i) {
    CHECK(streamed.mean[i] == doctest::Approx(batch.mean[i]).epsilon(1e-12));
    CHECK(streamed.std[i] == doctest::Approx(batch.std[i]).epsilon(1e-12));
  }
  CHECK(acc.count() == 5);
}

TEST_CASE("channel_pack counts and member-major order") {
  auto spec6 = tiny_grid(6, 3, 4, 6);
  EnsembleSample s = make_sample(spec6, 2, 41);

  // 1 member x 1 time x 6 params -> 6 channels.
  Tensor packed = channel_pack(s, {0}, {0}, {0, 1, 2, 3, 4, 5});
  CHECK(packed.shape() == Shape{6, 3, 4, 6});

  // 2 members x 2 times x 1 param -> 4 channels.
  Tensor p2 = channel_pack(s, {0, 1}, {0, 2}, {3});
  CHECK(p2.shape() == Shape{4, 3, 4, 6});

  // Member-major: channel index (mi, ti, pi) = mi*T*P + ti*P + pi.
  CHECK(packed_channel_index(0, 0, 0, 2, 1) == 0);
  CHECK(packed_channel_index(0, 1, 0, 2, 1) == 1);
  CHECK(packed_channel_index(1, 0, 0, 2, 1) == 2);
  CHECK(packed_channel_index(1, 1, 0, 2, 1) == 3);

  // Channel contents equal the selected member/time/param volume.
  for (size_t mi = 0; mi < 2; ++mi) {
    for (size_t ti = 0; ti < 2; ++ti) {
      const size_t t = (ti == 0) ? 0 : 2;
      const size_t c = packed_channel_index(mi, ti, 0, 2, 1);
      for (size_t l = 0; l < 3; ++l) {
        for (size_t la = 0; la < 4; ++la) {
          for (size_t lo = 0; lo < 6; ++lo) {
            CHECK(p2.at({c, l, la, lo}) == s.members[mi][t].at(3, l, la, lo));
          }
        }
      }
    }
  }
}

TEST_CASE("channel_pack appends extras last and supports extras-only packs") {
  auto spec = tiny_grid(2, 3, 4, 6);
  EnsembleSample s = make_sample(spec, 1, 43);

  Tensor volume(Shape{3, 4, 6});
  for (size_t i = 0; i < volume.size(); ++i) volume.mutable_data()[i] = double(i);
  ExtraChannel extra{"orography", volume};

  Tensor packed = channel_pack(s, {0}, {0}, {0, 1}, {extra});
  CHECK(packed.shape() == Shape{3, 3, 4, 6});
  for (size_t l = 0; l < 3; ++l) {
    for (size_t la = 0; la < 4; ++la) {
      for (size_t lo = 0; lo < 6; ++lo) {
        CHECK(packed.at({2, l, la, lo}) == volume.at({l, la, lo}));
      }
    }
  }

  // Extras-only pack: level count comes from the extra (single-level slice).
  Tensor slice(Shape{1, 4, 6});
  for (size_t i = 0; i < slice.size(); ++i) slice.mutable_data()[i] = 0.5 * double(i);
  Tensor only = channel_pack(s, {}, {}, {}, {ExtraChannel{"spread", slice}});
  CHECK(only.shape() == Shape{1, 1, 4, 6});
  CHECK(only.at({0, 0, 2, 3}) == slice.at({0, 2, 3}));
}

TEST_CASE("EnsembleSample validation catches ragged members") {
  auto spec = tiny_grid();
  EnsembleSample s = make_sample(spec, 3, 47);
  CHECK_NOTHROW(s.validate());
  s.members[1].pop_back();  // one member missing a time
  CHECK_THROWS(s.validate());
}

TEST_CASE("control_index semantics") {
  auto spec = tiny_grid();
  EnsembleSample s = make_sample(spec, 3, 53);
  CHECK(s.control_index == -1);  // default: no unperturbed member
  s.control_index = 0;
  CHECK_NOTHROW(s.validate());
  s.control_index = 3;  // out of range
  CHECK_THROWS(s.validate());
}
