// SPDX-License-Identifier: Apache-2.0
//
// Tests for the ESG binary container, split manifests and heatmap output.
// The reference ESG encoding below is hand-assembled byte by byte from the
// documented layout, independently of the writer.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "spreadnet/dataio.hpp"
#include "spreadnet/grids.hpp"
#include "spreadnet/rng.hpp"
#include "test_util.hpp"

using namespace spreadnet;
using spreadnet::testing::TempDir;
using spreadnet::testing::read_binary_file;
using spreadnet::testing::read_text_file;
using spreadnet::testing::tiny_grid;
using spreadnet::testing::write_binary_file;

namespace {

/// The 44-byte reference file: all six counts 1, single payload value 1.0f.
/// "ESG1" magic, version 1, six count words, 8 reserved zero bytes, then
/// 0x3F800000 little-endian.
std::vector<unsigned char> reference_esg_bytes() {
  std::vector<unsigned char> b;
  const char magic[4] = {'E', 'S', 'G', '1'};
  b.insert(b.end(), magic, magic + 4);
  for (int word = 0; word < 7; ++word) {  // version + 6 counts, all = 1
    b.push_back(1);
    b.push_back(0);
    b.push_back(0);
    b.push_back(0);
  }
  for (int i = 0; i < 8; ++i) b.push_back(0);     // reserved
  const unsigned char f1[4] = {0x00, 0x00, 0x80, 0x3F};  // 1.0f LE
  b.insert(b.end(), f1, f1 + 4);
  return b;
}

GridSpecPtr unit_grid() {
  auto spec = std::make_shared<GridSpec>();
  spec->n_params = 1;
  spec->n_levels = 1;
  spec->n_lat = 1;
  spec->n_lon = 1;
  spec->level_values = {500.0};
  spec->param_names = {"t"};
  spec->forecast_times = {0};
  spec->validate();
  return spec;
}

EnsembleSample random_sample(GridSpecPtr spec, size_t n_members, uint64_t seed) {
  EnsembleSample s;
  s.spec = spec;
  s.sample_id = "sample";
  Rng rng(seed);
  s.members.resize(n_members);
  for (auto& member : s.members) {
    for (size_t t = 0; t < spec->n_times(); ++t) {
      Field f(spec);
      for (double& v : f.values()) v = rng.gaussian();
      member.push_back(f);
    }
  }
  return s;
}

}  // namespace

TEST_CASE("reading the hand-assembled reference file") {
  TempDir tmp("esg");
  const auto bytes = reference_esg_bytes();
  REQUIRE(bytes.size() == 44);  // 40-byte header + one float
  write_binary_file(tmp.file("ref.esg"), bytes);

  // A meta sidecar is required for full sample reads.
  {
    EnsembleSample s = random_sample(unit_grid(), 1, 1);
    s.members[0][0].values()[0] = 1.0;
    write_esg(s, tmp.file("written.esg"));
    std::filesystem::copy_file(tmp.file("written.esg") + ".meta", tmp.file("ref.esg") + ".meta");
  }

  const EsgHeader h = read_esg_header(tmp.file("ref.esg"));
  CHECK(h.version == 1);
  CHECK(h.member_count == 1);
  CHECK(h.time_count == 1);
  CHECK(h.param_count == 1);
  CHECK(h.level_count == 1);
  CHECK(h.lat_count == 1);
  CHECK(h.lon_count == 1);
  CHECK(h.payload_values() == 1);

  const EnsembleSample s = read_esg(tmp.file("ref.esg"));
  CHECK(s.n_members() == 1);
  CHECK(s.members[0][0].values()[0] == 1.0);
}

TEST_CASE("the writer reproduces the reference encoding byte for byte") {
  TempDir tmp("esg");
  EnsembleSample s = random_sample(unit_grid(), 1, 1);
  s.members[0][0].values()[0] = 1.0;
  write_esg(s, tmp.file("one.esg"));
  CHECK(read_binary_file(tmp.file("one.esg")) == reference_esg_bytes());
}

TEST_CASE("file length is exactly 40 + 4 * payload values") {
  TempDir tmp("esg");
  auto spec = tiny_grid(2, 3, 4, 6);
  const EnsembleSample s = random_sample(spec, 5, 2);
  write_esg(s, tmp.file("s.esg"));
  const auto bytes = read_binary_file(tmp.file("s.esg"));
  CHECK(bytes.size() == EsgHeader::kHeaderBytes + 4 * 5 * 3 * 2 * 3 * 4 * 6);
}

TEST_CASE("roundtrip is lossless at single precision") {
  TempDir tmp("esg");
  auto spec = tiny_grid(2, 2, 3, 4);
  for (uint64_t seed = 0; seed < 100; ++seed) {
    const EnsembleSample s = random_sample(spec, 3, seed);
    const std::string path = tmp.file("rt.esg");
    write_esg(s, path);
    const EnsembleSample back = read_esg(path);
    REQUIRE(back.n_members() == s.n_members());
    CHECK(*back.spec == *s.spec);
    for (size_t m = 0; m < s.n_members(); ++m) {
      for (size_t t = 0; t < spec->n_times(); ++t) {
        const auto& a = s.members[m][t].values();
        const auto& b = back.members[m][t].values();
        for (size_t i = 0; i < a.size(); ++i) {
          CHECK(b[i] == double(float(a[i])));  // exactly the binary32 value
        }
      }
    }
  }
}

TEST_CASE("a write-read-write cycle is byte-identical") {
  TempDir tmp("esg");
  auto spec = tiny_grid();
  const EnsembleSample s = random_sample(spec, 4, 9);
  write_esg(s, tmp.file("a.esg"));
  const EnsembleSample back = read_esg(tmp.file("a.esg"));
  write_esg(back, tmp.file("b.esg"));
  CHECK(read_binary_file(tmp.file("a.esg")) == read_binary_file(tmp.file("b.esg")));
  CHECK(read_text_file(tmp.file("a.esg") + ".meta") == read_text_file(tmp.file("b.esg") + ".meta"));
}

TEST_CASE("metadata sidecar preserves ids, tags and the control index") {
  TempDir tmp("esg");
  EnsembleSample s = random_sample(tiny_grid(), 3, 11);
  s.sample_id = "case_42";
  s.epoch_tag = 17;
  s.control_index = 0;
  write_esg(s, tmp.file("m.esg"));
  const EnsembleSample back = read_esg(tmp.file("m.esg"));
  CHECK(back.sample_id == "case_42");
  CHECK(back.epoch_tag == 17);
  CHECK(back.control_index == 0);
  CHECK(back.spec->param_names == s.spec->param_names);
  CHECK(back.spec->level_values == s.spec->level_values);
  CHECK(back.spec->forecast_times == s.spec->forecast_times);
}

TEST_CASE("bad magic is rejected") {
  TempDir tmp("esg");
  auto bytes = reference_esg_bytes();
  bytes[3] = 'X';  // "ESGX"
  write_binary_file(tmp.file("bad.esg"), bytes);
  CHECK_THROWS_WITH_AS(read_esg_header(tmp.file("bad.esg")),
                       doctest::Contains("not an ESG file"), std::runtime_error);
}

TEST_CASE("unsupported version is rejected") {
  TempDir tmp("esg");
  auto bytes = reference_esg_bytes();
  bytes[4] = 2;
  write_binary_file(tmp.file("v2.esg"), bytes);
  CHECK_THROWS_WITH_AS(read_esg_header(tmp.file("v2.esg")),
                       doctest::Contains("unsupported version"), std::runtime_error);
}

TEST_CASE("truncated and padded files are rejected") {
  TempDir tmp("esg");
  auto bytes = reference_esg_bytes();

  std::vector<unsigned char> truncated(bytes.begin(), bytes.end() - 2);
  write_binary_file(tmp.file("t.esg"), truncated);
  CHECK_THROWS_WITH_AS(read_esg_raw(tmp.file("t.esg")),
                       doctest::Contains("truncated"), std::runtime_error);

  std::vector<unsigned char> header_only(bytes.begin(), bytes.begin() + 20);
  write_binary_file(tmp.file("h.esg"), header_only);
  CHECK_THROWS_AS(read_esg_header(tmp.file("h.esg")), std::runtime_error);

  auto padded = bytes;
  padded.push_back(0);
  write_binary_file(tmp.file("p.esg"), padded);
  CHECK_THROWS_WITH_AS(read_esg_raw(tmp.file("p.esg")),
                       doctest::Contains("trailing bytes"), std::runtime_error);
}

TEST_CASE("nonzero reserved bytes are rejected") {
  TempDir tmp("esg");
  auto bytes = reference_esg_bytes();
  bytes[33] = 1;
  write_binary_file(tmp.file("r.esg"), bytes);
  CHECK_THROWS_WITH_AS(read_esg_raw(tmp.file("r.esg")),
                       doctest::Contains("reserved"), std::runtime_error);
}

TEST_CASE("non-finite payloads are rejected on read") {
  TempDir tmp("esg");
  auto bytes = reference_esg_bytes();
  // Overwrite the payload float with a quiet NaN (0x7FC00000 LE).
  bytes[40] = 0x00;
  bytes[41] = 0x00;
  bytes[42] = 0xC0;
  bytes[43] = 0x7F;
  write_binary_file(tmp.file("nan.esg"), bytes);
  CHECK_THROWS_WITH_AS(read_esg_raw(tmp.file("nan.esg")),
                       doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("missing files are reported with their path") {
  CHECK_THROWS_WITH_AS(read_esg("/no/such/file.esg"),
                       doctest::Contains("/no/such/file.esg"), std::runtime_error);
}

TEST_CASE("raw container roundtrip") {
  TempDir tmp("esg");
  EsgHeader h;
  h.member_count = 1;
  h.time_count = 1;
  h.param_count = 1;
  h.level_count = 1;
  h.lat_count = 1;
  h.lon_count = 5;
  const std::vector<float> payload = {1.0f, -2.5f, 0.0f, 3.25f, 1e-20f};
  write_esg_raw(tmp.file("raw.esg"), h, payload);
  const auto [h2, back] = read_esg_raw(tmp.file("raw.esg"));
  CHECK(h2.lon_count == 5);
  CHECK(back == payload);

  // Payload size must match the header counts.
  CHECK_THROWS_AS(write_esg_raw(tmp.file("raw2.esg"), h, {1.0f}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Split manifests.

namespace {
std::vector<SampleKey> numbered_keys(size_t n, const std::set<size_t>& test_positions) {
  std::vector<SampleKey> keys;
  for (size_t i = 0; i < n; ++i) {
    SampleKey k;
    k.id = "sample_" + std::to_string(i);
    k.epoch_tag = test_positions.count(i) ? 99 : int64_t(i % 3);
    keys.push_back(k);
  }
  return keys;
}
}  // namespace

TEST_CASE("split arithmetic: 10 samples with 2 test-tagged -> 6/2/2") {
  const auto keys = numbered_keys(10, {4, 7});
  const SplitManifest m = split_dataset(keys, 1, 0.8, {99});
  CHECK(m.test_ids.size() == 2);
  CHECK(m.train_ids.size() == 6);  // floor(0.8 * 8)
  CHECK(m.val_ids.size() == 2);
  CHECK(m.total() == 10);
  CHECK(m.seed == 1);
  CHECK(m.rng_algorithm == "splitmix64");

  // The test split is exactly the tagged ids.
  std::set<std::string> test_set(m.test_ids.begin(), m.test_ids.end());
  CHECK(test_set == std::set<std::string>{"sample_4", "sample_7"});
}

TEST_CASE("split arithmetic: 100 non-test samples -> 80/20") {
  const auto keys = numbered_keys(100, {});
  const SplitManifest m = split_dataset(keys, 5, 0.8, {99});
  CHECK(m.train_ids.size() == 80);
  CHECK(m.val_ids.size() == 20);
  CHECK(m.test_ids.empty());
}

TEST_CASE("splits are deterministic in the seed and partition the ids") {
  const auto keys = numbered_keys(37, {0, 5});
  const SplitManifest a = split_dataset(keys, 11, 0.8, {99});
  const SplitManifest b = split_dataset(keys, 11, 0.8, {99});
  CHECK(a.train_ids == b.train_ids);
  CHECK(a.val_ids == b.val_ids);
  CHECK(a.test_ids == b.test_ids);

  const SplitManifest c = split_dataset(keys, 12, 0.8, {99});
  CHECK(a.train_ids != c.train_ids);  // different shuffle

  // Union of the three splits is the full id set, with no duplicates.
  std::set<std::string> all;
  for (const auto& id : a.train_ids) all.insert(id);
  for (const auto& id : a.val_ids) all.insert(id);
  for (const auto& id : a.test_ids) all.insert(id);
  CHECK(all.size() == keys.size());
}

TEST_CASE("degenerate splits are rejected") {
  CHECK_THROWS_AS(split_dataset(numbered_keys(10, {}), 0, 1.5, {}), std::invalid_argument);
  CHECK_THROWS_AS(split_dataset(numbered_keys(10, {}), 0, 0.0, {}), std::invalid_argument);
  // All samples test-tagged leaves nothing to train on.
  CHECK_THROWS_WITH_AS(split_dataset(numbered_keys(3, {0, 1, 2}), 0, 0.8, {99}),
                       doctest::Contains("empty training set"), std::runtime_error);
}

TEST_CASE("manifest text roundtrip and format") {
  TempDir tmp("manifest");
  const SplitManifest m = split_dataset(numbered_keys(10, {4, 7}), 3, 0.8, {99});
  write_manifest(m, tmp.file("manifest.txt"));

  const std::string text = read_text_file(tmp.file("manifest.txt"));
  CHECK(text.find("seed=3") != std::string::npos);
  CHECK(text.find("rng=splitmix64") != std::string::npos);
  CHECK(text.find("[train]") != std::string::npos);
  CHECK(text.find("[val]") != std::string::npos);
  CHECK(text.find("[test]") != std::string::npos);

  const SplitManifest back = read_manifest(tmp.file("manifest.txt"));
  CHECK(back.seed == m.seed);
  CHECK(back.rng_algorithm == m.rng_algorithm);
  CHECK(back.train_ids == m.train_ids);
  CHECK(back.val_ids == m.val_ids);
  CHECK(back.test_ids == m.test_ids);
}

TEST_CASE("manifest without a seed line is rejected") {
  TempDir tmp("manifest");
  std::ofstream(tmp.file("bad.txt")) << "rng=splitmix64\n[train]\na\n";
  CHECK_THROWS_WITH_AS(read_manifest(tmp.file("bad.txt")),
                       doctest::Contains("missing seed"), std::runtime_error);
}

// ---------------------------------------------------------------------------
// Heatmaps.

TEST_CASE("all-zero heatmap floors at 1e-8: CSV all -8, PGM all 0") {
  TempDir tmp("heatmap");
  Tensor zeros(Shape{2, 3});
  write_heatmap(zeros, tmp.file("z"));

  const std::string csv = read_text_file(tmp.file("z.csv"));
  CHECK(csv == "-8.000000,-8.000000,-8.000000\n-8.000000,-8.000000,-8.000000\n");

  const std::string pgm = read_text_file(tmp.file("z.pgm"));
  CHECK(pgm.rfind("P2\n3 2\n255\n", 0) == 0);
  CHECK(pgm.find("0 0 0\n0 0 0\n") != std::string::npos);
}

TEST_CASE("single hot cell maps to log 0 and gray 255") {
  TempDir tmp("heatmap");
  Tensor t(Shape{1, 2});
  t.mutable_data()[0] = 1.0;  // log10 = 0
  t.mutable_data()[1] = 0.0;  // floored to log10 = -8
  write_heatmap(t, tmp.file("hot"));
  CHECK(read_text_file(tmp.file("hot.csv")) == "0.000000,-8.000000\n");
  CHECK(read_text_file(tmp.file("hot.pgm")) == "P2\n2 1\n255\n255 0\n");
}

TEST_CASE("a value exactly at the floor logs as -8") {
  TempDir tmp("heatmap");
  Tensor t(Shape{1, 1});
  t.mutable_data()[0] = 1e-8;
  write_heatmap(t, tmp.file("floor"));
  CHECK(read_text_file(tmp.file("floor.csv")) == "-8.000000\n");
}

TEST_CASE("heatmap rejects negatives and non-rank-2 input") {
  TempDir tmp("heatmap");
  Tensor neg(Shape{1, 1});
  neg.mutable_data()[0] = -1e-3;
  CHECK_THROWS_AS(write_heatmap(neg, tmp.file("n")), std::invalid_argument);
  CHECK_THROWS_AS(write_heatmap(Tensor(Shape{2, 2, 2}), tmp.file("r")), std::invalid_argument);
}
