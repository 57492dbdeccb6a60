// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "spreadnet/grids.hpp"
#include "spreadnet/tensor.hpp"

namespace spreadnet {

/// ESG binary container, version 1.
///
/// Layout (all integers little-endian):
///   bytes  0..3   magic "ESG1"
///   bytes  4..7   version, uint32 = 1
///   bytes  8..31  member, time, param, level, lat, lon counts, uint32 each
///   bytes 32..39  reserved, zero
///   bytes 40..    payload: IEEE-754 binary32 little-endian, order
///                 [member][time][param][level][lat][lon]
/// File length must equal 40 + 4*M*T*C*P*H*W exactly. A sidecar text file
/// `<path>.meta` carries the grid metadata as key=value lines.
struct EsgHeader {
  uint32_t version = 1;
  uint32_t member_count = 0;
  uint32_t time_count = 0;
  uint32_t param_count = 0;
  uint32_t level_count = 0;
  uint32_t lat_count = 0;
  uint32_t lon_count = 0;

  static constexpr size_t kHeaderBytes = 40;
  static constexpr char kMagic[5] = "ESG1";

  uint64_t payload_values() const {
    return uint64_t(member_count) * time_count * param_count * level_count *
           lat_count * lon_count;
  }
};

void write_esg(const EnsembleSample& sample, const std::string& path);
EnsembleSample read_esg(const std::string& path);

/// Header of an existing file; same error behavior as read_esg.
EsgHeader read_esg_header(const std::string& path);

/// Raw container access for uses beyond ensemble samples (checkpoints store
/// flat parameter vectors this way). The payload length must match the header
/// counts; values are stored as binary32 little-endian.
void write_esg_raw(const std::string& path, const EsgHeader& header,
                   const std::vector<float>& payload);
std::pair<EsgHeader, std::vector<float>> read_esg_raw(const std::string& path);

struct SampleKey {
  std::string id;
  int64_t epoch_tag = 0;
};

struct SplitManifest {
  uint64_t seed = 0;
  std::string rng_algorithm;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;

  size_t total() const { return train_ids.size() + val_ids.size() + test_ids.size(); }
};

/// Held-out split: ids whose epoch_tag is in test_epoch_tags become the test
/// set; the remainder is Fisher-Yates shuffled by Rng(seed) and cut at
/// floor(train_frac * n) into train / validation.
SplitManifest split_dataset(const std::vector<SampleKey>& ids, uint64_t seed,
                            double train_frac, const std::set<int64_t>& test_epoch_tags);

/// Text format: `seed=<n>` line, `rng=<algorithm>` line, then one id per line
/// under [train] / [val] / [test] section headers.
void write_manifest(const SplitManifest& manifest, const std::string& path);
SplitManifest read_manifest(const std::string& path);

/// Writes `<path_stem>.csv` (log10 of the floored values, 6 decimals,
/// row-major) and `<path_stem>.pgm` (ASCII P2, log values mapped linearly
/// from [log10(1e-8), log10(max)] onto 0..255). Values must be >= 0; the
/// floor is 1e-8.
void write_heatmap(const Tensor& squared_diff, const std::string& path_stem);

inline constexpr double kHeatmapFloor = 1e-8;

}  // namespace spreadnet
