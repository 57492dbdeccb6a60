// SPDX-License-Identifier: Apache-2.0
#include "spreadnet/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "spreadnet/kvfile.hpp"
#include "spreadnet/rng.hpp"

namespace spreadnet {

namespace {

void put_u32le(std::string& out, uint32_t v) {
  out.push_back(char(v & 0xFF));
  out.push_back(char((v >> 8) & 0xFF));
  out.push_back(char((v >> 16) & 0xFF));
  out.push_back(char((v >> 24) & 0xFF));
}

uint32_t get_u32le(const unsigned char* p) {
  return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) |
         (uint32_t(p[3]) << 24);
}

void put_f32le(std::string& out, float v) {
  uint32_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, sizeof(bits));
  put_u32le(out, bits);
}

float get_f32le(const unsigned char* p) {
  uint32_t bits = get_u32le(p);
  float v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

std::string read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

void write_binary_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

EsgHeader parse_header(const std::string& bytes, const std::string& path) {
  if (bytes.size() < 4 ||
      std::memcmp(bytes.data(), EsgHeader::kMagic, 4) != 0) {
    throw std::runtime_error("not an ESG file: " + path);
  }
  if (bytes.size() < EsgHeader::kHeaderBytes) {
    throw std::runtime_error("truncated file: " + path);
  }
  const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());
  EsgHeader h;
  h.version = get_u32le(p + 4);
  if (h.version != 1) {
    throw std::runtime_error("unsupported version " + std::to_string(h.version) +
                             ": " + path);
  }
  h.member_count = get_u32le(p + 8);
  h.time_count = get_u32le(p + 12);
  h.param_count = get_u32le(p + 16);
  h.level_count = get_u32le(p + 20);
  h.lat_count = get_u32le(p + 24);
  h.lon_count = get_u32le(p + 28);
  if (h.member_count == 0 || h.time_count == 0 || h.param_count == 0 ||
      h.level_count == 0 || h.lat_count == 0 || h.lon_count == 0) {
    throw std::runtime_error("corrupt data: zero count in header: " + path);
  }
  for (int i = 32; i < 40; ++i) {
    if (p[i] != 0) {
      throw std::runtime_error("corrupt data: nonzero reserved bytes: " + path);
    }
  }
  const uint64_t expect = EsgHeader::kHeaderBytes + 4 * h.payload_values();
  if (bytes.size() < expect) throw std::runtime_error("truncated file: " + path);
  if (bytes.size() > expect) {
    throw std::runtime_error("corrupt data: trailing bytes after payload: " + path);
  }
  return h;
}

std::string meta_path_for(const std::string& path) { return path + ".meta"; }

std::string serialize_header(const EsgHeader& h) {
  std::string bytes;
  bytes.reserve(EsgHeader::kHeaderBytes);
  bytes.append(EsgHeader::kMagic, 4);
  put_u32le(bytes, h.version);
  put_u32le(bytes, h.member_count);
  put_u32le(bytes, h.time_count);
  put_u32le(bytes, h.param_count);
  put_u32le(bytes, h.level_count);
  put_u32le(bytes, h.lat_count);
  put_u32le(bytes, h.lon_count);
  bytes.append(8, '\0');
  return bytes;
}

}  // namespace

constexpr char EsgHeader::kMagic[5];

void write_esg_raw(const std::string& path, const EsgHeader& header,
                   const std::vector<float>& payload) {
  if (payload.size() != header.payload_values()) {
    throw std::invalid_argument("ESG payload has " + std::to_string(payload.size()) +
                                " values, header counts give " +
                                std::to_string(header.payload_values()));
  }
  std::string bytes = serialize_header(header);
  bytes.reserve(EsgHeader::kHeaderBytes + 4 * payload.size());
  for (float v : payload) put_f32le(bytes, v);
  write_binary_file(path, bytes);
}

std::pair<EsgHeader, std::vector<float>> read_esg_raw(const std::string& path) {
  const std::string bytes = read_binary_file(path);
  const EsgHeader h = parse_header(bytes, path);
  std::vector<float> payload(h.payload_values());
  const unsigned char* p =
      reinterpret_cast<const unsigned char*>(bytes.data()) + EsgHeader::kHeaderBytes;
  for (size_t i = 0; i < payload.size(); ++i, p += 4) {
    payload[i] = get_f32le(p);
    if (!std::isfinite(payload[i])) {
      throw std::runtime_error("corrupt data: non-finite value: " + path);
    }
  }
  return {h, std::move(payload)};
}

void write_esg(const EnsembleSample& sample, const std::string& path) {
  sample.validate();
  const GridSpec& spec = *sample.spec;

  EsgHeader h;
  h.member_count = uint32_t(sample.members.size());
  h.time_count = uint32_t(spec.n_times());
  h.param_count = uint32_t(spec.n_params);
  h.level_count = uint32_t(spec.n_levels);
  h.lat_count = uint32_t(spec.n_lat);
  h.lon_count = uint32_t(spec.n_lon);

  std::string bytes = serialize_header(h);
  bytes.reserve(EsgHeader::kHeaderBytes + 4 * h.payload_values());
  for (const auto& member : sample.members) {
    for (const Field& field : member) {
      for (double v : field.values()) put_f32le(bytes, float(v));
    }
  }
  write_binary_file(path, bytes);

  KvFile meta;
  meta.set("sample_id", sample.sample_id);
  meta.set_i64("epoch_tag", sample.epoch_tag);
  meta.set_i64("control_index", sample.control_index);
  meta.set_string_list("param_names", spec.param_names);
  meta.set_f64_list("level_values", spec.level_values);
  std::vector<double> times(spec.forecast_times.begin(), spec.forecast_times.end());
  meta.set_f64_list("forecast_times", times);
  meta.save(meta_path_for(path));
}

EsgHeader read_esg_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::string head(EsgHeader::kHeaderBytes, '\0');
  in.read(head.data(), std::streamsize(head.size()));
  head.resize(size_t(in.gcount()));
  if (head.size() < 4 || std::memcmp(head.data(), EsgHeader::kMagic, 4) != 0) {
    throw std::runtime_error("not an ESG file: " + path);
  }
  // Re-parse with the full length check against the actual file size.
  return parse_header(read_binary_file(path), path);
}

EnsembleSample read_esg(const std::string& path) {
  const std::string bytes = read_binary_file(path);
  const EsgHeader h = parse_header(bytes, path);

  KvFile meta = KvFile::load(meta_path_for(path));
  auto spec = std::make_shared<GridSpec>();
  spec->n_params = h.param_count;
  spec->n_levels = h.level_count;
  spec->n_lat = h.lat_count;
  spec->n_lon = h.lon_count;
  spec->param_names = meta.get_string_list("param_names");
  spec->level_values = meta.get_f64_list("level_values");
  for (double t : meta.get_f64_list("forecast_times")) {
    spec->forecast_times.push_back(int(std::llround(t)));
  }
  spec->validate();
  if (spec->n_times() != h.time_count) {
    throw std::runtime_error("corrupt data: forecast_times length " +
                             std::to_string(spec->n_times()) +
                             " does not match header time count " +
                             std::to_string(h.time_count) + ": " + path);
  }

  EnsembleSample sample;
  sample.spec = spec;
  sample.sample_id = meta.get("sample_id");
  sample.epoch_tag = meta.get_i64("epoch_tag");
  sample.control_index = meta.get_i64("control_index");

  const size_t field_values = spec->points_per_field();
  const unsigned char* p =
      reinterpret_cast<const unsigned char*>(bytes.data()) + EsgHeader::kHeaderBytes;
  sample.members.resize(h.member_count);
  for (uint32_t m = 0; m < h.member_count; ++m) {
    auto& member = sample.members[m];
    member.reserve(h.time_count);
    for (uint32_t t = 0; t < h.time_count; ++t) {
      std::vector<double> values(field_values);
      for (size_t i = 0; i < field_values; ++i, p += 4) {
        const float v = get_f32le(p);
        if (!std::isfinite(v)) {
          throw std::runtime_error("corrupt data: non-finite value: " + path);
        }
        values[i] = double(v);
      }
      member.emplace_back(spec, std::move(values));
    }
  }
  sample.validate();
  return sample;
}

SplitManifest split_dataset(const std::vector<SampleKey>& ids, uint64_t seed,
                            double train_frac, const std::set<int64_t>& test_epoch_tags) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) {
    throw std::invalid_argument("train_frac must be in (0,1), got " +
                                std::to_string(train_frac));
  }
  SplitManifest manifest;
  manifest.seed = seed;
  manifest.rng_algorithm = kRngAlgorithmId;

  std::vector<std::string> pool;
  for (const SampleKey& key : ids) {
    if (test_epoch_tags.count(key.epoch_tag)) {
      manifest.test_ids.push_back(key.id);
    } else {
      pool.push_back(key.id);
    }
  }
  if (pool.empty()) throw std::runtime_error("empty training set: no samples left after test holdout");

  Rng rng(seed);
  shuffle(pool, rng);
  const size_t n_train = size_t(std::floor(train_frac * double(pool.size())));
  if (n_train == 0) throw std::runtime_error("empty training set: " + std::to_string(pool.size()) + " non-test samples is too few");
  manifest.train_ids.assign(pool.begin(), pool.begin() + ptrdiff_t(n_train));
  manifest.val_ids.assign(pool.begin() + ptrdiff_t(n_train), pool.end());
  return manifest;
}

void write_manifest(const SplitManifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out << "seed=" << manifest.seed << "\n";
  out << "rng=" << manifest.rng_algorithm << "\n";
  out << "[train]\n";
  for (const auto& id : manifest.train_ids) out << id << "\n";
  out << "[val]\n";
  for (const auto& id : manifest.val_ids) out << id << "\n";
  out << "[test]\n";
  for (const auto& id : manifest.test_ids) out << id << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

SplitManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  SplitManifest manifest;
  std::string line;
  std::vector<std::string>* section = nullptr;
  bool saw_seed = false;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line == "[train]") {
      section = &manifest.train_ids;
    } else if (line == "[val]") {
      section = &manifest.val_ids;
    } else if (line == "[test]") {
      section = &manifest.test_ids;
    } else if (line.rfind("seed=", 0) == 0) {
      manifest.seed = std::stoull(line.substr(5));
      saw_seed = true;
    } else if (line.rfind("rng=", 0) == 0) {
      manifest.rng_algorithm = line.substr(4);
    } else if (section != nullptr) {
      section->push_back(line);
    } else {
      throw std::runtime_error("malformed manifest line " + std::to_string(lineno) +
                               " in " + path + ": " + line);
    }
  }
  if (!saw_seed) throw std::runtime_error("manifest missing seed line: " + path);
  if (manifest.rng_algorithm.empty()) {
    throw std::runtime_error("manifest missing rng line: " + path);
  }
  return manifest;
}

void write_heatmap(const Tensor& squared_diff, const std::string& path_stem) {
  if (squared_diff.shape().size() != 2) {
    throw std::invalid_argument("heatmap input must be rank 2, got shape " +
                                shape_to_string(squared_diff.shape()));
  }
  const size_t h = squared_diff.shape()[0];
  const size_t w = squared_diff.shape()[1];
  const double* v = squared_diff.data();

  std::vector<double> logs(h * w);
  double log_max = std::log10(kHeatmapFloor);
  for (size_t i = 0; i < h * w; ++i) {
    if (!(v[i] >= 0.0)) {
      throw std::invalid_argument("heatmap values must be non-negative, got " +
                                  std::to_string(v[i]));
    }
    logs[i] = std::log10(std::max(v[i], kHeatmapFloor));
    log_max = std::max(log_max, logs[i]);
  }

  {
    std::ofstream csv(path_stem + ".csv", std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot open file for writing: " + path_stem + ".csv");
    char buf[64];
    for (size_t y = 0; y < h; ++y) {
      for (size_t x = 0; x < w; ++x) {
        std::snprintf(buf, sizeof buf, "%.6f", logs[y * w + x]);
        if (x) csv << ',';
        csv << buf;
      }
      csv << '\n';
    }
    if (!csv) throw std::runtime_error("write failed: " + path_stem + ".csv");
  }

  {
    const double log_min = std::log10(kHeatmapFloor);
    const double span = log_max - log_min;
    std::ofstream pgm(path_stem + ".pgm", std::ios::trunc);
    if (!pgm) throw std::runtime_error("cannot open file for writing: " + path_stem + ".pgm");
    pgm << "P2\n" << w << ' ' << h << "\n255\n";
    for (size_t y = 0; y < h; ++y) {
      for (size_t x = 0; x < w; ++x) {
        int gray = 0;
        if (span > 0.0) {
          gray = int(std::lround((logs[y * w + x] - log_min) / span * 255.0));
          gray = std::clamp(gray, 0, 255);
        }
        if (x) pgm << ' ';
        pgm << gray;
      }
      pgm << '\n';
    }
    if (!pgm) throw std::runtime_error("write failed: " + path_stem + ".pgm");
  }
}

}  // namespace spreadnet
