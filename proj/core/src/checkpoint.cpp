// SPDX-License-Identifier: Apache-2.0
#include "spreadnet/checkpoint.hpp"

#include <stdexcept>

#include "spreadnet/dataio.hpp"
#include "spreadnet/kvfile.hpp"

namespace spreadnet {

namespace {

std::string meta_path_for(const std::string& path) { return path + ".meta"; }

}  // namespace

void save_checkpoint(const UNet& model, const std::string& path) {
  const ModelSpec& spec = model.spec();
  const ModelParams& params = model.params();

  KvFile meta;
  meta.set("model.conv_variant", conv_variant_name(spec.conv_variant));
  meta.set("model.temporal_mode", temporal_mode_name(spec.temporal_mode));
  meta.set_u64("model.in_channels", spec.in_channels);
  meta.set_u64("model.out_channels", spec.out_channels);
  meta.set_u64("model.base_channels", spec.base_channels);
  meta.set_u64("model.depth", spec.depth);
  meta.set_u64("model.n_levels", spec.n_levels);
  meta.set_u64("model.seed", spec.seed);

  std::vector<float> payload;
  payload.reserve(params.total_values());
  meta.set_u64("param.count", params.names().size());
  for (size_t i = 0; i < params.names().size(); ++i) {
    const std::string& name = params.names()[i];
    const Tensor& t = params.at(name);
    const std::string key = "param." + std::to_string(i);
    meta.set(key + ".name", name);
    std::vector<std::string> dims;
    for (size_t d : t.shape()) dims.push_back(std::to_string(d));
    meta.set_string_list(key + ".shape", dims);
    for (size_t j = 0; j < t.size(); ++j) payload.push_back(float(t.data()[j]));
  }

  meta.set_u64("norm.count", params.norm_names().size());
  for (size_t i = 0; i < params.norm_names().size(); ++i) {
    const std::string& name = params.norm_names()[i];
    const BatchNormState& state = params.norm_at(name);
    const std::string key = "norm." + std::to_string(i);
    meta.set(key + ".name", name);
    meta.set_i64(key + ".initialized", state.initialized ? 1 : 0);
    meta.set_f64_list(key + ".mean", state.running_mean);
    meta.set_f64_list(key + ".var", state.running_var);
  }

  EsgHeader header;
  header.member_count = header.time_count = header.param_count = 1;
  header.level_count = header.lat_count = 1;
  header.lon_count = uint32_t(payload.size());
  if (header.payload_values() != payload.size()) {
    throw std::runtime_error("checkpoint too large for container: " +
                             std::to_string(payload.size()) + " values");
  }
  write_esg_raw(path, header, payload);
  meta.save(meta_path_for(path));
}

UNet load_checkpoint(const std::string& path) {
  auto [header, payload] = read_esg_raw(path);
  KvFile meta = KvFile::load(meta_path_for(path));

  ModelSpec spec;
  spec.conv_variant = parse_conv_variant(meta.get("model.conv_variant"));
  spec.temporal_mode = parse_temporal_mode(meta.get("model.temporal_mode"));
  spec.in_channels = meta.get_u64("model.in_channels");
  spec.out_channels = meta.get_u64("model.out_channels");
  spec.base_channels = meta.get_u64("model.base_channels");
  spec.depth = meta.get_u64("model.depth");
  spec.n_levels = meta.get_u64("model.n_levels");
  spec.seed = meta.get_u64("model.seed");

  ModelParams params;
  const size_t n_tensors = meta.get_u64("param.count");
  size_t offset = 0;
  for (size_t i = 0; i < n_tensors; ++i) {
    const std::string key = "param." + std::to_string(i);
    const std::string name = meta.get(key + ".name");
    Shape shape;
    for (const std::string& dim : meta.get_string_list(key + ".shape")) {
      shape.push_back(std::stoull(dim));
    }
    size_t numel = 1;
    for (size_t d : shape) numel *= d;
    if (offset + numel > payload.size()) {
      throw std::runtime_error("checkpoint payload too short for parameter '" + name +
                               "': " + path);
    }
    std::vector<double> values(numel);
    for (size_t j = 0; j < numel; ++j) values[j] = double(payload[offset + j]);
    offset += numel;
    params.add(name, Tensor(shape, std::move(values)));
  }
  if (offset != payload.size()) {
    throw std::runtime_error("checkpoint payload has " +
                             std::to_string(payload.size() - offset) +
                             " values beyond the declared parameters: " + path);
  }

  const size_t n_norms = meta.get_u64("norm.count");
  for (size_t i = 0; i < n_norms; ++i) {
    const std::string key = "norm." + std::to_string(i);
    const std::string name = meta.get(key + ".name");
    std::vector<double> mean = meta.get_f64_list(key + ".mean");
    BatchNormState& state = params.add_norm(name, mean.size());
    state.running_mean = std::move(mean);
    state.running_var = meta.get_f64_list(key + ".var");
    state.initialized = meta.get_i64(key + ".initialized") != 0;
    if (state.running_var.size() != state.running_mean.size()) {
      throw std::runtime_error("checkpoint norm state '" + name +
                               "' has mismatched mean/var lengths: " + path);
    }
  }

  return UNet(spec, std::move(params));
}

}  // namespace spreadnet
