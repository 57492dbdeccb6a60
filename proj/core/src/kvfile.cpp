// SPDX-License-Identifier: Apache-2.0
#include "spreadnet/kvfile.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace spreadnet {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) {
    return "";
  }
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) {
    return out;
  }
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(trim(item));
  }
  return out;
}

}  // namespace

KvFile KvFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("kvfile: cannot open " + path);
  }
  KvFile kv;
  kv.origin_ = path;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') {
      continue;
    }
    const size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("kvfile: " + path + ":" + std::to_string(lineno) +
                               ": expected key=value, got '" + t + "'");
    }
    kv.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return kv;
}

void KvFile::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("kvfile: cannot write " + path);
  }
  for (const auto& key : order_) {
    out << key << "=" << values_.at(key) << "\n";
  }
  if (!out) {
    throw std::runtime_error("kvfile: write failed for " + path);
  }
}

bool KvFile::has(const std::string& key) const {
  return values_.count(key) != 0;
}

void KvFile::set(const std::string& key, const std::string& value) {
  if (values_.find(key) == values_.end()) {
    order_.push_back(key);
  }
  values_[key] = value;
}

void KvFile::set_i64(const std::string& key, int64_t value) {
  set(key, std::to_string(value));
}

void KvFile::set_u64(const std::string& key, uint64_t value) {
  set(key, std::to_string(value));
}

void KvFile::set_f64(const std::string& key, double value) {
  set(key, format_f64(value));
}

void KvFile::set_f64_list(const std::string& key, const std::vector<double>& values) {
  std::string joined;
  for (size_t i = 0; i < values.size(); ++i) {
    if (i > 0) {
      joined += ",";
    }
    joined += format_f64(values[i]);
  }
  set(key, joined);
}

void KvFile::set_string_list(const std::string& key, const std::vector<std::string>& values) {
  std::string joined;
  for (size_t i = 0; i < values.size(); ++i) {
    if (i > 0) {
      joined += ",";
    }
    joined += values[i];
  }
  set(key, joined);
}

const std::string& KvFile::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    throw std::runtime_error("kvfile: missing key '" + key + "'" +
                             (origin_.empty() ? "" : " in " + origin_));
  }
  return it->second;
}

int64_t KvFile::get_i64(const std::string& key) const {
  return std::stoll(get(key));
}

uint64_t KvFile::get_u64(const std::string& key) const {
  return std::stoull(get(key));
}

double KvFile::get_f64(const std::string& key) const {
  return std::stod(get(key));
}

std::vector<double> KvFile::get_f64_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_csv(get(key))) {
    out.push_back(std::stod(item));
  }
  return out;
}

std::vector<std::string> KvFile::get_string_list(const std::string& key) const {
  return split_csv(get(key));
}

std::string KvFile::get_or(const std::string& key, const std::string& fallback) const {
  return has(key) ? get(key) : fallback;
}

int64_t KvFile::get_i64_or(const std::string& key, int64_t fallback) const {
  return has(key) ? get_i64(key) : fallback;
}

uint64_t KvFile::get_u64_or(const std::string& key, uint64_t fallback) const {
  return has(key) ? get_u64(key) : fallback;
}

double KvFile::get_f64_or(const std::string& key, double fallback) const {
  return has(key) ? get_f64(key) : fallback;
}

std::string KvFile::format_f64(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

}  // namespace spreadnet
