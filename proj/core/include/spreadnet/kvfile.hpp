// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace spreadnet {

/// Ordered key=value text file. One `key=value` per line, UTF-8, '#' starts a
/// comment line. Insertion order is preserved on write so regenerated files
/// are byte-identical. Shared by .meta sidecars, stats files, checkpoint
/// metadata and CLI config files.
class KvFile {
 public:
  KvFile() = default;

  static KvFile load(const std::string& path);
  void save(const std::string& path) const;

  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);
  void set_i64(const std::string& key, int64_t value);
  void set_u64(const std::string& key, uint64_t value);
  void set_f64(const std::string& key, double value);
  void set_f64_list(const std::string& key, const std::vector<double>& values);
  void set_string_list(const std::string& key, const std::vector<std::string>& values);

  const std::string& get(const std::string& key) const;
  int64_t get_i64(const std::string& key) const;
  uint64_t get_u64(const std::string& key) const;
  double get_f64(const std::string& key) const;
  std::vector<double> get_f64_list(const std::string& key) const;
  std::vector<std::string> get_string_list(const std::string& key) const;

  // Fallback-taking variants for optional keys.
  std::string get_or(const std::string& key, const std::string& fallback) const;
  int64_t get_i64_or(const std::string& key, int64_t fallback) const;
  uint64_t get_u64_or(const std::string& key, uint64_t fallback) const;
  double get_f64_or(const std::string& key, double fallback) const;

  const std::vector<std::string>& keys() const { return order_; }

  /// Doubles are written with %.17g so a parse-write cycle is lossless.
  static std::string format_f64(double value);

 private:
  std::vector<std::string> order_;
  std::map<std::string, std::string> values_;
  std::string origin_;  // path for error messages, empty if built in memory
};

}  // namespace spreadnet
