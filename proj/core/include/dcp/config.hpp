// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace dcp {

/// Flat key-value configuration with dotted section names, e.g.
/// `prune.lambda = 1.0`. Files hold one `key = value` pair per line with
/// `#` comments; command-line flags of the same names override file values.
/// Unknown keys are errors, not warnings.
class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path);

  static const std::set<std::string>& known_keys();

  /// Throws ConfigError (naming the key) when the key is not registered.
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Sorted `key = value` lines; the canonical text two identical configs
  /// share byte for byte.
  std::string canonical() const;

  /// FNV-1a of the canonical text, hex-encoded.
  std::string hash() const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace dcp
