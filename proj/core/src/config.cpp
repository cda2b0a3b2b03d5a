// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#include "dcp/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "dcp/errors.hpp"
#include "dcp/rng.hpp"

namespace dcp {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

const std::set<std::string>& Config::known_keys() {
  static const std::set<std::string> keys = {
      "seed",
      // model
      "model.arch",
      "model.classes",
      "model.in_channels",
      "model.image_size",
      // data
      "data.kind",
      "data.dir",
      "data.train_n",
      "data.test_n",
      "data.informative",
      "data.signal",
      "data.noise",
      "data.distractor",
      // baseline training
      "train.epochs",
      "train.lr",
      "train.lr_decay",
      "train.momentum",
      "train.weight_decay",
      "train.batch",
      // pruning
      "prune.lambda",
      "prune.epsilon",
      "prune.keep_ratio",
      "prune.stop",
      "prune.heads",
      "prune.strategy",
      "prune.gamma",
      "prune.inner_steps",
      "prune.batch",
      "prune.subset",
      "prune.finetune_epochs",
      "prune.finetune_lr",
      "prune.finetune_decay",
      "prune.final_finetune_epochs",
      // reporting
      "report.path",
  };
  return keys;
}

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  Config cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (value.empty()) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": empty value for key '" + key +
                        "'");
    }
    cfg.set(key, value);
  }
  return cfg;
}

void Config::set(const std::string& key, const std::string& value) {
  if (known_keys().find(key) == known_keys().end()) {
    throw ConfigError("unknown config key '" + key + "'");
  }
  kv_[key] = value;
}

bool Config::has(const std::string& key) const { return kv_.find(key) != kv_.end(); }

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const std::int64_t v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + it->second + "'");
  }
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + it->second + "'");
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  if (it->second == "true" || it->second == "1" || it->second == "on") return true;
  if (it->second == "false" || it->second == "0" || it->second == "off") return false;
  throw ConfigError("config key '" + key + "' expects a boolean, got '" + it->second + "'");
}

std::string Config::canonical() const {
  std::ostringstream os;
  for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
  return os.str();
}

std::string Config::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical())));
  return std::string(buf);
}

}  // namespace dcp
