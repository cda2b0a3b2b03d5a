// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace dcp {

/// FNV-1a hash, used to derive named sub-streams from one master seed.
std::uint64_t fnv1a64(std::string_view text);

/// All randomness in a run flows from one seed through named streams
/// ("init", "subset", "selection", "shuffle", ...), so changing one
/// stage of an experiment never perturbs the others.
class RngPool {
 public:
  explicit RngPool(std::uint64_t seed) : seed_(seed) {}

  /// Deterministic generator for the given stream name.
  std::mt19937_64 stream(std::string_view name) const;

  std::uint64_t seed() const { return seed_; }

  /// Seed value for a named sub-stream (for handing to other components).
  std::uint64_t stream_seed(std::string_view name) const;

 private:
  std::uint64_t seed_;
};

/// Uniform integer in [0, bound) by rejection sampling; avoids the
/// implementation-defined behavior of std::uniform_int_distribution.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound);

/// In-place Fisher-Yates shuffle with a fixed visitation order.
template <typename T>
void deterministic_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace dcp
