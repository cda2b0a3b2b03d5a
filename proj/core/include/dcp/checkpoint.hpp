// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "dcp/network.hpp"

namespace dcp {

/// Provenance carried alongside the weights.
struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string config_hash;
  int epoch = 0;
};

/// Binary container, little-endian throughout:
///
///   magic "DCPCKPT1" (8 bytes) | u32 version=1
///   u32 arch_len | arch bytes | i64 input_shape[4] | i32 num_classes
///   u64 seed | u32 hash_len | hash bytes | i32 epoch
///   u32 node_count, then per node:
///     u8 kind | u8 prunable | u8 block_end
///     i32 stride | i32 padding | i32 window
///     u32 n_inputs | i32 inputs[]
///     u32 select_len | i32 select[]
///     u32 mask_len | u8 mask[]
///     6 tensor slots (weight, gamma, beta, bn_mean, bn_var, theta):
///       u8 present, then i64 shape[4] | u64 count | f64 data[count]
///   u64 footer = total payload bytes written before the footer
///
/// Round trips are bit-exact, including masks and running statistics.
/// A JSON sidecar at <path>.json records provenance for humans.
void save_checkpoint(const NetworkDef& net, const std::string& path, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  NetworkDef net;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace dcp
