// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dcp/tensor.hpp"

namespace dcp {

/// An immutable labeled image set. Images are stored normalized; the
/// normalization statistics travel with the data.
struct Dataset {
  Tensor images;  // [N, C, H, W]
  std::vector<std::int64_t> labels;
  std::string split;
  int num_classes = 0;
  std::vector<double> norm_mean;  // per channel
  std::vector<double> norm_std;
  /// Ground-truth informative channels of synthetic data (empty otherwise).
  std::vector<int> informative_channels;

  std::int64_t size() const { return images.defined() ? images.shape().n() : 0; }
};

/// CIFAR-10 binary batch layout: 3,073-byte records, 1 label byte followed
/// by 3,072 pixel bytes in channel-major R,G,B order, each channel a
/// row-major 32x32 plane. Train split reads data_batch_1..5.bin, test split
/// reads test_batch.bin; every file holds exactly 10,000 records.
Dataset load_cifar10(const std::string& dir, const std::string& split);

extern const std::array<double, 3> kCifar10Mean;
extern const std::array<double, 3> kCifar10Std;

enum class SyntheticKind { GaussianBlobs, InformativeChannel };

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::GaussianBlobs;
  std::int64_t count = 256;
  int classes = 2;
  int channels = 3;
  int image_size = 8;
  std::uint64_t seed = 0;
  /// informative-channel parameters
  int informative = 2;       // number of label-carrying channels
  double signal = 1.0;       // class-template amplitude on informative channels
  double noise = 0.25;       // i.i.d. noise everywhere
  double distractor = 0.0;   // extra label-free amplitude on the other channels
};

/// gaussian-blobs: well-separated class clusters in pixel space.
/// informative-channel: only a recorded channel subset carries label signal;
/// each informative channel is an independent noisy vote for the class, so
/// dropping one measurably raises the achievable error.
Dataset make_synthetic(const SyntheticSpec& spec);

/// Class-stratified uniform sample without replacement; per-class counts
/// differ by at most one. Deterministic given the seed.
Dataset sample_subset(const Dataset& ds, std::int64_t count, std::uint64_t seed);

}  // namespace dcp
