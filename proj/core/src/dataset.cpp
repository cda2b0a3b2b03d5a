// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#include "dcp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "dcp/errors.hpp"
#include "dcp/rng.hpp"

namespace dcp {

const std::array<double, 3> kCifar10Mean = {0.4914, 0.4822, 0.4465};
const std::array<double, 3> kCifar10Std = {0.2470, 0.2435, 0.2616};

namespace {

constexpr std::int64_t kCifarRecordBytes = 3073;
constexpr std::int64_t kCifarRecordsPerFile = 10000;
constexpr std::int64_t kCifarFileBytes = kCifarRecordBytes * kCifarRecordsPerFile;

void read_cifar_file(const std::string& path, Tensor& images, std::vector<std::int64_t>& labels,
                     std::int64_t record_offset) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) {
    throw DataError("cifar-10 batch file not found: " + path);
  }
  const auto size = static_cast<std::int64_t>(fs::file_size(path));
  if (size != kCifarFileBytes) {
    throw DataError("cifar-10 batch file " + path + " has wrong size: expected " +
                    std::to_string(kCifarFileBytes) + " bytes, got " + std::to_string(size));
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open cifar-10 batch file: " + path);

  std::vector<unsigned char> record(kCifarRecordBytes);
  double* img = images.values().data();
  for (std::int64_t r = 0; r < kCifarRecordsPerFile; ++r) {
    in.read(reinterpret_cast<char*>(record.data()), kCifarRecordBytes);
    if (!in) throw DataError("short read in cifar-10 batch file: " + path);
    const unsigned char label = record[0];
    if (label >= 10) {
      throw DataError("cifar-10 record " + std::to_string(r) + " in " + path +
                      " has label byte " + std::to_string(static_cast<int>(label)));
    }
    const std::int64_t sample = record_offset + r;
    labels[static_cast<std::size_t>(sample)] = label;
    double* dst = img + sample * 3 * 32 * 32;
    for (int c = 0; c < 3; ++c) {
      const double mean = kCifar10Mean[static_cast<std::size_t>(c)];
      const double std = kCifar10Std[static_cast<std::size_t>(c)];
      const unsigned char* plane = record.data() + 1 + c * 1024;
      double* out = dst + c * 1024;
      for (int t = 0; t < 1024; ++t) {
        out[t] = (static_cast<double>(plane[t]) / 255.0 - mean) / std;
      }
    }
  }
}

}  // namespace

Dataset load_cifar10(const std::string& dir, const std::string& split) {
  std::vector<std::string> files;
  if (split == "train") {
    for (int i = 1; i <= 5; ++i) files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
  } else if (split == "test") {
    files.push_back(dir + "/test_batch.bin");
  } else {
    throw ConfigError("cifar-10 split must be 'train' or 'test', got '" + split + "'");
  }

  const std::int64_t n = kCifarRecordsPerFile * static_cast<std::int64_t>(files.size());
  Dataset ds;
  ds.images = Tensor::zeros(Shape(n, 3, 32, 32));
  ds.labels.assign(static_cast<std::size_t>(n), 0);
  ds.split = split;
  ds.num_classes = 10;
  ds.norm_mean.assign(kCifar10Mean.begin(), kCifar10Mean.end());
  ds.norm_std.assign(kCifar10Std.begin(), kCifar10Std.end());

  std::int64_t offset = 0;
  for (const auto& f : files) {
    read_cifar_file(f, ds.images, ds.labels, offset);
    offset += kCifarRecordsPerFile;
  }
  return ds;
}

Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.count < 1) throw ConfigError("synthetic dataset needs at least one sample");
  if (spec.classes < 2) throw ConfigError("synthetic dataset needs at least two classes");
  const std::int64_t n = spec.count;
  const int c = spec.channels, hw = spec.image_size;
  const std::int64_t plane = static_cast<std::int64_t>(hw) * hw;

  Dataset ds;
  ds.images = Tensor::zeros(Shape(n, c, hw, hw));
  ds.labels.assign(static_cast<std::size_t>(n), 0);
  ds.num_classes = spec.classes;
  ds.norm_mean.assign(static_cast<std::size_t>(c), 0.0);
  ds.norm_std.assign(static_cast<std::size_t>(c), 1.0);

  RngPool pool(spec.seed);
  std::mt19937_64 rng = pool.stream("data");
  std::normal_distribution<double> normal(0.0, 1.0);

  // Labels cycle through classes so every split is balanced.
  for (std::int64_t i = 0; i < n; ++i) {
    ds.labels[static_cast<std::size_t>(i)] = i % spec.classes;
  }

  double* img = ds.images.values().data();

  if (spec.kind == SyntheticKind::GaussianBlobs) {
    ds.split = "gaussian-blobs";
    // One fixed unit-scale center per class, drawn from the template stream.
    std::mt19937_64 trng = pool.stream("templates");
    std::vector<double> centers(static_cast<std::size_t>(spec.classes * c * plane));
    for (auto& v : centers) v = normal(trng) * spec.signal;
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t y = ds.labels[static_cast<std::size_t>(i)];
      const double* mu = centers.data() + y * c * plane;
      double* dst = img + i * c * plane;
      for (std::int64_t t = 0; t < c * plane; ++t) {
        dst[t] = mu[t] + normal(rng) * spec.noise;
      }
    }
    return ds;
  }

  // informative-channel
  ds.split = "informative-channel";
  const int informative = std::min(spec.informative, c);
  if (informative < 1) throw ConfigError("informative-channel data needs informative >= 1");

  std::mt19937_64 trng = pool.stream("templates");
  // Choose which channels carry signal.
  std::vector<int> all(static_cast<std::size_t>(c));
  for (int k = 0; k < c; ++k) all[static_cast<std::size_t>(k)] = k;
  deterministic_shuffle(all, trng);
  std::vector<int> chosen(all.begin(), all.begin() + informative);
  std::sort(chosen.begin(), chosen.end());
  ds.informative_channels = chosen;
  std::vector<char> is_informative(static_cast<std::size_t>(c), 0);
  for (int k : chosen) is_informative[static_cast<std::size_t>(k)] = 1;

  // Per-(class, channel) unit-norm template; each informative channel is an
  // independent noisy vote for the class.
  std::vector<double> templates(static_cast<std::size_t>(spec.classes * c * plane));
  for (int y = 0; y < spec.classes; ++y) {
    for (int k = 0; k < c; ++k) {
      double* t = templates.data() + (static_cast<std::int64_t>(y) * c + k) * plane;
      double norm_sq = 0.0;
      for (std::int64_t p = 0; p < plane; ++p) {
        t[p] = normal(trng);
        norm_sq += t[p] * t[p];
      }
      const double inv = 1.0 / std::sqrt(std::max(norm_sq, 1e-12));
      for (std::int64_t p = 0; p < plane; ++p) t[p] *= inv;
    }
  }

  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t y = ds.labels[static_cast<std::size_t>(i)];
    double* dst = img + i * c * plane;
    for (int k = 0; k < c; ++k) {
      double* out = dst + static_cast<std::int64_t>(k) * plane;
      if (is_informative[static_cast<std::size_t>(k)]) {
        const double* t = templates.data() + (y * c + k) * plane;
        for (std::int64_t p = 0; p < plane; ++p) {
          out[p] = spec.signal * t[p] + normal(rng) * spec.noise;
        }
      } else {
        // Label-free content; with a large distractor amplitude these
        // channels dominate feature-map energy without carrying signal.
        for (std::int64_t p = 0; p < plane; ++p) {
          out[p] = normal(rng) * (spec.noise + spec.distractor);
        }
      }
    }
  }
  return ds;
}

Dataset sample_subset(const Dataset& ds, std::int64_t count, std::uint64_t seed) {
  const std::int64_t n = ds.size();
  if (count > n) {
    throw ConfigError("sample_subset count " + std::to_string(count) + " exceeds dataset size " +
                      std::to_string(n));
  }
  if (count < 1) throw ConfigError("sample_subset count must be positive");

  const int m = std::max(ds.num_classes, 1);
  std::vector<std::vector<std::int64_t>> by_class(static_cast<std::size_t>(m));
  for (std::int64_t i = 0; i < n; ++i) {
    by_class[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])].push_back(i);
  }

  std::mt19937_64 rng = RngPool(seed).stream("subset");
  for (auto& bucket : by_class) deterministic_shuffle(bucket, rng);

  // Base quota per class, remainder round-robin by class index; classes
  // short on samples hand their shortfall to later classes.
  std::vector<std::int64_t> quota(static_cast<std::size_t>(m), count / m);
  for (std::int64_t k = 0; k < count % m; ++k) quota[static_cast<std::size_t>(k)] += 1;
  std::int64_t shortfall = 0;
  for (int k = 0; k < m; ++k) {
    const auto have = static_cast<std::int64_t>(by_class[static_cast<std::size_t>(k)].size());
    if (quota[static_cast<std::size_t>(k)] > have) {
      shortfall += quota[static_cast<std::size_t>(k)] - have;
      quota[static_cast<std::size_t>(k)] = have;
    }
  }
  for (int k = 0; k < m && shortfall > 0; ++k) {
    const auto have = static_cast<std::int64_t>(by_class[static_cast<std::size_t>(k)].size());
    const std::int64_t extra = std::min(shortfall, have - quota[static_cast<std::size_t>(k)]);
    quota[static_cast<std::size_t>(k)] += extra;
    shortfall -= extra;
  }

  std::vector<std::int64_t> picked;
  picked.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < m; ++k) {
    const auto& bucket = by_class[static_cast<std::size_t>(k)];
    for (std::int64_t t = 0; t < quota[static_cast<std::size_t>(k)]; ++t) {
      picked.push_back(bucket[static_cast<std::size_t>(t)]);
    }
  }

  const Shape& s = ds.images.shape();
  const std::int64_t inner = s.c() * s.h() * s.w();
  Dataset out;
  out.images = Tensor::zeros(Shape(count, s.c(), s.h(), s.w()));
  out.labels.reserve(picked.size());
  out.split = ds.split + "/subset";
  out.num_classes = ds.num_classes;
  out.norm_mean = ds.norm_mean;
  out.norm_std = ds.norm_std;
  out.informative_channels = ds.informative_channels;

  const double* src = ds.images.values().data();
  double* dst = out.images.values().data();
  for (std::size_t r = 0; r < picked.size(); ++r) {
    const double* from = src + picked[r] * inner;
    double* to = dst + static_cast<std::int64_t>(r) * inner;
    for (std::int64_t i = 0; i < inner; ++i) to[i] = from[i];
    out.labels.push_back(ds.labels[static_cast<std::size_t>(picked[r])]);
  }
  return out;
}

}  // namespace dcp
