// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Single-conv-layer selection instances with 1x1 kernels and 1x1 spatial
// extent, so the whole joint objective has a small closed form that the
// tests re-derive independently of the library (toyside_joint_loss).

#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "dcp/loss.hpp"
#include "dcp/network.hpp"
#include "dcp/rng.hpp"
#include "oracles.hpp"

namespace toy {

struct SingleLayerInstance {
  dcp::NetworkDef net;   // exactly one conv node, weight [n_out, c, 1, 1]
  dcp::Tensor images;    // [N, c, 1, 1], channels orthonormal over samples
  std::vector<std::int64_t> labels;
  dcp::LossHead head;
  dcp::BaselineCache cache;  // baseline = conv(images, w_star)
  dcp::Tensor w_star;
  std::vector<double> column_scale;  // per-channel planted magnitude
  int strongest = 0;                 // channel with the largest magnitude
  double lambda = 1.0;
};

// Channels are orthonormalized over the sample dimension (then rescaled to
// unit RMS), so per-channel contributions to the reconstruction decouple and
// gradient-magnitude ranking provably agrees with single-channel loss drop.
inline SingleLayerInstance make_orthogonal_instance(std::uint64_t seed, int channels,
                                                    int outputs, std::int64_t samples,
                                                    double lambda = 1.0) {
  SingleLayerInstance inst;
  inst.lambda = lambda;
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + 12345);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Gram-Schmidt over samples.
  std::vector<std::vector<double>> cols(static_cast<std::size_t>(channels),
                                        std::vector<double>(static_cast<std::size_t>(samples)));
  for (auto& col : cols) {
    for (auto& v : col) v = normal(rng);
  }
  for (int k = 0; k < channels; ++k) {
    auto& ck = cols[static_cast<std::size_t>(k)];
    for (int p = 0; p < k; ++p) {
      const auto& cp = cols[static_cast<std::size_t>(p)];
      double dot = 0.0;
      for (std::int64_t i = 0; i < samples; ++i)
        dot += ck[static_cast<std::size_t>(i)] * cp[static_cast<std::size_t>(i)];
      for (std::int64_t i = 0; i < samples; ++i)
        ck[static_cast<std::size_t>(i)] -= dot * cp[static_cast<std::size_t>(i)];
    }
    double norm = 0.0;
    for (double v : ck) norm += v * v;
    norm = std::sqrt(norm);
    for (auto& v : ck) v /= norm;
  }
  // unit RMS per channel
  inst.images = dcp::Tensor::zeros(dcp::Shape(samples, channels, 1, 1));
  for (std::int64_t i = 0; i < samples; ++i) {
    for (int k = 0; k < channels; ++k) {
      inst.images.at(i, k, 0, 0) =
          cols[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] *
          std::sqrt(static_cast<double>(samples));
    }
  }

  // Planted weights with well-separated column magnitudes.
  inst.column_scale.resize(static_cast<std::size_t>(channels));
  inst.w_star = dcp::Tensor::zeros(dcp::Shape(outputs, channels, 1, 1));
  for (int k = 0; k < channels; ++k) {
    inst.column_scale[static_cast<std::size_t>(k)] = 2.2 / std::pow(1.8, k);
  }
  // shuffle which channel is strongest
  std::vector<int> perm(static_cast<std::size_t>(channels));
  for (int k = 0; k < channels; ++k) perm[static_cast<std::size_t>(k)] = k;
  dcp::deterministic_shuffle(perm, rng);
  std::vector<double> scale(static_cast<std::size_t>(channels));
  for (int k = 0; k < channels; ++k) {
    scale[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])] =
        inst.column_scale[static_cast<std::size_t>(k)];
  }
  inst.column_scale = scale;
  inst.strongest = perm[0];
  for (int j = 0; j < outputs; ++j) {
    for (int k = 0; k < channels; ++k) {
      double direction = normal(rng);
      direction += direction >= 0 ? 0.5 : -0.5;  // keep columns away from zero
      inst.w_star.at(j, k, 0, 0) = inst.column_scale[static_cast<std::size_t>(k)] * direction /
                                   std::sqrt(static_cast<double>(outputs));
    }
  }

  // Labels follow the sign of the strongest channel.
  inst.labels.resize(static_cast<std::size_t>(samples));
  for (std::int64_t i = 0; i < samples; ++i) {
    inst.labels[static_cast<std::size_t>(i)] = inst.images.at(i, inst.strongest, 0, 0) > 0 ? 1 : 0;
  }

  // Host network: a single 1x1 conv initialized at the planted weights.
  inst.net.arch = "single-layer";
  inst.net.input_shape = dcp::Shape(1, channels, 1, 1);
  inst.net.num_classes = 2;
  dcp::LayerNode conv;
  conv.kind = dcp::LayerKind::Conv;
  conv.inputs = {-1};
  conv.weight = inst.w_star.clone();
  conv.input_mask.assign(static_cast<std::size_t>(channels), 1);
  conv.prunable = true;
  conv.block_end = true;
  inst.net.nodes.push_back(conv);

  inst.cache.activations.emplace(0, oracle::conv2d_reference(inst.images, inst.w_star, 1, 0));
  inst.head = dcp::build_head(inst.net, 0, 2, seed);
  return inst;
}

// Independent evaluation of the joint objective for the 1x1 instance:
// conv as a plain matrix product, batch-stat BN, ReLU, linear classifier,
// cross-entropy, all with raw loops.
inline double toyside_joint_loss(const SingleLayerInstance& inst, const dcp::Tensor& w) {
  const std::int64_t n = inst.images.shape().n();
  const std::int64_t c = inst.images.shape().c();
  const std::int64_t m = w.shape().n();
  const dcp::Tensor& baseline = inst.cache.activations.at(0);

  std::vector<std::vector<double>> out(static_cast<std::size_t>(n),
                                       std::vector<double>(static_cast<std::size_t>(m), 0.0));
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::int64_t k = 0; k < c; ++k) {
        acc += inst.images.at(i, k, 0, 0) * w.at(j, k, 0, 0);
      }
      out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = acc;
    }
  }

  double rec = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < m; ++j) {
      const double d = out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] -
                       baseline.at(i, j, 0, 0);
      rec += d * d;
    }
  }
  rec /= 2.0 * static_cast<double>(n * m);

  // head: batch-stat BN over samples, ReLU, identity pool, classifier
  const double eps = 1e-5;
  std::vector<double> feat(static_cast<std::size_t>(n * m), 0.0);
  for (std::int64_t j = 0; j < m; ++j) {
    double mu = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
      mu += out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double d = out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    const double gamma = inst.head.gamma.values()[static_cast<std::size_t>(j)];
    const double beta = inst.head.beta.values()[static_cast<std::size_t>(j)];
    for (std::int64_t i = 0; i < n; ++i) {
      const double y =
          gamma * (out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] - mu) * is + beta;
      feat[static_cast<std::size_t>(i * m + j)] = y > 0.0 ? y : 0.0;
    }
  }

  double ce = 0.0;
  const std::int64_t classes = inst.head.theta.shape().c();
  for (std::int64_t i = 0; i < n; ++i) {
    std::vector<double> logits(static_cast<std::size_t>(classes), 0.0);
    for (std::int64_t t = 0; t < classes; ++t) {
      double acc = 0.0;
      for (std::int64_t j = 0; j < m; ++j) {
        acc += feat[static_cast<std::size_t>(i * m + j)] * inst.head.theta.at(j, t, 0, 0);
      }
      logits[static_cast<std::size_t>(t)] = acc;
    }
    double denom = 0.0;
    for (double z : logits) denom += std::exp(z);
    ce += -std::log(std::exp(logits[static_cast<std::size_t>(
               inst.labels[static_cast<std::size_t>(i)])]) / denom);
  }
  ce /= static_cast<double>(n);

  return rec + inst.lambda * ce;
}

// Best achievable joint loss with support restricted to one channel,
// minimized by test-side gradient descent with finite-difference gradients.
inline double oracle_single_channel_loss(const SingleLayerInstance& inst, int channel,
                                         int steps = 250, double lr = 0.5) {
  dcp::Tensor w = dcp::Tensor::zeros(inst.w_star.shape());
  const std::int64_t m = w.shape().n();
  for (std::int64_t j = 0; j < m; ++j) {
    w.at(j, channel, 0, 0) = inst.w_star.at(j, channel, 0, 0);
  }
  double best = toyside_joint_loss(inst, w);
  const double h = 1e-6;
  for (int s = 0; s < steps; ++s) {
    for (std::int64_t j = 0; j < m; ++j) {
      const double saved = w.at(j, channel, 0, 0);
      w.at(j, channel, 0, 0) = saved + h;
      const double up = toyside_joint_loss(inst, w);
      w.at(j, channel, 0, 0) = saved - h;
      const double down = toyside_joint_loss(inst, w);
      w.at(j, channel, 0, 0) = saved - lr * (up - down) / (2.0 * h);
    }
    best = std::min(best, toyside_joint_loss(inst, w));
  }
  return best;
}

}  // namespace toy
