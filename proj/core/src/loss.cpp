// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#include "dcp/loss.hpp"

#include <cmath>
#include <random>
#include <string>

#include "dcp/errors.hpp"
#include "dcp/rng.hpp"

namespace dcp {

namespace {
constexpr double kHeadBnEps = 1e-5;
constexpr double kHeadBnMomentum = 0.9;

BatchNormMode head_bn_mode(Mode m) {
  switch (m) {
    case Mode::Train: return BatchNormMode::Training;
    case Mode::Batch: return BatchNormMode::Batch;
    case Mode::Eval: return BatchNormMode::Inference;
  }
  return BatchNormMode::Inference;
}
}  // namespace

Tensor LossHead::features(const Tensor& activation, Mode mode, Tape* tape) {
  if (activation.shape().c() != channels) {
    throw ShapeError("loss head expects " + std::to_string(channels) + " channels, activation is " +
                     activation.shape().str());
  }
  Tensor normed = batch_norm(activation, gamma, beta, &bn, head_bn_mode(mode), kHeadBnEps,
                             kHeadBnMomentum, tape);
  Tensor rectified = relu(normed, tape);
  return global_avg_pool(rectified, tape);
}

Tensor LossHead::logits(const Tensor& activation, Mode mode, Tape* tape) {
  return fully_connected(features(activation, mode, tape), theta, tape);
}

LossHead build_head(const NetworkDef& net, int attach_layer, int num_classes,
                    std::uint64_t seed) {
  if (attach_layer < 0 || attach_layer >= static_cast<int>(net.nodes.size())) {
    throw ShapeError("build_head attach layer " + std::to_string(attach_layer) +
                     " beyond final layer " + std::to_string(net.nodes.size() - 1));
  }
  const LayerNode& node = net.nodes[static_cast<std::size_t>(attach_layer)];
  if (node.kind != LayerKind::Conv) {
    throw ShapeError("build_head attach layer " + std::to_string(attach_layer) + " is " +
                     layer_kind_name(node.kind) + ", not conv");
  }
  const int channels = static_cast<int>(node.weight.shape().n());

  LossHead head;
  head.attach_layer = attach_layer;
  head.num_classes = num_classes;
  head.channels = channels;
  head.gamma = Tensor::full(Shape(1, channels, 1, 1), 1.0);
  head.beta = Tensor::zeros(Shape(1, channels, 1, 1));
  head.bn.mean = Tensor::zeros(Shape(1, channels, 1, 1));
  head.bn.var = Tensor::full(Shape(1, channels, 1, 1), 1.0);

  head.theta = Tensor::zeros(Shape(channels, num_classes, 1, 1));
  std::mt19937_64 rng =
      RngPool(seed).stream("head/" + std::to_string(attach_layer));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / channels));
  for (auto& v : head.theta.values()) v = dist(rng);
  return head;
}

bool head_is_degenerate(const LossHead& head, double tol) {
  const std::int64_t d = head.theta.shape().n();
  const std::int64_t m = head.theta.shape().c();
  if (m < 2) return true;
  const double* th = head.theta.values().data();
  for (std::int64_t t = 1; t < m; ++t) {
    for (std::int64_t k = 0; k < d; ++k) {
      if (std::abs(th[k * m + t] - th[k * m]) > tol) return false;
    }
  }
  return true;
}

const Tensor& BaselineCache::at(int layer) const {
  auto it = activations.find(layer);
  if (it == activations.end()) {
    throw DataError("baseline cache has no entry for layer " + std::to_string(layer));
  }
  return it->second;
}

BaselineCache capture_baseline(NetworkDef& net, const Tensor& images) {
  std::vector<Tensor> acts;
  forward(net, images, ForwardOptions{.upto = -1, .mode = Mode::Batch, .tape = nullptr}, &acts);
  BaselineCache cache;
  for (int l : net.prunable_layers()) {
    cache.activations.emplace(l, acts[static_cast<std::size_t>(l)]);
  }
  return cache;
}

Tensor reconstruction_loss(const Tensor& pruned_out, const BaselineCache& cache, int layer,
                           Tape* tape) {
  const Tensor& baseline = cache.at(layer);
  if (!(baseline.shape() == pruned_out.shape())) {
    throw ShapeError("reconstruction_loss shape mismatch at layer " + std::to_string(layer) +
                     ": pruned " + pruned_out.shape().str() + " vs baseline " +
                     baseline.shape().str());
  }
  return mean_squared_half(pruned_out, baseline, pruned_out.numel(), tape);
}

Tensor discrimination_loss(LossHead& head, const Tensor& activation,
                           std::span<const std::int64_t> labels, Mode mode, Tape* tape) {
  Tensor z = head.logits(activation, mode, tape);
  return softmax_cross_entropy(z, labels, tape);
}

Tensor joint_loss(const Tensor& reconstruction, const Tensor& discrimination, double lambda,
                  Tape* tape) {
  if (lambda < 0.0) throw ConfigError("joint_loss lambda must be non-negative");
  return add(reconstruction, mul_scalar(discrimination, lambda, tape), tape);
}

}  // namespace dcp
