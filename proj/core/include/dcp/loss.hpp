// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "dcp/network.hpp"
#include "dcp/ops.hpp"
#include "dcp/tensor.hpp"

namespace dcp {

/// Auxiliary classifier attached at the output of a conv layer: the layer's
/// raw feature maps pass through BN -> ReLU -> global average pool and a
/// linear classifier. BN uses batch statistics during selection (the
/// selection subset is fixed, so they are stable).
struct LossHead {
  int attach_layer = -1;      // conv node index
  int num_classes = 0;
  int channels = 0;           // feature channels at the attachment point
  Tensor gamma, beta;         // head BN parameters [1,channels,1,1]
  BatchNormStats bn;
  Tensor theta;               // [channels, num_classes, 1, 1]

  std::vector<Tensor> parameters() { return {gamma, beta, theta}; }

  /// Pooled features of the attachment activation: gap(relu(bn(x))).
  Tensor features(const Tensor& activation, Mode mode, Tape* tape = nullptr);

  /// Classifier logits [N, num_classes, 1, 1].
  Tensor logits(const Tensor& activation, Mode mode, Tape* tape = nullptr);
};

LossHead build_head(const NetworkDef& net, int attach_layer, int num_classes,
                    std::uint64_t seed);

/// True when every classifier column is (numerically) the same direction,
/// i.e. the head has collapsed and carries no class information.
bool head_is_degenerate(const LossHead& head, double tol = 1e-9);

/// Feature maps of the pristine pre-trained model on a fixed sample subset,
/// keyed by conv node index. Read-only after capture.
struct BaselineCache {
  std::map<int, Tensor> activations;

  const Tensor& at(int layer) const;
};

/// Records the raw conv outputs of every prunable layer. The forward pass
/// uses batch statistics, matching the regime used during selection.
BaselineCache capture_baseline(NetworkDef& net, const Tensor& images);

/// Half mean squared error between a pruned layer's output and the cached
/// baseline feature maps, normalized by Q = N * n * h_out * z_out.
Tensor reconstruction_loss(const Tensor& pruned_out, const BaselineCache& cache, int layer,
                           Tape* tape = nullptr);

/// Cross-entropy of the head classifier on the attachment activation.
Tensor discrimination_loss(LossHead& head, const Tensor& activation,
                           std::span<const std::int64_t> labels, Mode mode,
                           Tape* tape = nullptr);

/// L_M + lambda * L_S; negative lambda rejected.
Tensor joint_loss(const Tensor& reconstruction, const Tensor& discrimination, double lambda,
                  Tape* tape = nullptr);

}  // namespace dcp
