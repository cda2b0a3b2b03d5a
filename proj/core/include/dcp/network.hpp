// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dcp/ops.hpp"
#include "dcp/tensor.hpp"

namespace dcp {

enum class LayerKind : std::uint8_t {
  Conv = 0,
  BatchNorm = 1,
  ReLU = 2,
  MaxPool = 3,
  GlobalAvgPool = 4,
  FullyConnected = 5,
  ResidualAdd = 6,
};

std::string layer_kind_name(LayerKind k);

/// One node of the layer graph. `inputs` holds producer node indices;
/// -1 denotes the network input. Only ResidualAdd has two producers.
struct LayerNode {
  LayerKind kind = LayerKind::Conv;
  std::vector<int> inputs{-1};

  // conv
  Tensor weight;                        // [n, c, fh, fw]
  int stride = 1;
  int padding = 0;
  std::vector<std::uint8_t> input_mask; // length c, 1 = keep
  std::vector<int> input_select;        // compacted gather indices (empty = identity)
  bool prunable = false;
  bool block_end = false;               // eligible loss-head attachment point

  // batchnorm
  Tensor gamma, beta;
  BatchNormStats bn;

  // maxpool
  int window = 0;

  // fully connected
  Tensor theta;                         // [d, m, 1, 1]

  /// Number of input channels the conv weight expects (post-compaction width).
  std::int64_t conv_in_channels() const { return weight.shape().c(); }
  std::int64_t kept_channels() const;
};

/// Ordered layer graph in topological order, validated at construction.
struct NetworkDef {
  std::string arch;
  Shape input_shape;  // [1, C, H, W]; the batch extent is free
  int num_classes = 0;
  std::vector<LayerNode> nodes;

  std::vector<int> conv_layers() const;
  std::vector<int> prunable_layers() const;
  /// Node indices whose outputs are read by each node (plus the network
  /// output counts as one consumer of the last node).
  std::vector<int> consumer_counts() const;
  /// All learnable parameter tensors in graph order.
  std::vector<Tensor> parameters();

  /// Checks topological order and consecutive shape compatibility.
  void validate() const;
};

/// Per-node output shapes for a given network input shape (batch = 1).
std::vector<Shape> infer_shapes(const NetworkDef& net);

/// Builds one of the named architectures. Weights use fan-in scaled normal
/// initialization; BN starts at gamma=1, beta=0 with unit running variance.
NetworkDef build_architecture(const std::string& name, int num_classes,
                              int in_channels = 3, int image_size = 32,
                              std::uint64_t seed = 0);

enum class Mode { Train, Eval, Batch };

struct ForwardOptions {
  int upto = -1;         // node index; -1 = final node
  Mode mode = Mode::Eval;
  Tape* tape = nullptr;
};

/// Runs the graph and returns the output of node `upto`. When
/// `activations` is non-null it receives every node output (cleared first).
Tensor forward(NetworkDef& net, const Tensor& input, const ForwardOptions& opts = {},
               std::vector<Tensor>* activations = nullptr);

/// Runs nodes [first_node, upto] reading producers before first_node from
/// `cached` (node index -> activation). Used to resume from cached
/// activations during channel selection.
Tensor forward_range(NetworkDef& net, int first_node, int upto,
                     const std::map<int, Tensor>& cached, const Tensor& input,
                     Mode mode, Tape* tape = nullptr,
                     std::vector<Tensor>* activations = nullptr);

/// Restricts conv layer `layer` to the kept channel set; the complement's
/// weight columns are zeroed exactly. The mask doubles as the removability
/// flag consumed by compact().
void apply_mask(NetworkDef& net, int layer, const std::vector<int>& keep);

/// Physically deletes masked channels. Filters of an exclusively-consumed
/// upstream conv (and the per-channel entries of BN nodes in between) are
/// deleted too; shared producers (block inputs, the image) get a gather.
NetworkDef compact(const NetworkDef& net);

/// Deep copy (fresh tensor storage).
NetworkDef clone_network(const NetworkDef& net);

/// Total unmasked learnable scalars: conv weights, BN gamma/beta, FC theta.
std::int64_t count_params(const NetworkDef& net);

/// Multiply-accumulate operations of conv and fully-connected layers for
/// one sample at the given input shape; see flops_convention().
std::int64_t count_flops(const NetworkDef& net);
const char* flops_convention();

}  // namespace dcp
