// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#include "dcp/tape.hpp"

#include "dcp/errors.hpp"

namespace dcp {

void Tape::record(std::string name, std::vector<Tensor> inputs, Tensor output, BackwardFn fn) {
  nodes_.push_back(Node{std::move(name), std::move(inputs), std::move(output), std::move(fn)});
}

bool Tape::contains(const Tensor& t) const {
  for (const auto& node : nodes_) {
    if (node.output.id() == t.id()) return true;
  }
  return false;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + loss.shape().str());
  }
  if (!contains(loss)) {
    throw ShapeError("loss tensor is not recorded on this tape");
  }

  for (auto& node : nodes_) {
    node.output.ensure_zero_grad();
    for (auto& in : node.inputs) {
      if (in.requires_grad()) in.ensure_zero_grad();
    }
  }

  Tensor seed = loss;
  seed.grad()[0] = 1.0;

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->fn();
  }
}

}  // namespace dcp
