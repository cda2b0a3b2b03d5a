// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dcp/tensor.hpp"

namespace dcp {

/// Ordered record of executed primitive operations. Replaying it backward
/// visits each node exactly once, in strict reverse execution order, and
/// accumulates adjoints into every tensor flagged as requiring gradient.
class Tape {
 public:
  /// The closure reads the output's grad span and accumulates into the
  /// grads of those recorded inputs that require gradient.
  using BackwardFn = std::function<void()>;

  void record(std::string name, std::vector<Tensor> inputs, Tensor output, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Grad slots
  /// of all participating tensors are reset first, so two backward passes
  /// over identical tapes produce bit-identical gradients.
  void backward(const Tensor& loss);

  bool contains(const Tensor& t) const;
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::string name;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
};

}  // namespace dcp
