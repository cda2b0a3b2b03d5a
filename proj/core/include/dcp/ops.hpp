// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dcp/tape.hpp"
#include "dcp/tensor.hpp"

namespace dcp {

/// Every operator takes an optional tape. With a tape, the node is recorded
/// whenever some input requires gradient; the output's requires_grad flag is
/// set accordingly. Without a tape the call is pure forward arithmetic.
/// All accumulation orders are fixed, so results are bit-reproducible.

/// 2-D cross-correlation without bias: out[i,j] = sum_k in[i,k] * w[j,k].
Tensor conv2d(const Tensor& input, const Tensor& weight, int stride, int padding,
              Tape* tape = nullptr);

/// Running statistics of a batch-norm layer, shape [1,C,1,1] each.
struct BatchNormStats {
  Tensor mean;
  Tensor var;
};

enum class BatchNormMode {
  Training,  // batch statistics; updates running stats when provided
  Batch,     // batch statistics; running stats untouched
  Inference, // running statistics (required)
};

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormStats* running, BatchNormMode mode, double eps,
                  double momentum, Tape* tape = nullptr);

Tensor relu(const Tensor& input, Tape* tape = nullptr);

Tensor max_pool(const Tensor& input, int window, int stride, Tape* tape = nullptr);

/// Per-(sample, channel) arithmetic mean over the spatial extent.
Tensor global_avg_pool(const Tensor& input, Tape* tape = nullptr);

/// input [N,d,1,1] x theta [d,m,1,1] -> [N,m,1,1]; no bias term.
Tensor fully_connected(const Tensor& input, const Tensor& theta, Tape* tape = nullptr);

/// Mean over samples of -log softmax(logits)[label]; max-stabilized.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int64_t> labels,
                             Tape* tape = nullptr);

/// (1 / 2Q) * sum of squared differences over all entries.
Tensor mean_squared_half(const Tensor& a, const Tensor& b, std::int64_t q,
                         Tape* tape = nullptr);

/// Elementwise helpers used for residual connections and composite losses.
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul_scalar(const Tensor& a, double s, Tape* tape = nullptr);
Tensor sum(const Tensor& a, Tape* tape = nullptr);

/// Gathers the given channel indices of a [N,C,H,W] tensor.
Tensor channel_gather(const Tensor& input, const std::vector<int>& channels,
                      Tape* tape = nullptr);

/// In-place W <- W - lr * dW for every parameter; missing grads rejected.
void sgd_step(std::span<Tensor> params, double lr);

}  // namespace dcp
