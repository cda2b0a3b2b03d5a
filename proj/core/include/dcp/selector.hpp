// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <vector>

#include "dcp/loss.hpp"
#include "dcp/network.hpp"

namespace dcp {

/// Number of channels KEPT for a layer with `channels` inputs at the given
/// keep ratio: ceil(keep_ratio * channels). A table entry like "prune 30%"
/// corresponds to keep_ratio = 0.7.
int channel_budget(int channels, double keep_ratio);

enum class StopMode { Budget, Tolerance, WhicheverFirst };

struct StopRule {
  StopMode mode = StopMode::Budget;
  int budget = 0;          // channel budget (kept count)
  double tolerance = 0.0;  // relative loss-improvement threshold

  void validate(int channels) const;
};

/// Greedy bookkeeping: the active set A in insertion order, the loss
/// trajectory L(W^0..W^t) on the full selection subset, and the
/// per-channel gradient norms of the most recent ranking pass.
struct SelectionState {
  std::vector<int> selected;
  int iterations = 0;
  std::vector<double> loss_history;
  std::vector<double> grad_norms;
};

/// True when the budget is met (|A| >= budget), the relative improvement
/// |L(W^{t-1}) - L(W^t)| / L(W^0) falls below the tolerance, or either,
/// depending on the rule's mode.
bool should_stop(const SelectionState& state, const StopRule& rule);

enum class JointMode { Full, ReconstructionOnly, DiscriminationOnly };

/// Count of input-channel weight slices that are not identically zero.
std::int64_t l20_norm(const Tensor& conv_weight);

/// One layer's selection problem: the (already pruned and fine-tuned) model,
/// the stage's loss head (nullptr means the network's own final loss), the
/// baseline feature-map cache, and the fixed selection subset. Prefix
/// activations up to the target layer are cached once at construction; every
/// evaluation resumes from them.
class SelectionContext {
 public:
  SelectionContext(NetworkDef& net, int layer, LossHead* head, const BaselineCache* cache,
                   const Tensor& images, const std::vector<std::int64_t>& labels, double lambda,
                   JointMode mode);
  ~SelectionContext();

  SelectionContext(const SelectionContext&) = delete;
  SelectionContext& operator=(const SelectionContext&) = delete;

  /// Joint loss on the full selection subset at the current weights.
  double evaluate();

  /// Joint loss + gradient w.r.t. the target layer's weight on the full
  /// subset; the gradient remains in the weight's grad slot.
  double evaluate_with_gradient();

  /// Joint loss on a row subset of the selection samples, recorded on the
  /// given tape (used for inner SGD steps).
  Tensor batch_loss(const std::vector<std::int64_t>& rows, Tape* tape);

  NetworkDef& net() { return net_; }
  int layer() const { return layer_; }
  int channel_count() const;
  Tensor& weight();
  std::int64_t sample_count() const { return images_.shape().n(); }

 private:
  NetworkDef& net_;
  int layer_;
  LossHead* head_;
  const BaselineCache* cache_;
  const Tensor& images_;
  const std::vector<std::int64_t>& labels_;
  double lambda_;
  JointMode mode_;
  int loss_node_;                     // node producing the discrimination activation
  std::map<int, Tensor> frontier_;    // cached activations feeding [layer, loss_node]
  Tensor baseline_rows_;              // baseline feature maps at the target layer
  bool saved_weight_rg_;

  Tensor joint_on(const std::map<int, Tensor>& frontier, const Tensor& images,
                  const std::vector<std::int64_t>& labels, const Tensor& baseline, Tape* tape);
};

/// Evaluates the joint loss with the current weights, backpropagates, and
/// returns argmax_{j not in exclude} ||G_j||_F, ties broken by the smallest
/// index. Per-channel norms are written to `norms` when provided.
int rank_channels(SelectionContext& ctx, const std::vector<int>& exclude,
                  std::vector<double>* norms = nullptr);

/// SGD on the active columns of the target layer's weight; the complement
/// stays exactly zero. Returns the joint loss on the full selection subset
/// after the steps. Aborts with a diagnostic when the loss exceeds 10x the
/// entry value for three consecutive evaluations.
double optimize_active(SelectionContext& ctx, const std::vector<int>& active, double gamma,
                       int inner_steps, int batch, std::mt19937_64& rng);

struct SelectOptions {
  double gamma = 0.01;
  int inner_steps = 20;
  int batch = 64;
  std::uint64_t seed = 0;
  /// Optional replacement for gradient ranking (baseline strategies).
  /// Receives the current active set; must return a channel not in it.
  std::function<int(const std::vector<int>&)> picker;
};

/// Full greedy loop: rank (or pick), restore the chosen column from the
/// warm-start weights when that does not increase the loss, optimize the
/// active set, and stop per the rule. On return the layer's weight holds
/// the optimized W_A with W_{A^c} exactly zero.
SelectionState select_channels(SelectionContext& ctx, const StopRule& rule,
                               const SelectOptions& opts);

}  // namespace dcp
