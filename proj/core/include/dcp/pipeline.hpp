// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dcp/dataset.hpp"
#include "dcp/loss.hpp"
#include "dcp/network.hpp"
#include "dcp/selector.hpp"

namespace dcp {

/// Placement of the auxiliary loss heads. `stages[p].head_layer` is the conv
/// node the p-th head attaches to; -1 marks the final stage, which uses the
/// network's own classifier loss. `layers` lists the prunable conv nodes the
/// stage selects channels for, in ascending depth order.
struct StagePlan {
  struct Stage {
    int head_layer = -1;
    std::vector<int> layers;
  };
  std::vector<Stage> stages;  // size num_heads + 1
};

/// Distributes heads over block-end conv layers so per-stage prunable-layer
/// counts are as even as the attachment points allow; the last head sits at
/// the final prunable block end, and the final-loss stage covers whatever
/// remains (usually nothing).
StagePlan plan_stages(const NetworkDef& net, int num_heads);

enum class Strategy : std::uint8_t {
  Dcp,
  Random,
  WeightSum,
  ReconstructionOnly,   // joint loss reduces to the reconstruction term
  DiscriminationOnly,   // joint loss reduces to the discrimination term
};

Strategy strategy_from_string(const std::string& s);
std::string strategy_name(Strategy s);

struct PruneConfig {
  double lambda = 1.0;
  double epsilon = 0.01;
  double keep_ratio = 0.7;
  StopMode stop = StopMode::Budget;
  int heads = 0;  // 0 = auto: 2 for <= 20 prunable layers, else 3
  Strategy strategy = Strategy::Dcp;

  double select_gamma = 0.01;
  int select_steps = 20;
  int select_batch = 64;
  std::int64_t subset = 1000;

  int finetune_epochs = 2;
  double finetune_lr = 0.01;
  double finetune_decay = 1.0;  // per-iteration learning-rate multiplier
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int finetune_batch = 64;
  int final_finetune_epochs = 4;

  std::uint64_t seed = 0;

  void validate() const;
};

struct FinetuneOptions {
  int epochs = 1;
  double lr = 0.01;
  double decay = 1.0;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch = 64;
};

/// Momentum SGD with L2 weight decay (nesterov form). Gradients of masked
/// weight columns must be zeroed by the caller before step().
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, double momentum, double weight_decay);
  void step(double lr);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
  double weight_decay_;
};

/// Zeroes the gradient columns of masked-off channels so fine-tuning keeps
/// W_{A^c} exactly zero.
void zero_masked_grads(NetworkDef& net);

/// One stage of the alternating fine-tune: per mini-batch, a gradient step
/// on the auxiliary head loss followed by a gradient step on the final loss
/// (head == nullptr runs final-loss steps only), with the learning rate
/// multiplied by `decay` after each iteration. All network parameters and
/// the head parameters are updated. Returns the final learning rate.
double finetune_stage(NetworkDef& net, LossHead* head, const Dataset& data,
                      const FinetuneOptions& opts, std::uint64_t seed,
                      const std::string& stream_tag);

struct TrainConfig {
  int epochs = 10;
  double lr = 0.05;
  double lr_decay = 1.0;  // per-epoch multiplier
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch = 64;
  std::uint64_t seed = 0;
};

/// From-scratch training on the final loss; returns the last-epoch mean loss.
double train_baseline(NetworkDef& net, const Dataset& train, const TrainConfig& cfg);

struct EvalMetrics {
  double top1_error = 0.0;
  double top5_error = 0.0;
  bool has_top5 = false;
  std::int64_t count = 0;
};

/// Deterministic eval-mode classification error; top-5 reported when the
/// class count is at least five.
EvalMetrics evaluate(NetworkDef& net, const Dataset& data, int batch = 256);

/// Uniform count-subset of [0, channels) without replacement, ascending.
std::vector<int> select_random(int channels, int count, std::uint64_t seed);

/// The count input channels with the largest sum of absolute weights,
/// ascending. Ties keep the smaller channel index.
std::vector<int> select_weight_sum(const Tensor& conv_weight, int count);

struct LayerRecord {
  int layer = 0;
  int channels = 0;
  int kept = 0;
  std::int64_t l20 = 0;
  double loss_first = 0.0;
  double loss_last = 0.0;
  int iterations = 0;
};

struct DcpReport {
  std::vector<LayerRecord> layers;
  std::int64_t params_before = 0;
  std::int64_t params_after = 0;
  std::int64_t flops_before = 0;
  std::int64_t flops_after = 0;
  double error_before = 0.0;
  double error_after = 0.0;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::string strategy;
};

/// The stage-wise pruning procedure: per stage, build the head, fine-tune
/// with the head and final losses, select channels for every layer of the
/// stage, then fine-tune the whole masked network once all stages are done.
/// `net` ends up masked and fine-tuned; the report's after-counts come from
/// its compacted form.
DcpReport run_dcp(NetworkDef& net, const Dataset& train, const Dataset& test,
                  const PruneConfig& cfg);

}  // namespace dcp
