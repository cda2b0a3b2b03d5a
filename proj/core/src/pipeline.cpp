// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#include "dcp/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "dcp/errors.hpp"
#include "dcp/rng.hpp"

namespace dcp {

StagePlan plan_stages(const NetworkDef& net, int num_heads) {
  const std::vector<int> prunable = net.prunable_layers();
  const int total = static_cast<int>(prunable.size());
  if (num_heads < 1) throw ConfigError("plan_stages requires at least one head");
  if (num_heads >= total) {
    throw ConfigError("cannot place " + std::to_string(num_heads) + " heads over " +
                      std::to_string(total) + " prunable layers");
  }

  // Attachment candidates with their cumulative prunable-layer counts.
  std::vector<int> eligible;          // node index
  std::vector<int> cumulative;        // prunable layers up to and including it
  {
    int cum = 0;
    for (int l : prunable) {
      cum += 1;
      if (net.nodes[static_cast<std::size_t>(l)].block_end) {
        eligible.push_back(l);
        cumulative.push_back(cum);
      }
    }
  }
  if (static_cast<int>(eligible.size()) < num_heads) {
    throw ConfigError("cannot place " + std::to_string(num_heads) + " heads: only " +
                      std::to_string(eligible.size()) + " attachment points");
  }

  std::vector<int> boundaries;  // indices into eligible
  int prev = -1;
  for (int p = 1; p <= num_heads; ++p) {
    if (p == num_heads) {
      boundaries.push_back(static_cast<int>(eligible.size()) - 1);
      break;
    }
    const double target = static_cast<double>(total) * p / num_heads;
    int best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    const int slots_needed = num_heads - p;  // eligible points that must remain after
    for (int e = prev + 1; e < static_cast<int>(eligible.size()) - slots_needed; ++e) {
      const double dist = std::abs(static_cast<double>(cumulative[static_cast<std::size_t>(e)]) -
                                   target);
      // <= so ties prefer the deeper attachment point
      if (dist <= best_dist) {
        best = e;
        best_dist = dist;
      }
    }
    if (best < 0) best = prev + 1;
    boundaries.push_back(best);
    prev = best;
  }

  StagePlan plan;
  int layer_cursor = 0;
  for (int b : boundaries) {
    StagePlan::Stage stage;
    stage.head_layer = eligible[static_cast<std::size_t>(b)];
    while (layer_cursor < total && prunable[static_cast<std::size_t>(layer_cursor)] <=
                                       stage.head_layer) {
      stage.layers.push_back(prunable[static_cast<std::size_t>(layer_cursor)]);
      ++layer_cursor;
    }
    plan.stages.push_back(std::move(stage));
  }
  StagePlan::Stage final_stage;
  final_stage.head_layer = -1;
  while (layer_cursor < total) {
    final_stage.layers.push_back(prunable[static_cast<std::size_t>(layer_cursor)]);
    ++layer_cursor;
  }
  plan.stages.push_back(std::move(final_stage));
  return plan;
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "dcp") return Strategy::Dcp;
  if (s == "random") return Strategy::Random;
  if (s == "weight-sum") return Strategy::WeightSum;
  if (s == "dcp-lambda0") return Strategy::ReconstructionOnly;
  if (s == "dcp-ls-only") return Strategy::DiscriminationOnly;
  throw ConfigError("unknown pruning strategy '" + s +
                    "' (expected dcp | random | weight-sum | dcp-lambda0 | dcp-ls-only)");
}

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Dcp: return "dcp";
    case Strategy::Random: return "random";
    case Strategy::WeightSum: return "weight-sum";
    case Strategy::ReconstructionOnly: return "dcp-lambda0";
    case Strategy::DiscriminationOnly: return "dcp-ls-only";
  }
  return "unknown";
}

void PruneConfig::validate() const {
  if (lambda < 0.0) throw ConfigError("prune.lambda must be non-negative");
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw ConfigError("prune.keep_ratio outside (0,1]");
  if (stop != StopMode::Budget && !(epsilon > 0.0)) throw ConfigError("prune.epsilon must be positive");
  if (heads < 0) throw ConfigError("prune.heads must be non-negative");
  if (select_gamma < 0.0) throw ConfigError("prune.gamma must be non-negative");
  if (select_steps < 0) throw ConfigError("prune.inner_steps must be non-negative");
  if (select_batch < 1) throw ConfigError("prune.batch must be positive");
  if (subset < 1) throw ConfigError("prune.subset must be positive");
  if (finetune_epochs < 0 || final_finetune_epochs < 0) {
    throw ConfigError("fine-tune epoch counts must be non-negative");
  }
  if (!(finetune_lr >= 0.0)) throw ConfigError("prune.finetune_lr must be non-negative");
  if (!(finetune_decay > 0.0)) throw ConfigError("prune.finetune_decay must be positive");
  if (finetune_batch < 1) throw ConfigError("train batch must be positive");
}

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) {
    velocity_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
  }
}

void SgdOptimizer::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) {
      throw ShapeError("optimizer step: parameter of shape " + p.shape().str() +
                       " has no gradient");
    }
    double* w = p.values().data();
    const double* g = p.grad().data();
    double* v = velocity_[i].data();
    const std::int64_t count = p.numel();
    for (std::int64_t t = 0; t < count; ++t) {
      const double grad = g[t] + weight_decay_ * w[t];
      v[t] = momentum_ * v[t] + grad;
      // nesterov update
      w[t] -= lr * (grad + momentum_ * v[t]);
    }
  }
}

void zero_masked_grads(NetworkDef& net) {
  for (auto& node : net.nodes) {
    if (node.kind != LayerKind::Conv || node.input_mask.empty()) continue;
    if (!node.weight.has_grad()) continue;
    const Shape& ws = node.weight.shape();
    if (node.kept_channels() == ws.c()) continue;
    const std::int64_t fhw = ws.h() * ws.w();
    double* g = node.weight.grad().data();
    for (std::int64_t j = 0; j < ws.n(); ++j) {
      for (std::int64_t k = 0; k < ws.c(); ++k) {
        if (node.input_mask[static_cast<std::size_t>(k)]) continue;
        double* col = g + ((j * ws.c() + k) * fhw);
        for (std::int64_t t = 0; t < fhw; ++t) col[t] = 0.0;
      }
    }
  }
}

namespace {

void set_params_requires_grad(NetworkDef& net, bool value) {
  for (auto& p : net.parameters()) p.set_requires_grad(value);
}

Tensor take_rows(const Tensor& t, const std::vector<std::int64_t>& rows) {
  const Shape& s = t.shape();
  const std::int64_t inner = s.c() * s.h() * s.w();
  Tensor out = Tensor::zeros(Shape(static_cast<std::int64_t>(rows.size()), s.c(), s.h(), s.w()));
  const double* src = t.values().data();
  double* dst = out.values().data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double* from = src + rows[r] * inner;
    double* to = dst + static_cast<std::int64_t>(r) * inner;
    for (std::int64_t i = 0; i < inner; ++i) to[i] = from[i];
  }
  return out;
}

std::vector<std::int64_t> take_labels(const std::vector<std::int64_t>& labels,
                                      const std::vector<std::int64_t>& rows) {
  std::vector<std::int64_t> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(labels[static_cast<std::size_t>(r)]);
  return out;
}

}  // namespace

double finetune_stage(NetworkDef& net, LossHead* head, const Dataset& data,
                      const FinetuneOptions& opts, std::uint64_t seed,
                      const std::string& stream_tag) {
  if (opts.epochs < 0) throw ConfigError("fine-tune epochs must be non-negative");
  if (!(opts.decay > 0.0)) throw ConfigError("fine-tune decay must be positive");

  set_params_requires_grad(net, true);
  std::vector<Tensor> params = net.parameters();
  if (head != nullptr) {
    for (auto& p : head->parameters()) {
      p.set_requires_grad(true);
      params.push_back(p);
    }
  }
  SgdOptimizer optimizer(params, opts.momentum, opts.weight_decay);

  const std::int64_t n = data.size();
  const std::int64_t bs = std::min<std::int64_t>(std::max(1, opts.batch), n);
  RngPool pool(seed);
  double lr = opts.lr;

  const int last_node = static_cast<int>(net.nodes.size()) - 1;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::mt19937_64 rng =
        pool.stream("shuffle/" + stream_tag + "/epoch" + std::to_string(epoch));
    deterministic_shuffle(order, rng);

    for (std::int64_t start = 0; start + bs <= n; start += bs) {
      std::vector<std::int64_t> rows(order.begin() + start, order.begin() + start + bs);
      Tensor images = take_rows(data.images, rows);
      std::vector<std::int64_t> labels = take_labels(data.labels, rows);

      if (head != nullptr) {
        Tape tape;
        std::vector<Tensor> acts;
        forward(net, images,
                ForwardOptions{.upto = head->attach_layer, .mode = Mode::Train, .tape = &tape},
                &acts);
        Tensor aux = discrimination_loss(
            *head, acts[static_cast<std::size_t>(head->attach_layer)], labels, Mode::Train, &tape);
        if (!std::isfinite(aux.item())) {
          throw NumericError("non-finite auxiliary loss during fine-tuning; reduce the rate");
        }
        tape.backward(aux);
        zero_masked_grads(net);
        optimizer.step(lr);
      }
      {
        Tape tape;
        Tensor logits = forward(
            net, images, ForwardOptions{.upto = last_node, .mode = Mode::Train, .tape = &tape});
        Tensor fin = softmax_cross_entropy(logits, labels, &tape);
        if (!std::isfinite(fin.item())) {
          throw NumericError("non-finite final loss during fine-tuning; reduce the rate");
        }
        tape.backward(fin);
        zero_masked_grads(net);
        optimizer.step(lr);
      }
      lr *= opts.decay;
    }
  }
  return lr;
}

double train_baseline(NetworkDef& net, const Dataset& train, const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw ConfigError("train.epochs must be non-negative");
  set_params_requires_grad(net, true);
  SgdOptimizer optimizer(net.parameters(), cfg.momentum, cfg.weight_decay);

  const std::int64_t n = train.size();
  if (n == 0) throw DataError("empty training set");
  const std::int64_t bs = std::min<std::int64_t>(std::max(1, cfg.batch), n);
  RngPool pool(cfg.seed);
  const int last_node = static_cast<int>(net.nodes.size()) - 1;

  double lr = cfg.lr;
  double epoch_loss = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::mt19937_64 rng = pool.stream("shuffle/train/epoch" + std::to_string(epoch));
    deterministic_shuffle(order, rng);

    epoch_loss = 0.0;
    std::int64_t batches = 0;
    for (std::int64_t start = 0; start + bs <= n; start += bs) {
      std::vector<std::int64_t> rows(order.begin() + start, order.begin() + start + bs);
      Tensor images = take_rows(train.images, rows);
      std::vector<std::int64_t> labels = take_labels(train.labels, rows);

      Tape tape;
      Tensor logits =
          forward(net, images, ForwardOptions{.upto = last_node, .mode = Mode::Train, .tape = &tape});
      Tensor loss = softmax_cross_entropy(logits, labels, &tape);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                           "; reduce train.lr");
      }
      tape.backward(loss);
      zero_masked_grads(net);
      optimizer.step(lr);
      epoch_loss += value;
      batches += 1;
    }
    if (batches > 0) epoch_loss /= static_cast<double>(batches);
    lr *= cfg.lr_decay;
  }
  return epoch_loss;
}

EvalMetrics evaluate(NetworkDef& net, const Dataset& data, int batch) {
  const std::int64_t n = data.size();
  if (n == 0) throw DataError("evaluate: empty dataset");
  const std::int64_t bs = std::min<std::int64_t>(std::max(1, batch), n);
  const int m = net.num_classes;

  EvalMetrics metrics;
  metrics.has_top5 = m >= 5;
  metrics.count = n;
  std::int64_t top1_wrong = 0, top5_wrong = 0;

  for (std::int64_t start = 0; start < n; start += bs) {
    const std::int64_t stop = std::min(n, start + bs);
    std::vector<std::int64_t> rows;
    rows.reserve(static_cast<std::size_t>(stop - start));
    for (std::int64_t i = start; i < stop; ++i) rows.push_back(i);
    Tensor images = take_rows(data.images, rows);
    Tensor logits = forward(net, images, ForwardOptions{.mode = Mode::Eval});

    const double* z = logits.values().data();
    for (std::int64_t i = 0; i < stop - start; ++i) {
      const double* row = z + i * m;
      const std::int64_t label = data.labels[static_cast<std::size_t>(start + i)];
      std::int64_t best = 0;
      for (std::int64_t t = 1; t < m; ++t) {
        if (row[t] > row[best]) best = t;
      }
      if (best != label) top1_wrong += 1;
      if (metrics.has_top5) {
        // rank of the label: number of strictly larger logits (ties keep the
        // smaller index first)
        std::int64_t above = 0;
        for (std::int64_t t = 0; t < m; ++t) {
          if (row[t] > row[label] || (row[t] == row[label] && t < label)) above += 1;
        }
        if (above >= 5) top5_wrong += 1;
      }
    }
  }

  metrics.top1_error = static_cast<double>(top1_wrong) / static_cast<double>(n);
  if (metrics.has_top5) {
    metrics.top5_error = static_cast<double>(top5_wrong) / static_cast<double>(n);
  }
  return metrics;
}

std::vector<int> select_random(int channels, int count, std::uint64_t seed) {
  if (count > channels) {
    throw ConfigError("select_random: budget " + std::to_string(count) + " exceeds channel count " +
                      std::to_string(channels));
  }
  std::vector<int> order(static_cast<std::size_t>(channels));
  for (int k = 0; k < channels; ++k) order[static_cast<std::size_t>(k)] = k;
  std::mt19937_64 rng = RngPool(seed).stream("random-select");
  deterministic_shuffle(order, rng);
  std::vector<int> out(order.begin(), order.begin() + count);
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

// Channels ordered by descending sum of absolute weights; ties keep the
// smaller index first.
std::vector<int> weight_sum_order(const Tensor& conv_weight) {
  const Shape& ws = conv_weight.shape();
  const int c = static_cast<int>(ws.c());
  const std::int64_t fhw = ws.h() * ws.w();
  const double* w = conv_weight.values().data();
  std::vector<std::pair<double, int>> scored;
  scored.reserve(static_cast<std::size_t>(c));
  for (int k = 0; k < c; ++k) {
    double score = 0.0;
    for (std::int64_t j = 0; j < ws.n(); ++j) {
      const double* col = w + ((j * c + k) * fhw);
      for (std::int64_t t = 0; t < fhw; ++t) score += std::abs(col[t]);
    }
    scored.emplace_back(score, k);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(c));
  for (const auto& [score, k] : scored) order.push_back(k);
  return order;
}

}  // namespace

std::vector<int> select_weight_sum(const Tensor& conv_weight, int count) {
  const int c = static_cast<int>(conv_weight.shape().c());
  if (count > c) {
    throw ConfigError("select_weight_sum: budget " + std::to_string(count) +
                      " exceeds channel count " + std::to_string(c));
  }
  const std::vector<int> order = weight_sum_order(conv_weight);
  std::vector<int> out(order.begin(), order.begin() + count);
  std::sort(out.begin(), out.end());
  return out;
}

DcpReport run_dcp(NetworkDef& net, const Dataset& train, const Dataset& test,
                  const PruneConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  net.validate();

  DcpReport report;
  report.seed = cfg.seed;
  report.strategy = strategy_name(cfg.strategy);
  report.params_before = count_params(net);
  report.flops_before = count_flops(net);
  report.error_before = evaluate(net, test).top1_error;

  RngPool pool(cfg.seed);
  const std::int64_t subset_n = std::min<std::int64_t>(cfg.subset, train.size());
  Dataset subset = sample_subset(train, subset_n, pool.stream_seed("subset"));

  NetworkDef baseline = clone_network(net);
  BaselineCache cache = capture_baseline(baseline, subset.images);

  const int prunable_count = static_cast<int>(net.prunable_layers().size());
  const int heads = cfg.heads > 0 ? cfg.heads : (prunable_count <= 20 ? 2 : 3);
  StagePlan plan = plan_stages(net, heads);

  JointMode mode = JointMode::Full;
  if (cfg.strategy == Strategy::ReconstructionOnly) mode = JointMode::ReconstructionOnly;
  if (cfg.strategy == Strategy::DiscriminationOnly) mode = JointMode::DiscriminationOnly;

  const FinetuneOptions stage_ft{cfg.finetune_epochs, cfg.finetune_lr, cfg.finetune_decay,
                                 cfg.momentum,        cfg.weight_decay, cfg.finetune_batch};

  for (std::size_t p = 0; p < plan.stages.size(); ++p) {
    const auto& stage = plan.stages[p];
    LossHead head;
    LossHead* head_ptr = nullptr;
    if (stage.head_layer >= 0) {
      head = build_head(net, stage.head_layer, net.num_classes,
                        pool.stream_seed("head/stage" + std::to_string(p)));
      head_ptr = &head;
    }
    finetune_stage(net, head_ptr, train, stage_ft, cfg.seed, "stage" + std::to_string(p));

    // Selection reads gradients only at the target layer.
    set_params_requires_grad(net, false);
    if (head_ptr != nullptr) {
      for (auto& hp : head_ptr->parameters()) hp.set_requires_grad(false);
    }

    for (int layer : stage.layers) {
      LayerNode& node = net.nodes[static_cast<std::size_t>(layer)];
      const int c = static_cast<int>(node.weight.shape().c());
      const int budget = channel_budget(c, cfg.keep_ratio);
      StopRule rule{cfg.stop, budget, cfg.epsilon};

      SelectOptions opts;
      opts.gamma = cfg.select_gamma;
      opts.inner_steps = cfg.select_steps;
      opts.batch = cfg.select_batch;
      opts.seed = pool.stream_seed("select/layer" + std::to_string(layer));

      if (cfg.strategy == Strategy::Random) {
        std::vector<int> order(static_cast<std::size_t>(c));
        for (int k = 0; k < c; ++k) order[static_cast<std::size_t>(k)] = k;
        std::mt19937_64 rng =
            RngPool(pool.stream_seed("random/layer" + std::to_string(layer))).stream("random-select");
        deterministic_shuffle(order, rng);
        opts.picker = [order](const std::vector<int>& selected) {
          return order[selected.size()];
        };
      } else if (cfg.strategy == Strategy::WeightSum) {
        std::vector<int> order = weight_sum_order(node.weight);
        opts.picker = [order](const std::vector<int>& selected) {
          return order[selected.size()];
        };
      }

      SelectionContext ctx(net, layer, head_ptr,
                           mode == JointMode::DiscriminationOnly ? nullptr : &cache,
                           subset.images, subset.labels,
                           mode == JointMode::Full ? cfg.lambda : 0.0, mode);
      SelectionState state = select_channels(ctx, rule, opts);
      apply_mask(net, layer, state.selected);

      LayerRecord rec;
      rec.layer = layer;
      rec.channels = c;
      rec.kept = static_cast<int>(state.selected.size());
      rec.l20 = l20_norm(node.weight);
      rec.loss_first = state.loss_history.front();
      rec.loss_last = state.loss_history.back();
      rec.iterations = state.iterations;
      report.layers.push_back(rec);
    }
  }

  const FinetuneOptions final_ft{cfg.final_finetune_epochs, cfg.finetune_lr, cfg.finetune_decay,
                                 cfg.momentum,              cfg.weight_decay, cfg.finetune_batch};
  finetune_stage(net, nullptr, train, final_ft, cfg.seed, "final");

  report.error_after = evaluate(net, test).top1_error;
  NetworkDef compacted = compact(net);
  report.params_after = count_params(compacted);
  report.flops_after = count_flops(compacted);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace dcp
