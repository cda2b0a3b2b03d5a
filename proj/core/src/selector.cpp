// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#include "dcp/selector.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dcp/errors.hpp"
#include "dcp/rng.hpp"

namespace dcp {

int channel_budget(int channels, double keep_ratio) {
  if (channels < 1) throw ConfigError("channel_budget requires at least one channel");
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) {
    throw ConfigError("keep_ratio must lie in (0, 1], got " + std::to_string(keep_ratio));
  }
  return static_cast<int>(std::ceil(keep_ratio * static_cast<double>(channels)));
}

void StopRule::validate(int channels) const {
  if (mode == StopMode::Budget || mode == StopMode::WhicheverFirst) {
    if (budget < 1 || budget > channels) {
      throw ConfigError("channel budget " + std::to_string(budget) + " outside [1, " +
                        std::to_string(channels) + "]");
    }
  }
  if (mode == StopMode::Tolerance || mode == StopMode::WhicheverFirst) {
    if (!(tolerance > 0.0)) throw ConfigError("stop tolerance must be positive");
  }
}

bool should_stop(const SelectionState& state, const StopRule& rule) {
  const bool budget_hit = static_cast<int>(state.selected.size()) >= rule.budget;
  if (rule.mode == StopMode::Budget) return budget_hit;

  bool tolerance_hit = false;
  if (state.loss_history.size() >= 2) {
    const double initial = state.loss_history.front();
    if (initial == 0.0) {
      throw NumericError("stopping tolerance undefined: initial loss L(W^0) is zero");
    }
    const double prev = state.loss_history[state.loss_history.size() - 2];
    const double last = state.loss_history.back();
    tolerance_hit = std::abs(prev - last) / initial <= rule.tolerance;
  }
  if (rule.mode == StopMode::Tolerance) return tolerance_hit;
  return budget_hit || tolerance_hit;
}

std::int64_t l20_norm(const Tensor& conv_weight) {
  const Shape& ws = conv_weight.shape();
  const std::int64_t fhw = ws.h() * ws.w();
  const double* w = conv_weight.values().data();
  std::int64_t nonzero = 0;
  for (std::int64_t k = 0; k < ws.c(); ++k) {
    bool any = false;
    for (std::int64_t j = 0; j < ws.n() && !any; ++j) {
      const double* col = w + ((j * ws.c() + k) * fhw);
      for (std::int64_t t = 0; t < fhw; ++t) {
        if (col[t] != 0.0) {
          any = true;
          break;
        }
      }
    }
    nonzero += any ? 1 : 0;
  }
  return nonzero;
}

namespace {

// Rows of a [N,...] tensor for the given sample indices.
Tensor take_rows(const Tensor& t, const std::vector<std::int64_t>& rows) {
  const Shape& s = t.shape();
  const std::int64_t inner = s.c() * s.h() * s.w();
  Tensor out =
      Tensor::zeros(Shape(static_cast<std::int64_t>(rows.size()), s.c(), s.h(), s.w()));
  const double* src = t.values().data();
  double* dst = out.values().data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double* from = src + rows[r] * inner;
    double* to = dst + static_cast<std::int64_t>(r) * inner;
    for (std::int64_t i = 0; i < inner; ++i) to[i] = from[i];
  }
  return out;
}

void zero_column(Tensor& weight, int k) {
  const Shape& ws = weight.shape();
  const std::int64_t fhw = ws.h() * ws.w();
  double* w = weight.values().data();
  for (std::int64_t j = 0; j < ws.n(); ++j) {
    double* col = w + ((j * ws.c() + k) * fhw);
    for (std::int64_t t = 0; t < fhw; ++t) col[t] = 0.0;
  }
}

void copy_column(Tensor& dst, const Tensor& src, int k) {
  const Shape& ws = dst.shape();
  const std::int64_t fhw = ws.h() * ws.w();
  double* d = dst.values().data();
  const double* s = src.values().data();
  for (std::int64_t j = 0; j < ws.n(); ++j) {
    const std::int64_t off = (j * ws.c() + k) * fhw;
    for (std::int64_t t = 0; t < fhw; ++t) d[off + t] = s[off + t];
  }
}

}  // namespace

SelectionContext::SelectionContext(NetworkDef& net, int layer, LossHead* head,
                                   const BaselineCache* cache, const Tensor& images,
                                   const std::vector<std::int64_t>& labels, double lambda,
                                   JointMode mode)
    : net_(net),
      layer_(layer),
      head_(head),
      cache_(cache),
      images_(images),
      labels_(labels),
      lambda_(lambda),
      mode_(mode) {
  if (layer < 0 || layer >= static_cast<int>(net.nodes.size()) ||
      net.nodes[static_cast<std::size_t>(layer)].kind != LayerKind::Conv) {
    throw ShapeError("selection target " + std::to_string(layer) + " is not a conv layer");
  }
  if (lambda < 0.0) throw ConfigError("selection lambda must be non-negative");
  if (mode_ != JointMode::DiscriminationOnly && cache_ == nullptr) {
    throw DataError("selection requires a baseline cache for the reconstruction term");
  }
  if (head_ != nullptr && head_->attach_layer < layer) {
    throw ShapeError("loss head at layer " + std::to_string(head_->attach_layer) +
                     " lies before the selection target " + std::to_string(layer));
  }

  if (mode_ == JointMode::ReconstructionOnly) {
    loss_node_ = layer_;  // nothing past the target layer enters the loss
  } else {
    loss_node_ = head_ != nullptr ? head_->attach_layer
                                  : static_cast<int>(net.nodes.size()) - 1;
  }

  // Cache every activation the segment [layer, loss_node] reads from the
  // prefix; predecessors are fixed during this layer's selection.
  std::vector<Tensor> acts;
  forward(net_, images_, ForwardOptions{.upto = loss_node_, .mode = Mode::Batch, .tape = nullptr},
          &acts);
  for (int i = layer_; i <= loss_node_; ++i) {
    for (int p : net_.nodes[static_cast<std::size_t>(i)].inputs) {
      if (p >= 0 && p < layer_ && frontier_.find(p) == frontier_.end()) {
        frontier_.emplace(p, acts[static_cast<std::size_t>(p)]);
      }
    }
  }

  if (mode_ != JointMode::DiscriminationOnly) {
    baseline_rows_ = cache_->at(layer_);
    if (!(baseline_rows_.shape().n() == images_.shape().n())) {
      throw DataError("baseline cache sample count does not match the selection subset");
    }
  }

  saved_weight_rg_ = weight().requires_grad();
}

SelectionContext::~SelectionContext() { weight().set_requires_grad(saved_weight_rg_); }

int SelectionContext::channel_count() const {
  return static_cast<int>(net_.nodes[static_cast<std::size_t>(layer_)].weight.shape().c());
}

Tensor& SelectionContext::weight() {
  return net_.nodes[static_cast<std::size_t>(layer_)].weight;
}

Tensor SelectionContext::joint_on(const std::map<int, Tensor>& frontier, const Tensor& images,
                                  const std::vector<std::int64_t>& labels, const Tensor& baseline,
                                  Tape* tape) {
  std::vector<Tensor> acts;
  forward_range(net_, layer_, loss_node_, frontier, images, Mode::Batch, tape, &acts);

  auto discrimination = [&]() {
    if (head_ != nullptr) {
      return discrimination_loss(*head_, acts[static_cast<std::size_t>(head_->attach_layer)],
                                 labels, Mode::Batch, tape);
    }
    return softmax_cross_entropy(acts.back(), labels, tape);
  };
  auto reconstruction = [&]() {
    Tensor out_l = acts[static_cast<std::size_t>(layer_)];
    return mean_squared_half(out_l, baseline, out_l.numel(), tape);
  };

  switch (mode_) {
    case JointMode::DiscriminationOnly:
      return discrimination();
    case JointMode::ReconstructionOnly:
      return reconstruction();
    case JointMode::Full:
      return joint_loss(reconstruction(), discrimination(), lambda_, tape);
  }
  throw ConfigError("unknown joint mode");
}

double SelectionContext::evaluate() {
  weight().set_requires_grad(false);
  Tensor loss = joint_on(frontier_, images_, labels_, baseline_rows_, nullptr);
  const double v = loss.item();
  if (!std::isfinite(v)) throw NumericError("non-finite selection loss");
  return v;
}

double SelectionContext::evaluate_with_gradient() {
  Tape tape;
  weight().set_requires_grad(true);
  Tensor loss = joint_on(frontier_, images_, labels_, baseline_rows_, &tape);
  tape.backward(loss);
  const double v = loss.item();
  if (!std::isfinite(v)) throw NumericError("non-finite selection loss");
  return v;
}

Tensor SelectionContext::batch_loss(const std::vector<std::int64_t>& rows, Tape* tape) {
  std::map<int, Tensor> frontier;
  for (const auto& [node, act] : frontier_) frontier.emplace(node, take_rows(act, rows));
  Tensor images = take_rows(images_, rows);
  std::vector<std::int64_t> labels;
  labels.reserve(rows.size());
  for (auto r : rows) labels.push_back(labels_[static_cast<std::size_t>(r)]);
  Tensor baseline;
  if (mode_ != JointMode::DiscriminationOnly) baseline = take_rows(baseline_rows_, rows);
  weight().set_requires_grad(true);
  return joint_on(frontier, images, labels, baseline, tape);
}

int rank_channels(SelectionContext& ctx, const std::vector<int>& exclude,
                  std::vector<double>* norms) {
  const int c = ctx.channel_count();
  std::vector<char> excluded(static_cast<std::size_t>(c), 0);
  for (int k : exclude) {
    if (k >= 0 && k < c) excluded[static_cast<std::size_t>(k)] = 1;
  }
  bool any_candidate = false;
  for (int k = 0; k < c; ++k) any_candidate = any_candidate || !excluded[static_cast<std::size_t>(k)];
  if (!any_candidate) throw ConfigError("rank_channels: all channels already selected");

  ctx.evaluate_with_gradient();
  const Tensor& w = ctx.weight();
  const Shape& ws = w.shape();
  const std::int64_t fhw = ws.h() * ws.w();
  const double* g = w.grad().data();

  std::vector<double> channel_norms(static_cast<std::size_t>(c), 0.0);
  for (std::int64_t k = 0; k < c; ++k) {
    double sq = 0.0;
    for (std::int64_t j = 0; j < ws.n(); ++j) {
      const double* col = g + ((j * ws.c() + k) * fhw);
      for (std::int64_t t = 0; t < fhw; ++t) sq += col[t] * col[t];
    }
    channel_norms[static_cast<std::size_t>(k)] = std::sqrt(sq);
  }
  if (norms != nullptr) *norms = channel_norms;

  int best = -1;
  double best_norm = -1.0;
  for (int k = 0; k < c; ++k) {
    if (excluded[static_cast<std::size_t>(k)]) continue;
    if (channel_norms[static_cast<std::size_t>(k)] > best_norm) {
      best_norm = channel_norms[static_cast<std::size_t>(k)];
      best = k;
    }
  }
  return best;
}

double optimize_active(SelectionContext& ctx, const std::vector<int>& active, double gamma,
                       int inner_steps, int batch, std::mt19937_64& rng) {
  if (active.empty()) throw ConfigError("optimize_active requires a non-empty active set");
  if (gamma < 0.0) throw ConfigError("selection learning rate gamma must be non-negative");
  const int c = ctx.channel_count();
  std::vector<char> is_active(static_cast<std::size_t>(c), 0);
  for (int k : active) {
    if (k < 0 || k >= c) throw ShapeError("active channel " + std::to_string(k) + " out of range");
    is_active[static_cast<std::size_t>(k)] = 1;
  }

  const double initial = ctx.evaluate();
  int high_count = 0;

  const std::int64_t n = ctx.sample_count();
  const std::int64_t bs = std::min<std::int64_t>(std::max(1, batch), n);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  std::int64_t cursor = 0;
  deterministic_shuffle(order, rng);
  for (int step = 0; step < inner_steps; ++step) {
    if (cursor + bs > n) {
      deterministic_shuffle(order, rng);
      cursor = 0;
    }
    std::vector<std::int64_t> rows(order.begin() + cursor, order.begin() + cursor + bs);
    cursor += bs;

    Tape tape;
    Tensor loss = ctx.batch_loss(rows, &tape);
    const double batch_value = loss.item();
    if (!std::isfinite(batch_value)) {
      throw NumericError("selection subproblem produced a non-finite loss; reduce prune.gamma");
    }
    if (initial > 0.0 && batch_value > 10.0 * initial) {
      if (++high_count >= 3) {
        throw NumericError("selection subproblem diverged (loss above 10x the entry value on "
                           "three consecutive evaluations); reduce prune.gamma");
      }
    } else {
      high_count = 0;
    }
    tape.backward(loss);

    Tensor& w = ctx.weight();
    const Shape& ws = w.shape();
    const std::int64_t fhw = ws.h() * ws.w();
    double* g = w.grad().data();
    for (std::int64_t j = 0; j < ws.n(); ++j) {
      for (std::int64_t k = 0; k < c; ++k) {
        if (is_active[static_cast<std::size_t>(k)]) continue;
        double* col = g + ((j * ws.c() + k) * fhw);
        for (std::int64_t t = 0; t < fhw; ++t) col[t] = 0.0;
      }
    }
    Tensor params[1] = {w};
    sgd_step(params, gamma);
  }

  return ctx.evaluate();
}

SelectionState select_channels(SelectionContext& ctx, const StopRule& rule,
                               const SelectOptions& opts) {
  const int c = ctx.channel_count();
  rule.validate(c);

  Tensor warm_start = ctx.weight().clone();
  for (int k = 0; k < c; ++k) zero_column(ctx.weight(), k);

  SelectionState state;
  state.loss_history.push_back(ctx.evaluate());
  if (rule.mode != StopMode::Budget && state.loss_history.front() == 0.0) {
    throw NumericError("tolerance stopping undefined: initial loss L(W^0) is zero");
  }

  std::mt19937_64 rng(RngPool(opts.seed).stream_seed("selection"));

  while (!should_stop(state, rule) && static_cast<int>(state.selected.size()) < c) {
    int k;
    if (opts.picker) {
      k = opts.picker(state.selected);
      if (k < 0 || k >= c) throw ShapeError("channel picker returned index out of range");
    } else {
      k = rank_channels(ctx, state.selected, &state.grad_norms);
    }
    state.selected.push_back(k);

    const double entry = state.loss_history.back();
    copy_column(ctx.weight(), warm_start, k);
    const double restored = ctx.evaluate();
    if (restored > entry) zero_column(ctx.weight(), k);

    const double after =
        optimize_active(ctx, state.selected, opts.gamma, opts.inner_steps, opts.batch, rng);
    state.loss_history.push_back(after);
    state.iterations += 1;
  }
  return state;
}

}  // namespace dcp
