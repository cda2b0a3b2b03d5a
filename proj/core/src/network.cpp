// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#include "dcp/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dcp/errors.hpp"
#include "dcp/rng.hpp"

namespace dcp {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.9;

BatchNormMode to_bn_mode(Mode m) {
  switch (m) {
    case Mode::Train: return BatchNormMode::Training;
    case Mode::Batch: return BatchNormMode::Batch;
    case Mode::Eval: return BatchNormMode::Inference;
  }
  return BatchNormMode::Inference;
}

}  // namespace

std::string layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::GlobalAvgPool: return "global-avg-pool";
    case LayerKind::FullyConnected: return "fully-connected";
    case LayerKind::ResidualAdd: return "residual-add";
  }
  return "unknown";
}

std::int64_t LayerNode::kept_channels() const {
  if (kind != LayerKind::Conv) return 0;
  if (input_mask.empty()) return weight.shape().c();
  std::int64_t kept = 0;
  for (auto m : input_mask) kept += m ? 1 : 0;
  return kept;
}

std::vector<int> NetworkDef::conv_layers() const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(nodes.size()); ++i) {
    if (nodes[static_cast<std::size_t>(i)].kind == LayerKind::Conv) out.push_back(i);
  }
  return out;
}

std::vector<int> NetworkDef::prunable_layers() const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(nodes.size()); ++i) {
    const auto& n = nodes[static_cast<std::size_t>(i)];
    if (n.kind == LayerKind::Conv && n.prunable) out.push_back(i);
  }
  return out;
}

std::vector<int> NetworkDef::consumer_counts() const {
  std::vector<int> counts(nodes.size(), 0);
  for (const auto& n : nodes) {
    for (int p : n.inputs) {
      if (p >= 0) counts[static_cast<std::size_t>(p)] += 1;
    }
  }
  if (!counts.empty()) counts.back() += 1;  // network output
  return counts;
}

std::vector<Tensor> NetworkDef::parameters() {
  std::vector<Tensor> out;
  for (auto& n : nodes) {
    switch (n.kind) {
      case LayerKind::Conv: out.push_back(n.weight); break;
      case LayerKind::BatchNorm:
        out.push_back(n.gamma);
        out.push_back(n.beta);
        break;
      case LayerKind::FullyConnected: out.push_back(n.theta); break;
      default: break;
    }
  }
  return out;
}

std::vector<Shape> infer_shapes(const NetworkDef& net) {
  std::vector<Shape> shapes(net.nodes.size());
  for (int i = 0; i < static_cast<int>(net.nodes.size()); ++i) {
    const auto& node = net.nodes[static_cast<std::size_t>(i)];
    auto producer_shape = [&](int p) -> Shape {
      if (p == -1) return Shape(1, net.input_shape.c(), net.input_shape.h(), net.input_shape.w());
      if (p < 0 || p >= i) {
        throw ShapeError("node " + std::to_string(i) + " references producer " +
                         std::to_string(p) + ": graph is not in topological order");
      }
      return shapes[static_cast<std::size_t>(p)];
    };
    switch (node.kind) {
      case LayerKind::Conv: {
        Shape in = producer_shape(node.inputs.at(0));
        const Shape& ws = node.weight.shape();
        std::int64_t cin = in.c();
        if (!node.input_select.empty()) {
          for (int k : node.input_select) {
            if (k < 0 || k >= cin) {
              throw ShapeError("conv node " + std::to_string(i) + " gathers channel " +
                               std::to_string(k) + " outside producer shape " + in.str());
            }
          }
          cin = static_cast<std::int64_t>(node.input_select.size());
        }
        if (cin != ws.c()) {
          throw ShapeError("conv node " + std::to_string(i) + " input channels " +
                           std::to_string(cin) + " do not match weight " + ws.str());
        }
        if (!node.input_mask.empty() &&
            static_cast<std::int64_t>(node.input_mask.size()) != ws.c()) {
          throw ShapeError("conv node " + std::to_string(i) + " mask length " +
                           std::to_string(node.input_mask.size()) + " does not match weight " +
                           ws.str());
        }
        const std::int64_t spanh = in.h() + 2 * node.padding - ws.h();
        const std::int64_t spanw = in.w() + 2 * node.padding - ws.w();
        if (spanh < 0 || spanw < 0) {
          throw ShapeError("conv node " + std::to_string(i) + " kernel does not fit its input");
        }
        shapes[static_cast<std::size_t>(i)] =
            Shape(1, ws.n(), spanh / node.stride + 1, spanw / node.stride + 1);
        break;
      }
      case LayerKind::BatchNorm: {
        Shape in = producer_shape(node.inputs.at(0));
        if (node.gamma.numel() != in.c()) {
          throw ShapeError("batchnorm node " + std::to_string(i) + " has " +
                           std::to_string(node.gamma.numel()) + " scales for input " + in.str());
        }
        shapes[static_cast<std::size_t>(i)] = in;
        break;
      }
      case LayerKind::ReLU:
        shapes[static_cast<std::size_t>(i)] = producer_shape(node.inputs.at(0));
        break;
      case LayerKind::MaxPool: {
        Shape in = producer_shape(node.inputs.at(0));
        const std::int64_t spanh = in.h() - node.window, spanw = in.w() - node.window;
        if (spanh < 0 || spanw < 0) {
          throw ShapeError("maxpool node " + std::to_string(i) + " window does not fit its input");
        }
        shapes[static_cast<std::size_t>(i)] =
            Shape(1, in.c(), spanh / node.stride + 1, spanw / node.stride + 1);
        break;
      }
      case LayerKind::GlobalAvgPool: {
        Shape in = producer_shape(node.inputs.at(0));
        shapes[static_cast<std::size_t>(i)] = Shape(1, in.c(), 1, 1);
        break;
      }
      case LayerKind::FullyConnected: {
        Shape in = producer_shape(node.inputs.at(0));
        if (in.h() != 1 || in.w() != 1 || in.c() != node.theta.shape().n()) {
          throw ShapeError("fully-connected node " + std::to_string(i) + " input " + in.str() +
                           " does not match weights " + node.theta.shape().str());
        }
        shapes[static_cast<std::size_t>(i)] = Shape(1, node.theta.shape().c(), 1, 1);
        break;
      }
      case LayerKind::ResidualAdd: {
        if (node.inputs.size() != 2) {
          throw ShapeError("residual-add node " + std::to_string(i) +
                           " must reference exactly two producers");
        }
        Shape a = producer_shape(node.inputs[0]);
        Shape b = producer_shape(node.inputs[1]);
        if (!(a == b)) {
          throw ShapeError("residual-add node " + std::to_string(i) + " branch shapes differ: " +
                           a.str() + " vs " + b.str());
        }
        shapes[static_cast<std::size_t>(i)] = a;
        break;
      }
    }
  }
  return shapes;
}

void NetworkDef::validate() const {
  if (nodes.empty()) throw ShapeError("network has no layers");
  (void)infer_shapes(*this);
}

// ---------------------------------------------------------------------------
// Architecture construction
// ---------------------------------------------------------------------------

namespace {

class Builder {
 public:
  Builder(std::string arch, int in_channels, int image_size, int num_classes,
          std::uint64_t seed)
      : rng_(RngPool(seed).stream("init")) {
    net_.arch = std::move(arch);
    net_.input_shape = Shape(1, in_channels, image_size, image_size);
    net_.num_classes = num_classes;
  }

  int conv(int in_c, int out_c, int k, int stride, int pad, bool prunable, bool block_end,
           int from = -2) {
    LayerNode n;
    n.kind = LayerKind::Conv;
    n.inputs = {from == -2 ? last_ : from};
    n.weight = init_weight(Shape(out_c, in_c, k, k),
                           std::sqrt(2.0 / (static_cast<double>(in_c) * k * k)));
    n.stride = stride;
    n.padding = pad;
    n.input_mask.assign(static_cast<std::size_t>(in_c), 1);
    n.prunable = prunable;
    n.block_end = block_end;
    return push(std::move(n));
  }

  int bn(int channels) {
    LayerNode n;
    n.kind = LayerKind::BatchNorm;
    n.inputs = {last_};
    n.gamma = Tensor::full(Shape(1, channels, 1, 1), 1.0);
    n.beta = Tensor::zeros(Shape(1, channels, 1, 1));
    n.bn.mean = Tensor::zeros(Shape(1, channels, 1, 1));
    n.bn.var = Tensor::full(Shape(1, channels, 1, 1), 1.0);
    return push(std::move(n));
  }

  int relu() {
    LayerNode n;
    n.kind = LayerKind::ReLU;
    n.inputs = {last_};
    return push(std::move(n));
  }

  int maxpool(int window, int stride) {
    LayerNode n;
    n.kind = LayerKind::MaxPool;
    n.inputs = {last_};
    n.window = window;
    n.stride = stride;
    return push(std::move(n));
  }

  int gap() {
    LayerNode n;
    n.kind = LayerKind::GlobalAvgPool;
    n.inputs = {last_};
    return push(std::move(n));
  }

  int fc(int d, int m) {
    LayerNode n;
    n.kind = LayerKind::FullyConnected;
    n.inputs = {last_};
    n.theta = init_weight(Shape(d, m, 1, 1), std::sqrt(2.0 / static_cast<double>(d)));
    return push(std::move(n));
  }

  int residual_add(int a, int b) {
    LayerNode n;
    n.kind = LayerKind::ResidualAdd;
    n.inputs = {a, b};
    return push(std::move(n));
  }

  int last() const { return last_; }
  NetworkDef take() { return std::move(net_); }

 private:
  int push(LayerNode n) {
    net_.nodes.push_back(std::move(n));
    last_ = static_cast<int>(net_.nodes.size()) - 1;
    return last_;
  }

  Tensor init_weight(const Shape& s, double stddev) {
    Tensor t = Tensor::zeros(s);
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.values()) v = dist(rng_);
    return t;
  }

  NetworkDef net_;
  std::mt19937_64 rng_;
  int last_ = -1;
};

void conv_bn_relu(Builder& b, int in_c, int out_c, int k, int stride, int pad, bool prunable,
                  bool block_end) {
  b.conv(in_c, out_c, k, stride, pad, prunable, block_end);
  b.bn(out_c);
  b.relu();
}

NetworkDef build_toy_cnn(int num_classes, int in_channels, int image_size, std::uint64_t seed) {
  Builder b("toy-cnn", in_channels, image_size, num_classes, seed);
  conv_bn_relu(b, in_channels, 8, 3, 1, 1, true, true);
  conv_bn_relu(b, 8, 16, 3, 1, 1, true, true);
  b.maxpool(2, 2);
  conv_bn_relu(b, 16, 16, 3, 1, 1, true, true);
  b.gap();
  b.fc(16, num_classes);
  return b.take();
}

NetworkDef build_resnet(const std::string& name, int blocks_per_stage, int num_classes,
                        int in_channels, int image_size, std::uint64_t seed) {
  Builder b(name, in_channels, image_size, num_classes, seed);
  conv_bn_relu(b, in_channels, 16, 3, 1, 1, true, true);
  int channels = 16;
  const int stage_channels[3] = {16, 32, 64};
  for (int stage = 0; stage < 3; ++stage) {
    const int planes = stage_channels[stage];
    for (int block = 0; block < blocks_per_stage; ++block) {
      const int stride = (stage > 0 && block == 0) ? 2 : 1;
      const int entry = b.last();
      b.conv(channels, planes, 3, stride, 1, /*prunable=*/true, /*block_end=*/false, entry);
      b.bn(planes);
      b.relu();
      b.conv(planes, planes, 3, 1, 1, /*prunable=*/true, /*block_end=*/true);
      const int main_out = b.bn(planes);
      int shortcut = entry;
      if (stride != 1 || channels != planes) {
        // Projection shortcut: 1x1 conv + BN. Not prunable, to keep the
        // identity branch aligned with the residual sum.
        b.conv(channels, planes, 1, stride, 0, /*prunable=*/false, /*block_end=*/false, entry);
        shortcut = b.bn(planes);
      }
      b.residual_add(main_out, shortcut);
      b.relu();
      channels = planes;
    }
  }
  b.gap();
  b.fc(64, num_classes);
  return b.take();
}

NetworkDef build_vggnet_cifar(int num_classes, int in_channels, int image_size,
                              std::uint64_t seed) {
  Builder b("vggnet-cifar", in_channels, image_size, num_classes, seed);
  const std::vector<std::vector<int>> blocks = {
      {64, 64}, {128, 128}, {256, 256, 256, 256}, {512, 512, 512, 512}, {512, 512, 512, 512}};
  int channels = in_channels;
  for (const auto& block : blocks) {
    for (std::size_t i = 0; i < block.size(); ++i) {
      const bool block_end = i + 1 == block.size();
      conv_bn_relu(b, channels, block[i], 3, 1, 1, /*prunable=*/true, block_end);
      channels = block[i];
    }
    b.maxpool(2, 2);
  }
  b.gap();
  b.fc(512, num_classes);
  return b.take();
}

}  // namespace

NetworkDef build_architecture(const std::string& name, int num_classes, int in_channels,
                              int image_size, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  NetworkDef net;
  if (name == "toy-cnn") {
    net = build_toy_cnn(num_classes, in_channels, image_size, seed);
  } else if (name == "resnet-8") {
    net = build_resnet("resnet-8", 1, num_classes, in_channels, image_size, seed);
  } else if (name == "resnet-56") {
    net = build_resnet("resnet-56", 9, num_classes, in_channels, image_size, seed);
  } else if (name == "vggnet-cifar") {
    net = build_vggnet_cifar(num_classes, in_channels, image_size, seed);
  } else {
    throw ConfigError("unknown architecture '" + name + "'");
  }
  net.validate();
  return net;
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

namespace {

Tensor run_node(NetworkDef& net, int idx, const Tensor& node_input_a, const Tensor& node_input_b,
                Mode mode, Tape* tape) {
  LayerNode& node = net.nodes[static_cast<std::size_t>(idx)];
  switch (node.kind) {
    case LayerKind::Conv: {
      if (node.input_select.empty()) {
        return conv2d(node_input_a, node.weight, node.stride, node.padding, tape);
      }
      Tensor gathered = channel_gather(node_input_a, node.input_select, tape);
      return conv2d(gathered, node.weight, node.stride, node.padding, tape);
    }
    case LayerKind::BatchNorm:
      return batch_norm(node_input_a, node.gamma, node.beta, &node.bn, to_bn_mode(mode), kBnEps,
                        kBnMomentum, tape);
    case LayerKind::ReLU:
      return relu(node_input_a, tape);
    case LayerKind::MaxPool:
      return max_pool(node_input_a, node.window, node.stride, tape);
    case LayerKind::GlobalAvgPool:
      return global_avg_pool(node_input_a, tape);
    case LayerKind::FullyConnected:
      return fully_connected(node_input_a, node.theta, tape);
    case LayerKind::ResidualAdd:
      return add(node_input_a, node_input_b, tape);
  }
  throw ShapeError("unknown layer kind");
}

}  // namespace

Tensor forward(NetworkDef& net, const Tensor& input, const ForwardOptions& opts,
               std::vector<Tensor>* activations) {
  const int last = static_cast<int>(net.nodes.size()) - 1;
  const int upto = opts.upto < 0 ? last : opts.upto;
  if (upto > last) {
    throw ShapeError("forward upto=" + std::to_string(upto) + " out of range, network has " +
                     std::to_string(net.nodes.size()) + " layers");
  }
  if (input.shape().c() != net.input_shape.c() || input.shape().h() != net.input_shape.h() ||
      input.shape().w() != net.input_shape.w()) {
    throw ShapeError("input shape " + input.shape().str() + " does not match network input " +
                     net.input_shape.str());
  }

  std::vector<Tensor> acts(static_cast<std::size_t>(upto) + 1);
  for (int i = 0; i <= upto; ++i) {
    const auto& ins = net.nodes[static_cast<std::size_t>(i)].inputs;
    const Tensor& a = ins.at(0) == -1 ? input : acts[static_cast<std::size_t>(ins.at(0))];
    const Tensor& b = ins.size() > 1
                          ? (ins[1] == -1 ? input : acts[static_cast<std::size_t>(ins[1])])
                          : a;
    acts[static_cast<std::size_t>(i)] = run_node(net, i, a, b, opts.mode, opts.tape);
  }
  Tensor out = acts[static_cast<std::size_t>(upto)];
  if (activations != nullptr) *activations = std::move(acts);
  return out;
}

Tensor forward_range(NetworkDef& net, int first_node, int upto, const std::map<int, Tensor>& cached,
                     const Tensor& input, Mode mode, Tape* tape,
                     std::vector<Tensor>* activations) {
  const int last = static_cast<int>(net.nodes.size()) - 1;
  if (first_node < 0 || upto > last || first_node > upto) {
    throw ShapeError("forward_range [" + std::to_string(first_node) + "," + std::to_string(upto) +
                     "] out of range");
  }
  std::vector<Tensor> acts(static_cast<std::size_t>(upto) + 1);
  auto fetch = [&](int p) -> const Tensor& {
    if (p == -1) return input;
    if (p >= first_node) return acts[static_cast<std::size_t>(p)];
    auto it = cached.find(p);
    if (it == cached.end()) {
      throw ShapeError("forward_range missing cached activation for node " + std::to_string(p));
    }
    return it->second;
  };
  for (int i = first_node; i <= upto; ++i) {
    const auto& ins = net.nodes[static_cast<std::size_t>(i)].inputs;
    const Tensor& a = fetch(ins.at(0));
    const Tensor& b = ins.size() > 1 ? fetch(ins[1]) : a;
    acts[static_cast<std::size_t>(i)] = run_node(net, i, a, b, mode, tape);
  }
  Tensor out = acts[static_cast<std::size_t>(upto)];
  if (activations != nullptr) *activations = std::move(acts);
  return out;
}

// ---------------------------------------------------------------------------
// Masking, compaction, accounting
// ---------------------------------------------------------------------------

void apply_mask(NetworkDef& net, int layer, const std::vector<int>& keep) {
  if (layer < 0 || layer >= static_cast<int>(net.nodes.size())) {
    throw ShapeError("apply_mask layer index " + std::to_string(layer) + " out of range");
  }
  LayerNode& node = net.nodes[static_cast<std::size_t>(layer)];
  if (node.kind != LayerKind::Conv) {
    throw ShapeError("apply_mask target node " + std::to_string(layer) + " is " +
                     layer_kind_name(node.kind) + ", not conv");
  }
  if (keep.empty()) {
    throw ConfigError("apply_mask: a layer must keep at least one channel");
  }
  const std::int64_t c = node.weight.shape().c();
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(c), 0);
  for (int k : keep) {
    if (k < 0 || k >= c) {
      throw ShapeError("apply_mask channel " + std::to_string(k) + " out of range [0," +
                       std::to_string(c) + ")");
    }
    mask[static_cast<std::size_t>(k)] = 1;
  }
  node.input_mask = std::move(mask);

  const Shape& ws = node.weight.shape();
  double* w = node.weight.values().data();
  const std::int64_t fhw = ws.h() * ws.w();
  for (std::int64_t j = 0; j < ws.n(); ++j) {
    for (std::int64_t k = 0; k < c; ++k) {
      if (node.input_mask[static_cast<std::size_t>(k)]) continue;
      double* col = w + ((j * c + k) * fhw);
      for (std::int64_t t = 0; t < fhw; ++t) col[t] = 0.0;
    }
  }
}

NetworkDef clone_network(const NetworkDef& net) {
  NetworkDef out = net;
  for (auto& n : out.nodes) {
    if (n.weight.defined()) n.weight = n.weight.clone();
    if (n.gamma.defined()) n.gamma = n.gamma.clone();
    if (n.beta.defined()) n.beta = n.beta.clone();
    if (n.bn.mean.defined()) n.bn.mean = n.bn.mean.clone();
    if (n.bn.var.defined()) n.bn.var = n.bn.var.clone();
    if (n.theta.defined()) n.theta = n.theta.clone();
  }
  return out;
}

namespace {

Tensor select_rows(const Tensor& t, const std::vector<int>& rows) {
  // Restrict the leading extent of [n,c,h,w] to the given indices.
  const Shape& s = t.shape();
  const std::int64_t inner = s.c() * s.h() * s.w();
  Tensor out = Tensor::zeros(Shape(static_cast<std::int64_t>(rows.size()), s.c(), s.h(), s.w()));
  const double* src = t.values().data();
  double* dst = out.values().data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double* from = src + static_cast<std::int64_t>(rows[r]) * inner;
    double* to = dst + static_cast<std::int64_t>(r) * inner;
    for (std::int64_t i = 0; i < inner; ++i) to[i] = from[i];
  }
  return out;
}

Tensor select_cols(const Tensor& t, const std::vector<int>& cols) {
  // Restrict the second extent of [n,c,h,w] to the given indices.
  const Shape& s = t.shape();
  const std::int64_t inner = s.h() * s.w();
  Tensor out = Tensor::zeros(Shape(s.n(), static_cast<std::int64_t>(cols.size()), s.h(), s.w()));
  const double* src = t.values().data();
  double* dst = out.values().data();
  for (std::int64_t j = 0; j < s.n(); ++j) {
    for (std::size_t r = 0; r < cols.size(); ++r) {
      const double* from = src + (j * s.c() + cols[r]) * inner;
      double* to = dst + (j * static_cast<std::int64_t>(cols.size()) +
                          static_cast<std::int64_t>(r)) * inner;
      for (std::int64_t i = 0; i < inner; ++i) to[i] = from[i];
    }
  }
  return out;
}

Tensor select_channel_vector(const Tensor& t, const std::vector<int>& keep) {
  // Restrict a [1,C,1,1] vector to the kept channels.
  std::vector<double> vals;
  vals.reserve(keep.size());
  for (int k : keep) vals.push_back(t.values()[static_cast<std::size_t>(k)]);
  return Tensor::from(Shape(1, static_cast<std::int64_t>(keep.size()), 1, 1), std::move(vals));
}

bool channel_preserving(LayerKind k) {
  return k == LayerKind::BatchNorm || k == LayerKind::ReLU || k == LayerKind::MaxPool ||
         k == LayerKind::GlobalAvgPool;
}

}  // namespace

NetworkDef compact(const NetworkDef& net) {
  NetworkDef out = clone_network(net);
  const std::vector<int> consumers = out.consumer_counts();

  for (int l = 0; l < static_cast<int>(out.nodes.size()); ++l) {
    LayerNode& node = out.nodes[static_cast<std::size_t>(l)];
    if (node.kind != LayerKind::Conv) continue;
    const std::int64_t c = node.weight.shape().c();
    if (node.input_mask.empty() || node.kept_channels() == c) continue;

    std::vector<int> keep;
    for (int k = 0; k < static_cast<int>(c); ++k) {
      if (node.input_mask[static_cast<std::size_t>(k)]) keep.push_back(k);
    }
    if (keep.empty()) throw ConfigError("compact: layer " + std::to_string(l) + " keeps nothing");

    // Walk upstream through exclusively-consumed channel-preserving nodes.
    std::vector<int> chain;
    int cur = node.inputs.at(0);
    bool propagate = false;
    while (cur >= 0) {
      const LayerNode& up = out.nodes[static_cast<std::size_t>(cur)];
      if (consumers[static_cast<std::size_t>(cur)] != 1) break;
      if (channel_preserving(up.kind)) {
        chain.push_back(cur);
        cur = up.inputs.at(0);
        continue;
      }
      if (up.kind == LayerKind::Conv) propagate = true;
      break;
    }

    if (propagate) {
      LayerNode& producer = out.nodes[static_cast<std::size_t>(cur)];
      producer.weight = select_rows(producer.weight, keep);
      for (int m : chain) {
        LayerNode& mid = out.nodes[static_cast<std::size_t>(m)];
        if (mid.kind == LayerKind::BatchNorm) {
          mid.gamma = select_channel_vector(mid.gamma, keep);
          mid.beta = select_channel_vector(mid.beta, keep);
          mid.bn.mean = select_channel_vector(mid.bn.mean, keep);
          mid.bn.var = select_channel_vector(mid.bn.var, keep);
        }
      }
    } else {
      // Shared producer (block input or the image): gather instead.
      if (node.input_select.empty()) {
        node.input_select = keep;
      } else {
        std::vector<int> composed;
        composed.reserve(keep.size());
        for (int k : keep) composed.push_back(node.input_select[static_cast<std::size_t>(k)]);
        node.input_select = std::move(composed);
      }
    }

    node.weight = select_cols(node.weight, keep);
    node.input_mask.assign(keep.size(), 1);
  }

  out.validate();  // rejects inconsistent residual branches
  return out;
}

std::int64_t count_params(const NetworkDef& net) {
  std::int64_t total = 0;
  for (const auto& n : net.nodes) {
    switch (n.kind) {
      case LayerKind::Conv: {
        const Shape& ws = n.weight.shape();
        total += ws.n() * n.kept_channels() * ws.h() * ws.w();
        break;
      }
      case LayerKind::BatchNorm:
        total += n.gamma.numel() + n.beta.numel();
        break;
      case LayerKind::FullyConnected:
        total += n.theta.numel();
        break;
      default:
        break;
    }
  }
  return total;
}

std::int64_t count_flops(const NetworkDef& net) {
  const std::vector<Shape> shapes = infer_shapes(net);
  std::int64_t total = 0;
  for (std::size_t i = 0; i < net.nodes.size(); ++i) {
    const auto& n = net.nodes[i];
    if (n.kind == LayerKind::Conv) {
      const Shape& ws = n.weight.shape();
      const Shape& os = shapes[i];
      total += ws.n() * n.kept_channels() * ws.h() * ws.w() * os.h() * os.w();
    } else if (n.kind == LayerKind::FullyConnected) {
      total += n.theta.shape().n() * n.theta.shape().c();
    }
  }
  return total;
}

const char* flops_convention() {
  return "multiply-accumulate operations of convolution and fully-connected layers; "
         "pooling, batch-norm and activations are not counted";
}

}  // namespace dcp
