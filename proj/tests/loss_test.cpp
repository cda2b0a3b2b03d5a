// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "dcp/errors.hpp"
#include "dcp/loss.hpp"
#include "dcp/network.hpp"
#include "oracles.hpp"

using namespace dcp;

TEST_CASE("build_head shape contract and guards") {
  NetworkDef net = build_architecture("toy-cnn", 6, 3, 8, 3);
  const int last_conv = net.conv_layers().back();
  LossHead head = build_head(net, last_conv, 6, 11);
  CHECK(head.channels == 16);
  CHECK(head.theta.shape().n() == 16);
  CHECK(head.theta.shape().c() == 6);

  std::mt19937_64 rng(5);
  Tensor act = oracle::random_tensor(Shape(4, 16, 4, 4), rng);
  Tensor z = head.logits(act, Mode::Batch);
  CHECK(z.shape() == Shape(4, 6, 1, 1));

  CHECK_THROWS_AS(build_head(net, 10000, 6, 0), ShapeError);
  CHECK_THROWS_AS(build_head(net, last_conv + 1, 6, 0), ShapeError);  // a BN node

  // head init is seed-deterministic
  LossHead again = build_head(net, last_conv, 6, 11);
  for (std::int64_t i = 0; i < head.theta.numel(); ++i) {
    CHECK(head.theta.values()[static_cast<std::size_t>(i)] ==
          again.theta.values()[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("zero classifier gives the uniform loss ln m") {
  NetworkDef net = build_architecture("toy-cnn", 5, 3, 8, 3);
  LossHead head = build_head(net, net.conv_layers().back(), 5, 1);
  for (auto& v : head.theta.values()) v = 0.0;

  std::mt19937_64 rng(7);
  Tensor act = oracle::random_tensor(Shape(6, 16, 4, 4), rng);
  std::vector<std::int64_t> labels = {0, 1, 2, 3, 4, 0};
  Tensor loss = discrimination_loss(head, act, labels, Mode::Batch);
  CHECK(loss.item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(head_is_degenerate(head));
}

TEST_CASE("head features equal a hand-composed BN -> ReLU -> pool chain") {
  NetworkDef net = build_architecture("toy-cnn", 4, 3, 8, 9);
  LossHead head = build_head(net, net.conv_layers().back(), 4, 2);
  std::mt19937_64 rng(13);
  for (auto& v : head.gamma.values()) v = 0.7 + 0.1 * static_cast<double>(rng() % 7);
  for (auto& v : head.beta.values()) v = -0.2 + 0.1 * static_cast<double>(rng() % 5);

  Tensor act = oracle::random_tensor(Shape(3, 16, 4, 4), rng);
  Tensor got = head.features(act, Mode::Batch);

  BatchNormStats scratch;
  scratch.mean = head.bn.mean.clone();
  scratch.var = head.bn.var.clone();
  Tensor manual = global_avg_pool(
      relu(batch_norm(act, head.gamma, head.beta, &scratch, BatchNormMode::Batch, 1e-5, 0.9)));
  REQUIRE(got.shape() == manual.shape());
  for (std::int64_t i = 0; i < got.numel(); ++i) {
    CHECK(got.values()[static_cast<std::size_t>(i)] ==
          doctest::Approx(manual.values()[static_cast<std::size_t>(i)]).epsilon(1e-14));
  }
}

TEST_CASE("reconstruction loss values") {
  std::mt19937_64 rng(17);
  BaselineCache cache;
  Tensor base = oracle::random_tensor(Shape(2, 3, 4, 4), rng);
  cache.activations.emplace(4, base);

  CHECK(reconstruction_loss(base.clone(), cache, 4).item() == 0.0);
  CHECK_THROWS_AS(reconstruction_loss(base, cache, 5), DataError);

  // single-entry difference of 1 with Q = 1
  BaselineCache unit;
  unit.activations.emplace(0, Tensor::zeros(Shape(1, 1, 1, 1)));
  CHECK(reconstruction_loss(Tensor::full(Shape(1, 1, 1, 1), 1.0), unit, 0).item() ==
        doctest::Approx(0.5));

  Tensor pruned = oracle::random_tensor(Shape(2, 3, 4, 4), rng);
  CHECK(reconstruction_loss(pruned, cache, 4).item() ==
        doctest::Approx(oracle::mse_half_reference(pruned, base, pruned.numel())).epsilon(1e-13));
}

TEST_CASE("reconstruction loss is invariant under joint channel permutation") {
  std::mt19937_64 rng(19);
  Tensor base = oracle::random_tensor(Shape(2, 4, 3, 3), rng);
  Tensor pruned = oracle::random_tensor(Shape(2, 4, 3, 3), rng);

  const std::vector<int> perm = {2, 0, 3, 1};
  auto permute = [&](const Tensor& t) {
    Tensor out = Tensor::zeros(t.shape());
    for (std::int64_t i = 0; i < 2; ++i)
      for (std::int64_t k = 0; k < 4; ++k)
        for (std::int64_t y = 0; y < 3; ++y)
          for (std::int64_t x = 0; x < 3; ++x)
            out.at(i, k, y, x) = t.at(i, perm[static_cast<std::size_t>(k)], y, x);
    return out;
  };

  BaselineCache cache;
  cache.activations.emplace(0, base);
  BaselineCache permuted_cache;
  permuted_cache.activations.emplace(0, permute(base));

  const double a = reconstruction_loss(pruned, cache, 0).item();
  const double b = reconstruction_loss(permute(pruned), permuted_cache, 0).item();
  CHECK(a == doctest::Approx(b).epsilon(1e-14));
}

TEST_CASE("discrimination loss on a separable toy with analytic classifier") {
  // class y lights up channel y; theta columns point at the class means
  const int classes = 2, channels = 6;
  const std::int64_t n = 40;
  std::mt19937_64 rng(23);
  Tensor act = oracle::random_tensor(Shape(n, channels, 3, 3), rng, 0.05);
  std::vector<std::int64_t> labels(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t y = i % classes;
    labels[static_cast<std::size_t>(i)] = y;
    for (std::int64_t py = 0; py < 3; ++py)
      for (std::int64_t px = 0; px < 3; ++px) act.at(i, y, py, px) += 3.0;
  }

  NetworkDef host;  // minimal carrier so build_head has a conv to attach to
  host.arch = "probe";
  host.input_shape = Shape(1, channels, 3, 3);
  host.num_classes = classes;
  LayerNode conv;
  conv.kind = LayerKind::Conv;
  conv.inputs = {-1};
  conv.weight = Tensor::zeros(Shape(channels, channels, 1, 1));
  conv.input_mask.assign(channels, 1);
  host.nodes.push_back(conv);
  LossHead head = build_head(host, 0, classes, 29);

  // compute class means of the pooled features, then scale them into theta
  Tensor feats = head.features(act, Mode::Batch);
  std::vector<double> mean0(channels, 0.0), mean1(channels, 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (int k = 0; k < channels; ++k) {
      (labels[static_cast<std::size_t>(i)] == 0 ? mean0 : mean1)[static_cast<std::size_t>(k)] +=
          feats.at(i, k, 0, 0) * 2.0 / static_cast<double>(n);
    }
  }
  for (int k = 0; k < channels; ++k) {
    head.theta.at(k, 0, 0, 0) = 40.0 * mean0[static_cast<std::size_t>(k)];
    head.theta.at(k, 1, 0, 0) = 40.0 * mean1[static_cast<std::size_t>(k)];
  }

  Tensor loss = discrimination_loss(head, act, labels, Mode::Batch);
  CHECK(loss.item() < 0.01);

  // mismatched activation width rejected
  Tensor bad = oracle::random_tensor(Shape(2, channels + 1, 3, 3), rng);
  std::vector<std::int64_t> two = {0, 1};
  CHECK_THROWS_AS(discrimination_loss(head, bad, two, Mode::Batch), ShapeError);
}

TEST_CASE("discrimination loss matches the direct formula on random data") {
  NetworkDef net = build_architecture("toy-cnn", 3, 3, 8, 31);
  LossHead head = build_head(net, net.conv_layers().back(), 3, 37);
  std::mt19937_64 rng(41);
  Tensor act = oracle::random_tensor(Shape(5, 16, 4, 4), rng);
  std::vector<std::int64_t> labels = {0, 1, 2, 1, 0};

  const double got = discrimination_loss(head, act, labels, Mode::Batch).item();
  Tensor logits = fully_connected(head.features(act, Mode::Batch), head.theta);
  CHECK(got == doctest::Approx(oracle::softmax_ce_reference(logits, labels)).epsilon(1e-12));
}

TEST_CASE("joint loss arithmetic") {
  Tensor lm = Tensor::scalar(0.5);
  Tensor ls = Tensor::scalar(2.0);
  CHECK(joint_loss(lm, ls, 1.0).item() == doctest::Approx(2.5));
  CHECK(joint_loss(lm, ls, 0.0).item() == doctest::Approx(0.5));  // L_M only
  CHECK(joint_loss(Tensor::scalar(0.0), ls, 1.0).item() == doctest::Approx(2.0));  // L_S only
  CHECK_THROWS_AS(joint_loss(lm, ls, -0.1), ConfigError);

  // monotone non-decreasing in lambda for positive L_S
  double prev = -1.0;
  for (double lambda : {0.0, 0.1, 0.5, 1.0, 2.0}) {
    const double v = joint_loss(lm, ls, lambda).item();
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("joint loss gradient through the full head chain vs finite differences") {
  std::mt19937_64 rng(43);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Tensor x = oracle::random_tensor(Shape(4, 2, 5, 5), rng);
    Tensor w = oracle::random_tensor(Shape(3, 2, 3, 3), rng, 0.5);
    Tensor baseline = oracle::random_tensor(Shape(4, 3, 5, 5), rng);
    std::vector<std::int64_t> labels = {0, 1, 1, 0};

    NetworkDef host;
    host.arch = "probe";
    host.input_shape = Shape(1, 2, 5, 5);
    host.num_classes = 2;
    LayerNode conv;
    conv.kind = LayerKind::Conv;
    conv.inputs = {-1};
    conv.weight = w;
    conv.padding = 1;
    conv.input_mask = {1, 1};
    host.nodes.push_back(conv);
    LossHead head = build_head(host, 0, 2, seed);

    BaselineCache cache;
    cache.activations.emplace(0, baseline);

    auto f = [&](Tape* tape) {
      Tensor out = conv2d(x, w, 1, 1, tape);
      Tensor rec = reconstruction_loss(out, cache, 0, tape);
      Tensor dis = discrimination_loss(head, out, labels, Mode::Batch, tape);
      return joint_loss(rec, dis, 1.0, tape);
    };

    Tape tape;
    w.set_requires_grad(true);
    Tensor loss = f(&tape);
    tape.backward(loss);
    std::vector<double> analytic(w.grad().begin(), w.grad().end());

    w.set_requires_grad(false);
    auto scalar_fn = [&]() { return f(nullptr).item(); };
    std::vector<double> numeric = oracle::central_diff(scalar_fn, w);
    CHECK(oracle::max_rel_error(analytic, numeric) < 1e-6);
  }
}

TEST_CASE("joint loss is convex along segments when the head is frozen affine") {
  // Single conv layer + frozen head with inference-mode BN. Beta is shifted
  // so pre-ReLU values stay positive at both endpoints; along the segment
  // they are affine in alpha, hence positive throughout, and the composite
  // is genuinely convex there.
  std::mt19937_64 rng(47);
  const std::vector<double> alphas = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};

  NetworkDef host;
  host.arch = "probe";
  host.input_shape = Shape(1, 2, 4, 4);
  host.num_classes = 3;
  LayerNode conv;
  conv.kind = LayerKind::Conv;
  conv.inputs = {-1};
  conv.weight = Tensor::zeros(Shape(3, 2, 3, 3));
  conv.padding = 1;
  conv.input_mask = {1, 1};
  host.nodes.push_back(conv);

  for (int pair = 0; pair < 40; ++pair) {
    Tensor x = oracle::random_tensor(Shape(5, 2, 4, 4), rng);
    Tensor baseline = oracle::random_tensor(Shape(5, 3, 4, 4), rng);
    std::vector<std::int64_t> labels = {0, 1, 2, 0, 1};
    Tensor w1 = oracle::random_tensor(Shape(3, 2, 3, 3), rng, 0.5);
    Tensor w2 = oracle::random_tensor(Shape(3, 2, 3, 3), rng, 0.5);

    LossHead head = build_head(host, 0, 3, static_cast<std::uint64_t>(pair));

    // find the positivity shift over both endpoints
    double low = 0.0;
    for (const Tensor& w : {w1, w2}) {
      Tensor out = conv2d(x, w, 1, 1);
      for (double v : out.values()) low = std::min(low, v / std::sqrt(1.0 + 1e-5));
    }
    for (auto& v : head.beta.values()) v = -low + 0.5;

    BaselineCache cache;
    cache.activations.emplace(0, baseline);

    auto loss_at = [&](const Tensor& w) {
      Tensor out = conv2d(x, w, 1, 1);
      Tensor rec = reconstruction_loss(out, cache, 0);
      Tensor dis = discrimination_loss(head, out, labels, Mode::Eval);
      return joint_loss(rec, dis, 1.0).item();
    };

    const double l1 = loss_at(w1);
    const double l2 = loss_at(w2);
    for (double alpha : alphas) {
      Tensor mix = Tensor::zeros(w1.shape());
      for (std::int64_t i = 0; i < mix.numel(); ++i) {
        mix.values()[static_cast<std::size_t>(i)] =
            alpha * w1.values()[static_cast<std::size_t>(i)] +
            (1.0 - alpha) * w2.values()[static_cast<std::size_t>(i)];
      }
      CHECK(loss_at(mix) <= alpha * l1 + (1.0 - alpha) * l2 + 1e-8);
    }
  }
}
