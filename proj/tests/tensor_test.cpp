// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "dcp/errors.hpp"
#include "dcp/ops.hpp"
#include "dcp/tape.hpp"
#include "dcp/tensor.hpp"
#include "oracles.hpp"

using namespace dcp;

TEST_CASE("conv2d identity 1x1 kernel") {
  Tensor x = Tensor::full(Shape(1, 1, 3, 3), 1.0);
  Tensor w = Tensor::full(Shape(1, 1, 1, 1), 1.0);
  Tensor out = conv2d(x, w, 1, 0);
  CHECK(out.shape() == Shape(1, 1, 3, 3));
  for (double v : out.values()) CHECK(v == 1.0);
}

TEST_CASE("conv2d zero kernel gives zeros") {
  std::mt19937_64 rng(7);
  Tensor x = oracle::random_tensor(Shape(2, 3, 5, 5), rng);
  Tensor w = Tensor::zeros(Shape(4, 3, 3, 3));
  Tensor out = conv2d(x, w, 1, 1);
  for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("conv2d 2-channel case against direct summation") {
  std::vector<double> xs(18), ws(8);
  for (int i = 0; i < 18; ++i) xs[static_cast<std::size_t>(i)] = i + 1;
  for (int i = 0; i < 8; ++i) ws[static_cast<std::size_t>(i)] = i + 1;
  Tensor x = Tensor::from(Shape(1, 2, 3, 3), xs);
  Tensor w = Tensor::from(Shape(1, 2, 2, 2), ws);
  Tensor out = conv2d(x, w, 1, 0);
  // frozen values computed by the quadruple-loop oracle
  CHECK(out.at(0, 0, 0, 0) == doctest::Approx(356.0).epsilon(1e-14));
  CHECK(out.at(0, 0, 0, 1) == doctest::Approx(392.0).epsilon(1e-14));
  CHECK(out.at(0, 0, 1, 0) == doctest::Approx(464.0).epsilon(1e-14));
  CHECK(out.at(0, 0, 1, 1) == doctest::Approx(500.0).epsilon(1e-14));
  Tensor ref = oracle::conv2d_reference(x, w, 1, 0);
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    CHECK(out.values()[static_cast<std::size_t>(i)] ==
          doctest::Approx(ref.values()[static_cast<std::size_t>(i)]).epsilon(1e-13));
  }
}

TEST_CASE("conv2d random cases match the brute-force oracle") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 6; ++trial) {
    const int stride = 1 + trial % 2;
    const int pad = trial % 3;
    Tensor x = oracle::random_tensor(Shape(2, 3, 7, 7), rng);
    Tensor w = oracle::random_tensor(Shape(4, 3, 3, 3), rng);
    Tensor out = conv2d(x, w, stride, pad);
    Tensor ref = oracle::conv2d_reference(x, w, stride, pad);
    REQUIRE(out.shape() == ref.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) {
      CHECK(out.values()[static_cast<std::size_t>(i)] ==
            doctest::Approx(ref.values()[static_cast<std::size_t>(i)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d rejects shape mismatch and impossible extents") {
  Tensor x = Tensor::zeros(Shape(1, 3, 5, 5));
  Tensor w = Tensor::zeros(Shape(2, 4, 3, 3));
  CHECK_THROWS_AS(conv2d(x, w, 1, 0), ShapeError);
  Tensor w2 = Tensor::zeros(Shape(2, 3, 7, 7));
  CHECK_THROWS_AS(conv2d(x, w2, 1, 0), ShapeError);  // kernel larger than input
}

TEST_CASE("conv2d is linear in the input") {
  std::mt19937_64 rng(23);
  Tensor x1 = oracle::random_tensor(Shape(1, 2, 5, 5), rng);
  Tensor x2 = oracle::random_tensor(Shape(1, 2, 5, 5), rng);
  Tensor w = oracle::random_tensor(Shape(3, 2, 3, 3), rng);
  const double alpha = 0.37, beta = -1.21;

  Tensor mix = Tensor::zeros(x1.shape());
  for (std::int64_t i = 0; i < mix.numel(); ++i) {
    mix.values()[static_cast<std::size_t>(i)] =
        alpha * x1.values()[static_cast<std::size_t>(i)] +
        beta * x2.values()[static_cast<std::size_t>(i)];
  }
  Tensor lhs = conv2d(mix, w, 1, 1);
  Tensor r1 = conv2d(x1, w, 1, 1);
  Tensor r2 = conv2d(x2, w, 1, 1);
  for (std::int64_t i = 0; i < lhs.numel(); ++i) {
    const double rhs = alpha * r1.values()[static_cast<std::size_t>(i)] +
                       beta * r2.values()[static_cast<std::size_t>(i)];
    const double denom = std::max({std::abs(lhs.values()[static_cast<std::size_t>(i)]),
                                   std::abs(rhs), 1e-12});
    CHECK(std::abs(lhs.values()[static_cast<std::size_t>(i)] - rhs) / denom < 1e-12);
  }
}

TEST_CASE("batch_norm zero-variance channel maps to beta") {
  Tensor x = Tensor::full(Shape(2, 1, 3, 3), 4.2);
  Tensor gamma = Tensor::full(Shape(1, 1, 1, 1), 1.0);
  Tensor beta = Tensor::zeros(Shape(1, 1, 1, 1));
  Tensor out = batch_norm(x, gamma, beta, nullptr, BatchNormMode::Batch, 1e-5, 0.9);
  for (double v : out.values()) CHECK(std::abs(v) < 1e-9);

  Tensor gamma0 = Tensor::zeros(Shape(1, 1, 1, 1));
  Tensor beta7 = Tensor::full(Shape(1, 1, 1, 1), 7.0);
  Tensor out2 = batch_norm(x, gamma0, beta7, nullptr, BatchNormMode::Batch, 1e-5, 0.9);
  for (double v : out2.values()) CHECK(v == 7.0);
}

TEST_CASE("batch_norm standardizes per channel") {
  std::mt19937_64 rng(31);
  Tensor x = oracle::random_tensor(Shape(2, 3, 4, 4), rng, 3.0);
  Tensor gamma = Tensor::full(Shape(1, 3, 1, 1), 1.0);
  Tensor beta = Tensor::zeros(Shape(1, 3, 1, 1));
  Tensor out = batch_norm(x, gamma, beta, nullptr, BatchNormMode::Batch, 1e-5, 0.9);

  std::vector<double> mean, var;
  oracle::channel_moments(out, mean, var);
  for (double m : mean) CHECK(std::abs(m) < 1e-10);
  for (double v : var) CHECK(v == doctest::Approx(1.0).epsilon(1e-3));  // eps correction
}

TEST_CASE("batch_norm inference uses running statistics") {
  Tensor x = Tensor::from(Shape(1, 1, 1, 2), {3.0, 5.0});
  Tensor gamma = Tensor::full(Shape(1, 1, 1, 1), 2.0);
  Tensor beta = Tensor::full(Shape(1, 1, 1, 1), 1.0);
  BatchNormStats stats;
  stats.mean = Tensor::full(Shape(1, 1, 1, 1), 3.0);
  stats.var = Tensor::full(Shape(1, 1, 1, 1), 4.0);
  Tensor out = batch_norm(x, gamma, beta, &stats, BatchNormMode::Inference, 0.0, 0.9);
  CHECK(out.at(0, 0, 0, 0) == doctest::Approx(1.0));
  CHECK(out.at(0, 0, 0, 1) == doctest::Approx(3.0));
}

TEST_CASE("relu basics and gradient routing") {
  Tensor x = Tensor::from(Shape(1, 3, 1, 1), {-1.0, 0.0, 2.0});
  Tensor out = relu(x);
  CHECK(out.values()[0] == 0.0);
  CHECK(out.values()[1] == 0.0);
  CHECK(out.values()[2] == 2.0);

  Tensor neg = Tensor::full(Shape(2, 2, 2, 2), -3.0);
  Tensor zero = relu(neg);
  for (double v : zero.values()) CHECK(v == 0.0);

  // upstream grad passes only where input > 0
  Tensor y = Tensor::from(Shape(1, 3, 1, 1), {-1.5, 0.5, 2.5});
  y.set_requires_grad(true);
  Tape tape;
  Tensor loss = sum(relu(y, &tape), &tape);
  tape.backward(loss);
  CHECK(y.grad()[0] == 0.0);
  CHECK(y.grad()[1] == 1.0);
  CHECK(y.grad()[2] == 1.0);
}

TEST_CASE("max_pool windows") {
  // monotone grid: bottom-right element of each window wins
  std::vector<double> vals(16);
  for (int i = 0; i < 16; ++i) vals[static_cast<std::size_t>(i)] = i;
  Tensor x = Tensor::from(Shape(1, 1, 4, 4), vals);
  Tensor out = max_pool(x, 2, 2);
  CHECK(out.at(0, 0, 0, 0) == 5.0);
  CHECK(out.at(0, 0, 0, 1) == 7.0);
  CHECK(out.at(0, 0, 1, 0) == 13.0);
  CHECK(out.at(0, 0, 1, 1) == 15.0);

  Tensor c = Tensor::full(Shape(1, 2, 4, 4), 3.3);
  Tensor cout = max_pool(c, 2, 2);
  for (double v : cout.values()) CHECK(v == 3.3);

  std::mt19937_64 rng(41);
  Tensor r = oracle::random_tensor(Shape(2, 3, 6, 6), rng);
  Tensor got = max_pool(r, 2, 2);
  Tensor ref = oracle::max_pool_reference(r, 2, 2);
  for (std::int64_t i = 0; i < got.numel(); ++i) {
    CHECK(got.values()[static_cast<std::size_t>(i)] == ref.values()[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("global_avg_pool means") {
  Tensor c = Tensor::full(Shape(2, 3, 4, 4), 2.25);
  Tensor out = global_avg_pool(c);
  for (double v : out.values()) CHECK(v == doctest::Approx(2.25));

  Tensor x = Tensor::from(Shape(1, 1, 2, 2), {1.0, 2.0, 3.0, 4.0});
  CHECK(global_avg_pool(x).item() == doctest::Approx(2.5));

  std::mt19937_64 rng(43);
  Tensor r = oracle::random_tensor(Shape(3, 2, 5, 5), rng);
  Tensor got = global_avg_pool(r);
  for (std::int64_t i = 0; i < 3; ++i) {
    for (std::int64_t k = 0; k < 2; ++k) {
      double sum = 0.0;
      for (std::int64_t y = 0; y < 5; ++y)
        for (std::int64_t x2 = 0; x2 < 5; ++x2) sum += r.at(i, k, y, x2);
      CHECK(got.at(i, k, 0, 0) == doctest::Approx(sum / 25.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("fully_connected matches a triple-loop product") {
  // identity theta leaves the input unchanged
  Tensor x = Tensor::from(Shape(1, 3, 1, 1), {1.0, -2.0, 0.5});
  Tensor eye = Tensor::zeros(Shape(3, 3, 1, 1));
  for (int i = 0; i < 3; ++i) eye.at(i, i, 0, 0) = 1.0;
  Tensor same = fully_connected(x, eye);
  for (int i = 0; i < 3; ++i) CHECK(same.at(0, i, 0, 0) == x.at(0, i, 0, 0));

  Tensor zero = fully_connected(x, Tensor::zeros(Shape(3, 4, 1, 1)));
  for (double v : zero.values()) CHECK(v == 0.0);

  std::mt19937_64 rng(47);
  Tensor a = oracle::random_tensor(Shape(2, 3, 1, 1), rng);
  Tensor th = oracle::random_tensor(Shape(3, 4, 1, 1), rng);
  Tensor got = fully_connected(a, th);
  for (std::int64_t i = 0; i < 2; ++i) {
    for (std::int64_t t = 0; t < 4; ++t) {
      double acc = 0.0;
      for (std::int64_t k = 0; k < 3; ++k) acc += a.at(i, k, 0, 0) * th.at(k, t, 0, 0);
      CHECK(got.at(i, t, 0, 0) == doctest::Approx(acc).epsilon(1e-12));
    }
  }

  Tensor bad = Tensor::zeros(Shape(2, 5, 1, 1));
  CHECK_THROWS_AS(fully_connected(bad, th), ShapeError);
}

TEST_CASE("softmax_cross_entropy values") {
  // uniform logits over 10 classes -> ln 10
  Tensor uniform = Tensor::full(Shape(4, 10, 1, 1), 0.3);
  std::vector<std::int64_t> labels = {0, 3, 7, 9};
  CHECK(softmax_cross_entropy(uniform, labels).item() ==
        doctest::Approx(std::log(10.0)).epsilon(1e-12));

  // huge-margin one-hot logits -> ~0
  Tensor sharp = Tensor::zeros(Shape(2, 5, 1, 1));
  sharp.at(0, 1, 0, 0) = 100.0;
  sharp.at(1, 4, 0, 0) = 100.0;
  std::vector<std::int64_t> l2 = {1, 4};
  CHECK(softmax_cross_entropy(sharp, l2).item() < 1e-10);

  std::mt19937_64 rng(53);
  Tensor z = oracle::random_tensor(Shape(4, 3, 1, 1), rng);
  std::vector<std::int64_t> l3 = {2, 0, 1, 2};
  CHECK(softmax_cross_entropy(z, l3).item() ==
        doctest::Approx(oracle::softmax_ce_reference(z, l3)).epsilon(1e-12));

  // non-negativity on many random draws
  for (int trial = 0; trial < 20; ++trial) {
    Tensor zz = oracle::random_tensor(Shape(3, 4, 1, 1), rng, 5.0);
    std::vector<std::int64_t> ll = {0, 1, 2};
    CHECK(softmax_cross_entropy(zz, ll).item() >= 0.0);
  }

  std::vector<std::int64_t> bad = {0, 5, 1, 2};
  CHECK_THROWS_AS(softmax_cross_entropy(z, bad), DataError);
}

TEST_CASE("mean_squared_half values") {
  std::mt19937_64 rng(59);
  Tensor a = oracle::random_tensor(Shape(2, 3, 2, 2), rng);
  CHECK(mean_squared_half(a, a, 24).item() == 0.0);

  Tensor one = Tensor::full(Shape(1, 1, 1, 1), 1.0);
  Tensor zero = Tensor::zeros(Shape(1, 1, 1, 1));
  CHECK(mean_squared_half(one, zero, 1).item() == doctest::Approx(0.5));

  Tensor b = oracle::random_tensor(Shape(2, 3, 2, 2), rng);
  CHECK(mean_squared_half(a, b, 24).item() ==
        doctest::Approx(oracle::mse_half_reference(a, b, 24)).epsilon(1e-13));

  Tensor c = Tensor::zeros(Shape(1, 3, 2, 2));
  CHECK_THROWS_AS(mean_squared_half(a, c, 12), ShapeError);
}

TEST_CASE("backward populates leaf gradients") {
  std::mt19937_64 rng(61);

  // loss = sum(W): grad all ones
  Tensor w = oracle::random_tensor(Shape(2, 2, 2, 2), rng);
  w.set_requires_grad(true);
  {
    Tape tape;
    Tensor loss = sum(w, &tape);
    tape.backward(loss);
    for (double g : w.grad()) CHECK(g == 1.0);
  }

  // loss = 0.5 * ||W||^2: grad equals W
  {
    Tape tape;
    Tensor loss = mul_scalar(sum(mul(w, w, &tape), &tape), 0.5, &tape);
    tape.backward(loss);
    for (std::int64_t i = 0; i < w.numel(); ++i) {
      CHECK(w.grad()[static_cast<std::size_t>(i)] ==
            doctest::Approx(w.values()[static_cast<std::size_t>(i)]).epsilon(1e-12));
    }
  }

  // loss not on tape rejected; non-scalar rejected
  {
    Tape tape;
    Tensor loss = sum(w, &tape);
    Tensor other = Tensor::scalar(1.0);
    CHECK_THROWS_AS(tape.backward(other), ShapeError);
    CHECK_THROWS_AS(tape.backward(w), ShapeError);
  }
}

TEST_CASE("backward is bit-deterministic") {
  std::mt19937_64 rng(67);
  Tensor x = oracle::random_tensor(Shape(2, 3, 6, 6), rng);
  Tensor w = oracle::random_tensor(Shape(4, 3, 3, 3), rng);

  auto run = [&](std::vector<double>& gx, std::vector<double>& gw) {
    Tensor xi = x.clone();
    Tensor wi = w.clone();
    xi.set_requires_grad(true);
    wi.set_requires_grad(true);
    Tape tape;
    Tensor out = conv2d(xi, wi, 1, 1, &tape);
    Tensor act = relu(out, &tape);
    Tensor loss = mul_scalar(sum(mul(act, act, &tape), &tape), 0.5, &tape);
    tape.backward(loss);
    gx.assign(xi.grad().begin(), xi.grad().end());
    gw.assign(wi.grad().begin(), wi.grad().end());
  };

  std::vector<double> gx1, gw1, gx2, gw2;
  run(gx1, gw1);
  run(gx2, gw2);
  CHECK(std::memcmp(gx1.data(), gx2.data(), gx1.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(gw1.data(), gw2.data(), gw1.size() * sizeof(double)) == 0);
}

namespace {

// Generic finite-difference harness: builds the forward function twice, once
// for the analytic gradient via the tape and once per perturbed evaluation.
void check_gradient(const std::function<Tensor(Tape*)>& forward_fn, Tensor& param,
                    double tol = 1e-6) {
  Tape tape;
  param.set_requires_grad(true);
  Tensor loss = forward_fn(&tape);
  tape.backward(loss);
  std::vector<double> analytic(param.grad().begin(), param.grad().end());

  param.set_requires_grad(false);
  auto scalar_fn = [&]() { return forward_fn(nullptr).item(); };
  std::vector<double> numeric = oracle::central_diff(scalar_fn, param);
  param.set_requires_grad(true);

  CHECK(oracle::max_rel_error(analytic, numeric) < tol);
}

}  // namespace

TEST_CASE("finite differences validate every operator gradient") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed * 7919);

    // conv2d w.r.t. weight and input
    {
      Tensor x = oracle::random_tensor(Shape(2, 2, 5, 5), rng);
      Tensor w = oracle::random_tensor(Shape(3, 2, 3, 3), rng);
      auto f = [&](Tape* tape) {
        Tensor out = conv2d(x, w, 1, 1, tape);
        return mul_scalar(sum(mul(out, out, tape), tape), 0.5, tape);
      };
      check_gradient(f, w);
      check_gradient(f, x);
    }

    // batch_norm w.r.t. input, gamma, beta (batch statistics). The loss
    // compares against a fixed target; a pure norm of the output would be
    // almost invariant to x (the op standardizes), leaving nothing to check.
    {
      Tensor x = oracle::random_tensor(Shape(3, 2, 3, 3), rng, 2.0);
      Tensor gamma = oracle::random_tensor(Shape(1, 2, 1, 1), rng);
      Tensor beta = oracle::random_tensor(Shape(1, 2, 1, 1), rng);
      Tensor target = oracle::random_tensor(Shape(3, 2, 3, 3), rng);
      auto f = [&](Tape* tape) {
        Tensor out = batch_norm(x, gamma, beta, nullptr, BatchNormMode::Batch, 1e-5, 0.9, tape);
        return mean_squared_half(out, target, out.numel(), tape);
      };
      check_gradient(f, x);
      check_gradient(f, gamma);
      check_gradient(f, beta);
    }

    // relu away from the kink
    {
      Tensor x = oracle::random_tensor(Shape(2, 3, 4, 4), rng);
      for (auto& v : x.values()) {
        if (std::abs(v) < 0.05) v = v < 0 ? v - 0.1 : v + 0.1;
      }
      auto f = [&](Tape* tape) {
        Tensor out = relu(x, tape);
        return mul_scalar(sum(mul(out, out, tape), tape), 0.5, tape);
      };
      check_gradient(f, x);
    }

    // max_pool (distinct values, so the argmax is stable under perturbation)
    {
      Tensor x = oracle::random_tensor(Shape(2, 2, 4, 4), rng, 3.0);
      auto f = [&](Tape* tape) {
        Tensor out = max_pool(x, 2, 2, tape);
        return mul_scalar(sum(mul(out, out, tape), tape), 0.5, tape);
      };
      check_gradient(f, x);
    }

    // global_avg_pool
    {
      Tensor x = oracle::random_tensor(Shape(2, 3, 4, 4), rng);
      auto f = [&](Tape* tape) {
        Tensor out = global_avg_pool(x, tape);
        return mul_scalar(sum(mul(out, out, tape), tape), 0.5, tape);
      };
      check_gradient(f, x);
    }

    // fully_connected + softmax cross-entropy w.r.t. logits path and theta
    {
      Tensor x = oracle::random_tensor(Shape(4, 3, 1, 1), rng);
      Tensor th = oracle::random_tensor(Shape(3, 5, 1, 1), rng);
      std::vector<std::int64_t> labels = {0, 2, 4, 1};
      auto f = [&](Tape* tape) {
        Tensor z = fully_connected(x, th, tape);
        return softmax_cross_entropy(z, labels, tape);
      };
      check_gradient(f, th);
      check_gradient(f, x);
    }

    // mean_squared_half both sides
    {
      Tensor a = oracle::random_tensor(Shape(2, 2, 3, 3), rng);
      Tensor b = oracle::random_tensor(Shape(2, 2, 3, 3), rng);
      auto f = [&](Tape* tape) { return mean_squared_half(a, b, 36, tape); };
      check_gradient(f, a);
      check_gradient(f, b);
    }
  }
}

TEST_CASE("sgd_step updates and guards") {
  Tensor w = Tensor::full(Shape(1, 1, 1, 1), 1.0);
  w.set_requires_grad(true);
  {
    Tape tape;
    Tensor loss = sum(w, &tape);
    tape.backward(loss);
    Tensor params[1] = {w};
    sgd_step(params, 0.1);
    CHECK(w.values()[0] == doctest::Approx(0.9));
    sgd_step(params, 0.0);
    CHECK(w.values()[0] == doctest::Approx(0.9));
  }

  Tensor fresh = Tensor::full(Shape(1, 1, 1, 1), 1.0);
  Tensor params[1] = {fresh};
  CHECK_THROWS_AS(sgd_step(params, 0.1), ShapeError);
}

TEST_CASE("gradient descent reaches a quadratic bowl minimum") {
  // loss = 0.5 * ||W - target||^2 has its minimum at W = target
  std::mt19937_64 rng(71);
  Tensor target = oracle::random_tensor(Shape(1, 4, 1, 1), rng);
  Tensor w = Tensor::zeros(Shape(1, 4, 1, 1));
  w.set_requires_grad(true);
  for (int step = 0; step < 100; ++step) {
    Tape tape;
    Tensor loss = mean_squared_half(w, target, 1, &tape);
    tape.backward(loss);
    Tensor params[1] = {w};
    sgd_step(params, 0.5);
  }
  for (std::int64_t i = 0; i < 4; ++i) {
    CHECK(w.values()[static_cast<std::size_t>(i)] ==
          doctest::Approx(target.values()[static_cast<std::size_t>(i)]).epsilon(1e-8));
  }
}

TEST_CASE("forward passes stay finite on finite inputs") {
  std::mt19937_64 rng(73);
  Tensor x = oracle::random_tensor(Shape(2, 3, 6, 6), rng, 10.0);
  Tensor w = oracle::random_tensor(Shape(4, 3, 3, 3), rng, 10.0);
  Tensor out = conv2d(x, w, 1, 1);
  CHECK_NOTHROW(check_finite(out, "conv output"));
  Tensor bad = Tensor::full(Shape(1, 1, 1, 1), std::nan(""));
  CHECK_THROWS_AS(check_finite(bad, "nan tensor"), NumericError);
}
