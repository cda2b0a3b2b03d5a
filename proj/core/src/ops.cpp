// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#include "dcp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dcp/errors.hpp"

namespace dcp {

namespace {

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Valid output-index range [lo, hi) such that o*stride + f - pad lands
// inside [0, in_extent).
void valid_range(std::int64_t out_extent, std::int64_t in_extent, int stride, int pad,
                 std::int64_t f, std::int64_t& lo, std::int64_t& hi) {
  const std::int64_t num = pad - f;
  lo = num <= 0 ? 0 : (num + stride - 1) / stride;
  const std::int64_t top = in_extent - 1 - f + pad;
  hi = top < 0 ? 0 : std::min<std::int64_t>(out_extent, top / stride + 1);
  if (lo > hi) lo = hi;
}

// Output extent (h + 2p - f) / s + 1 in integer arithmetic; rejected when
// the window does not fit the padded input at all.
std::int64_t conv_out_extent(std::int64_t in, int pad, std::int64_t f, int stride,
                             const char* axis, const Shape& in_shape, const Shape& w_shape) {
  const std::int64_t span = in + 2 * pad - f;
  if (span < 0) {
    throw ShapeError(std::string("convolution output extent along ") + axis +
                     " is not a positive integer for input " + in_shape.str() + ", weight " +
                     w_shape.str() + ", stride " + std::to_string(stride) + ", padding " +
                     std::to_string(pad));
  }
  return span / stride + 1;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, int stride, int padding,
              Tape* tape) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (stride < 1) throw ConfigError("conv2d stride must be positive");
  if (padding < 0) throw ConfigError("conv2d padding must be non-negative");
  if (xs.c() != ws.c()) {
    throw ShapeError("conv2d channel mismatch: input " + xs.str() + " vs weight " + ws.str());
  }
  const std::int64_t n = xs.n(), c = xs.c(), ih = xs.h(), iw = xs.w();
  const std::int64_t oc = ws.n(), fh = ws.h(), fw = ws.w();
  const std::int64_t oh = conv_out_extent(ih, padding, fh, stride, "H", xs, ws);
  const std::int64_t ow = conv_out_extent(iw, padding, fw, stride, "W", xs, ws);

  Tensor out = Tensor::zeros(Shape(n, oc, oh, ow));

  // Channels whose entire weight column is zero contribute nothing; skipping
  // them makes masked/partially-selected forward passes cheap.
  std::vector<char> col_zero(static_cast<std::size_t>(c), 1);
  {
    const double* w = weight.values().data();
    for (std::int64_t j = 0; j < oc; ++j) {
      for (std::int64_t k = 0; k < c; ++k) {
        if (!col_zero[static_cast<std::size_t>(k)]) continue;
        const double* wk = w + ((j * c + k) * fh) * fw;
        for (std::int64_t t = 0; t < fh * fw; ++t) {
          if (wk[t] != 0.0) {
            col_zero[static_cast<std::size_t>(k)] = 0;
            break;
          }
        }
      }
    }
  }

  {
    const double* x = input.values().data();
    const double* w = weight.values().data();
    double* o = out.values().data();
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < oc; ++j) {
        double* out_ij = o + ((i * oc + j) * oh) * ow;
        for (std::int64_t k = 0; k < c; ++k) {
          if (col_zero[static_cast<std::size_t>(k)]) continue;
          const double* x_ik = x + ((i * c + k) * ih) * iw;
          const double* w_jk = w + ((j * c + k) * fh) * fw;
          for (std::int64_t fy = 0; fy < fh; ++fy) {
            std::int64_t ylo, yhi;
            valid_range(oh, ih, stride, padding, fy, ylo, yhi);
            for (std::int64_t fx = 0; fx < fw; ++fx) {
              const double wv = w_jk[fy * fw + fx];
              if (wv == 0.0) continue;
              std::int64_t xlo, xhi;
              valid_range(ow, iw, stride, padding, fx, xlo, xhi);
              for (std::int64_t oy = ylo; oy < yhi; ++oy) {
                const double* in_row = x_ik + (oy * stride + fy - padding) * iw;
                double* out_row = out_ij + oy * ow;
                for (std::int64_t ox = xlo; ox < xhi; ++ox) {
                  out_row[ox] += wv * in_row[ox * stride + fx - padding];
                }
              }
            }
          }
        }
      }
    }
  }

  if (tape != nullptr && any_requires_grad({&input, &weight})) {
    out.set_requires_grad(true);
    Tensor in_t = input, w_t = weight, out_t = out;
    const int s = stride, p = padding;
    tape->record("conv2d", {input, weight}, out, [in_t, w_t, out_t, s, p]() mutable {
      const Shape& xs2 = in_t.shape();
      const Shape& ws2 = w_t.shape();
      const Shape& os2 = out_t.shape();
      const std::int64_t n2 = xs2.n(), c2 = xs2.c(), ih2 = xs2.h(), iw2 = xs2.w();
      const std::int64_t oc2 = ws2.n(), fh2 = ws2.h(), fw2 = ws2.w();
      const std::int64_t oh2 = os2.h(), ow2 = os2.w();
      const double* go = out_t.grad().data();
      const double* x = in_t.values().data();
      const double* w = w_t.values().data();

      if (in_t.requires_grad()) {
        double* gx = in_t.grad().data();
        for (std::int64_t i = 0; i < n2; ++i) {
          for (std::int64_t k = 0; k < c2; ++k) {
            double* gx_ik = gx + ((i * c2 + k) * ih2) * iw2;
            for (std::int64_t j = 0; j < oc2; ++j) {
              const double* go_ij = go + ((i * oc2 + j) * oh2) * ow2;
              const double* w_jk = w + ((j * c2 + k) * fh2) * fw2;
              for (std::int64_t fy = 0; fy < fh2; ++fy) {
                std::int64_t ylo, yhi;
                valid_range(oh2, ih2, s, p, fy, ylo, yhi);
                for (std::int64_t fx = 0; fx < fw2; ++fx) {
                  const double wv = w_jk[fy * fw2 + fx];
                  if (wv == 0.0) continue;
                  std::int64_t xlo, xhi;
                  valid_range(ow2, iw2, s, p, fx, xlo, xhi);
                  for (std::int64_t oy = ylo; oy < yhi; ++oy) {
                    double* gx_row = gx_ik + (oy * s + fy - p) * iw2;
                    const double* go_row = go_ij + oy * ow2;
                    for (std::int64_t ox = xlo; ox < xhi; ++ox) {
                      gx_row[ox * s + fx - p] += wv * go_row[ox];
                    }
                  }
                }
              }
            }
          }
        }
      }

      if (w_t.requires_grad()) {
        double* gw = w_t.grad().data();
        for (std::int64_t i = 0; i < n2; ++i) {
          for (std::int64_t j = 0; j < oc2; ++j) {
            const double* go_ij = go + ((i * oc2 + j) * oh2) * ow2;
            for (std::int64_t k = 0; k < c2; ++k) {
              const double* x_ik = x + ((i * c2 + k) * ih2) * iw2;
              double* gw_jk = gw + ((j * c2 + k) * fh2) * fw2;
              for (std::int64_t fy = 0; fy < fh2; ++fy) {
                std::int64_t ylo, yhi;
                valid_range(oh2, ih2, s, p, fy, ylo, yhi);
                for (std::int64_t fx = 0; fx < fw2; ++fx) {
                  std::int64_t xlo, xhi;
                  valid_range(ow2, iw2, s, p, fx, xlo, xhi);
                  double acc = 0.0;
                  for (std::int64_t oy = ylo; oy < yhi; ++oy) {
                    const double* in_row = x_ik + (oy * s + fy - p) * iw2;
                    const double* go_row = go_ij + oy * ow2;
                    for (std::int64_t ox = xlo; ox < xhi; ++ox) {
                      acc += in_row[ox * s + fx - p] * go_row[ox];
                    }
                  }
                  gw_jk[fy * fw2 + fx] += acc;
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormStats* running, BatchNormMode mode, double eps,
                  double momentum, Tape* tape) {
  const Shape& xs = input.shape();
  const std::int64_t n = xs.n(), c = xs.c(), h = xs.h(), w = xs.w();
  const std::int64_t reduce = n * h * w;
  if (reduce == 0) throw ShapeError("batch_norm on zero-size channel slices, input " + xs.str());
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("batch_norm gamma/beta length " + std::to_string(gamma.numel()) +
                     "/" + std::to_string(beta.numel()) + " does not match channel count " +
                     std::to_string(c));
  }
  if (mode == BatchNormMode::Inference && running == nullptr) {
    throw ConfigError("batch_norm inference mode requires running statistics");
  }

  const std::int64_t hw = h * w;
  std::vector<double> mean_v(static_cast<std::size_t>(c), 0.0);
  std::vector<double> invstd_v(static_cast<std::size_t>(c), 0.0);
  const double* x = input.values().data();

  if (mode == BatchNormMode::Inference) {
    const double* rm = running->mean.values().data();
    const double* rv = running->var.values().data();
    for (std::int64_t k = 0; k < c; ++k) {
      mean_v[static_cast<std::size_t>(k)] = rm[k];
      invstd_v[static_cast<std::size_t>(k)] = 1.0 / std::sqrt(rv[k] + eps);
    }
  } else {
    for (std::int64_t k = 0; k < c; ++k) {
      double s = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double* row = x + ((i * c + k) * h) * w;
        for (std::int64_t t = 0; t < hw; ++t) s += row[t];
      }
      const double mu = s / static_cast<double>(reduce);
      double sq = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const double* row = x + ((i * c + k) * h) * w;
        for (std::int64_t t = 0; t < hw; ++t) {
          const double d = row[t] - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(reduce);
      mean_v[static_cast<std::size_t>(k)] = mu;
      invstd_v[static_cast<std::size_t>(k)] = 1.0 / std::sqrt(var + eps);
      if (mode == BatchNormMode::Training && running != nullptr) {
        const double unbiased =
            reduce > 1 ? var * static_cast<double>(reduce) / static_cast<double>(reduce - 1) : var;
        running->mean.values()[static_cast<std::size_t>(k)] =
            momentum * running->mean.values()[static_cast<std::size_t>(k)] + (1.0 - momentum) * mu;
        running->var.values()[static_cast<std::size_t>(k)] =
            momentum * running->var.values()[static_cast<std::size_t>(k)] +
            (1.0 - momentum) * unbiased;
      }
    }
  }

  Tensor out = Tensor::zeros(xs);
  {
    double* o = out.values().data();
    const double* g = gamma.values().data();
    const double* b = beta.values().data();
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t k = 0; k < c; ++k) {
        const double mu = mean_v[static_cast<std::size_t>(k)];
        const double is = invstd_v[static_cast<std::size_t>(k)];
        const double gk = g[k], bk = b[k];
        const double* xr = x + ((i * c + k) * h) * w;
        double* orow = o + ((i * c + k) * h) * w;
        for (std::int64_t t = 0; t < hw; ++t) {
          orow[t] = gk * (xr[t] - mu) * is + bk;
        }
      }
    }
  }

  if (tape != nullptr && any_requires_grad({&input, &gamma, &beta})) {
    out.set_requires_grad(true);
    Tensor in_t = input, g_t = gamma, b_t = beta, out_t = out;
    const bool batch_stats = mode != BatchNormMode::Inference;
    tape->record("batch_norm", {input, gamma, beta}, out,
                 [in_t, g_t, b_t, out_t, mean_v, invstd_v, batch_stats]() mutable {
      const Shape& xs2 = in_t.shape();
      const std::int64_t n2 = xs2.n(), c2 = xs2.c(), hw2 = xs2.h() * xs2.w();
      const std::int64_t reduce2 = n2 * hw2;
      const double* x2 = in_t.values().data();
      const double* go = out_t.grad().data();
      const double* g2 = g_t.values().data();

      for (std::int64_t k = 0; k < c2; ++k) {
        const double mu = mean_v[static_cast<std::size_t>(k)];
        const double is = invstd_v[static_cast<std::size_t>(k)];
        const double gk = g2[k];

        double sum_go = 0.0, sum_go_xhat = 0.0, sum_dxh_xc = 0.0, sum_xc = 0.0;
        for (std::int64_t i = 0; i < n2; ++i) {
          const double* xr = x2 + ((i * c2 + k) * hw2);
          const double* gor = go + ((i * c2 + k) * hw2);
          for (std::int64_t t = 0; t < hw2; ++t) {
            const double xc = xr[t] - mu;
            sum_go += gor[t];
            sum_go_xhat += gor[t] * xc * is;
            sum_dxh_xc += gor[t] * gk * xc;
            sum_xc += xc;
          }
        }

        if (g_t.requires_grad()) g_t.grad()[static_cast<std::size_t>(k)] += sum_go_xhat;
        if (b_t.requires_grad()) b_t.grad()[static_cast<std::size_t>(k)] += sum_go;

        if (in_t.requires_grad()) {
          double* gx = in_t.grad().data();
          if (batch_stats) {
            const double dvar = sum_dxh_xc * (-0.5) * is * is * is;
            const double dmu = -is * gk * sum_go +
                               dvar * (-2.0 / static_cast<double>(reduce2)) * sum_xc;
            for (std::int64_t i = 0; i < n2; ++i) {
              const double* xr = x2 + ((i * c2 + k) * hw2);
              const double* gor = go + ((i * c2 + k) * hw2);
              double* gxr = gx + ((i * c2 + k) * hw2);
              for (std::int64_t t = 0; t < hw2; ++t) {
                const double xc = xr[t] - mu;
                gxr[t] += gor[t] * gk * is +
                          dvar * 2.0 * xc / static_cast<double>(reduce2) +
                          dmu / static_cast<double>(reduce2);
              }
            }
          } else {
            for (std::int64_t i = 0; i < n2; ++i) {
              const double* gor = go + ((i * c2 + k) * hw2);
              double* gxr = gx + ((i * c2 + k) * hw2);
              for (std::int64_t t = 0; t < hw2; ++t) {
                gxr[t] += gor[t] * gk * is;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& input, Tape* tape) {
  Tensor out = Tensor::zeros(input.shape());
  {
    const double* x = input.values().data();
    double* o = out.values().data();
    const std::int64_t count = input.numel();
    for (std::int64_t i = 0; i < count; ++i) o[i] = x[i] > 0.0 ? x[i] : 0.0;
  }
  if (tape != nullptr && input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor in_t = input, out_t = out;
    tape->record("relu", {input}, out, [in_t, out_t]() mutable {
      if (!in_t.requires_grad()) return;
      const double* x = in_t.values().data();
      const double* go = out_t.grad().data();
      double* gx = in_t.grad().data();
      const std::int64_t count = in_t.numel();
      for (std::int64_t i = 0; i < count; ++i) {
        if (x[i] > 0.0) gx[i] += go[i];
      }
    });
  }
  return out;
}

Tensor max_pool(const Tensor& input, int window, int stride, Tape* tape) {
  const Shape& xs = input.shape();
  if (window < 1 || stride < 1) throw ConfigError("max_pool window and stride must be positive");
  const std::int64_t n = xs.n(), c = xs.c(), ih = xs.h(), iw = xs.w();
  const std::int64_t spanh = ih - window, spanw = iw - window;
  if (spanh < 0 || spanw < 0) {
    throw ShapeError("max_pool output extent is not a positive integer for input " + xs.str() +
                     ", window " + std::to_string(window) + ", stride " + std::to_string(stride));
  }
  const std::int64_t oh = spanh / stride + 1, ow = spanw / stride + 1;

  Tensor out = Tensor::zeros(Shape(n, c, oh, ow));
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.numel()), 0);
  {
    const double* x = input.values().data();
    double* o = out.values().data();
    std::int64_t oi = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t k = 0; k < c; ++k) {
        const double* plane = x + ((i * c + k) * ih) * iw;
        const std::int64_t plane_off = ((i * c + k) * ih) * iw;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          for (std::int64_t ox = 0; ox < ow; ++ox, ++oi) {
            double best = plane[(oy * stride) * iw + ox * stride];
            std::int64_t best_idx = (oy * stride) * iw + ox * stride;
            for (std::int64_t fy = 0; fy < window; ++fy) {
              for (std::int64_t fx = 0; fx < window; ++fx) {
                const std::int64_t idx = (oy * stride + fy) * iw + ox * stride + fx;
                if (plane[idx] > best) {
                  best = plane[idx];
                  best_idx = idx;
                }
              }
            }
            o[oi] = best;
            argmax[static_cast<std::size_t>(oi)] = plane_off + best_idx;
          }
        }
      }
    }
  }

  if (tape != nullptr && input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor in_t = input, out_t = out;
    tape->record("max_pool", {input}, out, [in_t, out_t, argmax = std::move(argmax)]() mutable {
      if (!in_t.requires_grad()) return;
      const double* go = out_t.grad().data();
      double* gx = in_t.grad().data();
      const std::int64_t count = out_t.numel();
      for (std::int64_t i = 0; i < count; ++i) {
        gx[argmax[static_cast<std::size_t>(i)]] += go[i];
      }
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& input, Tape* tape) {
  const Shape& xs = input.shape();
  const std::int64_t n = xs.n(), c = xs.c(), hw = xs.h() * xs.w();
  if (hw < 1) throw ShapeError("global_avg_pool on empty spatial extent, input " + xs.str());

  Tensor out = Tensor::zeros(Shape(n, c, 1, 1));
  {
    const double* x = input.values().data();
    double* o = out.values().data();
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t k = 0; k < c; ++k) {
        const double* row = x + ((i * c + k) * hw);
        double s = 0.0;
        for (std::int64_t t = 0; t < hw; ++t) s += row[t];
        o[i * c + k] = s / static_cast<double>(hw);
      }
    }
  }
  if (tape != nullptr && input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor in_t = input, out_t = out;
    tape->record("global_avg_pool", {input}, out, [in_t, out_t]() mutable {
      if (!in_t.requires_grad()) return;
      const Shape& xs2 = in_t.shape();
      const std::int64_t n2 = xs2.n(), c2 = xs2.c(), hw2 = xs2.h() * xs2.w();
      const double* go = out_t.grad().data();
      double* gx = in_t.grad().data();
      for (std::int64_t i = 0; i < n2; ++i) {
        for (std::int64_t k = 0; k < c2; ++k) {
          const double g = go[i * c2 + k] / static_cast<double>(hw2);
          double* row = gx + ((i * c2 + k) * hw2);
          for (std::int64_t t = 0; t < hw2; ++t) row[t] += g;
        }
      }
    });
  }
  return out;
}

Tensor fully_connected(const Tensor& input, const Tensor& theta, Tape* tape) {
  const Shape& xs = input.shape();
  const Shape& ts = theta.shape();
  if (xs.h() != 1 || xs.w() != 1) {
    throw ShapeError("fully_connected expects input [N,d,1,1], got " + xs.str());
  }
  if (xs.c() != ts.n()) {
    throw ShapeError("fully_connected inner extents disagree: input " + xs.str() +
                     " vs theta " + ts.str());
  }
  const std::int64_t n = xs.n(), d = xs.c(), m = ts.c();
  Tensor out = Tensor::zeros(Shape(n, m, 1, 1));
  {
    const double* x = input.values().data();
    const double* th = theta.values().data();
    double* o = out.values().data();
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t k = 0; k < d; ++k) {
        const double xv = x[i * d + k];
        if (xv == 0.0) continue;
        const double* trow = th + k * m;
        double* orow = o + i * m;
        for (std::int64_t t = 0; t < m; ++t) orow[t] += xv * trow[t];
      }
    }
  }
  if (tape != nullptr && any_requires_grad({&input, &theta})) {
    out.set_requires_grad(true);
    Tensor in_t = input, th_t = theta, out_t = out;
    tape->record("fully_connected", {input, theta}, out, [in_t, th_t, out_t]() mutable {
      const std::int64_t n2 = in_t.shape().n(), d2 = in_t.shape().c(), m2 = th_t.shape().c();
      const double* go = out_t.grad().data();
      if (in_t.requires_grad()) {
        const double* th = th_t.values().data();
        double* gx = in_t.grad().data();
        for (std::int64_t i = 0; i < n2; ++i) {
          for (std::int64_t k = 0; k < d2; ++k) {
            const double* trow = th + k * m2;
            const double* grow = go + i * m2;
            double acc = 0.0;
            for (std::int64_t t = 0; t < m2; ++t) acc += trow[t] * grow[t];
            gx[i * d2 + k] += acc;
          }
        }
      }
      if (th_t.requires_grad()) {
        const double* x = in_t.values().data();
        double* gt = th_t.grad().data();
        for (std::int64_t i = 0; i < n2; ++i) {
          for (std::int64_t k = 0; k < d2; ++k) {
            const double xv = x[i * d2 + k];
            if (xv == 0.0) continue;
            double* trow = gt + k * m2;
            const double* grow = go + i * m2;
            for (std::int64_t t = 0; t < m2; ++t) trow[t] += xv * grow[t];
          }
        }
      }
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::int64_t> labels,
                             Tape* tape) {
  const Shape& ls = logits.shape();
  if (ls.h() != 1 || ls.w() != 1) {
    throw ShapeError("softmax_cross_entropy expects logits [N,m,1,1], got " + ls.str());
  }
  const std::int64_t n = ls.n(), m = ls.c();
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw ShapeError("label count " + std::to_string(labels.size()) +
                     " does not match batch size " + std::to_string(n));
  }
  for (std::int64_t i = 0; i < n; ++i) {
    if (labels[static_cast<std::size_t>(i)] < 0 || labels[static_cast<std::size_t>(i)] >= m) {
      throw DataError("label " + std::to_string(labels[static_cast<std::size_t>(i)]) +
                      " out of range [0," + std::to_string(m) + ") at sample " +
                      std::to_string(i));
    }
  }

  std::vector<double> probs(static_cast<std::size_t>(n * m), 0.0);
  double total = 0.0;
  {
    const double* z = logits.values().data();
    for (std::int64_t i = 0; i < n; ++i) {
      const double* row = z + i * m;
      double mx = row[0];
      for (std::int64_t t = 1; t < m; ++t) mx = std::max(mx, row[t]);
      double denom = 0.0;
      for (std::int64_t t = 0; t < m; ++t) denom += std::exp(row[t] - mx);
      const double lse = std::log(denom) + mx;
      for (std::int64_t t = 0; t < m; ++t) {
        probs[static_cast<std::size_t>(i * m + t)] = std::exp(row[t] - lse);
      }
      total += lse - row[labels[static_cast<std::size_t>(i)]];
    }
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));

  if (tape != nullptr && logits.requires_grad()) {
    out.set_requires_grad(true);
    Tensor z_t = logits, out_t = out;
    std::vector<std::int64_t> lab(labels.begin(), labels.end());
    tape->record("softmax_cross_entropy", {logits}, out,
                 [z_t, out_t, probs = std::move(probs), lab = std::move(lab)]() mutable {
      if (!z_t.requires_grad()) return;
      const std::int64_t n2 = z_t.shape().n(), m2 = z_t.shape().c();
      const double g = out_t.grad()[0] / static_cast<double>(n2);
      double* gz = z_t.grad().data();
      for (std::int64_t i = 0; i < n2; ++i) {
        for (std::int64_t t = 0; t < m2; ++t) {
          double p = probs[static_cast<std::size_t>(i * m2 + t)];
          if (t == lab[static_cast<std::size_t>(i)]) p -= 1.0;
          gz[i * m2 + t] += g * p;
        }
      }
    });
  }
  return out;
}

Tensor mean_squared_half(const Tensor& a, const Tensor& b, std::int64_t q, Tape* tape) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("mean_squared_half shape mismatch: " + a.shape().str() + " vs " +
                     b.shape().str());
  }
  if (q < 1) throw ConfigError("mean_squared_half requires positive Q");

  double acc = 0.0;
  {
    const double* av = a.values().data();
    const double* bv = b.values().data();
    const std::int64_t count = a.numel();
    for (std::int64_t i = 0; i < count; ++i) {
      const double d = av[i] - bv[i];
      acc += d * d;
    }
  }
  Tensor out = Tensor::scalar(acc / (2.0 * static_cast<double>(q)));

  if (tape != nullptr && any_requires_grad({&a, &b})) {
    out.set_requires_grad(true);
    Tensor a_t = a, b_t = b, out_t = out;
    tape->record("mean_squared_half", {a, b}, out, [a_t, b_t, out_t, q]() mutable {
      const double g = out_t.grad()[0] / static_cast<double>(q);
      const double* av = a_t.values().data();
      const double* bv = b_t.values().data();
      const std::int64_t count = a_t.numel();
      if (a_t.requires_grad()) {
        double* ga = a_t.grad().data();
        for (std::int64_t i = 0; i < count; ++i) ga[i] += g * (av[i] - bv[i]);
      }
      if (b_t.requires_grad()) {
        double* gb = b_t.grad().data();
        for (std::int64_t i = 0; i < count; ++i) gb[i] -= g * (av[i] - bv[i]);
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("add shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
  }
  Tensor out = Tensor::zeros(a.shape());
  {
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* o = out.values().data();
    const std::int64_t count = a.numel();
    for (std::int64_t i = 0; i < count; ++i) o[i] = av[i] + bv[i];
  }
  if (tape != nullptr && any_requires_grad({&a, &b})) {
    out.set_requires_grad(true);
    Tensor a_t = a, b_t = b, out_t = out;
    tape->record("add", {a, b}, out, [a_t, b_t, out_t]() mutable {
      const double* go = out_t.grad().data();
      const std::int64_t count = out_t.numel();
      if (a_t.requires_grad()) {
        double* ga = a_t.grad().data();
        for (std::int64_t i = 0; i < count; ++i) ga[i] += go[i];
      }
      if (b_t.requires_grad()) {
        double* gb = b_t.grad().data();
        for (std::int64_t i = 0; i < count; ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("mul shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
  }
  Tensor out = Tensor::zeros(a.shape());
  {
    const double* av = a.values().data();
    const double* bv = b.values().data();
    double* o = out.values().data();
    const std::int64_t count = a.numel();
    for (std::int64_t i = 0; i < count; ++i) o[i] = av[i] * bv[i];
  }
  if (tape != nullptr && any_requires_grad({&a, &b})) {
    out.set_requires_grad(true);
    Tensor a_t = a, b_t = b, out_t = out;
    tape->record("mul", {a, b}, out, [a_t, b_t, out_t]() mutable {
      const double* go = out_t.grad().data();
      const double* av = a_t.values().data();
      const double* bv = b_t.values().data();
      const std::int64_t count = out_t.numel();
      if (a_t.requires_grad()) {
        double* ga = a_t.grad().data();
        for (std::int64_t i = 0; i < count; ++i) ga[i] += go[i] * bv[i];
      }
      if (b_t.requires_grad()) {
        double* gb = b_t.grad().data();
        for (std::int64_t i = 0; i < count; ++i) gb[i] += go[i] * av[i];
      }
    });
  }
  return out;
}

Tensor mul_scalar(const Tensor& a, double s, Tape* tape) {
  Tensor out = Tensor::zeros(a.shape());
  {
    const double* av = a.values().data();
    double* o = out.values().data();
    const std::int64_t count = a.numel();
    for (std::int64_t i = 0; i < count; ++i) o[i] = av[i] * s;
  }
  if (tape != nullptr && a.requires_grad()) {
    out.set_requires_grad(true);
    Tensor a_t = a, out_t = out;
    tape->record("mul_scalar", {a}, out, [a_t, out_t, s]() mutable {
      if (!a_t.requires_grad()) return;
      const double* go = out_t.grad().data();
      double* ga = a_t.grad().data();
      const std::int64_t count = out_t.numel();
      for (std::int64_t i = 0; i < count; ++i) ga[i] += go[i] * s;
    });
  }
  return out;
}

Tensor sum(const Tensor& a, Tape* tape) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (tape != nullptr && a.requires_grad()) {
    out.set_requires_grad(true);
    Tensor a_t = a, out_t = out;
    tape->record("sum", {a}, out, [a_t, out_t]() mutable {
      if (!a_t.requires_grad()) return;
      const double g = out_t.grad()[0];
      double* ga = a_t.grad().data();
      const std::int64_t count = a_t.numel();
      for (std::int64_t i = 0; i < count; ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor channel_gather(const Tensor& input, const std::vector<int>& channels, Tape* tape) {
  const Shape& xs = input.shape();
  const std::int64_t n = xs.n(), c = xs.c(), hw = xs.h() * xs.w();
  for (int k : channels) {
    if (k < 0 || k >= c) {
      throw ShapeError("channel_gather index " + std::to_string(k) + " out of range for input " +
                       xs.str());
    }
  }
  const std::int64_t kc = static_cast<std::int64_t>(channels.size());
  Tensor out = Tensor::zeros(Shape(n, kc, xs.h(), xs.w()));
  {
    const double* x = input.values().data();
    double* o = out.values().data();
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t k = 0; k < kc; ++k) {
        const double* src = x + ((i * c + channels[static_cast<std::size_t>(k)]) * hw);
        double* dst = o + ((i * kc + k) * hw);
        for (std::int64_t t = 0; t < hw; ++t) dst[t] = src[t];
      }
    }
  }
  if (tape != nullptr && input.requires_grad()) {
    out.set_requires_grad(true);
    Tensor in_t = input, out_t = out;
    tape->record("channel_gather", {input}, out, [in_t, out_t, channels]() mutable {
      if (!in_t.requires_grad()) return;
      const std::int64_t n2 = in_t.shape().n(), c2 = in_t.shape().c();
      const std::int64_t hw2 = in_t.shape().h() * in_t.shape().w();
      const std::int64_t kc2 = static_cast<std::int64_t>(channels.size());
      const double* go = out_t.grad().data();
      double* gx = in_t.grad().data();
      for (std::int64_t i = 0; i < n2; ++i) {
        for (std::int64_t k = 0; k < kc2; ++k) {
          const double* src = go + ((i * kc2 + k) * hw2);
          double* dst = gx + ((i * c2 + channels[static_cast<std::size_t>(k)]) * hw2);
          for (std::int64_t t = 0; t < hw2; ++t) dst[t] += src[t];
        }
      }
    });
  }
  return out;
}

void sgd_step(std::span<Tensor> params, double lr) {
  if (lr < 0.0) throw ConfigError("sgd_step learning rate must be non-negative");
  for (Tensor& p : params) {
    if (!p.has_grad()) {
      throw ShapeError("sgd_step: parameter of shape " + p.shape().str() +
                       " has no populated gradient");
    }
  }
  for (Tensor& p : params) {
    double* v = p.values().data();
    const double* g = p.grad().data();
    const std::int64_t count = p.numel();
    for (std::int64_t i = 0; i < count; ++i) v[i] -= lr * g[i];
  }
}

}  // namespace dcp
