// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivtune/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "ivtune/error.hpp"

namespace ivtune::ops {

namespace {

template <class Fn>
void record(Tensor& out, std::initializer_list<const Tensor*> inputs, Fn&& fn) {
  if (auto* tape = GradTape::active()) tape->record(out, inputs, std::forward<Fn>(fn));
}

Tensor finish(Shape shape, std::vector<double> values, const char* op) {
  ensure_finite(values, op);
  return make_result(std::move(shape), std::move(values));
}

void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

// y += a * x
inline void axpy(std::size_t n, double a, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

inline double dot(std::size_t n, const double* x, const double* y) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

// Number of repetitions of `b` inside `a` when b's shape is a suffix of a's.
std::size_t broadcast_count(const Tensor& a, const Tensor& b, const char* op) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  bool ok = bs.size() <= as.size() &&
            std::equal(bs.begin(), bs.end(), as.end() - static_cast<std::ptrdiff_t>(bs.size()));
  require(ok, std::string(op) + ": shape " + shape_str(bs) + " does not broadcast onto " +
                  shape_str(as));
  return a.numel() / b.numel();
}

thread_local ReluPatternRecorder* g_relu_recorder = nullptr;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t reps = broadcast_count(a, b, "add");
  const std::size_t n = b.numel();
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> y(ad.begin(), ad.end());
  for (std::size_t r = 0; r < reps; ++r) axpy(n, 1.0, bd.data(), y.data() + r * n);
  Tensor out = finish(a.shape(), std::move(y), "add");
  record(out, {&a, &b}, [a, b, reps, n](std::span<const double> g) {
    if (auto ga = grad_slot(a); !ga.empty()) axpy(ga.size(), 1.0, g.data(), ga.data());
    if (auto gb = grad_slot(b); !gb.empty())
      for (std::size_t r = 0; r < reps; ++r) axpy(n, 1.0, g.data() + r * n, gb.data());
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> y(ad.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = ad[i] - bd[i];
  Tensor out = finish(a.shape(), std::move(y), "sub");
  record(out, {&a, &b}, [a, b](std::span<const double> g) {
    if (auto ga = grad_slot(a); !ga.empty()) axpy(ga.size(), 1.0, g.data(), ga.data());
    if (auto gb = grad_slot(b); !gb.empty()) axpy(gb.size(), -1.0, g.data(), gb.data());
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t reps = broadcast_count(a, b, "mul");
  const std::size_t n = b.numel();
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> y(ad.size());
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t i = 0; i < n; ++i) y[r * n + i] = ad[r * n + i] * bd[i];
  Tensor out = finish(a.shape(), std::move(y), "mul");
  record(out, {&a, &b}, [a, b, reps, n](std::span<const double> g) {
    auto ad = a.data();
    auto bd = b.data();
    if (auto ga = grad_slot(a); !ga.empty())
      for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t i = 0; i < n; ++i) ga[r * n + i] += g[r * n + i] * bd[i];
    if (auto gb = grad_slot(b); !gb.empty())
      for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[r * n + i] * ad[r * n + i];
  });
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  auto ad = a.data();
  std::vector<double> y(ad.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = ad[i] * factor;
  Tensor out = finish(a.shape(), std::move(y), "scale");
  record(out, {&a}, [a, factor](std::span<const double> g) {
    if (auto ga = grad_slot(a); !ga.empty()) axpy(ga.size(), factor, g.data(), ga.data());
  });
  return out;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = finish(Shape{1}, {s}, "sum");
  record(out, {&a}, [a](std::span<const double> g) {
    if (auto ga = grad_slot(a); !ga.empty())
      for (auto& v : ga) v += g[0];
  });
  return out;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.numel(),
          "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  auto ad = a.data();
  Tensor out = make_result(std::move(shape), std::vector<double>(ad.begin(), ad.end()));
  record(out, {&a}, [a](std::span<const double> g) {
    if (auto ga = grad_slot(a); !ga.empty()) axpy(ga.size(), 1.0, g.data(), ga.data());
  });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require(weight.rank() == 2, "linear: weight must be [out, in]");
  const std::size_t in = weight.dim(1);
  const std::size_t out_dim = weight.dim(0);
  require(x.shape().back() == in, "linear: input width " + std::to_string(x.shape().back()) +
                                      " does not match weight " + shape_str(weight.shape()));
  if (bias.defined())
    require(bias.shape() == Shape{out_dim}, "linear: bias must be [" + std::to_string(out_dim) + "]");
  const std::size_t rows = x.numel() / in;
  auto xd = x.data();
  auto wd = weight.data();

  std::vector<double> wt(in * out_dim);
  for (std::size_t o = 0; o < out_dim; ++o)
    for (std::size_t k = 0; k < in; ++k) wt[k * out_dim + o] = wd[o * in + k];

  std::vector<double> y(rows * out_dim, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = y.data() + r * out_dim;
    if (bias.defined()) std::copy(bias.data().begin(), bias.data().end(), yr);
    const double* xr = xd.data() + r * in;
    for (std::size_t k = 0; k < in; ++k) axpy(out_dim, xr[k], wt.data() + k * out_dim, yr);
  }
  Shape shape = x.shape();
  shape.back() = out_dim;
  Tensor out = finish(std::move(shape), std::move(y), "linear");
  record(out, {&x, &weight, &bias}, [x, weight, bias, rows, in, out_dim](std::span<const double> g) {
    auto xd = x.data();
    auto wd = weight.data();
    if (auto gx = grad_slot(x); !gx.empty())
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out_dim; ++o)
          axpy(in, g[r * out_dim + o], wd.data() + o * in, gx.data() + r * in);
    if (auto gw = grad_slot(weight); !gw.empty())
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out_dim; ++o)
          axpy(in, g[r * out_dim + o], xd.data() + r * in, gw.data() + o * in);
    if (auto gb = grad_slot(bias); !gb.empty())
      for (std::size_t r = 0; r < rows; ++r) axpy(out_dim, 1.0, g.data() + r * out_dim, gb.data());
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t c = x.shape().back();
  require(gamma.shape() == Shape{c} && beta.shape() == Shape{c},
          "layer_norm: affine params must be [" + std::to_string(c) + "]");
  if (!(eps > 0.0)) throw NumericError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / c;
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  std::vector<double> y(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd.data() + r * c;
    double mu = 0.0;
    for (std::size_t i = 0; i < c; ++i) mu += xr[i];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t i = 0; i < c; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < c; ++i) {
      xhat[r * c + i] = (xr[i] - mu) * is;
      y[r * c + i] = xhat[r * c + i] * gd[i] + bd[i];
    }
  }
  Tensor out = finish(x.shape(), std::move(y), "layer_norm");
  record(out, {&x, &gamma, &beta},
         [x, gamma, beta, c, rows, xhat = std::move(xhat),
          inv_std = std::move(inv_std)](std::span<const double> g) {
           auto gd = gamma.data();
           auto gx = grad_slot(x);
           auto gg = grad_slot(gamma);
           auto gb = grad_slot(beta);
           const double n = static_cast<double>(c);
           for (std::size_t r = 0; r < rows; ++r) {
             const double* gr = g.data() + r * c;
             const double* hr = xhat.data() + r * c;
             if (!gg.empty())
               for (std::size_t i = 0; i < c; ++i) gg[i] += gr[i] * hr[i];
             if (!gb.empty())
               for (std::size_t i = 0; i < c; ++i) gb[i] += gr[i];
             if (gx.empty()) continue;
             double s1 = 0.0, s2 = 0.0;
             for (std::size_t i = 0; i < c; ++i) {
               const double dh = gr[i] * gd[i];
               s1 += dh;
               s2 += dh * hr[i];
             }
             for (std::size_t i = 0; i < c; ++i) {
               const double dh = gr[i] * gd[i];
               gx[r * c + i] += inv_std[r] / n * (n * dh - s1 - hr[i] * s2);
             }
           }
         });
  return out;
}

Tensor relu(const Tensor& x) {
  auto xd = x.data();
  if (g_relu_recorder) g_relu_recorder->append(xd);
  std::vector<double> y(xd.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  Tensor out = finish(x.shape(), std::move(y), "relu");
  record(out, {&x}, [x](std::span<const double> g) {
    auto xd = x.data();
    if (auto gx = grad_slot(x); !gx.empty())
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (xd[i] > 0.0) gx[i] += g[i];
  });
  return out;
}

Tensor gelu(const Tensor& x) {
  auto xd = x.data();
  std::vector<double> y(xd.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = 0.5 * xd[i] * (1.0 + std::erf(xd[i] * std::numbers::sqrt2 / 2.0));
  Tensor out = finish(x.shape(), std::move(y), "gelu");
  record(out, {&x}, [x](std::span<const double> g) {
    auto xd = x.data();
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    if (auto gx = grad_slot(x); !gx.empty())
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const double v = xd[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        gx[i] += g[i] * (cdf + v * pdf);
      }
  });
  return out;
}

namespace {
void softmax_row(const double* x, double* y, std::size_t n) {
  double m = x[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = std::exp(x[i] - m);
    z += y[i];
  }
  for (std::size_t i = 0; i < n; ++i) y[i] /= z;
}
}  // namespace

Tensor softmax(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  auto xd = x.data();
  std::vector<double> y(x.numel());
  for (std::size_t r = 0; r < rows; ++r) softmax_row(xd.data() + r * n, y.data() + r * n, n);
  Tensor out = finish(x.shape(), y, "softmax");
  record(out, {&x}, [x, y = std::move(y), n, rows](std::span<const double> g) {
    if (auto gx = grad_slot(x); !gx.empty())
      for (std::size_t r = 0; r < rows; ++r) {
        const double s = dot(n, y.data() + r * n, g.data() + r * n);
        for (std::size_t i = 0; i < n; ++i)
          gx[r * n + i] += y[r * n + i] * (g[r * n + i] - s);
      }
  });
  return out;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t heads) {
  require(q.rank() == 3 && q.shape() == k.shape() && q.shape() == v.shape(),
          "attention: q, k, v must share a [B, N, C] shape");
  const std::size_t batch = q.dim(0), n = q.dim(1), c = q.dim(2);
  require(heads >= 1 && c % heads == 0, "attention: width " + std::to_string(c) +
                                            " not divisible by " + std::to_string(heads) +
                                            " heads");
  const std::size_t dh = c / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  auto qd = q.data();
  auto kd = k.data();
  auto vd = v.data();
  // probs[b][h][i][j]
  std::vector<double> probs(batch * heads * n * n);
  std::vector<double> y(q.numel(), 0.0);
  std::vector<double> logits(n);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      double* p = probs.data() + (b * heads + h) * n * n;
      for (std::size_t i = 0; i < n; ++i) {
        const double* qi = qd.data() + (b * n + i) * c + h * dh;
        for (std::size_t j = 0; j < n; ++j)
          logits[j] = sc * dot(dh, qi, kd.data() + (b * n + j) * c + h * dh);
        softmax_row(logits.data(), p + i * n, n);
        double* yi = y.data() + (b * n + i) * c + h * dh;
        for (std::size_t j = 0; j < n; ++j) axpy(dh, p[i * n + j], vd.data() + (b * n + j) * c + h * dh, yi);
      }
    }
  Tensor out = finish(q.shape(), std::move(y), "attention");
  record(out, {&q, &k, &v},
         [q, k, v, probs = std::move(probs), batch, n, c, heads, dh, sc](std::span<const double> g) {
           auto qd = q.data();
           auto kd = k.data();
           auto vd = v.data();
           auto gq = grad_slot(q);
           auto gk = grad_slot(k);
           auto gv = grad_slot(v);
           std::vector<double> dp(n), ds(n);
           for (std::size_t b = 0; b < batch; ++b)
             for (std::size_t h = 0; h < heads; ++h) {
               const double* p = probs.data() + (b * heads + h) * n * n;
               for (std::size_t i = 0; i < n; ++i) {
                 const double* gi = g.data() + (b * n + i) * c + h * dh;
                 if (!gv.empty())
                   for (std::size_t j = 0; j < n; ++j)
                     axpy(dh, p[i * n + j], gi, gv.data() + (b * n + j) * c + h * dh);
                 if (gq.empty() && gk.empty()) continue;
                 double s = 0.0;
                 for (std::size_t j = 0; j < n; ++j) {
                   dp[j] = dot(dh, gi, vd.data() + (b * n + j) * c + h * dh);
                   s += p[i * n + j] * dp[j];
                 }
                 for (std::size_t j = 0; j < n; ++j) ds[j] = sc * p[i * n + j] * (dp[j] - s);
                 const double* qi = qd.data() + (b * n + i) * c + h * dh;
                 for (std::size_t j = 0; j < n; ++j) {
                   if (!gq.empty())
                     axpy(dh, ds[j], kd.data() + (b * n + j) * c + h * dh,
                          gq.data() + (b * n + i) * c + h * dh);
                   if (!gk.empty()) axpy(dh, ds[j], qi, gk.data() + (b * n + j) * c + h * dh);
                 }
               }
             }
         });
  return out;
}

Tensor depthwise_conv3x3(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  require(x.rank() == 4, "depthwise_conv3x3: input must be [B, Ch, H, W]");
  const std::size_t batch = x.dim(0), ch = x.dim(1), hh = x.dim(2), ww = x.dim(3);
  require(kernel.shape() == Shape{ch, 3, 3},
          "depthwise_conv3x3: kernel " + shape_str(kernel.shape()) + " does not match " +
              std::to_string(ch) + " channels");
  require(bias.shape() == Shape{ch}, "depthwise_conv3x3: bias must be [Ch]");
  auto xd = x.data();
  auto kd = kernel.data();
  auto bd = bias.data();
  std::vector<double> y(x.numel());
  const auto H = static_cast<std::ptrdiff_t>(hh);
  const auto W = static_cast<std::ptrdiff_t>(ww);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const double* xm = xd.data() + (b * ch + c) * hh * ww;
      double* ym = y.data() + (b * ch + c) * hh * ww;
      const double* kc = kd.data() + c * 9;
      for (std::ptrdiff_t i = 0; i < H; ++i)
        for (std::ptrdiff_t j = 0; j < W; ++j) {
          double s = bd[c];
          for (std::ptrdiff_t di = -1; di <= 1; ++di)
            for (std::ptrdiff_t dj = -1; dj <= 1; ++dj) {
              const auto ii = i + di, jj = j + dj;
              if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
              s += kc[(di + 1) * 3 + (dj + 1)] * xm[ii * W + jj];
            }
          ym[i * W + j] = s;
        }
    }
  Tensor out = finish(x.shape(), std::move(y), "depthwise_conv3x3");
  record(out, {&x, &kernel, &bias}, [x, kernel, bias, batch, ch, H, W](std::span<const double> g) {
    auto xd = x.data();
    auto kd = kernel.data();
    auto gx = grad_slot(x);
    auto gk = grad_slot(kernel);
    auto gb = grad_slot(bias);
    const auto plane = static_cast<std::size_t>(H * W);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < ch; ++c) {
        const double* xm = xd.data() + (b * ch + c) * plane;
        const double* gm = g.data() + (b * ch + c) * plane;
        const double* kc = kd.data() + c * 9;
        for (std::ptrdiff_t i = 0; i < H; ++i)
          for (std::ptrdiff_t j = 0; j < W; ++j) {
            const double go = gm[i * W + j];
            if (!gb.empty()) gb[c] += go;
            for (std::ptrdiff_t di = -1; di <= 1; ++di)
              for (std::ptrdiff_t dj = -1; dj <= 1; ++dj) {
                const auto ii = i + di, jj = j + dj;
                if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
                const auto tap = static_cast<std::size_t>((di + 1) * 3 + (dj + 1));
                if (!gx.empty()) gx[(b * ch + c) * plane + static_cast<std::size_t>(ii * W + jj)] += kc[tap] * go;
                if (!gk.empty()) gk[c * 9 + tap] += xm[ii * W + jj] * go;
              }
          }
      }
  });
  return out;
}

Tensor pointwise_conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require(x.rank() == 4, "pointwise_conv1x1: input must be [B, Cin, H, W]");
  require(weight.rank() == 2 && weight.dim(1) == x.dim(1),
          "pointwise_conv1x1: weight " + shape_str(weight.shape()) + " does not match " +
              std::to_string(x.dim(1)) + " input channels");
  const std::size_t batch = x.dim(0), cin = x.dim(1), cout = weight.dim(0);
  const std::size_t plane = x.dim(2) * x.dim(3);
  require(bias.shape() == Shape{cout}, "pointwise_conv1x1: bias must be [Cout]");
  auto xd = x.data();
  auto wd = weight.data();
  auto bd = bias.data();
  std::vector<double> y(batch * cout * plane);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < cout; ++o) {
      double* yo = y.data() + (b * cout + o) * plane;
      std::fill(yo, yo + plane, bd[o]);
      for (std::size_t c = 0; c < cin; ++c)
        axpy(plane, wd[o * cin + c], xd.data() + (b * cin + c) * plane, yo);
    }
  Tensor out = finish(Shape{batch, cout, x.dim(2), x.dim(3)}, std::move(y), "pointwise_conv1x1");
  record(out, {&x, &weight, &bias}, [x, weight, bias, batch, cin, cout, plane](std::span<const double> g) {
    auto xd = x.data();
    auto wd = weight.data();
    auto gx = grad_slot(x);
    auto gw = grad_slot(weight);
    auto gb = grad_slot(bias);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < cout; ++o) {
        const double* go = g.data() + (b * cout + o) * plane;
        if (!gb.empty())
          for (std::size_t p = 0; p < plane; ++p) gb[o] += go[p];
        for (std::size_t c = 0; c < cin; ++c) {
          if (!gx.empty()) axpy(plane, wd[o * cin + c], go, gx.data() + (b * cin + c) * plane);
          if (!gw.empty()) gw[o * cin + c] += dot(plane, go, xd.data() + (b * cin + c) * plane);
        }
      }
  });
  return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, Mode mode, double eps, double momentum) {
  require(x.rank() == 4, "batch_norm: input must be [B, Ch, H, W]");
  const std::size_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  require(gamma.shape() == Shape{ch} && beta.shape() == Shape{ch},
          "batch_norm: affine params must be [Ch]");
  const std::size_t count = batch * plane;
  if (mode == Mode::train && count < 2)
    throw NumericError("batch_norm: train mode needs at least 2 values per channel");
  if (mode == Mode::eval && !state.initialized())
    throw NumericError("batch_norm: eval mode before running statistics exist");
  if (state.initialized())
    require(state.running_mean.size() == ch && state.running_var.size() == ch,
            "batch_norm: running statistics have the wrong channel count");
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<double> mu(ch), inv_std(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    if (mode == Mode::eval) {
      mu[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + eps);
      continue;
    }
    double s = 0.0;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t p = 0; p < plane; ++p) s += xd[(b * ch + c) * plane + p];
    const double m = s / static_cast<double>(count);
    double v = 0.0;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t p = 0; p < plane; ++p) {
        const double d = xd[(b * ch + c) * plane + p] - m;
        v += d * d;
      }
    mu[c] = m;
    inv_std[c] = 1.0 / std::sqrt(v / static_cast<double>(count) + eps);
    if (!state.initialized()) state = BatchNormState::identity(ch);
    state.running_mean[c] = (1.0 - momentum) * state.running_mean[c] + momentum * m;
    state.running_var[c] = (1.0 - momentum) * state.running_var[c] +
                           momentum * v / static_cast<double>(count - 1);
  }
  if (mode == Mode::train) ++state.batches_tracked;

  std::vector<double> xhat(x.numel()), y(x.numel());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t idx = (b * ch + c) * plane + p;
        xhat[idx] = (xd[idx] - mu[c]) * inv_std[c];
        y[idx] = gd[c] * xhat[idx] + bd[c];
      }
  Tensor out = finish(x.shape(), std::move(y), "batch_norm");
  record(out, {&x, &gamma, &beta},
         [x, gamma, beta, mode, batch, ch, plane, count, xhat = std::move(xhat),
          inv_std = std::move(inv_std)](std::span<const double> g) {
           auto gd = gamma.data();
           auto gx = grad_slot(x);
           auto gg = grad_slot(gamma);
           auto gb = grad_slot(beta);
           const double n = static_cast<double>(count);
           for (std::size_t c = 0; c < ch; ++c) {
             double s1 = 0.0, s2 = 0.0;
             for (std::size_t b = 0; b < batch; ++b)
               for (std::size_t p = 0; p < plane; ++p) {
                 const std::size_t idx = (b * ch + c) * plane + p;
                 s1 += g[idx];
                 s2 += g[idx] * xhat[idx];
               }
             if (!gg.empty()) gg[c] += s2;
             if (!gb.empty()) gb[c] += s1;
             if (gx.empty()) continue;
             for (std::size_t b = 0; b < batch; ++b)
               for (std::size_t p = 0; p < plane; ++p) {
                 const std::size_t idx = (b * ch + c) * plane + p;
                 if (mode == Mode::eval) {
                   gx[idx] += g[idx] * gd[c] * inv_std[c];
                 } else {
                   gx[idx] += gd[c] * inv_std[c] / n * (n * g[idx] - s1 - xhat[idx] * s2);
                 }
               }
           }
         });
  return out;
}

Tensor tokens_to_map(const Tensor& tokens, std::size_t height, std::size_t width) {
  require(tokens.rank() == 3 && tokens.dim(1) == height * width,
          "tokens_to_map: " + shape_str(tokens.shape()) + " is not a " + std::to_string(height) +
              "x" + std::to_string(width) + " token grid");
  const std::size_t batch = tokens.dim(0), n = tokens.dim(1), c = tokens.dim(2);
  auto td = tokens.data();
  std::vector<double> y(tokens.numel());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t k = 0; k < c; ++k) y[(b * c + k) * n + t] = td[(b * n + t) * c + k];
  Tensor out = make_result(Shape{batch, c, height, width}, std::move(y));
  record(out, {&tokens}, [tokens, batch, n, c](std::span<const double> g) {
    if (auto gt = grad_slot(tokens); !gt.empty())
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < n; ++t)
          for (std::size_t k = 0; k < c; ++k) gt[(b * n + t) * c + k] += g[(b * c + k) * n + t];
  });
  return out;
}

Tensor map_to_tokens(const Tensor& map) {
  require(map.rank() == 4, "map_to_tokens: input must be [B, C, H, W]");
  const std::size_t batch = map.dim(0), c = map.dim(1), n = map.dim(2) * map.dim(3);
  auto md = map.data();
  std::vector<double> y(map.numel());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t t = 0; t < n; ++t) y[(b * n + t) * c + k] = md[(b * c + k) * n + t];
  Tensor out = make_result(Shape{batch, n, c}, std::move(y));
  record(out, {&map}, [map, batch, n, c](std::span<const double> g) {
    if (auto gm = grad_slot(map); !gm.empty())
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t k = 0; k < c; ++k)
          for (std::size_t t = 0; t < n; ++t) gm[(b * c + k) * n + t] += g[(b * n + t) * c + k];
  });
  return out;
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end) {
  require(x.rank() == 4 && begin < end && end <= x.dim(1),
          "slice_channels: invalid range for " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  const std::size_t width = end - begin;
  auto xd = x.data();
  std::vector<double> y(batch * width * plane);
  for (std::size_t b = 0; b < batch; ++b)
    std::copy_n(xd.data() + (b * ch + begin) * plane, width * plane, y.data() + b * width * plane);
  Tensor out = make_result(Shape{batch, width, x.dim(2), x.dim(3)}, std::move(y));
  record(out, {&x}, [x, batch, ch, plane, begin, width](std::span<const double> g) {
    if (auto gx = grad_slot(x); !gx.empty())
      for (std::size_t b = 0; b < batch; ++b)
        axpy(width * plane, 1.0, g.data() + b * width * plane, gx.data() + (b * ch + begin) * plane);
  });
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.rank() == 4 && b.rank() == 4 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) &&
              a.dim(3) == b.dim(3),
          "concat_channels: " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t batch = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  auto ad = a.data();
  auto bd = b.data();
  std::vector<double> y(batch * (ca + cb) * plane);
  for (std::size_t n = 0; n < batch; ++n) {
    std::copy_n(ad.data() + n * ca * plane, ca * plane, y.data() + n * (ca + cb) * plane);
    std::copy_n(bd.data() + n * cb * plane, cb * plane, y.data() + (n * (ca + cb) + ca) * plane);
  }
  Tensor out = make_result(Shape{batch, ca + cb, a.dim(2), a.dim(3)}, std::move(y));
  record(out, {&a, &b}, [a, b, batch, ca, cb, plane](std::span<const double> g) {
    auto ga = grad_slot(a);
    auto gb = grad_slot(b);
    for (std::size_t n = 0; n < batch; ++n) {
      if (!ga.empty())
        axpy(ca * plane, 1.0, g.data() + n * (ca + cb) * plane, ga.data() + n * ca * plane);
      if (!gb.empty())
        axpy(cb * plane, 1.0, g.data() + (n * (ca + cb) + ca) * plane, gb.data() + n * cb * plane);
    }
  });
  return out;
}

Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t length) {
  const std::size_t d = x.shape().back();
  require(length >= 1 && begin + length <= d, "slice_last: invalid range for " + shape_str(x.shape()));
  const std::size_t rows = x.numel() / d;
  auto xd = x.data();
  std::vector<double> y(rows * length);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xd.data() + r * d + begin, length, y.data() + r * length);
  Shape shape = x.shape();
  shape.back() = length;
  Tensor out = make_result(std::move(shape), std::move(y));
  record(out, {&x}, [x, rows, d, begin, length](std::span<const double> g) {
    if (auto gx = grad_slot(x); !gx.empty())
      for (std::size_t r = 0; r < rows; ++r)
        axpy(length, 1.0, g.data() + r * length, gx.data() + r * d + begin);
  });
  return out;
}

Tensor patchify(const Tensor& image, std::size_t patch) {
  require(image.rank() == 4, "patchify: image must be [B, ch, H, W]");
  const std::size_t batch = image.dim(0), ch = image.dim(1), hh = image.dim(2), ww = image.dim(3);
  require(patch >= 1 && hh % patch == 0 && ww % patch == 0,
          "patchify: image " + shape_str(image.shape()) + " not divisible by patch " +
              std::to_string(patch));
  const std::size_t gh = hh / patch, gw = ww / patch, n = gh * gw;
  const std::size_t feat = ch * patch * patch;
  // Flat gather index: out position -> image position.
  std::vector<std::size_t> index(batch * n * feat);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t py = 0; py < patch; ++py)
          for (std::size_t px = 0; px < patch; ++px) {
            const std::size_t row = (t / gw) * patch + py;
            const std::size_t col = (t % gw) * patch + px;
            index[((b * n + t) * ch + c) * patch * patch + py * patch + px] =
                ((b * ch + c) * hh + row) * ww + col;
          }
  auto id = image.data();
  std::vector<double> y(index.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = id[index[i]];
  Tensor out = make_result(Shape{batch, n, feat}, std::move(y));
  record(out, {&image}, [image, index = std::move(index)](std::span<const double> g) {
    if (auto gi = grad_slot(image); !gi.empty())
      for (std::size_t i = 0; i < index.size(); ++i) gi[index[i]] += g[i];
  });
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t k = logits.shape().back();
  const std::size_t rows = logits.numel() / k;
  require(labels.size() == rows, "cross_entropy: " + std::to_string(labels.size()) +
                                     " labels for " + std::to_string(rows) + " positions");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= k)
      throw ShapeError("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                       std::to_string(k) + ")");
  auto ld = logits.data();
  std::vector<double> probs(logits.numel());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* lr = ld.data() + r * k;
    double m = lr[0];
    for (std::size_t i = 1; i < k; ++i) m = std::max(m, lr[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) z += std::exp(lr[i] - m);
    total += std::log(z) + m - lr[labels[r]];
    for (std::size_t i = 0; i < k; ++i) probs[r * k + i] = std::exp(lr[i] - m) / z;
  }
  Tensor out = finish(Shape{1}, {total / static_cast<double>(rows)}, "cross_entropy");
  std::vector<int> lab(labels.begin(), labels.end());
  record(out, {&logits}, [logits, probs = std::move(probs), lab = std::move(lab), rows, k](std::span<const double> g) {
    if (auto gl = grad_slot(logits); !gl.empty()) {
      const double w = g[0] / static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < k; ++i)
          gl[r * k + i] += w * (probs[r * k + i] - (static_cast<std::size_t>(lab[r]) == i ? 1.0 : 0.0));
    }
  });
  return out;
}

ReluPatternRecorder::ReluPatternRecorder() : previous_(g_relu_recorder) { g_relu_recorder = this; }
ReluPatternRecorder::~ReluPatternRecorder() { g_relu_recorder = previous_; }

void ReluPatternRecorder::append(std::span<const double> inputs) {
  for (double v : inputs) pattern_.push_back(v > 0.0);
}

}  // namespace ivtune::ops
