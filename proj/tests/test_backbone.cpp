// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "ivtune/backbone.hpp"
#include "ivtune/error.hpp"
#include "test_util.hpp"

using namespace ivtune;
using ivtune::testing::random_tensor;

namespace {

using Vec = std::vector<double>;

Vec ln_vec(const Vec& x) {
  double mu = 0, var = 0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(x.size());
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(x.size());
  Vec out;
  for (double v : x) out.push_back((v - mu) / std::sqrt(var + ops::kNormEps));
  return out;
}

// y = W x + b with W row-major [out, in]
Vec matvec(const Tensor& w, const Tensor& b, const Vec& x) {
  const std::size_t out = w.dim(0), in = w.dim(1);
  Vec y(out);
  for (std::size_t o = 0; o < out; ++o) {
    double acc = b.defined() ? b[o] : 0.0;
    for (std::size_t i = 0; i < in; ++i) acc += w[o * in + i] * x[i];
    y[o] = acc;
  }
  return y;
}

Vec token(const Tensor& t, std::size_t b, std::size_t n) {
  const std::size_t N = t.dim(1), C = t.dim(2);
  const auto d = t.data().subspan((b * N + n) * C, C);
  return Vec(d.begin(), d.end());
}

AttnParams random_attn(std::mt19937_64& rng, std::size_t c, std::size_t heads) {
  AttnParams p;
  p.heads = heads;
  p.norm_gamma = random_tensor(rng, {c}, 0.5, 1.5);
  p.norm_beta = random_tensor(rng, {c}, -0.2, 0.2);
  p.qkv_weight = random_tensor(rng, {3 * c, c}, -0.5, 0.5);
  p.qkv_bias = random_tensor(rng, {3 * c}, -0.1, 0.1);
  p.proj_weight = random_tensor(rng, {c, c}, -0.5, 0.5);
  p.proj_bias = random_tensor(rng, {c}, -0.1, 0.1);
  return p;
}

FfnParams random_ffn(std::mt19937_64& rng, std::size_t c, std::size_t hidden) {
  FfnParams p;
  p.norm_gamma = random_tensor(rng, {c}, 0.5, 1.5);
  p.norm_beta = random_tensor(rng, {c}, -0.2, 0.2);
  p.fc1_weight = random_tensor(rng, {hidden, c}, -0.5, 0.5);
  p.fc1_bias = random_tensor(rng, {hidden}, -0.1, 0.1);
  p.fc2_weight = random_tensor(rng, {c, hidden}, -0.5, 0.5);
  p.fc2_bias = random_tensor(rng, {c}, -0.1, 0.1);
  return p;
}

TokenSeq seq(Tensor t, std::size_t gh, std::size_t gw) { return {std::move(t), gh, gw}; }

}  // namespace

TEST_CASE("patch_embed shapes, zeros and errors") {
  PatchEmbedParams p;
  p.patch = 4;
  p.weight = Tensor::zeros({5, 16});
  p.bias = Tensor::zeros({5});
  p.pos = Tensor::zeros({4, 5});
  const TokenSeq z = patch_embed(Tensor::zeros({2, 1, 8, 8}), p, Modality::infrared);
  CHECK(z.tokens.shape() == Shape{2, 4, 5});
  CHECK(z.grid_h == 2);
  CHECK(z.grid_w == 2);
  for (double v : z.tokens.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(patch_embed(Tensor::zeros({1, 3, 8, 8}), p, Modality::infrared), ShapeError);
  CHECK_THROWS_AS(patch_embed(Tensor::zeros({1, 1, 9, 9}), p, Modality::infrared), ShapeError);
}

TEST_CASE("patch_embed matches gather-and-matmul") {
  std::mt19937_64 rng(1);
  const std::size_t C = 6, p = 2, S = 4, ch = 3;
  PatchEmbedParams params;
  params.patch = p;
  params.weight = random_tensor(rng, {C, ch * p * p});
  params.bias = random_tensor(rng, {C});
  params.pos = random_tensor(rng, {4, C});
  const Tensor img = random_tensor(rng, {2, ch, S, S}, 0, 1);
  const TokenSeq z = patch_embed(img, params, Modality::visible);

  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t j = 0; j < 4; ++j) {
      const std::size_t gy = j / 2, gx = j % 2;
      Vec flat;  // (channel, row, column) order
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            flat.push_back(img[((b * ch + c) * S + gy * p + y) * S + gx * p + x]);
      Vec want = matvec(params.weight, params.bias, flat);
      const Vec got = token(z.tokens, b, j);
      for (std::size_t c = 0; c < C; ++c) CHECK(got[c] == doctest::Approx(want[c] + params.pos[j * C + c]).epsilon(1e-12));
    }
}

TEST_CASE("attn_stage residual identity with zero value/output projections") {
  std::mt19937_64 rng(2);
  AttnParams p = random_attn(rng, 4, 2);
  p.proj_weight = Tensor::zeros({4, 4});
  p.proj_bias = Tensor::zeros({4});
  const Tensor z = random_tensor(rng, {1, 3, 4});
  const TokenSeq out = attn_stage(seq(z, 1, 3), p);
  CHECK(out.tokens.bitwise_equal(z));
}

TEST_CASE("attn_stage with constant logits averages the values") {
  std::mt19937_64 rng(3);
  const std::size_t C = 2, N = 3;
  AttnParams p = random_attn(rng, C, 1);
  auto w = p.qkv_weight.mutable_data();
  auto bq = p.qkv_bias.mutable_data();
  // q = k = 0 gives identical logits for every key.
  for (std::size_t i = 0; i < 2 * C * C; ++i) w[i] = 0.0;
  for (std::size_t i = 0; i < 2 * C; ++i) bq[i] = 0.0;
  const Tensor z = random_tensor(rng, {1, N, C});
  const TokenSeq out = attn_stage(seq(z, 1, N), p);

  Vec vmean(C, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    const Vec x = ln_vec(token(z, 0, n));
    Vec xn(C);
    for (std::size_t c = 0; c < C; ++c) xn[c] = x[c] * p.norm_gamma[c] + p.norm_beta[c];
    for (std::size_t o = 0; o < C; ++o) {
      double acc = p.qkv_bias[2 * C + o];
      for (std::size_t i = 0; i < C; ++i) acc += p.qkv_weight[(2 * C + o) * C + i] * xn[i];
      vmean[o] += acc / static_cast<double>(N);
    }
  }
  const Vec proj = matvec(p.proj_weight, p.proj_bias, vmean);
  for (std::size_t n = 0; n < N; ++n) {
    const Vec zin = token(z, 0, n), got = token(out.tokens, 0, n);
    for (std::size_t c = 0; c < C; ++c) CHECK(got[c] == doctest::Approx(zin[c] + proj[c]).epsilon(1e-12));
  }
}

TEST_CASE("attn_stage matches a hand-computed N=2, h=1, C=2 case") {
  AttnParams p;
  p.heads = 1;
  p.norm_gamma = Tensor::from({2}, {1, 1});
  p.norm_beta = Tensor::from({2}, {0, 0});
  // rows: q (2), k (2), v (2)
  p.qkv_weight = Tensor::from({6, 2}, {1, 0, 0, 1, 0.5, 0, 0, 0.5, 1, 1, 0, 2});
  p.qkv_bias = Tensor::zeros({6});
  p.proj_weight = Tensor::from({2, 2}, {1, 0, 0, 1});
  p.proj_bias = Tensor::zeros({2});
  const Tensor z = Tensor::from({1, 2, 2}, {1, 3, 2, 0});
  const TokenSeq out = attn_stage(seq(z, 1, 2), p);

  // LN of (1,3) is (-a, a) and of (2,0) is (a, -a), a = 1/sqrt(1 + eps).
  const double a = 1.0 / std::sqrt(1.0 + ops::kNormEps);
  const Vec x0{-a, a}, x1{a, -a};
  auto q = [](const Vec& x) { return Vec{x[0], x[1]}; };
  auto k = [](const Vec& x) { return Vec{0.5 * x[0], 0.5 * x[1]}; };
  auto v = [](const Vec& x) { return Vec{x[0] + x[1], 2 * x[1]}; };
  const Vec xs[2] = {x0, x1};
  const double scale = 1.0 / std::sqrt(2.0);
  for (std::size_t i = 0; i < 2; ++i) {
    double logit[2];
    for (std::size_t j = 0; j < 2; ++j) {
      const Vec qi = q(xs[i]), kj = k(xs[j]);
      logit[j] = (qi[0] * kj[0] + qi[1] * kj[1]) * scale;
    }
    const double m = std::max(logit[0], logit[1]);
    const double e0 = std::exp(logit[0] - m), e1 = std::exp(logit[1] - m);
    const double w0 = e0 / (e0 + e1), w1 = e1 / (e0 + e1);
    const Vec v0 = v(x0), v1 = v(x1);
    const Vec zin = token(z, 0, i), got = token(out.tokens, 0, i);
    for (std::size_t c = 0; c < 2; ++c)
      CHECK(got[c] == doctest::Approx(zin[c] + w0 * v0[c] + w1 * v1[c]).epsilon(1e-12));
  }
}

TEST_CASE("ffn_stage identities and hand-set C=2 case") {
  std::mt19937_64 rng(4);
  FfnParams p = random_ffn(rng, 2, 8);
  const Tensor z = random_tensor(rng, {1, 3, 2});

  FfnParams zero_out = p;
  zero_out.fc2_weight = Tensor::zeros({2, 8});
  zero_out.fc2_bias = Tensor::zeros({2});
  CHECK(ffn_stage(seq(z, 1, 3), zero_out).tokens.bitwise_equal(z));

  FfnParams nobias = p;
  nobias.norm_beta = Tensor::zeros({2});
  nobias.fc1_bias = Tensor::zeros({8});
  nobias.fc2_bias = Tensor::zeros({2});
  const Tensor zero_out_tokens = ffn_stage(seq(Tensor::zeros({1, 3, 2}), 1, 3), nobias).tokens;
  for (double v : zero_out_tokens.data()) CHECK(v == 0.0);

  const TokenSeq out = ffn_stage(seq(z, 1, 3), p);
  for (std::size_t n = 0; n < 3; ++n) {
    const Vec zin = token(z, 0, n);
    Vec x = ln_vec(zin);
    for (std::size_t c = 0; c < 2; ++c) x[c] = x[c] * p.norm_gamma[c] + p.norm_beta[c];
    Vec h = matvec(p.fc1_weight, p.fc1_bias, x);
    for (auto& v : h) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    const Vec y = matvec(p.fc2_weight, p.fc2_bias, h);
    const Vec got = token(out.tokens, 0, n);
    for (std::size_t c = 0; c < 2; ++c) CHECK(got[c] == doctest::Approx(zin[c] + y[c]).epsilon(1e-12));
  }
}

TEST_CASE("decode_head zero, symmetric and matmul cases") {
  std::mt19937_64 rng(5);
  const Tensor z = random_tensor(rng, {2, 4, 3});
  HeadParams h{Tensor::zeros({2, 3}), Tensor::zeros({2})};
  const Tensor l0 = decode_head(seq(z, 2, 2), h);
  CHECK(l0.shape() == Shape{2, 4, 2});
  for (double v : l0.data()) CHECK(v == 0.0);

  h.weight = Tensor::from({2, 3}, {0.3, -0.2, 0.7, 0.3, -0.2, 0.7});
  const Tensor l1 = decode_head(seq(z, 2, 2), h);
  for (std::size_t i = 0; i < 8; ++i) CHECK(l1[2 * i] == l1[2 * i + 1]);

  h.weight = random_tensor(rng, {2, 3});
  h.bias = random_tensor(rng, {2});
  const Tensor l2 = decode_head(seq(z, 2, 2), h);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t n = 0; n < 4; ++n) {
      const Vec want = matvec(h.weight, h.bias, token(z, b, n));
      const Vec got = token(l2, b, n);
      for (std::size_t k = 0; k < 2; ++k) CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-12));
    }
}

TEST_CASE("stages preserve [B, N, C]") {
  std::mt19937_64 rng(6);
  const TokenSeq z = seq(random_tensor(rng, {2, 4, 4}), 2, 2);
  CHECK(attn_stage(z, random_attn(rng, 4, 2)).tokens.shape() == Shape{2, 4, 4});
  CHECK(ffn_stage(z, random_ffn(rng, 4, 16)).tokens.shape() == Shape{2, 4, 4});
}
