// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "ivtune/error.hpp"
#include "ivtune/gradcheck.hpp"
#include "ivtune/model.hpp"
#include "ivtune/prompter.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace ivtune;
using ivtune::testing::random_tensor;
using ivtune::testing::weighted_sum;
using namespace ivtune::oracle;

namespace {

TokenSeq seq(Tensor t, std::size_t gh, std::size_t gw) { return {std::move(t), gh, gw}; }

}  // namespace

TEST_CASE("sft with identity affine is pure layer normalization") {
  std::mt19937_64 rng(1);
  const std::size_t C = 5;
  SftParams p{Tensor(Shape{C}, 1.0), Tensor::zeros({C}), Tensor(Shape{C}, 1.0), Tensor::zeros({C}),
              Tensor(Shape{C}, 1.0), Tensor::zeros({C}), Tensor(Shape{C}, 1.0), Tensor::zeros({C})};
  const Tensor a = random_tensor(rng, {2, 4, C}), b = random_tensor(rng, {2, 4, C});
  auto [va, pb] = sft(seq(a, 2, 2), seq(b, 2, 2), p);
  CHECK(va.tokens.bitwise_equal(ops::layer_norm(a, p.ln1_gamma, p.ln1_beta)));
  CHECK(pb.tokens.bitwise_equal(ops::layer_norm(b, p.ln2_gamma, p.ln2_beta)));
}

TEST_CASE("sft on constant tokens yields phi") {
  std::mt19937_64 rng(2);
  MpBlockParams m = random_block(rng, 3, 2, 1, true);
  auto [v, p] = sft(seq(Tensor(Shape{1, 2, 3}, 4.0), 1, 2), seq(Tensor(Shape{1, 2, 3}, -1.0), 1, 2), m.sft);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(v.tokens[i] == doctest::Approx(m.sft.phi1[i % 3] + m.sft.ln1_beta[i % 3] * m.sft.omega1[i % 3]));
    CHECK(p.tokens[i] == doctest::Approx(m.sft.phi2[i % 3] + m.sft.ln2_beta[i % 3] * m.sft.omega2[i % 3]));
  }
}

TEST_CASE("sft matches the formula on a random C=3 vector") {
  std::mt19937_64 rng(3);
  MpBlockParams m = random_block(rng, 3, 2, 1, true);
  const Tensor a = random_tensor(rng, {1, 1, 3}), b = random_tensor(rng, {1, 1, 3});
  auto [v, p] = sft(seq(a, 1, 1), seq(b, 1, 1), m.sft);
  const Vec lv = ln_affine({a[0], a[1], a[2]}, m.sft.ln1_gamma, m.sft.ln1_beta);
  const Vec lp = ln_affine({b[0], b[1], b[2]}, m.sft.ln2_gamma, m.sft.ln2_beta);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(v.tokens[c] == doctest::Approx(lv[c] * m.sft.omega1[c] + m.sft.phi1[c]).epsilon(1e-12));
    CHECK(p.tokens[c] == doctest::Approx(lp[c] * m.sft.omega2[c] + m.sft.phi2[c]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(sft(seq(a, 1, 1), seq(random_tensor(rng, {1, 2, 3}), 1, 2), m.sft), ShapeError);
}

TEST_CASE("hybrid_op: zero kernel keeps selected channels, identity stack passes through") {
  std::mt19937_64 rng(4);
  const std::size_t d = 4;
  MpBlockParams m = random_block(rng, 8, d, 4, true);
  m.ho.dw_kernel = Tensor::zeros({1, 3, 3});
  m.ho.dw_bias = Tensor::zeros({1});
  Tensor eye = Tensor::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) eye.mutable_data()[i * d + i] = 1.0;
  m.ho.pw1_weight = eye;
  m.ho.pw2_weight = eye;
  m.ho.pw1_bias = m.ho.pw2_bias = m.ho.bn_beta = Tensor::zeros({d});
  m.ho.bn_gamma = Tensor(Shape{d}, 1.0);
  const Tensor x = random_tensor(rng, {2, d, 3, 3}, 0.1, 1.0);  // positive: relu is identity
  const Tensor y = hybrid_op(x, m.ho, ops::Mode::eval);
  const double s = 1.0 / std::sqrt(1.0 + ops::kNormEps);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(x[i] * s).epsilon(1e-12));
}

TEST_CASE("hybrid_op: all-zero weights give zero") {
  std::mt19937_64 rng(5);
  const std::size_t d = 4;
  HybridOpParams h;
  h.split = 1;
  h.dw_kernel = Tensor::zeros({1, 3, 3});
  h.dw_bias = Tensor::zeros({1});
  h.pw1_weight = Tensor::zeros({d, d});
  h.pw1_bias = Tensor::zeros({d});
  h.bn_gamma = Tensor::zeros({d});
  h.bn_beta = Tensor::zeros({d});
  h.pw2_weight = Tensor::zeros({d, d});
  h.pw2_bias = Tensor::zeros({d});
  h.bn_state = ops::BatchNormState::identity(d);
  const Tensor y = hybrid_op(random_tensor(rng, {2, d, 2, 2}), h, ops::Mode::train);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("hybrid_op: d=4, r=4 convolves exactly one channel") {
  CHECK(split_channels(4, 4) == 1);
  CHECK(split_channels(16, 4) == 4);
  CHECK(split_channels(5, 4) == 2);
  std::mt19937_64 rng(6);
  ModelConfig cfg;
  cfg.d_beta = 4;
  IvModel model(cfg);
  auto& ho = model.layer(0).prompter.ho;
  CHECK(ho.split == 1);
  CHECK(ho.dw_kernel.shape() == Shape{1, 3, 3});

  // Channels 1..3 are not convolved: changing their neighbours' values in
  // channel 1 must not alter what a perturbation of channel 0 does.
  const std::size_t d = 4;
  Tensor eye = Tensor::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) eye.mutable_data()[i * d + i] = 1.0;
  HybridOpParams h = ho;
  h.pw1_weight = eye;
  h.pw2_weight = eye;
  h.pw1_bias = h.pw2_bias = h.bn_beta = Tensor::zeros({d});
  h.bn_gamma = Tensor(Shape{d}, 1.0);
  h.dw_kernel = random_tensor(rng, {1, 3, 3});
  h.dw_bias = Tensor::zeros({1});
  h.bn_state = ops::BatchNormState::identity(d);
  const Tensor x = random_tensor(rng, {1, d, 3, 3}, 5.0, 6.0);
  const Tensor y = hybrid_op(x, h, ops::Mode::eval);
  const double s = 1.0 / std::sqrt(1.0 + ops::kNormEps);
  // channel 0: conv + residual; channels 1..3: identity
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double conv = 0;
      for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b) {
          const int ii = static_cast<int>(i) + a, jj = static_cast<int>(j) + b;
          if (ii < 0 || ii > 2 || jj < 0 || jj > 2) continue;
          conv += h.dw_kernel[static_cast<std::size_t>((a + 1) * 3 + b + 1)] * x[static_cast<std::size_t>(ii * 3 + jj)];
        }
      const double want0 = std::max(0.0, (conv + x[i * 3 + j]) * s);
      CHECK(y[i * 3 + j] == doctest::Approx(want0).epsilon(1e-12));
      for (std::size_t c = 1; c < d; ++c) CHECK(y[c * 9 + i * 3 + j] == doctest::Approx(x[c * 9 + i * 3 + j] * s).epsilon(1e-12));
    }
}

TEST_CASE("mp_alpha identities") {
  std::mt19937_64 rng(7);
  MpBlockParams m = random_block(rng, 6, 2, 4, false);
  const TokenSeq zv = seq(random_tensor(rng, {2, 4, 6}), 2, 2), zp = seq(random_tensor(rng, {2, 4, 6}), 2, 2);
  MpBlockParams zero_s3 = m;
  zero_s3.s3_weight = Tensor::zeros({6, 2});
  zero_s3.s3_bias = Tensor::zeros({6});
  const Tensor zero_prompt = mp_alpha(zv, zp, zero_s3, ops::Mode::train).tokens;
  for (double v : zero_prompt.data()) CHECK(v == 0.0);

  // Zero inputs with all biases and shifts zero.
  MpBlockParams nb = m;
  nb.sft.ln1_beta = nb.sft.ln2_beta = nb.sft.phi1 = nb.sft.phi2 = Tensor::zeros({6});
  nb.s1_bias = nb.s2_bias = nb.ho.pw1_bias = nb.ho.pw2_bias = nb.ho.bn_beta = Tensor::zeros({2});
  nb.ho.dw_bias = Tensor::zeros({1});
  nb.s3_bias = Tensor::zeros({6});
  const Tensor zero = Tensor::zeros({2, 4, 6});
  const Tensor out = mp_alpha(seq(zero, 2, 2), seq(zero, 2, 2), nb, ops::Mode::eval).tokens;
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("mp_alpha matches the composed formula for d=2, N=1") {
  std::mt19937_64 rng(8);
  MpBlockParams m = random_block(rng, 4, 2, 4, false);
  m.ho.bn_state.running_mean = {0.1, -0.2};
  m.ho.bn_state.running_var = {0.5, 2.0};
  const Tensor zv = random_tensor(rng, {1, 1, 4}), zp = random_tensor(rng, {1, 1, 4});
  const Tensor out = mp_alpha(seq(zv, 1, 1), seq(zp, 1, 1), m, ops::Mode::eval).tokens;
  const OneToken o = one_token({zv[0], zv[1], zv[2], zv[3]}, {zp[0], zp[1], zp[2], zp[3]}, m);
  const Vec want = matvec(m.s3_weight, m.s3_bias, add(o.ho, o.m_p));
  for (std::size_t c = 0; c < 4; ++c) CHECK(out[c] == doctest::Approx(want[c]).epsilon(1e-12));
}

TEST_CASE("mp_beta identities and formula for d=2, N=1") {
  std::mt19937_64 rng(9);
  MpBlockParams m = random_block(rng, 4, 2, 4, true);
  m.ho.bn_state.running_mean = {0.3, 0.0};
  m.ho.bn_state.running_var = {1.5, 0.25};
  const Tensor zv = random_tensor(rng, {1, 1, 4}), zp = random_tensor(rng, {1, 1, 4});
  const Tensor out = mp_beta(seq(zv, 1, 1), seq(zp, 1, 1), m, ops::Mode::eval).tokens;
  const OneToken o = one_token({zv[0], zv[1], zv[2], zv[3]}, {zp[0], zp[1], zp[2], zp[3]}, m);
  const Vec want = add(matvec(m.s3_weight, m.s3_bias, o.ho), matvec(m.s4_weight, m.s4_bias, o.m_p));
  for (std::size_t c = 0; c < 4; ++c) CHECK(out[c] == doctest::Approx(want[c]).epsilon(1e-12));

  MpBlockParams z = m;
  z.s3_weight = z.s4_weight = Tensor::zeros({4, 2});
  z.s3_bias = z.s4_bias = Tensor::zeros({4});
  const Tensor zero_out = mp_beta(seq(zv, 1, 1), seq(zp, 1, 1), z, ops::Mode::eval).tokens;
  for (double v : zero_out.data()) CHECK(v == 0.0);

  // s4 = 0 severs the prompt stream.
  MpBlockParams cut = m;
  cut.s4_weight = Tensor::zeros({4, 2});
  const TokenSeq big_v = seq(random_tensor(rng, {2, 4, 4}), 2, 2);
  const Tensor p1 = mp_beta(big_v, seq(random_tensor(rng, {2, 4, 4}), 2, 2), cut, ops::Mode::eval).tokens;
  const Tensor p2 = mp_beta(big_v, seq(random_tensor(rng, {2, 4, 4}), 2, 2), cut, ops::Mode::eval).tokens;
  CHECK(p1.bitwise_equal(p2));

  MpBlockParams alpha_style = random_block(rng, 4, 2, 4, false);
  CHECK_THROWS_AS(mp_beta(seq(zv, 1, 1), seq(zp, 1, 1), alpha_style, ops::Mode::eval), ConfigError);
  CHECK_THROWS_AS(mp_beta(big_v, seq(zp, 1, 1), m, ops::Mode::eval), ShapeError);
}

TEST_CASE("infrared path gradient never routes through the hybrid operation") {
  std::mt19937_64 rng(10);
  for (bool beta : {false, true}) {
    MpBlockParams m = random_block(rng, 6, 4, 4, beta);
    const TokenSeq zv = seq(random_tensor(rng, {2, 4, 6}), 2, 2);
    const Tensor zp_point = random_tensor(rng, {2, 4, 6});
    auto grad_wrt_prompt = [&](MpBlockParams& params) {
      Tensor zp = zp_point.clone().set_requires_grad(true);
      GradTape tape;
      const TokenSeq out = beta ? mp_beta(zv, seq(zp, 2, 2), params, ops::Mode::eval)
                                : mp_alpha(zv, seq(zp, 2, 2), params, ops::Mode::eval);
      tape.backward(weighted_sum(out.tokens));
      return zp.grad();
    };
    const Tensor g1 = grad_wrt_prompt(m);
    MpBlockParams zeroed = m;
    zeroed.ho.dw_kernel = Tensor::zeros(m.ho.dw_kernel.shape());
    zeroed.ho.dw_bias = Tensor::zeros(m.ho.dw_bias.shape());
    zeroed.ho.pw1_weight = Tensor::zeros(m.ho.pw1_weight.shape());
    zeroed.ho.pw2_weight = Tensor::zeros(m.ho.pw2_weight.shape());
    const Tensor g2 = grad_wrt_prompt(zeroed);
    CHECK(g1.bitwise_equal(g2));
    double norm = 0;
    for (double v : g1.data()) norm += v * v;
    CHECK(norm > 0);
  }
}

TEST_CASE("full MP-beta block passes the finite-difference check") {
  std::mt19937_64 rng(11);
  MpBlockParams m = random_block(rng, 6, 4, 4, true);
  const TokenSeq zp = seq(random_tensor(rng, {2, 4, 6}), 2, 2);
  for (int trial = 0; trial < 3; ++trial) {
    const Tensor point = random_tensor(rng, {2, 4, 6});
    const auto rep = finite_diff_check(
        [&](const Tensor& x) { return weighted_sum(mp_beta(seq(x, 2, 2), zp, m, ops::Mode::train).tokens); },
        point);
    CHECK(rep.max_rel_error <= 1e-4);
    CHECK(rep.checked > 0);
  }
  const auto rep_w = finite_diff_check_leaf(
      [&] {
        return weighted_sum(
            mp_beta(seq(random_tensor(rng = std::mt19937_64(3), {2, 4, 6}), 2, 2), zp, m, ops::Mode::train).tokens);
      },
      m.s4_weight);
  CHECK(rep_w.max_rel_error <= 1e-4);
}

TEST_CASE("MP-beta parameter count equals the closed form") {
  for (std::size_t d : {3u, 8u, 16u}) {
    ModelConfig cfg;
    cfg.d_beta = d;
    IvModel model(cfg);
    std::size_t enumerated = 0;
    for (const auto& p : model.params().all())
      if (p.name.starts_with("layers.0.mp_beta.")) enumerated += p.tensor.numel();
    const std::size_t C = cfg.width, k = (d + cfg.split_ratio_inv - 1) / cfg.split_ratio_inv;
    const std::size_t closed = 2 * (2 * C) + 2 * (2 * C) + 2 * (C * d + d) + (9 * k + k) + (d * d + d) + 2 * d +
                               (d * d + d) + 2 * (d * C + C);
    CHECK(enumerated == closed);
  }
}
