// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivtune/prompter.hpp"

#include "ivtune/error.hpp"

namespace ivtune {

std::pair<TokenSeq, TokenSeq> sft(const TokenSeq& z_vis, const TokenSeq& z_p,
                                  const SftParams& params) {
  require_same_layout(z_vis, z_p, "sft");
  Tensor v = ops::layer_norm(z_vis.tokens, params.ln1_gamma, params.ln1_beta);
  v = ops::add(ops::mul(v, params.omega1), params.phi1);
  Tensor p = ops::layer_norm(z_p.tokens, params.ln2_gamma, params.ln2_beta);
  p = ops::add(ops::mul(p, params.omega2), params.phi2);
  return {TokenSeq{v, z_vis.grid_h, z_vis.grid_w}, TokenSeq{p, z_p.grid_h, z_p.grid_w}};
}

Tensor hybrid_op(const Tensor& m, HybridOpParams& params, ops::Mode mode) {
  if (m.rank() != 4) throw ShapeError("hybrid_op: input must be [B, d, H, W]");
  const std::size_t d = m.dim(1);
  const std::size_t k = params.split;
  if (k < 1 || k > d) throw ShapeError("hybrid_op: split must lie in [1, d]");
  Tensor selected = k == d ? m : ops::slice_channels(m, 0, k);
  selected = ops::add(ops::depthwise_conv3x3(selected, params.dw_kernel, params.dw_bias), selected);
  Tensor x = k == d ? selected : ops::concat_channels(selected, ops::slice_channels(m, k, d));
  x = ops::pointwise_conv1x1(x, params.pw1_weight, params.pw1_bias);
  x = ops::batch_norm(x, params.bn_gamma, params.bn_beta, params.bn_state, mode);
  x = ops::relu(x);
  return ops::pointwise_conv1x1(x, params.pw2_weight, params.pw2_bias);
}

namespace {

struct Latents {
  Tensor vis_enhanced;  // HO(s1(vis')) as tokens
  Tensor prompt;        // s2(p')
};

Latents encode(const TokenSeq& z_vis, const TokenSeq& z_p, MpBlockParams& params,
               ops::Mode mode) {
  auto [v, p] = sft(z_vis, z_p, params.sft);
  Tensor m_vis = ops::linear(v.tokens, params.s1_weight, params.s1_bias);
  Tensor m_p = ops::linear(p.tokens, params.s2_weight, params.s2_bias);
  // Only the visible latent is convolved; the infrared latent passes through.
  Tensor maps = ops::tokens_to_map(m_vis, z_vis.grid_h, z_vis.grid_w);
  Tensor enhanced = ops::map_to_tokens(hybrid_op(maps, params.ho, mode));
  return {enhanced, m_p};
}

}  // namespace

TokenSeq mp_alpha(const TokenSeq& z_vis, const TokenSeq& z_p, MpBlockParams& params,
                  ops::Mode mode) {
  Latents lat = encode(z_vis, z_p, params, mode);
  Tensor fused = ops::add(lat.vis_enhanced, lat.prompt);
  return {ops::linear(fused, params.s3_weight, params.s3_bias), z_vis.grid_h, z_vis.grid_w};
}

TokenSeq mp_beta(const TokenSeq& z_vis, const TokenSeq& z_p, MpBlockParams& params,
                 ops::Mode mode) {
  if (!params.has_prompt_projection())
    throw ConfigError("mp_beta: block has no prompt up-projection (s4)");
  Latents lat = encode(z_vis, z_p, params, mode);
  Tensor out = ops::add(ops::linear(lat.vis_enhanced, params.s3_weight, params.s3_bias),
                        ops::linear(lat.prompt, params.s4_weight, params.s4_bias));
  return {out, z_vis.grid_h, z_vis.grid_w};
}

}  // namespace ivtune
