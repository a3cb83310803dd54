// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <utility>

#include "ivtune/backbone.hpp"
#include "ivtune/ops.hpp"

// Modality-aware prompter blocks. Both blocks normalize and recalibrate the
// two token streams (SFT), project them to a latent width d, run the hybrid
// operation on the visible latent only, and fuse:
//   alpha:  s3(HO(s1(vis')) + s2(p'))        fuse in latent space
//   beta:   s3(HO(s1(vis'))) + s4(s2(p'))    up-project each, then fuse
namespace ivtune {

struct SftParams {
  Tensor ln1_gamma, ln1_beta;  // visible stream LN affine, [C]
  Tensor ln2_gamma, ln2_beta;  // prompt stream LN affine, [C]
  Tensor omega1, phi1;         // visible channel scale / shift, [C]
  Tensor omega2, phi2;         // prompt channel scale / shift, [C]
};

/// Partial depthwise conv with residual on the first `split` channels, then
/// 1x1 conv -> batch norm -> relu -> 1x1 conv.
struct HybridOpParams {
  std::size_t split = 1;
  Tensor dw_kernel, dw_bias;    // [split, 3, 3], [split]
  Tensor pw1_weight, pw1_bias;  // [d, d], [d]
  Tensor bn_gamma, bn_beta;     // [d]
  Tensor pw2_weight, pw2_bias;  // [d, d], [d]
  ops::BatchNormState bn_state;
};

struct MpBlockParams {
  SftParams sft;
  Tensor s1_weight, s1_bias;  // [d, C], [d]
  Tensor s2_weight, s2_bias;  // [d, C], [d]
  HybridOpParams ho;
  Tensor s3_weight, s3_bias;  // [C, d], [C]
  Tensor s4_weight, s4_bias;  // [C, d], [C]; undefined for alpha-style blocks

  bool has_prompt_projection() const { return s4_weight.defined(); }
  std::size_t latent_dim() const { return s1_weight.dim(0); }
};

/// Returns (LN1(z_vis) * omega1 + phi1, LN2(z_p) * omega2 + phi2).
std::pair<TokenSeq, TokenSeq> sft(const TokenSeq& z_vis, const TokenSeq& z_p,
                                  const SftParams& params);

/// m is [B, d, H', W']; the result has the same shape.
Tensor hybrid_op(const Tensor& m, HybridOpParams& params, ops::Mode mode);

/// Latent-space fusion; produces the initial prompt.
TokenSeq mp_alpha(const TokenSeq& z_vis, const TokenSeq& z_p, MpBlockParams& params,
                  ops::Mode mode);

/// Per-modality up-projection before fusion. Requires s4.
TokenSeq mp_beta(const TokenSeq& z_vis, const TokenSeq& z_p, MpBlockParams& params,
                 ops::Mode mode);

}  // namespace ivtune
