// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivtune/backbone.hpp"

#include <string>

#include "ivtune/error.hpp"
#include "ivtune/ops.hpp"

namespace ivtune {

void require_same_layout(const TokenSeq& a, const TokenSeq& b, const char* op) {
  if (a.tokens.shape() != b.tokens.shape() || a.grid_h != b.grid_h || a.grid_w != b.grid_w)
    throw ShapeError(std::string(op) + ": token streams " + shape_str(a.tokens.shape()) +
                     " and " + shape_str(b.tokens.shape()) + " are not aligned");
}

TokenSeq patch_embed(const Tensor& image, const PatchEmbedParams& params, Modality modality) {
  if (image.rank() != 4) throw ShapeError("patch_embed: image must be [B, ch, H, W]");
  const std::size_t ch = modality_channels(modality);
  if (image.dim(1) != ch)
    throw ShapeError("patch_embed: " + std::string(modality == Modality::visible ? "visible" : "infrared") +
                     " input needs " + std::to_string(ch) + " channels, got " +
                     std::to_string(image.dim(1)));
  const std::size_t p = params.patch;
  if (p == 0 || image.dim(2) % p != 0 || image.dim(3) % p != 0)
    throw ShapeError("patch_embed: image size not divisible by patch size " + std::to_string(p));
  Tensor patches = ops::patchify(image, p);
  Tensor tokens = ops::add(ops::linear(patches, params.weight, params.bias), params.pos);
  return {tokens, image.dim(2) / p, image.dim(3) / p};
}

TokenSeq attn_stage(const TokenSeq& z, const AttnParams& params) {
  const std::size_t c = z.width();
  Tensor h = ops::layer_norm(z.tokens, params.norm_gamma, params.norm_beta);
  Tensor qkv = ops::linear(h, params.qkv_weight, params.qkv_bias);
  Tensor attn = ops::multi_head_attention(ops::slice_last(qkv, 0, c), ops::slice_last(qkv, c, c),
                                          ops::slice_last(qkv, 2 * c, c), params.heads);
  Tensor out = ops::linear(attn, params.proj_weight, params.proj_bias);
  return {ops::add(z.tokens, out), z.grid_h, z.grid_w};
}

TokenSeq ffn_stage(const TokenSeq& z, const FfnParams& params) {
  Tensor h = ops::layer_norm(z.tokens, params.norm_gamma, params.norm_beta);
  h = ops::gelu(ops::linear(h, params.fc1_weight, params.fc1_bias));
  h = ops::linear(h, params.fc2_weight, params.fc2_bias);
  return {ops::add(z.tokens, h), z.grid_h, z.grid_w};
}

Tensor decode_head(const TokenSeq& z, const HeadParams& params) {
  return ops::linear(z.tokens, params.weight, params.bias);
}

}  // namespace ivtune
