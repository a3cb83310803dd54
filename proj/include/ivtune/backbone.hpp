// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

#include "ivtune/tensor.hpp"

// Minimal pre-norm ViT encoder pieces: patch embeddings, attention and MLP
// sub-blocks with residuals, and a token-wise linear decoder head.
namespace ivtune {

enum class Modality { visible, infrared };

inline std::size_t modality_channels(Modality m) { return m == Modality::visible ? 3 : 1; }

/// [B, N, C] token sequence that remembers its spatial grid.
struct TokenSeq {
  Tensor tokens;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;

  std::size_t batch() const { return tokens.dim(0); }
  std::size_t count() const { return tokens.dim(1); }
  std::size_t width() const { return tokens.dim(2); }
};

/// Throws ShapeError unless both sequences have identical [B, N, C] shape and grid.
void require_same_layout(const TokenSeq& a, const TokenSeq& b, const char* op);

struct PatchEmbedParams {
  Tensor weight;  // [C, ch * p * p]
  Tensor bias;    // [C]
  Tensor pos;     // [N, C]
  std::size_t patch = 0;
};

struct AttnParams {
  Tensor norm_gamma, norm_beta;  // [C]
  Tensor qkv_weight, qkv_bias;   // [3C, C], [3C]
  Tensor proj_weight, proj_bias; // [C, C], [C]
  std::size_t heads = 1;
};

struct FfnParams {
  Tensor norm_gamma, norm_beta;  // [C]
  Tensor fc1_weight, fc1_bias;   // [hidden, C], [hidden]
  Tensor fc2_weight, fc2_bias;   // [C, hidden], [C]
};

struct HeadParams {
  Tensor weight;  // [K, C]
  Tensor bias;    // [K]
};

/// Splits the image into non-overlapping patches, projects each to C and adds
/// the positional table.
TokenSeq patch_embed(const Tensor& image, const PatchEmbedParams& params, Modality modality);

/// z + MHSA(LN(z))
TokenSeq attn_stage(const TokenSeq& z, const AttnParams& params);

/// z + fc2(gelu(fc1(LN(z))))
TokenSeq ffn_stage(const TokenSeq& z, const FfnParams& params);

/// Token-wise C -> K logits, [B, N, K].
Tensor decode_head(const TokenSeq& z, const HeadParams& params);

}  // namespace ivtune
