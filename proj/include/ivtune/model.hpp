// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ivtune/backbone.hpp"
#include "ivtune/config.hpp"
#include "ivtune/params.hpp"
#include "ivtune/prompter.hpp"

namespace ivtune {

struct EncoderLayerParams {
  AttnParams attn;
  FfnParams ffn;
  // One parameter set, invoked twice per layer (after attention and after
  // the MLP).
  MpBlockParams prompter;
};

/// Prompt outputs of one encoder layer, for inspection.
struct LayerTrace {
  TokenSeq after_attn_prompt;
  TokenSeq after_ffn_prompt;
};

struct ParamPartition {
  std::vector<std::string> trainable;
  std::vector<std::string> frozen;
};

/// Coarse group of a parameter name: vis_embed, ir_embed, mp_alpha,
/// mp_beta.<l>, encoder.<l>, head.
std::string param_group(std::string_view name);

/// prompt input for the next layer = P0 + z_l
TokenSeq propagate_prompt(const TokenSeq& p0, const TokenSeq& z_l);

/// Frozen ViT backbone with infrared prompting. Non-copyable: parameter
/// tensors are shared handles and a copy would alias them.
class IvModel {
 public:
  explicit IvModel(const ModelConfig& config, TrainPolicy policy = TrainPolicy::prompt);
  IvModel(const IvModel&) = delete;
  IvModel& operator=(const IvModel&) = delete;
  IvModel(IvModel&&) = default;
  IvModel& operator=(IvModel&&) = default;

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  bool has_infrared() const { return config_.variant != Variant::vis_only; }

  /// Logits [B, N, K]. `ir` may be undefined only for the vis_only variant.
  /// When `layer_outputs` is given, z^1..z^L are appended to it.
  Tensor forward(const Tensor& vis, const Tensor& ir, ops::Mode mode,
                 std::vector<Tensor>* layer_outputs = nullptr);

  /// The frozen backbone alone on the visible input (no prompts).
  Tensor forward_visible_baseline(const Tensor& vis,
                                  std::vector<Tensor>* layer_outputs = nullptr) const;

  /// z^l = FFN(Attn(z^{l-1}) + P^{l1}) + P^{l2}
  TokenSeq encoder_layer_forward(const TokenSeq& z_prev, const TokenSeq& prompt_in,
                                 std::size_t layer, ops::Mode mode, LayerTrace* trace = nullptr);

  TokenSeq embed_visible(const Tensor& vis) const;
  TokenSeq embed_infrared(const Tensor& ir) const;
  TokenSeq initial_prompt(const TokenSeq& z_vis, const TokenSeq& z_ir, ops::Mode mode);

  EncoderLayerParams& layer(std::size_t l) { return layers_.at(l); }
  const EncoderLayerParams& layer(std::size_t l) const { return layers_.at(l); }
  MpBlockParams& alpha() { return alpha_; }
  const HeadParams& head() const { return head_; }

  TrainPolicy policy() const { return policy_; }
  void apply_policy(TrainPolicy policy);
  /// Disjoint, exhaustive split of parameter names by trainable flag.
  ParamPartition partition_params() const;

  /// Batch-norm running statistics, keyed by "<block>.ho.bn".
  std::vector<std::pair<std::string, ops::BatchNormState*>> buffers();

 private:
  ModelConfig config_;
  TrainPolicy policy_;
  ParamStore params_;
  PatchEmbedParams vis_embed_;
  PatchEmbedParams ir_embed_;
  MpBlockParams alpha_;
  std::vector<EncoderLayerParams> layers_;
  HeadParams head_;
};

}  // namespace ivtune
