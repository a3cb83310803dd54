// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivtune/model.hpp"

#include <cmath>
#include <random>

#include "ivtune/error.hpp"

namespace ivtune {

namespace {

constexpr double kInitStd = 0.02;

// Independent init streams per parameter group, so that e.g. the frozen
// backbone is identical across variants built from the same seed.
enum class Stream : std::uint32_t { backbone = 1, vis_embed, ir_embed, alpha, beta, head };

Initializer stream_init(std::uint64_t seed, Stream s, std::uint32_t sub = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(s), sub};
  std::uint32_t parts[2];
  seq.generate(parts, parts + 2);
  return Initializer((static_cast<std::uint64_t>(parts[0]) << 32) | parts[1]);
}

class Builder {
 public:
  Builder(ParamStore& store, Initializer& init, std::string prefix)
      : store_(store), init_(init), prefix_(std::move(prefix)) {}

  Tensor normal(const std::string& name, Shape shape, double std = kInitStd) {
    return store_.add(prefix_ + name, init_.trunc_normal(std::move(shape), std), false);
  }
  Tensor fill(const std::string& name, Shape shape, double value) {
    return store_.add(prefix_ + name, Tensor(std::move(shape), value), false);
  }

 private:
  ParamStore& store_;
  Initializer& init_;
  std::string prefix_;
};

PatchEmbedParams build_embed(Builder b, std::size_t ch, const ModelConfig& cfg) {
  const std::size_t p = cfg.patch_size;
  PatchEmbedParams e;
  e.patch = p;
  e.weight = b.normal("weight", {cfg.width, ch * p * p});
  e.bias = b.fill("bias", {cfg.width}, 0.0);
  e.pos = b.normal("pos", {cfg.num_tokens(), cfg.width});
  return e;
}

MpBlockParams build_block(Builder b, std::size_t c, std::size_t d, std::size_t r, bool with_s4) {
  MpBlockParams m;
  m.sft.ln1_gamma = b.fill("sft.ln1.gamma", {c}, 1.0);
  m.sft.ln1_beta = b.fill("sft.ln1.beta", {c}, 0.0);
  m.sft.ln2_gamma = b.fill("sft.ln2.gamma", {c}, 1.0);
  m.sft.ln2_beta = b.fill("sft.ln2.beta", {c}, 0.0);
  m.sft.omega1 = b.fill("sft.omega1", {c}, 1.0);
  m.sft.phi1 = b.fill("sft.phi1", {c}, 0.0);
  m.sft.omega2 = b.fill("sft.omega2", {c}, 1.0);
  m.sft.phi2 = b.fill("sft.phi2", {c}, 0.0);
  m.s1_weight = b.normal("s1.weight", {d, c});
  m.s1_bias = b.fill("s1.bias", {d}, 0.0);
  m.s2_weight = b.normal("s2.weight", {d, c});
  m.s2_bias = b.fill("s2.bias", {d}, 0.0);

  const std::size_t k = split_channels(d, r);
  const double conv_std = 1.0 / std::sqrt(static_cast<double>(d));
  m.ho.split = k;
  m.ho.dw_kernel = b.normal("ho.dw.weight", {k, 3, 3}, 1.0 / 3.0);
  m.ho.dw_bias = b.fill("ho.dw.bias", {k}, 0.0);
  m.ho.pw1_weight = b.normal("ho.pw1.weight", {d, d}, conv_std);
  m.ho.pw1_bias = b.fill("ho.pw1.bias", {d}, 0.0);
  m.ho.bn_gamma = b.fill("ho.bn.gamma", {d}, 1.0);
  m.ho.bn_beta = b.fill("ho.bn.beta", {d}, 0.0);
  m.ho.pw2_weight = b.normal("ho.pw2.weight", {d, d}, conv_std);
  m.ho.pw2_bias = b.fill("ho.pw2.bias", {d}, 0.0);
  m.ho.bn_state = ops::BatchNormState::identity(d);

  // Zero output projections: every prompt is exactly zero at initialization.
  m.s3_weight = b.fill("s3.weight", {c, d}, 0.0);
  m.s3_bias = b.fill("s3.bias", {c}, 0.0);
  if (with_s4) {
    m.s4_weight = b.fill("s4.weight", {c, d}, 0.0);
    m.s4_bias = b.fill("s4.bias", {c}, 0.0);
  }
  return m;
}

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

bool trainable_under(TrainPolicy policy, const std::string& group) {
  switch (policy) {
    case TrainPolicy::full: return true;
    case TrainPolicy::head_only: return group == "head";
    case TrainPolicy::prompt:
      return group == "ir_embed" || group == "mp_alpha" || group == "head" ||
             starts_with(group, "mp_beta.");
  }
  return false;
}

}  // namespace

std::string param_group(std::string_view name) {
  if (starts_with(name, "embed.vis.")) return "vis_embed";
  if (starts_with(name, "embed.ir.")) return "ir_embed";
  if (starts_with(name, "mp_alpha.")) return "mp_alpha";
  if (starts_with(name, "head.")) return "head";
  if (starts_with(name, "layers.")) {
    const auto rest = name.substr(7);
    const auto dot = rest.find('.');
    if (dot != std::string_view::npos) {
      const std::string index(rest.substr(0, dot));
      const auto tail = rest.substr(dot + 1);
      if (starts_with(tail, "mp_beta.")) return "mp_beta." + index;
      if (starts_with(tail, "attn.") || starts_with(tail, "ffn.")) return "encoder." + index;
    }
  }
  throw ConfigError("parameter '" + std::string(name) + "' belongs to no group");
}

TokenSeq propagate_prompt(const TokenSeq& p0, const TokenSeq& z_l) {
  require_same_layout(p0, z_l, "propagate_prompt");
  return {ops::add(p0.tokens, z_l.tokens), p0.grid_h, p0.grid_w};
}

IvModel::IvModel(const ModelConfig& config, TrainPolicy policy) : config_(config), policy_(policy) {
  config_.validate();
  const auto& cfg = config_;
  const std::size_t c = cfg.width;

  Initializer vis_init = stream_init(cfg.seed, Stream::vis_embed);
  vis_embed_ = build_embed(Builder(params_, vis_init, "embed.vis."), 3, cfg);
  if (has_infrared()) {
    Initializer ir_init = stream_init(cfg.seed, Stream::ir_embed);
    ir_embed_ = build_embed(Builder(params_, ir_init, "embed.ir."), 1, cfg);
    Initializer alpha_init = stream_init(cfg.seed, Stream::alpha);
    alpha_ = build_block(Builder(params_, alpha_init, "mp_alpha."), c, cfg.d_alpha,
                         cfg.split_ratio_inv, false);
  }

  layers_.reserve(cfg.depth);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const auto sub = static_cast<std::uint32_t>(l);
    Initializer bb = stream_init(cfg.seed, Stream::backbone, sub);
    Builder b(params_, bb, "layers." + std::to_string(l) + ".");
    EncoderLayerParams layer;
    layer.attn.heads = cfg.heads;
    layer.attn.norm_gamma = b.fill("attn.norm.gamma", {c}, 1.0);
    layer.attn.norm_beta = b.fill("attn.norm.beta", {c}, 0.0);
    layer.attn.qkv_weight = b.normal("attn.qkv.weight", {3 * c, c});
    layer.attn.qkv_bias = b.fill("attn.qkv.bias", {3 * c}, 0.0);
    layer.attn.proj_weight = b.normal("attn.proj.weight", {c, c});
    layer.attn.proj_bias = b.fill("attn.proj.bias", {c}, 0.0);
    layer.ffn.norm_gamma = b.fill("ffn.norm.gamma", {c}, 1.0);
    layer.ffn.norm_beta = b.fill("ffn.norm.beta", {c}, 0.0);
    layer.ffn.fc1_weight = b.normal("ffn.fc1.weight", {cfg.hidden(), c});
    layer.ffn.fc1_bias = b.fill("ffn.fc1.bias", {cfg.hidden()}, 0.0);
    layer.ffn.fc2_weight = b.normal("ffn.fc2.weight", {c, cfg.hidden()});
    layer.ffn.fc2_bias = b.fill("ffn.fc2.bias", {c}, 0.0);

    Initializer beta_init = stream_init(cfg.seed, Stream::beta, sub);
    const bool uni = cfg.variant == Variant::uni_fusion;
    layer.prompter = build_block(Builder(params_, beta_init, "layers." + std::to_string(l) + ".mp_beta."),
                                 c, cfg.d_beta, cfg.split_ratio_inv, !uni);
    layers_.push_back(std::move(layer));
  }

  Initializer head_init = stream_init(cfg.seed, Stream::head);
  Builder hb(params_, head_init, "head.");
  head_.weight = hb.normal("weight", {cfg.num_classes, c});
  head_.bias = hb.fill("bias", {cfg.num_classes}, 0.0);

  apply_policy(policy_);
}

void IvModel::apply_policy(TrainPolicy policy) {
  policy_ = policy;
  for (const auto& p : params_.all()) {
    const std::string name = p.name;
    params_.set_trainable(name, trainable_under(policy, param_group(name)));
  }
}

ParamPartition IvModel::partition_params() const {
  ParamPartition part;
  for (const auto& p : params_.all()) (p.trainable ? part.trainable : part.frozen).push_back(p.name);
  return part;
}

std::vector<std::pair<std::string, ops::BatchNormState*>> IvModel::buffers() {
  std::vector<std::pair<std::string, ops::BatchNormState*>> out;
  if (has_infrared()) out.emplace_back("mp_alpha.ho.bn", &alpha_.ho.bn_state);
  for (std::size_t l = 0; l < layers_.size(); ++l)
    out.emplace_back("layers." + std::to_string(l) + ".mp_beta.ho.bn", &layers_[l].prompter.ho.bn_state);
  return out;
}

TokenSeq IvModel::embed_visible(const Tensor& vis) const {
  return patch_embed(vis, vis_embed_, Modality::visible);
}

TokenSeq IvModel::embed_infrared(const Tensor& ir) const {
  if (!has_infrared()) throw ConfigError("vis_only model has no infrared embedding");
  return patch_embed(ir, ir_embed_, Modality::infrared);
}

TokenSeq IvModel::initial_prompt(const TokenSeq& z_vis, const TokenSeq& z_ir, ops::Mode mode) {
  return mp_alpha(z_vis, z_ir, alpha_, mode);
}

TokenSeq IvModel::encoder_layer_forward(const TokenSeq& z_prev, const TokenSeq& prompt_in,
                                        std::size_t l, ops::Mode mode, LayerTrace* trace) {
  require_same_layout(z_prev, prompt_in, "encoder_layer_forward");
  auto& layer = layers_.at(l);
  auto block = [&](const TokenSeq& feat) {
    return config_.variant == Variant::uni_fusion ? mp_alpha(feat, prompt_in, layer.prompter, mode)
                                                  : mp_beta(feat, prompt_in, layer.prompter, mode);
  };
  TokenSeq a = attn_stage(z_prev, layer.attn);
  TokenSeq p1 = block(a);
  TokenSeq b = ffn_stage(TokenSeq{ops::add(a.tokens, p1.tokens), a.grid_h, a.grid_w}, layer.ffn);
  TokenSeq p2 = block(b);
  if (trace) *trace = LayerTrace{p1, p2};
  return {ops::add(b.tokens, p2.tokens), b.grid_h, b.grid_w};
}

Tensor IvModel::forward(const Tensor& vis, const Tensor& ir, ops::Mode mode,
                        std::vector<Tensor>* layer_outputs) {
  TokenSeq z = embed_visible(vis);
  TokenSeq p0;
  if (has_infrared()) {
    if (!ir.defined()) throw ShapeError("forward: infrared input required by variant " +
                                        to_string(config_.variant));
    if (ir.rank() != 4 || ir.dim(0) != vis.dim(0) || ir.dim(2) != vis.dim(2) ||
        ir.dim(3) != vis.dim(3))
      throw ShapeError("forward: infrared " + shape_str(ir.shape()) +
                       " is not aligned with visible " + shape_str(vis.shape()));
    p0 = initial_prompt(z, embed_infrared(ir), mode);
  } else {
    p0 = TokenSeq{Tensor::zeros(z.tokens.shape()), z.grid_h, z.grid_w};
  }
  TokenSeq prompt = p0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    z = encoder_layer_forward(z, prompt, l, mode);
    if (layer_outputs) layer_outputs->push_back(z.tokens);
    if (l + 1 < layers_.size()) prompt = propagate_prompt(p0, z);
  }
  return decode_head(z, head_);
}

Tensor IvModel::forward_visible_baseline(const Tensor& vis, std::vector<Tensor>* layer_outputs) const {
  TokenSeq z = embed_visible(vis);
  for (const auto& layer : layers_) {
    z = ffn_stage(attn_stage(z, layer.attn), layer.ffn);
    if (layer_outputs) layer_outputs->push_back(z.tokens);
  }
  return decode_head(z, head_);
}

}  // namespace ivtune
