// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivtune/checkpoint.hpp"

#include <map>

#include "ivtune/container.hpp"
#include "ivtune/error.hpp"

namespace ivtune {

namespace {

constexpr std::size_t kConfigFields = 15;

Tensor config_tensor(const ModelConfig& c, TrainPolicy policy) {
  auto d = [](auto v) { return static_cast<double>(v); };
  return Tensor({kConfigFields},
                {1.0, d(c.image_size), d(c.patch_size), d(c.depth), d(c.width), d(c.heads), d(c.mlp_ratio),
                 d(c.num_classes), d(c.d_alpha), d(c.d_beta), d(c.split_ratio_inv),
                 d(static_cast<int>(c.variant)), d(static_cast<std::uint32_t>(c.seed)),
                 d(static_cast<std::uint32_t>(c.seed >> 32)), d(static_cast<int>(policy))});
}

std::pair<ModelConfig, TrainPolicy> parse_config(const Tensor& t) {
  if (t.shape() != Shape{kConfigFields} || t[0] != 1.0) throw FormatError("unsupported checkpoint metadata");
  auto u = [&](std::size_t i) { return static_cast<std::size_t>(t[i]); };
  ModelConfig c;
  c.image_size = u(1);
  c.patch_size = u(2);
  c.depth = u(3);
  c.width = u(4);
  c.heads = u(5);
  c.mlp_ratio = u(6);
  c.num_classes = u(7);
  c.d_alpha = u(8);
  c.d_beta = u(9);
  c.split_ratio_inv = u(10);
  if (u(11) > 2 || u(14) > 2) throw FormatError("bad variant or policy code in checkpoint");
  c.variant = static_cast<Variant>(u(11));
  c.seed = static_cast<std::uint64_t>(u(12)) | (static_cast<std::uint64_t>(u(13)) << 32);
  c.validate();
  return {c, static_cast<TrainPolicy>(u(14))};
}

std::map<std::string, Tensor> by_name(std::vector<NamedTensor> entries) {
  std::map<std::string, Tensor> out;
  for (auto& e : entries) out.emplace(std::move(e.name), std::move(e.tensor));
  return out;
}

const Tensor& need(const std::map<std::string, Tensor>& m, const std::string& key) {
  const auto it = m.find(key);
  if (it == m.end()) throw ConfigError("checkpoint lacks entry '" + key + "'");
  return it->second;
}

std::optional<Optimizer> apply_entries(const std::map<std::string, Tensor>& entries, IvModel& model) {
  const auto [cfg, policy] = parse_config(need(entries, "meta/config"));
  if (!(cfg == model.config())) throw ConfigError("checkpoint config does not match the model");

  // Validate everything before the first write, so a failure loads nothing.
  std::size_t param_entries = 0;
  for (const auto& [key, t] : entries)
    if (key.starts_with("param/")) ++param_entries;
  if (param_entries != model.params().size())
    throw ConfigError("checkpoint parameter set does not match the model");
  for (const auto& p : model.params().all())
    if (need(entries, "param/" + p.name).shape() != p.tensor.shape())
      throw ConfigError("shape mismatch for parameter '" + p.name + "'");
  auto buffers = model.buffers();
  for (const auto& [name, state] : buffers) {
    const std::size_t ch = state->running_mean.size();
    if (need(entries, "buffer/" + name + "/mean").numel() != ch ||
        need(entries, "buffer/" + name + "/var").numel() != ch || need(entries, "buffer/" + name + "/count").numel() != 1)
      throw ConfigError("shape mismatch for buffer '" + name + "'");
  }

  std::optional<Optimizer> opt;
  if (const auto it = entries.find("optim/config"); it != entries.end()) {
    const Tensor& oc = it->second;
    if (oc.numel() != 7 || oc[0] < 0 || oc[0] > 2) throw FormatError("bad optimizer metadata");
    OptimizerConfig c{static_cast<OptimizerKind>(static_cast<int>(oc[0])), oc[1], oc[2], oc[3], oc[4], oc[5]};
    std::map<std::string, Optimizer::Moments> moments;
    for (const auto& [key, t] : entries) {
      if (!key.starts_with("optim/m/")) continue;
      const std::string name = key.substr(8);
      const Parameter* p = model.params().find(name);
      const Tensor& v = need(entries, "optim/v/" + name);
      if (p == nullptr || !p->trainable || t.numel() != p->tensor.numel() || v.numel() != t.numel())
        throw ConfigError("optimizer moments do not match parameter '" + name + "'");
      moments[name] = {std::vector<double>(t.data().begin(), t.data().end()),
                       std::vector<double>(v.data().begin(), v.data().end())};
    }
    opt.emplace(c);
    opt->restore(static_cast<std::uint64_t>(oc[6]), std::move(moments));
  }

  model.apply_policy(policy);
  for (const auto& p : model.params().all()) {
    const auto src = entries.at("param/" + p.name).data();
    Tensor dst = p.tensor;
    std::copy(src.begin(), src.end(), dst.mutable_data().begin());
  }
  for (auto& [name, state] : buffers) {
    const auto mean = entries.at("buffer/" + name + "/mean").data();
    const auto var = entries.at("buffer/" + name + "/var").data();
    state->running_mean.assign(mean.begin(), mean.end());
    state->running_var.assign(var.begin(), var.end());
    state->batches_tracked = static_cast<std::size_t>(entries.at("buffer/" + name + "/count")[0]);
  }
  return opt;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, IvModel& model, const Optimizer* optimizer) {
  std::vector<NamedTensor> out;
  out.push_back({"meta/config", config_tensor(model.config(), model.policy()), DType::f64});
  for (const auto& p : model.params().all()) out.push_back({"param/" + p.name, p.tensor, DType::f64});
  for (const auto& [name, state] : model.buffers()) {
    const std::size_t ch = state->running_mean.size();
    out.push_back({"buffer/" + name + "/mean", Tensor({ch}, state->running_mean), DType::f64});
    out.push_back({"buffer/" + name + "/var", Tensor({ch}, state->running_var), DType::f64});
    out.push_back({"buffer/" + name + "/count",
                   Tensor::scalar(static_cast<double>(state->batches_tracked)), DType::f64});
  }
  if (optimizer != nullptr) {
    const auto& c = optimizer->config();
    out.push_back({"optim/config",
                   Tensor({7}, {static_cast<double>(c.kind), c.lr, c.weight_decay, c.beta1, c.beta2, c.eps,
                                static_cast<double>(optimizer->steps())}),
                   DType::f64});
    for (const auto& [name, mom] : optimizer->moments()) {
      out.push_back({"optim/m/" + name, Tensor({mom.m.size()}, mom.m), DType::f64});
      out.push_back({"optim/v/" + name, Tensor({mom.v.size()}, mom.v), DType::f64});
    }
  }
  save_container(path, out);
}

ModelConfig checkpoint_config(const std::filesystem::path& path) {
  return parse_config(need(by_name(load_container(path)), "meta/config")).first;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto entries = by_name(load_container(path));
  const auto [cfg, policy] = parse_config(need(entries, "meta/config"));
  Checkpoint ck{IvModel(cfg, policy), std::nullopt};
  ck.optimizer = apply_entries(entries, ck.model);
  return ck;
}

std::optional<Optimizer> load_checkpoint_into(const std::filesystem::path& path, IvModel& model) {
  return apply_entries(by_name(load_container(path)), model);
}

}  // namespace ivtune
