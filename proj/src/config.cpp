// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivtune/config.hpp"

#include <charconv>
#include <sstream>

#include "ivtune/error.hpp"

namespace ivtune {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::standard: return "standard";
    case Variant::vis_only: return "vis_only";
    case Variant::uni_fusion: return "uni_fusion";
  }
  return "?";
}

std::string to_string(TrainPolicy p) {
  switch (p) {
    case TrainPolicy::prompt: return "prompt";
    case TrainPolicy::head_only: return "head_only";
    case TrainPolicy::full: return "full";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "standard") return Variant::standard;
  if (s == "vis_only") return Variant::vis_only;
  if (s == "uni_fusion") return Variant::uni_fusion;
  throw ConfigError("unknown variant '" + s + "'");
}

TrainPolicy parse_policy(const std::string& s) {
  if (s == "prompt") return TrainPolicy::prompt;
  if (s == "head_only") return TrainPolicy::head_only;
  if (s == "full") return TrainPolicy::full;
  throw ConfigError("unknown train policy '" + s + "'");
}

std::size_t split_channels(std::size_t latent_dim, std::size_t split_ratio_inv) {
  return (latent_dim + split_ratio_inv - 1) / split_ratio_inv;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (patch_size == 0 || image_size == 0) fail("image_size and patch_size must be positive");
  if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
  if (depth == 0) fail("depth must be >= 1");
  if (width == 0 || heads == 0 || width % heads != 0) fail("width must be divisible by heads");
  if (mlp_ratio == 0) fail("mlp_ratio must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (d_alpha == 0 || d_beta == 0) fail("latent dims must be >= 1");
  if (split_ratio_inv == 0) fail("split_ratio_inv must be >= 1");
  if (split_channels(d_alpha, split_ratio_inv) > d_alpha ||
      split_channels(d_beta, split_ratio_inv) > d_beta)
    fail("split exceeds latent dim");
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

namespace {
std::uint64_t to_uint(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + value + "'");
  return out;
}
}  // namespace

std::uint64_t kv_uint(const KeyValues& kv, const std::string& key, std::uint64_t fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : to_uint(key, it->second);
}

double kv_double(const KeyValues& kv, const std::string& key, double fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const std::string& value = it->second;
  double out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ConfigError("key '" + key + "': expected a number, got '" + value + "'");
  return out;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void write_model_config(const ModelConfig& cfg, KeyValues& kv) {
  kv["image_size"] = std::to_string(cfg.image_size);
  kv["patch_size"] = std::to_string(cfg.patch_size);
  kv["depth"] = std::to_string(cfg.depth);
  kv["width"] = std::to_string(cfg.width);
  kv["heads"] = std::to_string(cfg.heads);
  kv["mlp_ratio"] = std::to_string(cfg.mlp_ratio);
  kv["num_classes"] = std::to_string(cfg.num_classes);
  kv["d_alpha"] = std::to_string(cfg.d_alpha);
  kv["d_beta"] = std::to_string(cfg.d_beta);
  kv["split_ratio_inv"] = std::to_string(cfg.split_ratio_inv);
  kv["variant"] = to_string(cfg.variant);
  kv["seed"] = std::to_string(cfg.seed);
}

ModelConfig read_model_config(const KeyValues& kv, ModelConfig cfg) {
  auto get = [&](const char* key, std::size_t& field) {
    if (auto it = kv.find(key); it != kv.end()) field = to_uint(key, it->second);
  };
  get("image_size", cfg.image_size);
  get("patch_size", cfg.patch_size);
  get("depth", cfg.depth);
  get("width", cfg.width);
  get("heads", cfg.heads);
  get("mlp_ratio", cfg.mlp_ratio);
  get("num_classes", cfg.num_classes);
  get("d_alpha", cfg.d_alpha);
  get("d_beta", cfg.d_beta);
  get("split_ratio_inv", cfg.split_ratio_inv);
  if (auto it = kv.find("variant"); it != kv.end()) cfg.variant = parse_variant(it->second);
  if (auto it = kv.find("seed"); it != kv.end()) cfg.seed = to_uint("seed", it->second);
  return cfg;
}

}  // namespace ivtune
