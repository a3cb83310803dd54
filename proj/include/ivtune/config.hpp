// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>

namespace ivtune {

/// Architecture variant. `vis_only` drops the infrared branch; `uni_fusion`
/// fuses in latent space (MP-alpha rule) inside every encoder layer.
enum class Variant { standard, vis_only, uni_fusion };

/// Which parameters the optimizer may touch.
///   prompt    - infrared embedding, prompters and head (PETL default)
///   head_only - decoder head only (frozen baseline)
///   full      - every parameter (full fine-tuning baseline)
enum class TrainPolicy { prompt, head_only, full };

std::string to_string(Variant v);
std::string to_string(TrainPolicy p);
Variant parse_variant(const std::string& s);
TrainPolicy parse_policy(const std::string& s);

struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t depth = 4;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 2;
  std::size_t d_alpha = 8;
  std::size_t d_beta = 16;
  std::size_t split_ratio_inv = 4;
  Variant variant = Variant::standard;
  std::uint64_t seed = 0;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_tokens() const { return grid() * grid(); }
  std::size_t hidden() const { return mlp_ratio * width; }

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Channels convolved by the hybrid operation: ceil(d / r).
std::size_t split_channels(std::size_t latent_dim, std::size_t split_ratio_inv);

/// Flat key=value map, the on-disk form of every config in this project.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
std::string format_key_values(const KeyValues& kv);

/// Typed lookups with a fallback for absent keys; ConfigError on bad values.
std::uint64_t kv_uint(const KeyValues& kv, const std::string& key, std::uint64_t fallback);
double kv_double(const KeyValues& kv, const std::string& key, double fallback);
/// Shortest text that parses back to the same double.
std::string format_double(double v);

void write_model_config(const ModelConfig& cfg, KeyValues& kv);
/// Reads the model keys present in `kv`, leaving defaults for absent ones.
ModelConfig read_model_config(const KeyValues& kv, ModelConfig base = {});

}  // namespace ivtune
