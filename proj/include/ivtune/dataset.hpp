// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ivtune/config.hpp"
#include "ivtune/tensor.hpp"

// Synthetic aligned infrared/visible scenes. The infrared channel is a smooth
// blob field whose patch means define the labels; the visible channels are
// texture and edges from an independent stream, mixed with a label cue of
// strength (1 - ambiguity).
namespace ivtune {

struct DatasetSpec {
  std::uint64_t seed = 0;
  std::size_t n_train = 512;
  std::size_t n_val = 128;
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t num_classes = 2;
  double ambiguity = 1.0;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_tokens() const { return grid() * grid(); }
  /// Throws ConfigError for invalid sizes, K < 2, ambiguity outside [0, 1]
  /// or an empty dataset.
  void validate() const;
  bool operator==(const DatasetSpec&) const = default;
};

enum class SplitKind : std::uint32_t { train = 0, val = 1 };

struct Sample {
  std::vector<double> vis;  // [3, H, W]
  std::vector<double> ir;   // [1, H, W]
  std::vector<int> labels;  // [N]
};

/// One sample from its own derived seed (seed, split, index).
Sample generate_sample(const DatasetSpec& spec, SplitKind split, std::size_t index);

/// A stack of samples: vis [n,3,H,W], ir [n,1,H,W], labels [n*N].
struct Split {
  Tensor vis;
  Tensor ir;
  std::vector<int> labels;

  std::size_t size() const { return vis.defined() ? vis.dim(0) : 0; }
  std::size_t tokens_per_sample() const;

  struct Batch {
    Tensor vis;
    Tensor ir;
    std::vector<int> labels;
  };
  Batch batch(std::span<const std::size_t> indices) const;
  Batch range(std::size_t begin, std::size_t end) const;
};

struct Dataset {
  DatasetSpec spec;
  Split train;
  Split val;
};

Split generate_split(const DatasetSpec& spec, SplitKind split);
Dataset generate_dataset(const DatasetSpec& spec);

/// Directory layout: manifest.txt (key=value), train.ivtn, val.ivtn. Each
/// container holds entries "vis", "ir" and "labels" stored as f32.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& dir);

KeyValues dataset_manifest(const DatasetSpec& spec);
DatasetSpec spec_from_manifest(const KeyValues& kv);

}  // namespace ivtune
