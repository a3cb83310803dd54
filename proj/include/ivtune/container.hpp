// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ivtune/tensor.hpp"

// Named-tensor container file. All integers and values little-endian:
//
//   "IVTN"                       4 bytes magic
//   version                      u32 (currently 1)
//   entry count                  u32
//   per entry:
//     name length                u32, followed by that many UTF-8 bytes
//     dtype                      u32 (0 = f32, 1 = f64)
//     rank                       u32
//     dims                       rank x u64
//     values                     product(dims) x f32 | f64
namespace ivtune {

inline constexpr std::uint32_t kContainerVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
  DType dtype = DType::f64;
};

std::vector<std::uint8_t> encode_container(const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> decode_container(const std::vector<std::uint8_t>& bytes);

void save_container(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_container(const std::filesystem::path& path);

/// Entry lookup by name; throws FormatError if missing.
const NamedTensor& find_entry(const std::vector<NamedTensor>& entries, const std::string& name);

}  // namespace ivtune
