// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ivtune/tensor.hpp"

namespace ivtune {

/// A named tensor plus its trainable flag. The tensor's requires_grad always
/// mirrors `trainable`.
struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = false;
};

using GradMap = std::map<std::string, Tensor>;

/// Ordered registry of a model's parameters, keyed by hierarchical name.
class ParamStore {
 public:
  /// Registers a parameter and returns its (shared) tensor handle.
  Tensor add(std::string name, Tensor tensor, bool trainable);

  const std::vector<Parameter>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  const Parameter& at(std::string_view name) const;
  const Parameter* find(std::string_view name) const;
  void set_trainable(std::string_view name, bool trainable);

  std::size_t numel(bool trainable) const;
  std::size_t numel() const;

  /// Moves gradients off the trainable leaves into a map. Parameters that did
  /// not take part in the backward pass are absent.
  GradMap take_grads();

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Seeded initializer shared by the model builders.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : engine_(seed) {}
  /// Normal(0, std) resampled until within two standard deviations.
  Tensor trunc_normal(Shape shape, double std);
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ivtune
