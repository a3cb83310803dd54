// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivtune/params.hpp"

#include <cmath>

#include "ivtune/error.hpp"

namespace ivtune {

Tensor ParamStore::add(std::string name, Tensor tensor, bool trainable) {
  if (name.empty()) throw ConfigError("parameter name must be non-empty");
  if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  tensor.set_requires_grad(trainable);
  index_.emplace(name, params_.size());
  params_.push_back(Parameter{std::move(name), tensor, trainable});
  return tensor;
}

const Parameter* ParamStore::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter& ParamStore::at(std::string_view name) const {
  if (const auto* p = find(name)) return *p;
  throw ConfigError("unknown parameter '" + std::string(name) + "'");
}

void ParamStore::set_trainable(std::string_view name, bool trainable) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  auto& p = params_[it->second];
  p.trainable = trainable;
  p.tensor.set_requires_grad(trainable);
  p.tensor.clear_grad();
}

std::size_t ParamStore::numel(bool trainable) const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.trainable == trainable) n += p.tensor.numel();
  return n;
}

std::size_t ParamStore::numel() const { return numel(true) + numel(false); }

GradMap ParamStore::take_grads() {
  GradMap out;
  for (auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    out.emplace(p.name, p.tensor.grad());
    p.tensor.clear_grad();
  }
  return out;
}

Tensor Initializer::trunc_normal(Shape shape, double std) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : t.mutable_data()) {
    double s;
    do {
      s = normal(engine_);
    } while (std::abs(s) > 2.0);
    v = s * std;
  }
  return t;
}

}  // namespace ivtune
