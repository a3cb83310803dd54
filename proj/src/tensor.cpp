// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivtune/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "ivtune/error.hpp"

namespace ivtune {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) {
  check_shape(shape);
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  check_shape(shape);
  if (shape_numel(shape) != values.size())
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values) {
  return Tensor(std::move(shape), std::vector<double>(values));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ShapeError("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis out of range for shape " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!impl_) throw ShapeError("use of undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw ShapeError("use of undefined tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!impl_) throw ShapeError("use of undefined tensor");
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

Tensor Tensor::grad() const {
  if (!has_grad()) throw NumericError("tensor has no gradient");
  return Tensor(impl_->shape, impl_->grad);
}

void Tensor::clear_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::clone() const {
  if (!impl_) return {};
  return Tensor(impl_->shape, impl_->data);
}

bool Tensor::bitwise_equal(const Tensor& other) const {
  if (!defined() || !other.defined()) return defined() == other.defined();
  if (shape() != other.shape()) return false;
  return std::memcmp(impl_->data.data(), other.impl_->data.data(),
                     impl_->data.size() * sizeof(double)) == 0;
}

Tensor make_result(Shape shape, std::vector<double> values) {
  return Tensor(std::move(shape), std::move(values));
}

std::span<double> grad_slot(const Tensor& t) {
  if (!t.defined() || !t.impl()->requires_grad) return {};
  auto& g = t.impl()->grad;
  if (g.empty()) g.assign(t.impl()->data.size(), 0.0);
  return g;
}

void ensure_finite(std::span<const double> values, const char* op) {
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
}

namespace {
thread_local GradTape* g_active_tape = nullptr;
}

GradTape::GradTape() : previous_(g_active_tape) { g_active_tape = this; }

GradTape::~GradTape() {
  for (auto& n : nodes_) {
    n.out->tape_index = -1;
    n.out->tape_owner = nullptr;
  }
  g_active_tape = previous_;
}

GradTape* GradTape::active() noexcept { return g_active_tape; }

bool GradTape::record(Tensor& out, std::initializer_list<const Tensor*> inputs,
                      BackwardFn backward) {
  bool needed = false;
  for (const Tensor* in : inputs) needed = needed || (in && in->requires_grad());
  if (!needed) return false;
  out.impl_->requires_grad = true;
  out.impl_->tape_index = static_cast<std::ptrdiff_t>(nodes_.size());
  out.impl_->tape_owner = this;
  nodes_.push_back(Node{out.impl_, std::move(backward)});
  return true;
}

void GradTape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward requires a scalar loss");
  auto& impl = *loss.impl_;
  if (impl.tape_owner != this || impl.tape_index < 0)
    throw NumericError("loss is not reachable from any trainable tensor");
  impl.grad.assign(1, 1.0);
  for (auto i = impl.tape_index; i >= 0; --i) {
    auto& node = nodes_[static_cast<std::size_t>(i)];
    if (node.out->grad.empty()) continue;
    ensure_finite(node.out->grad, "backward replay");
    node.backward(node.out->grad);
    // Intermediate gradients are consumed exactly once.
    node.out->grad.clear();
    node.out->grad.shrink_to_fit();
  }
}

}  // namespace ivtune
