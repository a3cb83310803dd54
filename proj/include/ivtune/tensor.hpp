// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ivtune {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Storage precision. All arithmetic runs in 64-bit; `f32` only affects how a
/// tensor is written to a container file.
enum class DType : std::uint32_t { f32 = 0, f64 = 1 };

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  // Empty means "no gradient": the tensor did not take part in a backward
  // pass. Never zero-filled speculatively.
  std::vector<double> grad;
  bool requires_grad = false;
  // Position of the op that produced this tensor on the active tape, or -1
  // for leaves.
  std::ptrdiff_t tape_index = -1;
  const void* tape_owner = nullptr;
};
}  // namespace detail

/// Dense row-major tensor with shared handle semantics. Copies of a Tensor
/// alias the same storage; use `clone()` for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }
  static Tensor from(Shape shape, std::initializer_list<double> values);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Direct write access. Only for leaves (parameters, inputs); mutating a
  /// tensor recorded on a live tape invalidates its gradient.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  bool has_grad() const;
  /// Gradient as a fresh tensor; throws if absent.
  Tensor grad() const;
  void clear_grad();

  Tensor clone() const;
  /// Same storage? Used to check parameter sharing.
  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

  bool bitwise_equal(const Tensor& other) const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend class GradTape;
  friend Tensor make_result(Shape, std::vector<double>);
};

/// Wraps freshly computed values into a new non-leaf tensor.
Tensor make_result(Shape shape, std::vector<double> values);

/// Records primitive operations while alive and replays them in reverse.
/// The most recently constructed tape on a thread is the active one. Recording
/// order is a valid topological order, so backward is a single reverse sweep.
class GradTape {
 public:
  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active() noexcept;

  /// Backward callback: receives the output gradient; accumulates into inputs.
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;

  /// Records `out` as produced from `inputs`. No-op if no input requires a
  /// gradient. Returns true if recorded.
  bool record(Tensor& out, std::initializer_list<const Tensor*> inputs,
              BackwardFn backward);

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and replays the tape. Leaf gradients are left
  /// on the leaves (see `Tensor::grad`).
  void backward(const Tensor& loss);

 private:
  struct Node {
    std::shared_ptr<detail::TensorImpl> out;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  GradTape* previous_ = nullptr;
};

/// Gradient buffer of `t` for accumulation, zero-allocated on first use.
/// Empty span when `t` does not require a gradient.
std::span<double> grad_slot(const Tensor& t);

/// Throws NumericError naming `op` if any value is NaN or infinite.
void ensure_finite(std::span<const double> values, const char* op);

}  // namespace ivtune
