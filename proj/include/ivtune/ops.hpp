// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ivtune/tensor.hpp"

// Differentiable primitives. Every op records itself on the active GradTape
// when at least one input requires a gradient, and throws ShapeError on
// mismatched operands.
namespace ivtune::ops {

inline constexpr double kNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

enum class Mode { train, eval };

// Elementwise. `b` may have the same shape as `a` or a suffix of it, in which
// case it is broadcast over the leading axes (bias, positional tables).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// y = x W^T + b over the last axis. weight is [out, in]; bias may be
/// undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Normalizes each last-axis vector to zero mean / unit variance, then applies
/// gamma and beta. Requires eps > 0.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kNormEps);

Tensor relu(const Tensor& x);
/// Exact (erf-based) GELU.
Tensor gelu(const Tensor& x);
Tensor softmax(const Tensor& x);

/// Scaled dot-product attention over [B, N, C] inputs split into `heads`
/// heads of width C / heads, softmax over keys, scale 1/sqrt(C / heads).
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t heads);

/// [B, Ch, H, W] per-channel 3x3 cross-correlation, zero padding 1, stride 1.
Tensor depthwise_conv3x3(const Tensor& x, const Tensor& kernel, const Tensor& bias);

/// [B, Cin, H, W] -> [B, Cout, H, W]; weight [Cout, Cin].
Tensor pointwise_conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Running statistics for batch_norm. A default-constructed state holds no
/// statistics and cannot be used in eval mode.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  std::size_t batches_tracked = 0;

  static BatchNormState identity(std::size_t channels) {
    return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0), 0};
  }
  bool initialized() const { return !running_mean.empty(); }
};

/// Per-channel normalization over (B, H, W). Train mode uses biased batch
/// statistics and folds the unbiased variance into `state` with `momentum`.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, Mode mode, double eps = kNormEps,
                  double momentum = kBatchNormMomentum);

/// [B, N, C] -> [B, C, H, W] with token n at (n / W, n % W).
Tensor tokens_to_map(const Tensor& tokens, std::size_t height, std::size_t width);
/// [B, C, H, W] -> [B, H*W, C].
Tensor map_to_tokens(const Tensor& map);

/// Channels [begin, end) of a [B, Ch, H, W] map.
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Columns [begin, begin + length) of the last axis.
Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t length);

/// [B, ch, H, W] -> [B, (H/p)*(W/p), ch*p*p]. Patches in row-major grid order,
/// features ordered (channel, row, column).
Tensor patchify(const Tensor& image, std::size_t patch);

/// Mean softmax cross-entropy of [..., K] logits against integer labels, one
/// per leading position.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Records the on/off pattern of every relu evaluated on this thread while
/// alive. Used by the finite-difference checker to detect kinks.
class ReluPatternRecorder {
 public:
  ReluPatternRecorder();
  ~ReluPatternRecorder();
  ReluPatternRecorder(const ReluPatternRecorder&) = delete;
  ReluPatternRecorder& operator=(const ReluPatternRecorder&) = delete;

  const std::vector<bool>& pattern() const { return pattern_; }
  void append(std::span<const double> inputs);

 private:
  std::vector<bool> pattern_;
  ReluPatternRecorder* previous_;
};

}  // namespace ivtune::ops
