// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "ivtune/tensor.hpp"

namespace ivtune {

inline constexpr double kFiniteDiffStep = 1e-5;

struct FiniteDiffReport {
  /// max over checked coordinates of
  ///   |analytic - central| / max(|analytic|, |central|, 1e-5 * max(1, |f(x)|))
  /// The last term keeps derivatives below finite-difference resolution
  /// from producing noise/noise ratios.
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates whose +-h perturbation flips a relu, i.e. lies on a kink.
  std::vector<std::size_t> excluded;
};

/// Compares the reverse-mode gradient of scalar `f` at `point` against central
/// differences with step `h`.
FiniteDiffReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                                   const Tensor& point, double h = kFiniteDiffStep);

/// Same check for a leaf captured by `f` (typically a parameter). The leaf is
/// perturbed in place and restored before returning.
FiniteDiffReport finite_diff_check_leaf(const std::function<Tensor()>& f, Tensor leaf,
                                        double h = kFiniteDiffStep);

}  // namespace ivtune
