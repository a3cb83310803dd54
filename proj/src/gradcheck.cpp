// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivtune/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "ivtune/error.hpp"
#include "ivtune/ops.hpp"

namespace ivtune {

namespace {

constexpr double kScaleFloor = 1e-5;

struct Probe {
  double value;
  std::vector<bool> pattern;
};

Probe evaluate(const std::function<Tensor()>& f) {
  ops::ReluPatternRecorder recorder;
  Tensor y = f();
  if (y.numel() != 1) throw ShapeError("finite_diff_check: function must be scalar-valued");
  const double v = y.item();
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite evaluation");
  return {v, recorder.pattern()};
}

}  // namespace

FiniteDiffReport finite_diff_check_leaf(const std::function<Tensor()>& f, Tensor leaf, double h) {
  if (!(h > 0.0)) throw NumericError("finite_diff_check: step must be positive");
  const bool had_grad_flag = leaf.requires_grad();
  leaf.clear_grad();
  leaf.set_requires_grad(true);

  std::vector<double> analytic(leaf.numel(), 0.0);
  {
    GradTape tape;
    Tensor y = f();
    if (y.numel() != 1) throw ShapeError("finite_diff_check: function must be scalar-valued");
    if (y.requires_grad()) {
      tape.backward(y);
      if (leaf.has_grad()) {
        const Tensor g = leaf.grad();
        analytic.assign(g.data().begin(), g.data().end());
      }
    }
  }
  leaf.clear_grad();
  leaf.set_requires_grad(had_grad_flag);

  const Probe base = evaluate(f);
  FiniteDiffReport report;
  auto data = leaf.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double orig = data[i];
    data[i] = orig + h;
    Probe plus = evaluate(f);
    data[i] = orig - h;
    Probe minus = evaluate(f);
    data[i] = orig;
    if (plus.pattern != base.pattern || minus.pattern != base.pattern) {
      report.excluded.push_back(i);
      continue;
    }
    const double numeric = (plus.value - minus.value) / (2.0 * h);
    // Central-difference roundoff grows like |f|/h, so derivatives below
    // kScaleFloor * max(1, |f|) are compared in absolute terms. Exact
    // structural zeros (e.g. a bias feeding batch norm) would otherwise
    // divide pure noise by ~0.
    const double floor = kScaleFloor * std::max(1.0, std::abs(base.value));
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    const double err = std::abs(analytic[i] - numeric) / denom;
    report.max_rel_error = std::max(report.max_rel_error, err);
    ++report.checked;
  }
  return report;
}

FiniteDiffReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                                   const Tensor& point, double h) {
  Tensor x = point.clone();
  return finite_diff_check_leaf([&] { return f(x); }, x, h);
}

}  // namespace ivtune
