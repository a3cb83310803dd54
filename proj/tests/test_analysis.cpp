// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>

#include "doctest.h"
#include "ivtune/analysis.hpp"
#include "ivtune/error.hpp"
#include "ivtune/model.hpp"
#include "analysis_oracle.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace ivtune;
using ivtune::testing::random_tensor;
using ivtune::oracle::eigen_ratios;
using ivtune::oracle::naive_radial;

namespace {

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_CASE("pca examples") {
  const auto r1 = explained_variance(Tensor::from({3, 2}, {1, 0, -1, 0, 0, 0}));
  CHECK(r1[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(r1[1]) < 1e-12);

  const auto r2 = explained_variance(Tensor::from({4, 2}, {2, 0, -2, 0, 0, 1, 0, -1}));
  CHECK(r2[0] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(r2[1] == doctest::Approx(0.2).epsilon(1e-12));

  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0, 1);
  Tensor iso({10000, 2});
  for (auto& v : iso.mutable_data()) v = n(rng);
  const auto r3 = explained_variance(iso);
  CHECK(std::abs(r3[0] - 0.5) <= 0.05);
  CHECK(std::abs(r3[1] - 0.5) <= 0.05);
}

TEST_CASE("pca matches an independent eigen-solve") {
  std::mt19937_64 rng(11);
  for (std::size_t c = 1; c <= 8; ++c)
    for (int trial = 0; trial < 5; ++trial) {
      // Correlated features so the spectrum is not flat.
      Tensor base = random_tensor(rng, {50, c});
      Tensor mix = random_tensor(rng, {c, c});
      Tensor x({50, c});
      for (std::size_t i = 0; i < 50; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          double s = 0;
          for (std::size_t k = 0; k < c; ++k) s += base[i * c + k] * mix[k * c + j];
          x.mutable_data()[i * c + j] = s;
        }
      const auto got = explained_variance(x);
      const auto want = eigen_ratios(x);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < c; ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-9);
      CHECK(sum(got) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("pca is invariant to token order and translation") {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor(rng, {40, 6});
  const auto base = explained_variance(x);

  std::vector<std::size_t> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor shuffled({40, 6}), shifted = x.clone();
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t j = 0; j < 6; ++j) shuffled.mutable_data()[i * 6 + j] = x[perm[i] * 6 + j];
  const Tensor offset = random_tensor(rng, {6}, -50, 50);
  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t j = 0; j < 6; ++j) shifted.mutable_data()[i * 6 + j] += offset[j];

  const auto a = explained_variance(shuffled), b = explained_variance(shifted);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(std::abs(a[i] - base[i]) <= 1e-12);
    CHECK(std::abs(b[i] - base[i]) <= 1e-9);
  }
}

TEST_CASE("pca degenerate inputs and layer report") {
  Tensor same({5, 3});
  for (std::size_t i = 0; i < 5; ++i) same.mutable_data()[i * 3 + 1] = 2.5;
  CHECK_THROWS_AS(explained_variance(same), NumericError);
  CHECK_THROWS_AS(explained_variance(Tensor::from({1, 2}, {1, 2})), NumericError);

  std::mt19937_64 rng(2);
  const std::vector<Tensor> layers{random_tensor(rng, {2, 10, 4}), random_tensor(rng, {20, 4})};
  const PcaReport r = pca_layer_report(layers, 3);
  REQUIRE(r.ratios.size() == 2);
  CHECK(r.ratios[0].size() == 3);
  // [B, N, C] is pooled over batch and positions.
  const auto pooled = explained_variance(Tensor({20, 4}, std::vector<double>(layers[0].data().begin(), layers[0].data().end())));
  for (std::size_t i = 0; i < 3; ++i) CHECK(r.ratios[0][i] == pooled[i]);
  CHECK(pca_layer_report(layers, 10).ratios[1].size() == 4);

  const std::string csv = pca_csv(r);
  CHECK(csv.starts_with("# ivtune pca v1\nlayer,rank_index,ratio\n1,1,"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2 + 6);
}

TEST_CASE("radial energy examples") {
  Tensor constant({8, 8});
  for (auto& v : constant.mutable_data()) v = 0.7;
  const auto c = radial_energy(constant, 4).energy;
  CHECK(c[0] == doctest::Approx(1.0).epsilon(1e-12));
  for (std::size_t b = 1; b < 4; ++b) CHECK(std::abs(c[b]) < 1e-12);

  // cos(pi x): a single frequency at the horizontal Nyquist limit. Its
  // normalized radius is 1/sqrt(2), which lands in band 2 of 4.
  Tensor nyq({8, 8});
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) nyq.mutable_data()[y * 8 + x] = x % 2 == 0 ? 1.0 : -1.0;
  const auto n = radial_energy(nyq, 4).energy;
  const auto oracle = naive_radial(nyq, 4);
  CHECK(n[2] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(oracle[2] == doctest::Approx(1.0).epsilon(1e-12));

  const auto rep = radial_energy(nyq, 4);
  CHECK(rep.band_lo.front() == 0.0);
  CHECK(rep.band_hi.back() == 1.0);
  CHECK(rep.band_lo[2] == 0.5);
}

TEST_CASE("radial energy matches a naive DFT oracle") {
  std::mt19937_64 rng(13);
  const std::pair<std::size_t, std::size_t> sizes[] = {{2, 2}, {4, 4}, {5, 7}, {8, 6}, {16, 16}, {9, 12}};
  for (const auto& [h, w] : sizes)
    for (std::size_t bands : {std::size_t{1}, std::min<std::size_t>(2, max_radial_bands(h, w)), max_radial_bands(h, w)}) {
      const Tensor img = random_tensor(rng, {2, h, w});
      const auto got = radial_energy(img, bands).energy;
      const auto want = naive_radial(img, bands);
      REQUIRE(got.size() == bands);
      for (std::size_t b = 0; b < bands; ++b) CHECK(std::abs(got[b] - want[b]) <= 1e-9);
    }
}

TEST_CASE("radial energy normalization and scale invariance") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> dim(2, 24);
  for (int t = 0; t < 100; ++t) {
    const std::size_t h = dim(rng), w = dim(rng);
    const Tensor img = random_tensor(rng, {h, w}, -3, 3);
    const std::size_t bands = std::min<std::size_t>(8, max_radial_bands(h, w));
    const auto e = radial_energy(img, bands).energy;
    CHECK(std::abs(sum(e) - 1.0) <= 1e-9);
    for (double v : e) CHECK(v >= 0.0);
    Tensor scaled = img.clone();
    for (auto& v : scaled.mutable_data()) v *= 3.7;
    const auto es = radial_energy(scaled, bands).energy;
    for (std::size_t b = 0; b < bands; ++b) CHECK(std::abs(es[b] - e[b]) <= 1e-12);
  }
}

TEST_CASE("radial energy errors") {
  const Tensor img = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_AS(radial_energy(img, 0), ConfigError);
  CHECK_THROWS_AS(radial_energy(img, max_radial_bands(2, 2) + 1), ConfigError);
  CHECK_NOTHROW(radial_energy(img, max_radial_bands(2, 2)));
  CHECK_THROWS_AS(radial_energy(Tensor::zeros({4, 4}), 2), NumericError);
  CHECK_THROWS(radial_energy(Tensor::zeros({1, 4}), 1));
  CHECK(max_radial_bands(32, 32) == 22);
}

TEST_CASE("operator spectrum shift") {
  std::mt19937_64 rng(23);
  const Tensor images = random_tensor(rng, {3, 1, 16, 16}, 0, 1);

  OperatorSpec id{SpectrumOperator::linear_projection, Tensor::zeros({16, 16}), 4};
  for (std::size_t i = 0; i < 16; ++i) id.weight.mutable_data()[i * 16 + i] = 1.0;
  const auto s1 = operator_spectrum_shift(images, id, 8);
  CHECK(s1.before.energy == s1.after.energy);

  OperatorSpec delta{SpectrumOperator::conv3x3, Tensor::zeros({3, 3}), 4};
  delta.weight.mutable_data()[4] = 1.0;
  const auto s2 = operator_spectrum_shift(images, delta, 8);
  CHECK(s2.before.energy == s2.after.energy);
  CHECK(s2.before.energy == mean_radial_energy(images, 8).energy);

  OperatorSpec zero{SpectrumOperator::conv3x3, Tensor::zeros({3, 3}), 4};
  CHECK_THROWS_AS(operator_spectrum_shift(images, zero, 8), NumericError);

  OperatorSpec bad{SpectrumOperator::linear_projection, Tensor::zeros({9, 9}), 4};
  CHECK_THROWS_AS(apply_operator(images, bad), ShapeError);
  OperatorSpec odd{SpectrumOperator::linear_projection, Tensor::zeros({25, 25}), 5};
  CHECK_THROWS_AS(apply_operator(images, odd), ShapeError);

  // A conv with a shifted delta moves pixels; a hand check of one value.
  OperatorSpec shift{SpectrumOperator::conv3x3, Tensor::zeros({3, 3}), 4};
  shift.weight.mutable_data()[5] = 1.0;  // takes the right-hand neighbour
  const Tensor out = apply_operator(images, shift);
  CHECK(out[0] == images[1]);
  CHECK(out[15] == 0.0);  // zero padding at the right border

  const auto r1 = random_operator(SpectrumOperator::conv3x3, 4, 9);
  const auto r2 = random_operator(SpectrumOperator::conv3x3, 4, 9);
  CHECK(r1.weight.bitwise_equal(r2.weight));
  CHECK(random_operator(SpectrumOperator::linear_projection, 4, 9).weight.shape() == Shape{16, 16});
}

TEST_CASE("parameter report matches enumeration and the allocated model") {
  const ModelConfig toy = preset_config("toy");
  CHECK(toy.depth == 4);
  CHECK(toy.width == 64);
  CHECK(toy.d_alpha == 8);
  CHECK(toy.d_beta == 16);
  CHECK(toy.split_ratio_inv == 4);
  CHECK(toy.patch_size == 4);
  CHECK(toy.image_size == 32);
  CHECK(toy.num_classes == 2);

  for (auto variant : {Variant::standard, Variant::vis_only, Variant::uni_fusion})
    for (auto policy : {TrainPolicy::prompt, TrainPolicy::head_only, TrainPolicy::full}) {
      ModelConfig c = toy;
      c.variant = variant;
      const ParamReport r = param_report(c, policy);
      std::map<std::string, std::size_t> got;
      for (const auto& g : r.groups) got[g.group] = g.count;
      CHECK(got == oracle::expected_group_counts(c));

      IvModel m(c, policy);
      std::size_t trainable = 0, total = 0, head = 0;
      for (const auto& p : m.params().all()) {
        total += p.tensor.numel();
        if (p.trainable) trainable += p.tensor.numel();
        if (param_group(p.name) == "head") head += p.tensor.numel();
      }
      CHECK(r.total == total);
      CHECK(r.trainable == trainable);
      CHECK(r.head == head);
      CHECK(r.trainable_backbone_side == trainable - head);
      if (policy == TrainPolicy::full) {
        CHECK(r.frozen_backbone == 0);
        CHECK(std::isinf(r.ratio));
      } else {
        CHECK(r.ratio == doctest::Approx(static_cast<double>(r.trainable_backbone_side) /
                                         static_cast<double>(r.frozen_backbone)));
      }
      if (policy == TrainPolicy::head_only) CHECK(r.trainable_backbone_side == 0);
    }
}

TEST_CASE("large-geometry parameter ratio and monotonicity") {
  const ParamReport r = param_report(preset_config("vit_l"));
  MESSAGE("vit_l trainable " << r.trainable_backbone_side << " / frozen " << r.frozen_backbone << " = " << r.ratio);
  CHECK(r.ratio < 0.03);
  CHECK(r.frozen_backbone > 300'000'000);

  std::size_t prev = mp_block_count(1024, 64, 4, true);
  for (std::size_t d = 63; d >= 1; --d) {
    const std::size_t cur = mp_block_count(1024, d, 4, true);
    CHECK(cur < prev);
    prev = cur;
  }

  ModelConfig bad = preset_config("toy");
  bad.heads = 5;
  CHECK_THROWS_AS(param_report(bad), ConfigError);
  CHECK_THROWS_AS(preset_config("nope"), ConfigError);

  const std::string csv = params_csv(param_report(preset_config("toy")));
  CHECK(csv.starts_with("# ivtune params v1\ngroup,count,trainable\n"));
  CHECK(csv.find("mp_beta.3,") != std::string::npos);
}
