// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "ivtune/config.hpp"
#include "ivtune/tensor.hpp"

namespace ivtune {

// ---- principal components --------------------------------------------------

/// Eigenvalues of a symmetric n x n matrix (row-major) by cyclic Jacobi
/// rotations, sorted in descending order.
std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t n);

/// Population covariance (divide by M) of [M, C] rows, row-major C x C.
std::vector<double> covariance(const Tensor& rows);

/// All explained-variance ratios of [..., C] features pooled over the leading
/// axes, descending. NumericError for zero total variance or fewer than two
/// rows.
std::vector<double> explained_variance(const Tensor& features);

struct PcaReport {
  /// ratios[l] = top-k ratios of layer l (fewer if C < k).
  std::vector<std::vector<double>> ratios;
};

PcaReport pca_layer_report(const std::vector<Tensor>& layer_features, std::size_t k = 5);

// ---- radial spectrum -------------------------------------------------------

/// 2-D DFT of an H x W real image, computed as row then column transforms.
std::vector<std::complex<double>> dft2d(const std::vector<double>& image, std::size_t h, std::size_t w);

struct SpectrumReport {
  std::vector<double> band_lo;
  std::vector<double> band_hi;
  std::vector<double> energy;
};

/// Largest band count an H x W grid supports.
std::size_t max_radial_bands(std::size_t h, std::size_t w);

/// Normalized radius of shifted frequency bin (u, v): per-axis offsets from
/// the centre are divided by floor(H/2) and floor(W/2), and the result is
/// scaled so the corners sit at 1.
double normalized_radius(std::size_t u, std::size_t v, std::size_t h, std::size_t w);

/// Sum of DFT magnitudes per radial band, normalized to sum 1. Accepts
/// [H, W] or [Ch, H, W]; channel magnitudes are averaged. NumericError for an
/// all-zero spectrum, ConfigError for a bad band count.
SpectrumReport radial_energy(const Tensor& image, std::size_t bands = 16);

/// Mean band energies over a set of images [n, Ch, H, W].
SpectrumReport mean_radial_energy(const Tensor& images, std::size_t bands = 16);

enum class SpectrumOperator { conv3x3, linear_projection };

struct OperatorSpec {
  SpectrumOperator kind = SpectrumOperator::conv3x3;
  /// conv3x3: [3, 3] kernel applied per channel with zero padding.
  /// linear_projection: [p*p, p*p] matrix applied to every p x p patch.
  Tensor weight;
  std::size_t patch = 4;
};

/// Seeded random operator: kernel / matrix entries N(0, 1/fan_in).
OperatorSpec random_operator(SpectrumOperator kind, std::size_t patch, std::uint64_t seed);

struct SpectrumShift {
  SpectrumReport before;
  SpectrumReport after;
};

/// Applies `op` to every image of [n, Ch, H, W] and reports mean band
/// energies before and after. Descriptive only.
SpectrumShift operator_spectrum_shift(const Tensor& images, const OperatorSpec& op, std::size_t bands = 16);

Tensor apply_operator(const Tensor& images, const OperatorSpec& op);

// ---- parameter accounting --------------------------------------------------

struct ParamGroupCount {
  std::string group;
  std::size_t count = 0;
  bool trainable = false;
};

struct ParamReport {
  std::vector<ParamGroupCount> groups;
  std::size_t trainable = 0;
  std::size_t total = 0;
  /// Trainable parameters excluding the decoder head.
  std::size_t trainable_backbone_side = 0;
  std::size_t frozen_backbone = 0;
  std::size_t head = 0;
  /// trainable_backbone_side / frozen_backbone; infinite when nothing is frozen.
  double ratio = 0;
};

std::size_t patch_embed_count(const ModelConfig& c, std::size_t channels);
std::size_t mp_block_count(std::size_t width, std::size_t latent, std::size_t split_ratio_inv, bool with_s4);
std::size_t encoder_layer_count(const ModelConfig& c);
std::size_t head_count(const ModelConfig& c);

/// Closed-form counts per group (same group names as param_group), without
/// allocating any tensor.
ParamReport param_report(const ModelConfig& config, TrainPolicy policy = TrainPolicy::prompt);

/// Named geometry presets: "toy" (the defaults) and "vit_l" (L=24, C=1024,
/// 16 heads, image 224, patch 16).
ModelConfig preset_config(const std::string& name);

// ---- CSV -------------------------------------------------------------------

std::string pca_csv(const PcaReport& r);
std::string spectrum_csv(const SpectrumReport& r, const std::string& label = "");
std::string params_csv(const ParamReport& r);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace ivtune
