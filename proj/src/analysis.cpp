// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivtune/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <numbers>
#include <random>

#include "ivtune/error.hpp"
#include "ivtune/ops.hpp"

namespace ivtune {

// ---- principal components --------------------------------------------------

std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t n) {
  if (a.size() != n * n) throw ShapeError("symmetric_eigenvalues: expected an n x n matrix");
  auto at = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };
  double scale = 0;
  for (double v : a) scale += v * v;
  const double tol = 1e-30 * std::max(scale, 1e-300);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    if (off <= tol) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        // Rotation angle that zeroes a[p][q] (Golub & Van Loan, sym.schur2).
        const double theta = (at(q, q) - at(p, p)) / (2 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = at(i, i);
  std::sort(eig.begin(), eig.end(), std::greater<>());
  return eig;
}

std::vector<double> covariance(const Tensor& rows) {
  const std::size_t c = rows.shape().back();
  const std::size_t m = rows.numel() / c;
  if (m < 2) throw NumericError("covariance needs at least two rows");
  const auto d = rows.data();
  std::vector<double> mean(c, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < c; ++j) mean[j] += d[r * c + j];
  for (auto& v : mean) v /= static_cast<double>(m);
  std::vector<double> cov(c * c, 0.0), x(c);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < c; ++j) x[j] = d[r * c + j] - mean[j];
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = i; j < c; ++j) cov[i * c + j] += x[i] * x[j];
  }
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = i; j < c; ++j) cov[j * c + i] = cov[i * c + j] /= static_cast<double>(m);
  return cov;
}

std::vector<double> explained_variance(const Tensor& features) {
  const std::size_t c = features.shape().back();
  const auto cov = covariance(features);
  double trace = 0, level = 0;
  for (std::size_t i = 0; i < c; ++i) trace += cov[i * c + i];
  for (double v : features.data()) level = std::max(level, std::abs(v));
  // Rounding in the mean leaves a residue of order eps^2 * |x|^2 per entry for
  // identical rows; treat anything at that level as zero variance.
  if (!(trace > 1e-24 * std::max(1.0, level * level) * static_cast<double>(c)))
    throw NumericError("degenerate features: zero total variance");
  auto eig = symmetric_eigenvalues(cov, c);
  double total = 0;
  for (auto& v : eig) total += (v = std::max(v, 0.0));
  for (auto& v : eig) v /= total;
  return eig;
}

PcaReport pca_layer_report(const std::vector<Tensor>& layer_features, std::size_t k) {
  if (k == 0) throw ConfigError("pca: k must be >= 1");
  PcaReport r;
  for (const auto& f : layer_features) {
    auto ratios = explained_variance(f);
    ratios.resize(std::min(k, ratios.size()));
    r.ratios.push_back(std::move(ratios));
  }
  return r;
}

// ---- radial spectrum -------------------------------------------------------

std::vector<std::complex<double>> dft2d(const std::vector<double>& image, std::size_t h, std::size_t w) {
  if (image.size() != h * w) throw ShapeError("dft2d: image size mismatch");
  auto twiddles = [](std::size_t n) {
    std::vector<std::complex<double>> t(n);
    for (std::size_t k = 0; k < n; ++k)
      t[k] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
    return t;
  };
  const auto tw = twiddles(w), th = twiddles(h);
  std::vector<std::complex<double>> rows(h * w), out(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t v = 0; v < w; ++v) {
      std::complex<double> acc = 0;
      for (std::size_t x = 0; x < w; ++x) acc += image[y * w + x] * tw[(v * x) % w];
      rows[y * w + v] = acc;
    }
  for (std::size_t v = 0; v < w; ++v)
    for (std::size_t u = 0; u < h; ++u) {
      std::complex<double> acc = 0;
      for (std::size_t y = 0; y < h; ++y) acc += rows[y * w + v] * th[(u * y) % h];
      out[u * w + v] = acc;
    }
  return out;
}

std::size_t max_radial_bands(std::size_t h, std::size_t w) {
  return static_cast<std::size_t>(std::floor(std::hypot(static_cast<double>(h / 2), static_cast<double>(w / 2))));
}

double normalized_radius(std::size_t u, std::size_t v, std::size_t h, std::size_t w) {
  const double ch = static_cast<double>(h / 2), cw = static_cast<double>(w / 2);
  const double fu = (static_cast<double>(u) - ch) / ch;
  const double fv = (static_cast<double>(v) - cw) / cw;
  return std::hypot(fu, fv) / std::numbers::sqrt2;
}

SpectrumReport radial_energy(const Tensor& image, std::size_t bands) {
  if (image.rank() != 2 && image.rank() != 3) throw ShapeError("radial_energy expects [H, W] or [Ch, H, W]");
  const std::size_t h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
  const std::size_t ch = image.rank() == 3 ? image.dim(0) : 1;
  if (h < 2 || w < 2) throw ShapeError("radial_energy needs H, W >= 2");
  if (bands < 1) throw ConfigError("band count must be >= 1");
  if (bands > max_radial_bands(h, w))
    throw ConfigError(std::to_string(bands) + " bands exceed the radial resolution of a " + std::to_string(h) +
                      "x" + std::to_string(w) + " grid (max " + std::to_string(max_radial_bands(h, w)) + ")");

  std::vector<double> mag(h * w, 0.0);
  const auto d = image.data();
  for (std::size_t c = 0; c < ch; ++c) {
    const std::vector<double> plane(d.begin() + static_cast<std::ptrdiff_t>(c * h * w),
                                    d.begin() + static_cast<std::ptrdiff_t>((c + 1) * h * w));
    const auto f = dft2d(plane, h, w);
    for (std::size_t i = 0; i < h * w; ++i) mag[i] += std::abs(f[i]) / static_cast<double>(ch);
  }

  SpectrumReport r;
  r.energy.assign(bands, 0.0);
  for (std::size_t b = 0; b < bands; ++b) {
    r.band_lo.push_back(static_cast<double>(b) / static_cast<double>(bands));
    r.band_hi.push_back(static_cast<double>(b + 1) / static_cast<double>(bands));
  }
  // Shifted bin (u, v) holds frequency ((u - H/2) mod H, (v - W/2) mod W).
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      const std::size_t fu = (u + h - h / 2) % h, fv = (v + w - w / 2) % w;
      const double rad = normalized_radius(u, v, h, w);
      const auto b = std::min(bands - 1, static_cast<std::size_t>(rad * static_cast<double>(bands)));
      r.energy[b] += mag[fu * w + fv];
    }
  double total = 0;
  for (double e : r.energy) total += e;
  if (!(total > 0)) throw NumericError("radial_energy: degenerate all-zero spectrum");
  for (auto& e : r.energy) e /= total;
  return r;
}

SpectrumReport mean_radial_energy(const Tensor& images, std::size_t bands) {
  if (images.rank() != 4) throw ShapeError("mean_radial_energy expects [n, Ch, H, W]");
  const std::size_t n = images.dim(0);
  const Shape one{images.dim(1), images.dim(2), images.dim(3)};
  const std::size_t len = shape_numel(one);
  SpectrumReport mean;
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = images.data().subspan(i * len, len);
    const auto r = radial_energy(Tensor(one, std::vector<double>(src.begin(), src.end())), bands);
    if (i == 0) {
      mean = r;
    } else {
      for (std::size_t b = 0; b < bands; ++b) mean.energy[b] += r.energy[b];
    }
  }
  for (auto& e : mean.energy) e /= static_cast<double>(n);
  return mean;
}

OperatorSpec random_operator(SpectrumOperator kind, std::size_t patch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  OperatorSpec op;
  op.kind = kind;
  op.patch = patch;
  const std::size_t fan = kind == SpectrumOperator::conv3x3 ? 9 : patch * patch;
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(fan)));
  const Shape shape = kind == SpectrumOperator::conv3x3 ? Shape{3, 3} : Shape{fan, fan};
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  op.weight = Tensor(shape, std::move(values));
  return op;
}

Tensor apply_operator(const Tensor& images, const OperatorSpec& op) {
  if (images.rank() != 4) throw ShapeError("apply_operator expects [n, Ch, H, W]");
  const std::size_t ch = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (op.kind == SpectrumOperator::conv3x3) {
    if (op.weight.shape() != Shape{3, 3}) throw ShapeError("conv3x3 operator needs a [3, 3] kernel");
    std::vector<double> k;
    for (std::size_t c = 0; c < ch; ++c) k.insert(k.end(), op.weight.data().begin(), op.weight.data().end());
    return ops::depthwise_conv3x3(images, Tensor({ch, 3, 3}, std::move(k)), Tensor::zeros({ch}));
  }
  const std::size_t p = op.patch;
  if (p == 0 || h % p || w % p) throw ShapeError("linear projection: image size not divisible by patch");
  if (op.weight.shape() != Shape{p * p, p * p}) throw ShapeError("linear projection needs a [p*p, p*p] matrix");
  const auto in = images.data();
  const auto m = op.weight.data();
  std::vector<double> out(in.size(), 0.0), patch(p * p);
  for (std::size_t plane = 0; plane < images.dim(0) * ch; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t py = 0; py < h; py += p)
      for (std::size_t px = 0; px < w; px += p) {
        for (std::size_t i = 0; i < p * p; ++i) patch[i] = in[base + (py + i / p) * w + px + i % p];
        for (std::size_t o = 0; o < p * p; ++o) {
          double acc = 0;
          for (std::size_t i = 0; i < p * p; ++i) acc += m[o * p * p + i] * patch[i];
          out[base + (py + o / p) * w + px + o % p] = acc;
        }
      }
  }
  return Tensor(images.shape(), std::move(out));
}

SpectrumShift operator_spectrum_shift(const Tensor& images, const OperatorSpec& op, std::size_t bands) {
  SpectrumShift s;
  s.before = mean_radial_energy(images, bands);
  s.after = mean_radial_energy(apply_operator(images, op), bands);
  return s;
}

// ---- parameter accounting --------------------------------------------------

std::size_t patch_embed_count(const ModelConfig& c, std::size_t channels) {
  const std::size_t p = c.patch_size;
  return c.width * channels * p * p + c.width + c.num_tokens() * c.width;
}

std::size_t mp_block_count(std::size_t width, std::size_t d, std::size_t r, bool with_s4) {
  const std::size_t k = split_channels(d, r);
  std::size_t n = 4 * width          // two layer-norm affines
                  + 4 * width        // omega, phi per stream
                  + 2 * (width * d + d)  // s1, s2
                  + 9 * k + k        // depthwise conv
                  + (d * d + d) + 2 * d  // pw1, BN affine
                  + (d * d + d)      // pw2
                  + (d * width + width);  // s3
  if (with_s4) n += d * width + width;
  return n;
}

std::size_t encoder_layer_count(const ModelConfig& c) {
  const std::size_t w = c.width, h = c.hidden();
  return (2 * w + 3 * w * w + 3 * w + w * w + w) + (2 * w + h * w + h + w * h + w);
}

std::size_t head_count(const ModelConfig& c) { return c.num_classes * c.width + c.num_classes; }

ParamReport param_report(const ModelConfig& config, TrainPolicy policy) {
  config.validate();
  ParamReport r;
  auto trainable = [&](const std::string& g) {
    switch (policy) {
      case TrainPolicy::full: return true;
      case TrainPolicy::head_only: return g == "head";
      case TrainPolicy::prompt: return g != "vis_embed" && !g.starts_with("encoder.");
    }
    return false;
  };
  auto add = [&](std::string g, std::size_t n) { r.groups.push_back({g, n, trainable(g)}); };
  add("vis_embed", patch_embed_count(config, 3));
  if (config.variant != Variant::vis_only) {
    add("ir_embed", patch_embed_count(config, 1));
    add("mp_alpha", mp_block_count(config.width, config.d_alpha, config.split_ratio_inv, false));
  }
  const bool with_s4 = config.variant != Variant::uni_fusion;
  for (std::size_t l = 0; l < config.depth; ++l) {
    add("encoder." + std::to_string(l), encoder_layer_count(config));
    add("mp_beta." + std::to_string(l), mp_block_count(config.width, config.d_beta, config.split_ratio_inv, with_s4));
  }
  add("head", head_count(config));

  for (const auto& g : r.groups) {
    r.total += g.count;
    if (g.trainable) r.trainable += g.count;
    if (g.group == "head") r.head += g.count;
    else if (g.trainable) r.trainable_backbone_side += g.count;
    else r.frozen_backbone += g.count;
  }
  r.ratio = r.frozen_backbone ? static_cast<double>(r.trainable_backbone_side) / static_cast<double>(r.frozen_backbone)
                              : std::numeric_limits<double>::infinity();
  return r;
}

ModelConfig preset_config(const std::string& name) {
  ModelConfig c;
  if (name == "toy") return c;
  if (name == "vit_l") {
    c.image_size = 224;
    c.patch_size = 16;
    c.depth = 24;
    c.width = 1024;
    c.heads = 16;
    c.mlp_ratio = 4;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

// ---- CSV -------------------------------------------------------------------

std::string pca_csv(const PcaReport& r) {
  std::string out = "# ivtune pca v1\nlayer,rank_index,ratio\n";
  for (std::size_t l = 0; l < r.ratios.size(); ++l)
    for (std::size_t i = 0; i < r.ratios[l].size(); ++i)
      out += std::to_string(l + 1) + "," + std::to_string(i + 1) + "," + format_double(r.ratios[l][i]) + "\n";
  return out;
}

std::string spectrum_csv(const SpectrumReport& r, const std::string& label) {
  std::string out;
  for (std::size_t b = 0; b < r.energy.size(); ++b)
    out += label + "," + format_double(r.band_lo[b]) + "," + format_double(r.band_hi[b]) + "," +
           format_double(r.energy[b]) + "\n";
  return out;
}

std::string params_csv(const ParamReport& r) {
  std::string out = "# ivtune params v1\ngroup,count,trainable\n";
  for (const auto& g : r.groups) out += g.group + "," + std::to_string(g.count) + "," + (g.trainable ? "1" : "0") + "\n";
  out += "# total=" + std::to_string(r.total) + " trainable=" + std::to_string(r.trainable) +
         " trainable_backbone_side=" + std::to_string(r.trainable_backbone_side) +
         " frozen_backbone=" + std::to_string(r.frozen_backbone) + " ratio=" + format_double(r.ratio) + "\n";
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

}  // namespace ivtune
