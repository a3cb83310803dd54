// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivtune/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "ivtune/container.hpp"
#include "ivtune/error.hpp"

namespace ivtune {

namespace {

constexpr std::size_t kBlobs = 6;
constexpr std::size_t kEdges = 3;
// Half-range of the infrared intensities around 0.5.
constexpr double kIrHalfRange = 0.45;

enum class Stream : std::uint32_t { infrared = 1, visible = 2 };

std::mt19937_64 sample_engine(const DatasetSpec& spec, SplitKind split, std::size_t index, Stream s) {
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(index) >> 32),
                    static_cast<std::uint32_t>(s)};
  return std::mt19937_64(seq);
}

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Separable Gaussian blur with clamp-to-edge borders.
std::vector<double> blur(const std::vector<double>& img, std::size_t size, std::size_t radius) {
  const double sigma = std::max(0.5, radius / 2.0);
  std::vector<double> k(2 * radius + 1);
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double t = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-t * t / (2 * sigma * sigma));
  }
  const double norm = std::accumulate(k.begin(), k.end(), 0.0);
  for (auto& v : k) v /= norm;

  auto clamp = [&](std::ptrdiff_t i) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(size) - 1));
  };
  std::vector<double> tmp(img.size()), out(img.size());
  const auto r = static_cast<std::ptrdiff_t>(radius);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      double acc = 0;
      for (std::ptrdiff_t t = -r; t <= r; ++t)
        acc += k[static_cast<std::size_t>(t + r)] * img[y * size + clamp(static_cast<std::ptrdiff_t>(x) + t)];
      tmp[y * size + x] = acc;
    }
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      double acc = 0;
      for (std::ptrdiff_t t = -r; t <= r; ++t)
        acc += k[static_cast<std::size_t>(t + r)] * tmp[clamp(static_cast<std::ptrdiff_t>(y) + t) * size + x];
      out[y * size + x] = acc;
    }
  return out;
}

std::vector<double> patch_means(std::span<const double> img, std::size_t size, std::size_t p) {
  const std::size_t g = size / p;
  std::vector<double> out(g * g, 0.0);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) out[(y / p) * g + x / p] += img[y * size + x];
  for (auto& v : out) v /= static_cast<double>(p * p);
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void DatasetSpec::validate() const {
  if (n_train == 0 && n_val == 0) throw ConfigError("empty dataset");
  if (image_size < 2 || patch_size == 0 || image_size % patch_size != 0)
    throw ConfigError("image_size must be >= 2 and divisible by patch_size");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (num_classes > num_tokens()) throw ConfigError("num_classes exceeds patches per image");
  if (!(ambiguity >= 0.0 && ambiguity <= 1.0)) throw ConfigError("ambiguity must lie in [0, 1]");
}

Sample generate_sample(const DatasetSpec& spec, SplitKind split, std::size_t index) {
  spec.validate();
  const std::size_t S = spec.image_size;
  const std::size_t P = S * S;
  const double fs = static_cast<double>(S);

  // Infrared: smooth blob field, blurred, mapped affinely around 0.5.
  auto ir_rng = sample_engine(spec, split, index, Stream::infrared);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> field(P, 0.0);
  for (std::size_t b = 0; b < kBlobs; ++b) {
    const double cy = unit(ir_rng) * fs, cx = unit(ir_rng) * fs;
    const double sigma = fs * (0.1 + 0.1 * unit(ir_rng));
    const double amp = 2.0 * unit(ir_rng) - 1.0;
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
        field[y * S + x] += amp * std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
      }
  }
  field = blur(field, S, std::max<std::size_t>(1, S / 8));
  const double mid = median(patch_means(field, S, spec.patch_size));
  double spread = 0;
  for (double v : field) spread = std::max(spread, std::abs(v - mid));
  const double gain = spread > 0 ? kIrHalfRange / spread : 0.0;

  Sample s;
  s.ir.resize(P);
  for (std::size_t i = 0; i < P; ++i) s.ir[i] = round_f32(0.5 + gain * (field[i] - mid));

  // Labels: per-sample quantile bins of the stored infrared patch means. For
  // K = 2 this is the threshold 0.5, since the map above centres the median.
  const auto means = patch_means(s.ir, S, spec.patch_size);
  const std::size_t N = means.size();
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return means[a] < means[b]; });
  s.labels.assign(N, 0);
  for (std::size_t rank = 0; rank < N; ++rank)
    s.labels[order[rank]] = static_cast<int>(rank * spec.num_classes / N);

  // Visible: noise plus random step edges from an independent stream.
  auto vis_rng = sample_engine(spec, split, index, Stream::visible);
  const std::size_t g = spec.grid();
  const double cue_scale = spec.num_classes > 1 ? 1.0 / static_cast<double>(spec.num_classes - 1) : 0.0;
  s.vis.resize(3 * P);
  for (std::size_t c = 0; c < 3; ++c) {
    double ny[kEdges], nx[kEdges], off[kEdges], w[kEdges], wsum = 0;
    for (std::size_t e = 0; e < kEdges; ++e) {
      const double theta = 2.0 * M_PI * unit(vis_rng);
      ny[e] = std::sin(theta);
      nx[e] = std::cos(theta);
      off[e] = fs * unit(vis_rng);
      w[e] = unit(vis_rng);
      wsum += w[e];
    }
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        double edges = 0;
        for (std::size_t e = 0; e < kEdges; ++e) {
          const double proj = ny[e] * (static_cast<double>(y) + 0.5 - fs / 2) +
                              nx[e] * (static_cast<double>(x) + 0.5 - fs / 2) + fs / 2;
          if (proj > off[e]) edges += w[e];
        }
        edges = wsum > 0 ? edges / wsum : 0.0;
        const double texture = 0.5 * unit(vis_rng) + 0.5 * edges;
        const double cue = s.labels[(y / spec.patch_size) * g + x / spec.patch_size] * cue_scale;
        const double v = 0.5 * texture + (1.0 - spec.ambiguity) * 0.5 * cue + spec.ambiguity * 0.25;
        s.vis[c * P + y * S + x] = round_f32(v);
      }
  }
  return s;
}

std::size_t Split::tokens_per_sample() const {
  const std::size_t n = size();
  return n == 0 ? 0 : labels.size() / n;
}

Split::Batch Split::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ShapeError("empty batch");
  const std::size_t n = size();
  const std::size_t vis_len = vis.numel() / n, ir_len = ir.numel() / n, tok = tokens_per_sample();
  std::vector<double> v, r;
  Batch b;
  v.reserve(indices.size() * vis_len);
  r.reserve(indices.size() * ir_len);
  for (std::size_t i : indices) {
    if (i >= n) throw ShapeError("sample index out of range");
    const auto vd = vis.data().subspan(i * vis_len, vis_len);
    const auto rd = ir.data().subspan(i * ir_len, ir_len);
    v.insert(v.end(), vd.begin(), vd.end());
    r.insert(r.end(), rd.begin(), rd.end());
    b.labels.insert(b.labels.end(), labels.begin() + static_cast<std::ptrdiff_t>(i * tok),
                    labels.begin() + static_cast<std::ptrdiff_t>((i + 1) * tok));
  }
  Shape vs = vis.shape(), rs = ir.shape();
  vs[0] = rs[0] = indices.size();
  b.vis = Tensor(vs, std::move(v));
  b.ir = Tensor(rs, std::move(r));
  return b;
}

Split::Batch Split::range(std::size_t begin, std::size_t end) const {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return batch(idx);
}

Split generate_split(const DatasetSpec& spec, SplitKind split) {
  spec.validate();
  const std::size_t n = split == SplitKind::train ? spec.n_train : spec.n_val;
  const std::size_t S = spec.image_size;
  Split out;
  if (n == 0) return out;
  std::vector<double> vis, ir;
  vis.reserve(n * 3 * S * S);
  ir.reserve(n * S * S);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s = generate_sample(spec, split, i);
    vis.insert(vis.end(), s.vis.begin(), s.vis.end());
    ir.insert(ir.end(), s.ir.begin(), s.ir.end());
    out.labels.insert(out.labels.end(), s.labels.begin(), s.labels.end());
  }
  out.vis = Tensor({n, 3, S, S}, std::move(vis));
  out.ir = Tensor({n, 1, S, S}, std::move(ir));
  return out;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  return {spec, generate_split(spec, SplitKind::train), generate_split(spec, SplitKind::val)};
}

KeyValues dataset_manifest(const DatasetSpec& spec) {
  return {{"format", "ivtune-dataset"},
          {"version", "1"},
          {"seed", std::to_string(spec.seed)},
          {"n_train", std::to_string(spec.n_train)},
          {"n_val", std::to_string(spec.n_val)},
          {"image_size", std::to_string(spec.image_size)},
          {"patch_size", std::to_string(spec.patch_size)},
          {"num_classes", std::to_string(spec.num_classes)},
          {"ambiguity", format_double(spec.ambiguity)}};
}

DatasetSpec spec_from_manifest(const KeyValues& kv) {
  auto it = kv.find("format");
  if (it == kv.end() || it->second != "ivtune-dataset") throw FormatError("not an ivtune dataset manifest");
  if (kv_uint(kv, "version", 0) != 1) throw FormatError("unsupported dataset manifest version");
  DatasetSpec s;
  s.seed = kv_uint(kv, "seed", s.seed);
  s.n_train = kv_uint(kv, "n_train", s.n_train);
  s.n_val = kv_uint(kv, "n_val", s.n_val);
  s.image_size = kv_uint(kv, "image_size", s.image_size);
  s.patch_size = kv_uint(kv, "patch_size", s.patch_size);
  s.num_classes = kv_uint(kv, "num_classes", s.num_classes);
  s.ambiguity = kv_double(kv, "ambiguity", s.ambiguity);
  s.validate();
  return s;
}

namespace {

std::vector<NamedTensor> split_entries(const Split& s) {
  std::vector<double> labels(s.labels.begin(), s.labels.end());
  return {{"vis", s.vis, DType::f32},
          {"ir", s.ir, DType::f32},
          {"labels", Tensor({s.size(), s.tokens_per_sample()}, std::move(labels)), DType::f32}};
}

Split load_split(const std::filesystem::path& path, const DatasetSpec& spec, std::size_t n) {
  Split s;
  if (n == 0) return s;
  const auto entries = load_container(path);
  s.vis = find_entry(entries, "vis").tensor;
  s.ir = find_entry(entries, "ir").tensor;
  const Tensor& lab = find_entry(entries, "labels").tensor;
  const std::size_t S = spec.image_size;
  if (s.vis.shape() != Shape{n, 3, S, S} || s.ir.shape() != Shape{n, 1, S, S} ||
      lab.shape() != Shape{n, spec.num_tokens()})
    throw FormatError("'" + path.string() + "' does not match its manifest");
  s.labels.reserve(lab.numel());
  for (double v : lab.data()) {
    if (v < 0 || v >= static_cast<double>(spec.num_classes) || v != std::floor(v))
      throw FormatError("label out of range in '" + path.string() + "'");
    s.labels.push_back(static_cast<int>(v));
  }
  return s;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create '" + dir.string() + "': " + ec.message());
  {
    std::ofstream out(dir / "manifest.txt", std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + (dir / "manifest.txt").string() + "'");
    out << "# ivtune synthetic dataset\n" << format_key_values(dataset_manifest(data.spec));
  }
  if (data.train.size() > 0) save_container(dir / "train.ivtn", split_entries(data.train));
  if (data.val.size() > 0) save_container(dir / "val.ivtn", split_entries(data.val));
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw FormatError("no manifest.txt in '" + dir.string() + "'");
  std::stringstream text;
  text << in.rdbuf();
  Dataset d;
  d.spec = spec_from_manifest(parse_key_values(text.str()));
  d.train = load_split(dir / "train.ivtn", d.spec, d.spec.n_train);
  d.val = load_split(dir / "val.ivtn", d.spec, d.spec.n_val);
  return d;
}

}  // namespace ivtune
