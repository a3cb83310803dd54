// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivtune/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "ivtune/error.hpp"

namespace ivtune {

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adamw: return "adamw";
  }
  return "?";
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  if (s == "adamw") return OptimizerKind::adamw;
  throw ConfigError("unknown optimizer '" + s + "'");
}

void Optimizer::step(ParamStore& params, const GradMap& grads) {
  for (const auto& [name, g] : grads) {
    const Parameter* p = params.find(name);
    if (p == nullptr) throw ConfigError("gradient for unknown parameter '" + name + "'");
    if (!p->trainable) throw FreezeViolation("gradient produced for frozen parameter '" + name + "'");
    if (g.shape() != p->tensor.shape()) throw ShapeError("gradient shape mismatch for '" + name + "'");
  }
  for (const auto& p : params.all())
    if (p.trainable && !grads.contains(p.name))
      throw NumericError("no gradient reached trainable parameter '" + p.name + "'");

  ++t_;
  const auto& c = config_;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t_));
  for (const auto& p : params.all()) {
    if (!p.trainable) continue;
    Tensor x = p.tensor;
    auto xd = x.mutable_data();
    const auto gd = grads.at(p.name).data();
    if (c.kind == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < xd.size(); ++i) xd[i] -= c.lr * (gd[i] + c.weight_decay * xd[i]);
      continue;
    }
    auto& mom = moments_[p.name];
    if (mom.m.empty()) {
      mom.m.assign(xd.size(), 0.0);
      mom.v.assign(xd.size(), 0.0);
    }
    for (std::size_t i = 0; i < xd.size(); ++i) {
      double g = gd[i];
      if (c.kind == OptimizerKind::adam) g += c.weight_decay * xd[i];
      else xd[i] -= c.lr * c.weight_decay * xd[i];
      mom.m[i] = c.beta1 * mom.m[i] + (1 - c.beta1) * g;
      mom.v[i] = c.beta2 * mom.v[i] + (1 - c.beta2) * g * g;
      const double mhat = mom.m[i] / bc1, vhat = mom.v[i] / bc2;
      xd[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
    ensure_finite(xd, "optimizer step");
  }
}

void Optimizer::restore(std::uint64_t steps, std::map<std::string, Moments> moments) {
  t_ = steps;
  moments_ = std::move(moments);
}

Tensor loss_fn(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 3) throw ShapeError("loss_fn expects [B, N, K] logits");
  return ops::cross_entropy(logits, labels);
}

std::vector<std::size_t> confusion_matrix(std::span<const int> pred, std::span<const int> truth,
                                          std::size_t classes) {
  if (pred.size() != truth.size()) throw ShapeError("prediction/label count mismatch");
  std::vector<std::size_t> cm(classes * classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]), p = static_cast<std::size_t>(pred[i]);
    if (truth[i] < 0 || pred[i] < 0 || t >= classes || p >= classes)
      throw ShapeError("class index out of range for " + std::to_string(classes) + " classes");
    ++cm[t * classes + p];
  }
  return cm;
}

Metrics score(std::span<const int> pred, std::span<const int> truth, std::size_t classes) {
  const auto cm = confusion_matrix(pred, truth, classes);
  Metrics m;
  std::size_t correct = 0;
  for (std::size_t k = 0; k < classes; ++k) correct += cm[k * classes + k];
  m.accuracy = pred.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(pred.size());
  double iou_sum = 0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < classes; ++k) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < classes; ++j) {
      row += cm[k * classes + j];
      col += cm[j * classes + k];
    }
    const std::size_t tp = cm[k * classes + k];
    const std::size_t uni = row + col - tp;
    if (uni == 0) continue;
    iou_sum += static_cast<double>(tp) / static_cast<double>(uni);
    ++present;
  }
  m.miou = present ? iou_sum / static_cast<double>(present) : 0.0;
  return m;
}

std::vector<int> predict(const Tensor& logits) {
  const std::size_t k = logits.shape().back();
  const auto d = logits.data();
  std::vector<int> out(d.size() / k);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto row = d.subspan(i * k, k);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

namespace {

Tensor model_logits(IvModel& model, const Split::Batch& b, ops::Mode mode) {
  return model.forward(b.vis, model.has_infrared() ? b.ir : Tensor(), mode);
}

std::mt19937_64 shuffle_engine(std::uint64_t seed, std::size_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  return std::mt19937_64(seq);
}

}  // namespace

Metrics evaluate(IvModel& model, const Split& split, std::size_t batch_size) {
  if (split.size() == 0) throw ConfigError("cannot evaluate an empty split");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  std::vector<int> preds;
  double loss_sum = 0;
  std::size_t tokens = 0;
  for (std::size_t begin = 0; begin < split.size(); begin += batch_size) {
    const auto b = split.range(begin, std::min(split.size(), begin + batch_size));
    const Tensor logits = model_logits(model, b, ops::Mode::eval);
    if (logits.shape().back() != model.config().num_classes)
      throw ConfigError("class-count mismatch between model and dataset");
    loss_sum += loss_fn(logits, b.labels).item() * static_cast<double>(b.labels.size());
    tokens += b.labels.size();
    const auto p = predict(logits);
    preds.insert(preds.end(), p.begin(), p.end());
  }
  Metrics m = score(preds, split.labels, model.config().num_classes);
  m.loss = loss_sum / static_cast<double>(tokens);
  return m;
}

TrainResult train(IvModel& model, const Dataset& data, const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  return train(model, data, config, Optimizer(config.optimizer), on_epoch);
}

TrainResult train(IvModel& model, const Dataset& data, const TrainConfig& config, Optimizer optimizer,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  const std::size_t n = data.train.size();
  if (n == 0) throw ConfigError("empty dataset");
  if (config.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (data.spec.num_classes != model.config().num_classes)
    throw ConfigError("class-count mismatch between model and dataset");
  if (data.spec.image_size != model.config().image_size || data.spec.patch_size != model.config().patch_size)
    throw ConfigError("dataset geometry does not match the model");

  TrainResult result{std::move(optimizer), {}, 0};
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    auto rng = shuffle_engine(model.config().seed, epoch);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<int> preds, truth;
    double loss_sum = 0;
    std::size_t tokens = 0;
    bool stopped = false;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      const auto b = data.train.batch(std::span(order).subspan(begin, end - begin));
      GradTape tape;
      const Tensor logits = model_logits(model, b, ops::Mode::train);
      const Tensor loss = loss_fn(logits, b.labels);
      if (!std::isfinite(loss.item()))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(result.steps + 1));
      tape.backward(loss);
      result.optimizer.step(model.params(), model.params().take_grads());
      ++result.steps;

      loss_sum += loss.item() * static_cast<double>(b.labels.size());
      tokens += b.labels.size();
      const auto p = predict(logits);
      preds.insert(preds.end(), p.begin(), p.end());
      truth.insert(truth.end(), b.labels.begin(), b.labels.end());
      if (config.max_steps != 0 && result.steps >= config.max_steps) {
        stopped = true;
        break;
      }
    }
    EpochLog tr{epoch, "train", score(preds, truth, model.config().num_classes)};
    tr.metrics.loss = loss_sum / static_cast<double>(tokens);
    result.log.push_back(tr);
    if (on_epoch) on_epoch(tr);
    if (config.evaluate_val && data.val.size() > 0) {
      EpochLog va{epoch, "val", evaluate(model, data.val, config.batch_size)};
      result.log.push_back(va);
      if (on_epoch) on_epoch(va);
    }
    if (stopped) break;
  }
  return result;
}

std::string metrics_csv(const std::vector<EpochLog>& log) {
  std::string out = "# ivtune metrics v1\nepoch,split,loss,accuracy,miou\n";
  for (const auto& e : log)
    out += std::to_string(e.epoch) + "," + e.split + "," + format_double(e.metrics.loss) + "," +
           format_double(e.metrics.accuracy) + "," + format_double(e.metrics.miou) + "\n";
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << metrics_csv(log);
}

}  // namespace ivtune
