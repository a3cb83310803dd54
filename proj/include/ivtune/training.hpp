// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ivtune/dataset.hpp"
#include "ivtune/model.hpp"

namespace ivtune {

enum class OptimizerKind : std::uint32_t { sgd = 0, adam = 1, adamw = 2 };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 1e-3;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const OptimizerConfig&) const = default;
};

/// Plain SGD with L2 decay, Adam with L2 decay folded into the gradient, or
/// AdamW with decoupled decay. Moment buffers are created lazily, and only
/// for trainable parameters.
class Optimizer {
 public:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };

  explicit Optimizer(OptimizerConfig config = {}) : config_(config) {}

  /// Applies one update. `grads` must cover exactly the trainable set:
  /// a gradient for a frozen parameter raises FreezeViolation, a missing one
  /// for a trainable parameter raises NumericError.
  void step(ParamStore& params, const GradMap& grads);

  const OptimizerConfig& config() const { return config_; }
  std::uint64_t steps() const { return t_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

  /// Restores state saved in a checkpoint.
  void restore(std::uint64_t steps, std::map<std::string, Moments> moments);

 private:
  OptimizerConfig config_;
  std::uint64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

/// Mean token-wise cross-entropy of [B, N, K] logits.
Tensor loss_fn(const Tensor& logits, std::span<const int> labels);

struct Metrics {
  double loss = 0;
  double accuracy = 0;
  double miou = 0;
};

/// Row-major K x K confusion counts, rows = truth.
std::vector<std::size_t> confusion_matrix(std::span<const int> pred, std::span<const int> truth,
                                          std::size_t classes);
/// Accuracy and mIoU; classes absent from both prediction and truth are left
/// out of the mean.
Metrics score(std::span<const int> pred, std::span<const int> truth, std::size_t classes);

/// Argmax over the last axis.
std::vector<int> predict(const Tensor& logits);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  OptimizerConfig optimizer;
  /// Stop after this many steps (0 = run all epochs).
  std::size_t max_steps = 0;
  /// Evaluate on the validation split after every epoch.
  bool evaluate_val = true;
  bool operator==(const TrainConfig&) const = default;
};

struct EpochLog {
  std::size_t epoch = 0;
  std::string split;
  Metrics metrics;
};

struct TrainResult {
  Optimizer optimizer;
  std::vector<EpochLog> log;
  std::size_t steps = 0;
};

/// Shuffled minibatch training, seeded from the model seed. Batch norm runs
/// in train mode for updates and eval mode for evaluation.
TrainResult train(IvModel& model, const Dataset& data, const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

/// Continues from an existing optimizer state.
TrainResult train(IvModel& model, const Dataset& data, const TrainConfig& config, Optimizer optimizer,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

Metrics evaluate(IvModel& model, const Split& split, std::size_t batch_size = 32);

/// epoch,split,loss,accuracy,miou with a versioned comment header.
std::string metrics_csv(const std::vector<EpochLog>& log);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochLog>& log);

}  // namespace ivtune
