// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>

#include "ivtune/model.hpp"
#include "ivtune/training.hpp"

// Checkpoints are IVTN containers with these entries:
//   meta/config          f64 vector of model fields, policy and seed halves
//   param/<name>         f64, every model parameter
//   buffer/<name>/mean   f64, batch-norm running mean (also /var, /count)
//   optim/config         f64 [kind, lr, weight_decay, beta1, beta2, eps, steps]
//   optim/m/<name>       f64 first moments (also optim/v/<name>)
namespace ivtune {

struct Checkpoint {
  IvModel model;
  std::optional<Optimizer> optimizer;
};

void save_checkpoint(const std::filesystem::path& path, IvModel& model,
                     const Optimizer* optimizer = nullptr);

/// Rebuilds the model recorded in the file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads into an existing model. Throws ConfigError, leaving `model`
/// untouched, if the recorded config or any parameter shape differs.
std::optional<Optimizer> load_checkpoint_into(const std::filesystem::path& path, IvModel& model);

/// The config stored in a checkpoint, without building the model.
ModelConfig checkpoint_config(const std::filesystem::path& path);

}  // namespace ivtune
