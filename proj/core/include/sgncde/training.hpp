#pragma once

#include "sgncde/checkpoint.hpp"
#include "sgncde/models.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace sgncde::train {

using forecast::NeuralModel;
using forecast::Sample;

struct TrainingConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  /// Global gradient-norm clip; <= 0 disables clipping.
  double grad_clip = 0.0;
  /// Stop after this many optimizer steps in total (<= 0: no cap).
  long max_steps = 0;
  /// Fixed RK4 steps per control segment for CDE models.
  int rk4_steps = 1;
  /// Restore the parameters of the epoch with the lowest validation RGE at the end.
  bool keep_best = true;
  /// Compute validation RGE every this many epochs (and at the last epoch).
  int val_every = 1;

  /// Throws ConfigError for non-positive counts or rates.
  void validate() const;
};

struct TrainingResult {
  std::vector<ckpt::EpochRecord> history;  // includes epochs from a resumed checkpoint
  long optimizer_steps = 0;
  int best_epoch = -1;
  double best_val_rge = 0.0;  // radians
};

using EpochCallback = std::function<void(const ckpt::EpochRecord&)>;

/// Mean RGE (radians) over every horizon step of every sample. Forecast failures are skipped.
double mean_rge(const forecast::Forecaster& model, std::span<const Sample> samples);

/**
 * Mini-batch Adam on the summed Frobenius loss. Deterministic given cfg.seed: epoch e
 * shuffles with mt19937_64(seed + e). Continues from `resume` (history and optimizer
 * step count) when given. Throws DivergenceError with the global batch index on a
 * non-finite loss.
 */
TrainingResult train(NeuralModel& model, std::span<const Sample> train_set, std::span<const Sample> val_set,
                     const TrainingConfig& cfg, const ckpt::Checkpoint* resume = nullptr,
                     const EpochCallback& on_epoch = {});

/// Checkpoint of the model with the training history and settings attached.
ckpt::Checkpoint make_checkpoint(const NeuralModel& model, const TrainingResult& result, const TrainingConfig& cfg);

}  // namespace sgncde::train
