#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patch2loc/loc_model.hpp"
#include "patch2loc/loss.hpp"
#include "patch2loc/patch_sampler.hpp"

namespace patch2loc {

struct TrainConfig {
  int n_batches = 15000;
  int patches_per_batch = 8096;
  double learning_rate = 1e-2;
  double beta = 0.5;
  std::uint64_t seed = 0;
  int fold_count = 5;
  int fold = 0;
  int validation_patches = 1024;
  int validation_every = 50;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  double divergence_factor = 10.0;
  int divergence_patience = 100;
  std::optional<std::filesystem::path> output_dir;  // checkpoints + CSV log

  void validate() const;
  nlohmann::json to_json() const;
};

struct TrainLogRow {
  std::int64_t step = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  double wallclock = 0.0;
};

struct TrainResult {
  LocModel best;
  LocModel final_model;
  std::vector<TrainLogRow> log;
  double best_val_loss = 0.0;
  std::int64_t best_step = 0;
};

/// Fold index for every subject: a seeded shuffle split as evenly as
/// possible (the first n % k folds get one extra subject).
std::vector<int> make_folds(std::size_t subject_count, int fold_count, std::uint64_t seed);

/// Mean beta_nll over the batch (forward in training mode) and the matching
/// parameter gradients, accumulated into the network.
template <class T>
LossBreakdown loss_gradients(nn::LocNet<T>& net, const nn::Tensor<T>& patches, std::span<const double> slice_coords,
                             std::span<const Vec2> targets, double beta);

LossBreakdown loss_gradients(LocModel& model, const Batch& batch, double beta);

std::vector<Vec2> batch_targets(const Batch& batch);
std::vector<double> batch_slice_coords(const Batch& batch);

/// Mean gaussian_nll of the model (inference mode) over a fixed batch.
double validation_nll(const LocModel& model, const Batch& batch);

/// Called after every optimisation step.
using TrainProgress = std::function<void(const TrainLogRow&)>;

/// Trains on the subjects outside `train_cfg.fold` and validates on the
/// held-out fold.
TrainResult train(std::span<const Volume> volumes, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const PatchSpec& spec, const TrainProgress& progress = {});

/// Explicit train/validation split.
TrainResult train_split(std::span<const Volume> training, std::span<const Volume> validation,
                        const ModelConfig& model_cfg, const TrainConfig& train_cfg, const PatchSpec& spec,
                        const TrainProgress& progress = {});

void write_training_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& log);

}  // namespace patch2loc
