#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patch2loc/evaluation.hpp"
#include "patch2loc/phantom.hpp"
#include "patch2loc/scoring.hpp"
#include "patch2loc/training.hpp"

namespace patch2loc {

struct PreprocessConfig {
  bool histogram_standardization = true;
  double normalization_percentile = 98.0;

  nlohmann::json to_json() const;
};

/// Landmarks fitted on the training volumes (empty when standardization
/// is disabled).
std::optional<LandmarkModel> fit_preprocessing(std::span<const Volume> training, const PreprocessConfig& cfg);

/// Histogram standardization (when landmarks are given), then division by
/// the in-mask percentile.
Volume preprocess(const Volume& v, const std::optional<LandmarkModel>& landmarks, double percentile);

/// Applies the preprocessing recorded in a checkpoint.
Volume preprocess_for(const LocModel& model, const Volume& v);

/// Fits preprocessing, trains on the selected fold and stores the
/// preprocessing in the returned models' metadata.
TrainResult train_with_preprocessing(std::span<const Volume> raw, const ModelConfig& model_cfg,
                                     const TrainConfig& train_cfg, const PatchSpec& spec,
                                     const PreprocessConfig& pre, const nlohmann::json& run_config = {},
                                     const TrainProgress& progress = {});

struct AblationResult {
  double symmetric_full = 0.0;  // best validation NLL at r
  double symmetric_half = 0.0;  // at r / 2
  double asymmetric_full = 0.0;
  double asymmetric_half = 0.0;

  double symmetric_increase() const { return symmetric_half - symmetric_full; }
  double asymmetric_increase() const { return asymmetric_half - asymmetric_full; }
  nlohmann::json to_json() const;
};

struct ReproConfig {
  std::filesystem::path output_dir = "repro_out";
  std::uint64_t seed = 0;
  int train_subjects = 40;
  int lesion_subjects = 20;
  int healthy_test_subjects = 10;
  PhantomConfig phantom;
  ModelConfig model = ModelConfig::small_preset();
  TrainConfig train;
  PatchSpec spec{0.125, 4, 0.20};
  ScoringOptions scoring;
  PreprocessConfig preprocess;
  bool ablation = true;
  int ablation_subjects = 20;
  int ablation_batches = 600;
  int png_slices = 3;  // triptychs per lesion subject (0 disables)

  static ReproConfig defaults();
  void validate() const;
  nlohmann::json to_json() const;
};

struct ReproResult {
  EvalReport report;
  PatchStatsSummary patch_stats;
  double mean_prevalence = 0.0;
  double mean_auprc = 0.0;
  double mean_best_dice = 0.0;
  double healthy_median_score = 0.0;
  double lesion_median_score = 0.0;  // median score over lesion voxels of the lesion cohort
  double best_val_loss = 0.0;
  std::optional<AblationResult> ablation;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

using Logger = std::function<void(const std::string&)>;

/// Best validation NLL for one phantom regime and patch proportion.
double ablation_run(const PhantomConfig& phantom, int subjects, double r, const ModelConfig& model,
                    TrainConfig train, const PreprocessConfig& pre);

AblationResult run_ablation(const ReproConfig& cfg, const Logger& log = {});

/// Phantom generation, training, scoring and evaluation in one go; writes
/// checkpoints, score grids, reports and PNGs under cfg.output_dir.
ReproResult run_repro(const ReproConfig& cfg, const Logger& log = {});

struct Subject {
  Volume volume;
  std::optional<GroundTruthMask> truth;
};

/// Writes `<id>` (intensities), `<id>_mask` and `<id>_gt` per phantom in the
/// native format (or `.nii.gz` when `nifti`), plus manifest.json.
void write_phantom_dataset(const std::filesystem::path& dir, const std::vector<Phantom>& cohort,
                           const PhantomConfig& cfg, const nlohmann::json& run_config = {}, bool nifti = false);

/// Reads a directory written by write_phantom_dataset. Without a manifest,
/// every volume file not ending in _mask, _gt or _score is a subject, with
/// `<stem>_mask` and `<stem>_gt` picked up when present.
std::vector<Subject> load_dataset(const std::filesystem::path& dir);

/// Input, heatmap on the fixed [0, 12] range and optional ground-truth
/// overlay for one axial slice, side by side.
void write_triptych(const std::filesystem::path& path, const Volume& v, const Grid3<float>& scores, int l3,
                    const GroundTruthMask* truth, double lo = 0.0, double hi = 12.0);

}  // namespace patch2loc
