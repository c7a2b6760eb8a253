#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patch2loc/loc_model.hpp"
#include "patch2loc/patch_sampler.hpp"
#include "patch2loc/volume.hpp"

namespace patch2loc {

/// Distinct-value count above which the threshold sweep falls back to
/// kDiceQuantiles quantile thresholds.
inline constexpr std::size_t kDiceExactLimit = 1000000;
inline constexpr int kDiceQuantiles = 4096;

/// Maximum over thresholds t of Dice(score > t, label). Returns 0 when there
/// are no positive labels. Throws ShapeMismatchError on length mismatch.
double best_dice(std::span<const float> scores, std::span<const std::uint8_t> labels);

/// Average precision, sum_k (R_k - R_{k-1}) P_k over descending score groups
/// (equal scores enter together). Throws ValidationError without positives.
double auprc(std::span<const float> scores, std::span<const std::uint8_t> labels);

enum class PatchCategory { Normal, Abnormal, Partial };

std::string to_string(PatchCategory c);
/// < 0.10 normal, > 0.90 abnormal, otherwise partial.
PatchCategory categorize_patch(double abnormal_fraction);

/// Ranks starting at 1; tied values share their average rank.
std::vector<double> average_ranks(std::span<const double> x);

/// Pearson correlation of the average ranks. Throws ValidationError for
/// fewer than 3 values, unequal lengths or a constant input.
double spearman(std::span<const double> x, std::span<const double> y);

struct PatchStatRow {
  std::string subject_id;
  double y1 = 0.0;
  double y2 = 0.0;
  double a = 0.0;
  double log_error = 0.0;
  double log_variance = 0.0;
  double score = 0.0;
  double abnormal_fraction = 0.0;
  PatchCategory category = PatchCategory::Normal;
};

/// Non-overlapping tiling (window origins 0, S, 2S, ...) of every axial
/// slice; tiles failing the brain fraction rule are skipped.
std::vector<PatchStatRow> export_patch_statistics(const LocModel& model, std::span<const Volume> volumes,
                                                  std::span<const GroundTruthMask> truths, const PatchSpec& spec,
                                                  double eps = 0.5, int chunk_size = 2048);

/// Columns: subject_id, y1, y2, a, log_error, log_variance, score,
/// abnormal_fraction, category.
void write_patch_statistics(const std::filesystem::path& path, std::span<const PatchStatRow> rows);

struct PatchStatsSummary {
  std::size_t normal = 0;
  std::size_t abnormal = 0;
  std::size_t partial = 0;
  // Spearman with abnormal_fraction over the partial patches; empty when
  // fewer than 3 partial patches exist or an input is constant.
  std::optional<double> rho_log_error;
  std::optional<double> rho_log_variance;
  std::optional<double> rho_score;
  std::optional<double> median_score_normal;
  std::optional<double> median_score_abnormal;

  nlohmann::json to_json() const;
};

PatchStatsSummary summarize_patch_statistics(std::span<const PatchStatRow> rows);

struct SubjectMetrics {
  std::string subject_id;
  int fold = 0;
  double best_dice = 0.0;
  double auprc = 0.0;
  std::size_t lesion_voxels = 0;
  std::size_t domain_voxels = 0;
};

/// Metrics for one scored subject. The domain is the brain mask when
/// `mask_only`, else the full grid. Empty when the ground truth has no
/// lesion voxels inside the domain.
std::optional<SubjectMetrics> evaluate_subject(const Grid3<float>& scores, const Volume& v,
                                               const GroundTruthMask& truth, bool mask_only = true);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t count = 0;
};

MetricSummary summarize(std::span<const double> values);

struct EvalReport {
  std::vector<SubjectMetrics> per_subject;
  std::vector<std::string> excluded;  // subjects without lesion voxels
  bool mask_only = true;
  nlohmann::json config = nlohmann::json::object();

  /// {"folds": {"<fold>": {"best_dice": {...}, "auprc": {...}}},
  ///  "overall": mean/std of the per-fold means}
  nlohmann::json aggregate() const;
  nlohmann::json to_json() const;
  void write_json(const std::filesystem::path& path) const;
  /// subject_id, fold, best_dice, auprc, lesion_voxels, domain_voxels
  void write_csv(const std::filesystem::path& path) const;
};

}  // namespace patch2loc
