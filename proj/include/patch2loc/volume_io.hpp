#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "patch2loc/volume.hpp"

namespace patch2loc {

namespace fs = std::filesystem;

/// Supported on-disk containers.
///  - Native: little-endian raw grid `<stem>.raw` plus a JSON sidecar
///    `<stem>.json` holding {shape, dtype, modality, subject_id}.
///  - NIfTI-1: `.nii` or `.nii.gz`.
enum class VolumeFormat { Native, Nifti };

VolumeFormat detect_format(const fs::path& path);

/// Loads intensities from `path` and the brain mask from `mask_path`; without
/// a mask the brain is every voxel with positive intensity. `modality`
/// overrides whatever the file records.
Volume load_volume(const fs::path& path, const std::optional<fs::path>& mask_path = std::nullopt,
                   std::optional<Modality> modality = std::nullopt);

/// Writes intensities only. Use save_mask for the brain mask.
void save_volume(const Volume& v, const fs::path& path);

void save_mask(const Grid3<std::uint8_t>& mask, const fs::path& path, Modality modality = Modality::Other,
               const std::string& subject_id = {});
Grid3<std::uint8_t> load_mask(const fs::path& path);

/// Ground truth is a mask grid whose shape must equal `expected`.
GroundTruthMask load_ground_truth(const fs::path& path, const Extents& expected);

/// Arbitrary real grids (score maps). `extra` is merged into the native
/// sidecar header; NIfTI output ignores it.
void save_grid(const Grid3<float>& grid, const fs::path& path, const nlohmann::json& extra = nlohmann::json::object());
Grid3<float> load_grid(const fs::path& path);

/// Writes to `<path>.tmp` and renames into place.
void write_text_file(const fs::path& path, std::string_view text);

// ---- intensity normalization ------------------------------------------------

/// Linear interpolation between order statistics (position q/100 * (n-1)) of
/// an already sorted sample.
double percentile_sorted(std::span<const double> sorted, double q);
double percentile(std::vector<double> values, double q);

/// In-mask intensities in ascending order.
std::vector<double> sorted_brain_intensities(const Volume& v);

/// Divides every intensity by the q-th percentile of the in-mask voxels.
/// Throws DegenerateVolumeError when that percentile is zero.
Volume normalize_percentile(const Volume& v, double q = 98.0);

/// Piecewise-linear histogram standardization model for one modality.
/// `percentiles` is the landmark set (2, 10, 20, ..., 90, 98) and
/// `landmarks` the target intensity at each of them.
struct LandmarkModel {
  Modality modality = Modality::Other;
  std::vector<double> percentiles;
  std::vector<double> landmarks;
  int version = 1;

  nlohmann::json to_json() const;
  static LandmarkModel from_json(const nlohmann::json& j);
  void save(const fs::path& path) const;
  static LandmarkModel load(const fs::path& path);
};

/// 2, 10, 20, ..., 90, 98.
std::vector<double> default_landmark_percentiles();

/// Averages the in-mask landmark percentiles across the training volumes.
LandmarkModel fit_histogram_landmarks(std::span<const Volume> training);

/// Maps the volume's own landmark percentiles onto the model landmarks
/// piecewise-linearly, extrapolating with the end segments. Only in-mask
/// voxels are remapped; results are clamped at zero.
Volume apply_histogram_standardization(const Volume& v, const LandmarkModel& m);

}  // namespace patch2loc
