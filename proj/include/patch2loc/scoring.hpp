#pragma once

#include <optional>
#include <vector>

#include "patch2loc/grid.hpp"
#include "patch2loc/loc_model.hpp"
#include "patch2loc/loss.hpp"
#include "patch2loc/patch_sampler.hpp"

namespace patch2loc {

struct ScoreTriple {
  double log_error = 0.0;     // ln(|y - mu|^2 + eps)
  double log_variance = 0.0;  // (logvar_1 + logvar_2) / 2
  double score = 0.0;         // log_error + log_variance
};

ScoreTriple abnormality_score(const Vec2& y, const LocationPrediction& pred, double eps = 0.5);

struct ScoringOptions {
  int chunk_size = 2048;                  // patches per forward pass
  bool upsample = true;                   // bilinear resize of lattice maps when stride > 1
  std::optional<double> background_fill;  // defaults to the checkpoint's value, else 0
  double eps = 0.5;
  int threads = 1;
};

/// Per-slice maps. At stride 1, or after upsampling, maps have the slice
/// shape; otherwise they have one entry per lattice position.
struct HeatmapSet {
  Grid2<float> error_map;
  Grid2<float> variance_map;
  Grid2<float> score_map;
  Grid2<std::uint8_t> valid;  // 0 where the background fill was written
  int stride = 1;
  bool upsampled = false;
};

/// Number of lattice positions 0, s, 2s, ... below `extent`.
inline int lattice_size(int extent, int stride) { return (extent + stride - 1) / stride; }

/// Packs the centred, zero-padded windows of the given in-plane centres on
/// slice l3 into a buffer of N patches (axis 1 fastest).
void gather_patches(const Volume& v, int l3, PatchShape shape, std::span<const std::array<int, 2>> centres,
                    std::vector<float>& out);

/// Bilinear resize from a stride lattice back to n1 x n2 pixels; lattice
/// entry i sits at pixel i * stride, and pixels past the last lattice
/// position take its value.
Grid2<float> upsample_bilinear(const Grid2<float>& lattice, int stride, int n1, int n2);

HeatmapSet score_slice(const LocModel& model, const Volume& v, int l3, const PatchSpec& spec,
                       const ScoringOptions& opts = {});

struct VolumeScores {
  std::vector<HeatmapSet> slices;
  Grid3<float> error;
  Grid3<float> variance;
  Grid3<float> score;
  Grid3<std::uint8_t> valid;
};

/// Scores every axial slice. Slices run on `opts.threads` workers; the
/// output does not depend on the thread count. Throws ModalityMismatchError
/// or ShapeMismatchError when the volume does not fit the checkpoint.
VolumeScores score_volume(const LocModel& model, const Volume& v, const PatchSpec& spec,
                          const ScoringOptions& opts = {});

}  // namespace patch2loc
