#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "patch2loc/grid.hpp"
#include "patch2loc/volume.hpp"

namespace patch2loc {

/// Patch geometry and the background rejection rule.
struct PatchSpec {
  double r = 0.125;                  // patch side as a proportion of the in-plane extent
  int stride = 1;                    // lattice step used at inference
  double brain_fraction_min = 0.20;  // inclusive lower bound

  void validate() const;
};

struct PatchShape {
  int s1 = 0;
  int s2 = 0;
  friend bool operator==(const PatchShape&, const PatchShape&) = default;
};

/// S_i = round(r * E_i). Throws ValidationError when either side is < 2.
PatchShape patch_size(const PatchSpec& spec, const Extents& e);

/// First covered voxel of a window of `size` centred at `center`.
inline int window_origin(int center, int size) { return center - size / 2; }

struct PatchSample {
  Grid2<float> pixels;  // S1 x S2, zero outside the volume
  RelativeCoord location;
  std::string subject_id;
  double abnormal_fraction = 0.0;
  int l1 = 0;  // absolute centre voxel
  int l2 = 0;
  int l3 = 0;
};

/// Copies the S1 x S2 window centred at (l1, l2) on axial slice l3, zero
/// padding outside the grid. `truth` fills abnormal_fraction.
PatchSample extract_patch(const Volume& v, int l1, int l2, int l3, const PatchSpec& spec,
                          const GroundTruthMask* truth = nullptr);

/// Fraction of window pixels inside the brain mask; padding is background.
double brain_fraction(const Volume& v, int l1, int l2, int l3, PatchShape shape);
double brain_fraction(const PatchSample& p, const Volume& v);

/// Fraction of window pixels marked abnormal; padding counts as normal.
double abnormal_fraction(const GroundTruthMask& truth, int l1, int l2, int l3, PatchShape shape);

struct Batch {
  std::vector<PatchSample> samples;
  std::uint64_t seed = 0;
};

/// One axial slice per subject (among slices containing brain), then patch
/// centres drawn uniformly over the pooled slices; windows below the brain
/// fraction rule are redrawn from the pool. At most 50 * n_patches draws.
Batch sample_training_batch(std::span<const Volume> volumes, const PatchSpec& spec, int n_patches,
                            std::uint64_t seed);

/// Debug dump: tiled PNG of the patches plus a CSV of their coordinates.
void dump_batch(const Batch& batch, const std::filesystem::path& png_path, const std::filesystem::path& csv_path);

}  // namespace patch2loc
