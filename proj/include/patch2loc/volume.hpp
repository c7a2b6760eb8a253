#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "patch2loc/grid.hpp"

namespace patch2loc {

enum class Modality { T1, T2, Other };

std::string_view to_string(Modality m);
/// Accepts "T1", "T2", "OTHER" (case-insensitive).
Modality parse_modality(std::string_view text);

/// A registered 3D scan: non-negative intensities plus a brain mask on the
/// same grid (1 mm isotropic voxels assumed).
struct Volume {
  Grid3<float> intensities;
  Grid3<std::uint8_t> brain_mask;
  Modality modality = Modality::Other;
  std::string subject_id;

  const Extents& extents() const { return intensities.extents; }
  std::size_t brain_voxels() const;

  /// Throws ShapeMismatchError, ValidationError (negative or non-finite
  /// intensities) or DegenerateVolumeError (empty mask).
  void validate() const;
};

struct GroundTruthMask {
  Grid3<std::uint8_t> labels;

  std::size_t positives() const;
  bool empty() const { return positives() == 0; }
};

/// Position expressed as percentages of the volume extents, each in [0,100].
struct RelativeCoord {
  double y1 = 0;
  double y2 = 0;
  double a = 0;
};

/// 100 * L_i / E_i per axis. Throws ValidationError when a component lies
/// outside [0, E_i].
RelativeCoord to_relative(const std::array<double, 3>& absolute, const Extents& e);
std::array<double, 3> to_absolute(const RelativeCoord& rel, const Extents& e);

}  // namespace patch2loc
