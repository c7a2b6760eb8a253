#include "patch2loc/volume.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "patch2loc/error.hpp"

namespace patch2loc {

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::T1:
      return "T1";
    case Modality::T2:
      return "T2";
    case Modality::Other:
      break;
  }
  return "OTHER";
}

Modality parse_modality(std::string_view text) {
  std::string upper(text);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  if (upper == "T1") return Modality::T1;
  if (upper == "T2") return Modality::T2;
  if (upper == "OTHER") return Modality::Other;
  throw ValidationError("unknown modality '" + std::string(text) + "' (expected T1, T2 or OTHER)");
}

std::size_t Volume::brain_voxels() const {
  return static_cast<std::size_t>(std::count_if(brain_mask.data.begin(), brain_mask.data.end(),
                                                [](std::uint8_t m) { return m != 0; }));
}

void Volume::validate() const {
  const Extents& e = intensities.extents;
  if (!e.positive()) throw ValidationError("volume '" + subject_id + "' has non-positive extents");
  if (intensities.data.size() != e.voxels()) throw ShapeMismatchError("intensity buffer does not match extents");
  if (!(brain_mask.extents == e) || brain_mask.data.size() != e.voxels()) {
    throw ShapeMismatchError("brain mask shape differs from intensities for '" + subject_id + "'");
  }
  for (float v : intensities.data) {
    if (!std::isfinite(v)) throw ValidationError("volume '" + subject_id + "' contains non-finite intensities");
    if (v < 0.0f) throw ValidationError("volume '" + subject_id + "' contains negative intensities");
  }
  if (brain_voxels() == 0) throw DegenerateVolumeError("volume '" + subject_id + "' has an empty brain mask");
}

std::size_t GroundTruthMask::positives() const {
  return static_cast<std::size_t>(
      std::count_if(labels.data.begin(), labels.data.end(), [](std::uint8_t m) { return m != 0; }));
}

RelativeCoord to_relative(const std::array<double, 3>& l, const Extents& e) {
  const std::array<int, 3> ext{e.e1, e.e2, e.e3};
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i) {
    if (ext[i] <= 0) throw ValidationError("extents must be positive");
    if (!(l[i] >= 0.0 && l[i] <= ext[i])) {
      throw ValidationError("coordinate component " + std::to_string(i + 1) + " = " + std::to_string(l[i]) +
                            " lies outside [0, " + std::to_string(ext[i]) + "]");
    }
    out[i] = 100.0 * l[i] / ext[i];
  }
  return {out[0], out[1], out[2]};
}

std::array<double, 3> to_absolute(const RelativeCoord& rel, const Extents& e) {
  return {rel.y1 * e.e1 / 100.0, rel.y2 * e.e2 / 100.0, rel.a * e.e3 / 100.0};
}

}  // namespace patch2loc
