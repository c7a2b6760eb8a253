#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "patch2loc/grid.hpp"

namespace patch2loc::nifti {

struct Image {
  Extents extents;
  std::vector<float> values;  // scaled by scl_slope/scl_inter when present
  std::string description;
};

/// Reads a single-volume NIfTI-1 file, gzip-compressed or not, in either
/// byte order.
Image read(const std::filesystem::path& path);

void write(const std::filesystem::path& path, const Extents& e, std::span<const float> values,
           const std::string& description);
void write(const std::filesystem::path& path, const Extents& e, std::span<const std::uint8_t> values,
           const std::string& description);

}  // namespace patch2loc::nifti
