#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace patch2loc {

/// 8-bit RGB raster, row-major from the top-left corner.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  void set(int x, int y, std::array<std::uint8_t, 3> c);
  /// `t` is clamped to [0, 1].
  void set_gray(int x, int y, double t);
  std::array<std::uint8_t, 3> get(int x, int y) const;
};

/// Jet colormap; `t` is clamped to [0, 1] (0 blue, 1 red).
std::array<std::uint8_t, 3> jet(double t);

void write_png(const std::filesystem::path& path, const RgbImage& img);

}  // namespace patch2loc
