#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace patch2loc {

/// Voxel counts along the three volume axes. Axis 3 is the axial
/// (inferior-superior) direction; axis 1 is left-right.
struct Extents {
  int e1 = 0;
  int e2 = 0;
  int e3 = 0;

  std::size_t slice_voxels() const { return static_cast<std::size_t>(e1) * e2; }
  std::size_t voxels() const { return slice_voxels() * e3; }
  bool positive() const { return e1 > 0 && e2 > 0 && e3 > 0; }

  // Axis 1 varies fastest, matching the NIfTI on-disk order.
  std::size_t index(int l1, int l2, int l3) const {
    return static_cast<std::size_t>(l1) +
           static_cast<std::size_t>(e1) * (static_cast<std::size_t>(l2) + static_cast<std::size_t>(e2) * l3);
  }

  friend bool operator==(const Extents&, const Extents&) = default;
};

template <class T>
struct Grid3 {
  Extents extents;
  std::vector<T> data;

  Grid3() = default;
  explicit Grid3(Extents e, T fill = T{}) : extents(e), data(e.voxels(), fill) {}

  T& operator()(int l1, int l2, int l3) { return data[extents.index(l1, l2, l3)]; }
  const T& operator()(int l1, int l2, int l3) const { return data[extents.index(l1, l2, l3)]; }

  std::span<T> slice(int l3) {
    return {data.data() + extents.slice_voxels() * l3, extents.slice_voxels()};
  }
  std::span<const T> slice(int l3) const {
    return {data.data() + extents.slice_voxels() * l3, extents.slice_voxels()};
  }
};

/// 2D grid with axis 1 varying fastest (same convention as a Grid3 slice).
template <class T>
struct Grid2 {
  int n1 = 0;
  int n2 = 0;
  std::vector<T> data;

  Grid2() = default;
  Grid2(int a, int b, T fill = T{}) : n1(a), n2(b), data(static_cast<std::size_t>(a) * b, fill) {}

  T& operator()(int i1, int i2) { return data[static_cast<std::size_t>(i1) + static_cast<std::size_t>(n1) * i2]; }
  const T& operator()(int i1, int i2) const {
    return data[static_cast<std::size_t>(i1) + static_cast<std::size_t>(n1) * i2];
  }
};

}  // namespace patch2loc
