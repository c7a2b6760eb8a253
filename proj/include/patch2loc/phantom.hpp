#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "patch2loc/volume.hpp"

namespace patch2loc {

struct PhantomConfig {
  Extents extents{96, 96, 64};
  double texture_scale = 1.0;
  double asymmetry_strength = 1.0;  // 0 gives a left/right mirror-symmetric phantom
  int lesion_count = 2;
  std::array<double, 2> lesion_radius_range{6.0, 9.0};  // semi-axis bounds in voxels
  double lesion_contrast = -0.35;  // hypointense, as T1 lesions usually are
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;
  Modality modality = Modality::T1;
  std::string subject_id = "phantom";

  /// `r` is the patch proportion the phantom is meant for: extents must be at
  /// least four patch sides.
  void validate(double r = 0.125) const;
  nlohmann::json to_json() const;
  static PhantomConfig from_json(const nlohmann::json& j, PhantomConfig base);
  static PhantomConfig from_json(const nlohmann::json& j) { return from_json(j, PhantomConfig{}); }
};

struct Lesion {
  std::array<double, 3> centre{};
  std::array<double, 3> radii{};
  std::size_t voxels = 0;
};

struct Phantom {
  Volume volume;
  GroundTruthMask truth;
  std::vector<Lesion> lesions;
  std::uint64_t seed = 0;
};

/// Noise-free, subject-independent intensity at a voxel (0 outside the
/// ellipsoidal brain).
double phantom_base_field(const PhantomConfig& cfg, int l1, int l2, int l3);

/// Throws Error when a lesion cannot be placed inside the brain after a
/// bounded number of attempts.
Phantom generate_phantom(const PhantomConfig& cfg);

/// Subject i uses seed derive_seed(cfg.seed, i) and id "<prefix>_%03d".
std::vector<Phantom> generate_cohort(int n, const PhantomConfig& cfg, const std::string& prefix = "phantom");

nlohmann::json cohort_manifest(const std::vector<Phantom>& cohort, const PhantomConfig& cfg);

}  // namespace patch2loc
