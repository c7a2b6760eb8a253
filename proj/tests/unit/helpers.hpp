#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include "patch2loc/volume.hpp"

namespace testing {

inline std::filesystem::path temp_dir(const std::string& name) {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("p2l_" + name + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline patch2loc::Volume constant_volume(patch2loc::Extents e, float value,
                                         patch2loc::Modality m = patch2loc::Modality::T1) {
  patch2loc::Volume v;
  v.intensities = patch2loc::Grid3<float>(e, value);
  v.brain_mask = patch2loc::Grid3<std::uint8_t>(e, 1);
  v.modality = m;
  v.subject_id = "const";
  return v;
}

inline patch2loc::Volume random_volume(patch2loc::Extents e, std::uint64_t seed,
                                       patch2loc::Modality m = patch2loc::Modality::T1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.1f, 1.0f);
  patch2loc::Volume v = constant_volume(e, 0.0f, m);
  for (auto& x : v.intensities.data) x = u(rng);
  v.subject_id = "rand" + std::to_string(seed);
  return v;
}

}  // namespace testing
