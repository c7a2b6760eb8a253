#pragma once

#include <nlohmann/json.hpp>
#include <vector>

#include "patch2loc/patch_sampler.hpp"

namespace patch2loc {

/// Architecture of the location network. The encoder follows the ResNet-18
/// layout (four stages, widths latent/8 .. latent, stride 2 from the second
/// stage on) with a single-channel 3x3 stem and no max-pool.
struct ModelConfig {
  int latent_dim = 512;
  std::vector<int> head_widths{512, 128, 64, 32};
  int first_conv_kernel = 3;
  int blocks_per_stage = 2;
  double beta = 0.5;
  PatchShape patch_shape{24, 24};

  /// Latent 64, heads [64, 32], 12 x 12 patches.
  static ModelConfig small_preset();
  static ModelConfig full_preset();

  std::vector<int> stage_widths() const;
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace patch2loc
