#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "patch2loc/model_config.hpp"
#include "patch2loc/nn/locnet.hpp"
#include "patch2loc/volume_io.hpp"

namespace patch2loc {

/// Predicted Gaussian over the in-slice location: mean in relative
/// coordinates and per-axis log-variance (variance = exp(logvar)).
struct LocationPrediction {
  std::array<double, 2> mu{};
  std::array<double, 2> logvar{};
};

/// Component 2k = sin(a / 10000^(2k/d)), component 2k+1 = cos(same).
/// `a` is the raw slice percentage in [0, 100].
std::vector<double> positional_encoding(double a, int d);

/// Provenance stored with the parameters.
struct ModelMetadata {
  std::int64_t training_step = 0;
  std::uint64_t seed = 0;
  Modality modality = Modality::Other;
  std::optional<double> background_fill;
  std::optional<LandmarkModel> landmarks;
  double normalization_percentile = 98.0;
  nlohmann::json run_config = nlohmann::json::object();
};

/// Trained (or freshly initialized) float32 location predictor.
class LocModel {
 public:
  explicit LocModel(const ModelConfig& cfg, std::uint64_t seed = 0);

  const ModelConfig& config() const { return net_.config(); }
  ModelMetadata& metadata() { return meta_; }
  const ModelMetadata& metadata() const { return meta_; }
  nn::LocNet<float>& net() { return net_; }
  const nn::LocNet<float>& net() const { return net_; }

  /// Latent vector (inference-mode normalization).
  std::vector<double> encode(const Grid2<float>& patch) const;
  LocationPrediction predict(const Grid2<float>& patch, double a) const;
  /// `pixels` holds N patches back to back, each S1 x S2 with axis 1 fastest.
  std::vector<LocationPrediction> predict_batch(std::span<const float> pixels, std::span<const double> a) const;
  std::vector<LocationPrediction> predict_batch(const Batch& batch) const;

  /// Versioned container: magic, JSON metadata, then float32 blobs. The file
  /// is written to a temporary name and renamed into place.
  void save(const fs::path& path) const;
  static LocModel load(const fs::path& path);

  static constexpr std::uint32_t kCheckpointVersion = 1;

 private:
  nn::LocNet<float> net_;
  ModelMetadata meta_;
};

/// Packs patches into a 1 x N x S2 x S1 tensor.
template <class T>
nn::Tensor<T> patches_to_tensor(const Batch& batch);
template <class T>
nn::Tensor<T> patches_to_tensor(std::span<const float> pixels, PatchShape shape);

}  // namespace patch2loc
