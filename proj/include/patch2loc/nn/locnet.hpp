#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "patch2loc/model_config.hpp"
#include "patch2loc/nn/layers.hpp"

namespace patch2loc::nn {

template <class T>
class Encoder {
 public:
  explicit Encoder(const ModelConfig& cfg);

  void init(Rng& rng);
  /// x: 1 x N x S2 x S1 patches -> d x N latents.
  Tensor<T> forward(const Tensor<T>& x) const;
  Tensor<T> forward_train(const Tensor<T>& x);
  void backward(const Tensor<T>& d_latent);
  void collect(StateRefs<T>& refs);

 private:
  Conv2d<T> stem_;
  BatchNorm<T> stem_bn_;
  std::vector<BasicBlock<T>> blocks_;
  Tensor<T> stem_out_;
  int pooled_h_ = 0;
  int pooled_w_ = 0;
};

/// Stack of Linear -> BatchNorm -> ReLU layers followed by a linear map to
/// two outputs.
template <class T>
class Head {
 public:
  Head(int in_features, const std::vector<int>& widths, const std::string& name);

  void init(Rng& rng, T output_bias);
  Tensor<T> forward(const Tensor<T>& x) const;
  Tensor<T> forward_train(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(StateRefs<T>& refs);

 private:
  std::vector<Linear<T>> fc_;
  std::vector<BatchNorm<T>> bn_;
  std::vector<Tensor<T>> act_;
  Linear<T> out_;
};

/// Sinusoidal encodings of the slice coordinates, d x N.
template <class T>
Tensor<T> positional_encoding_batch(std::span<const double> slice_coords, int d);

/// Encoder + additive slice-coordinate encoding + mean and log-variance heads.
template <class T>
class LocNet {
 public:
  struct Output {
    Tensor<T> mu;      // 2 x N
    Tensor<T> logvar;  // 2 x N
  };

  explicit LocNet(const ModelConfig& cfg);

  /// Deterministic initialization; the final biases start at the given
  /// constant prediction.
  void init(std::uint64_t seed, T mean_bias, T logvar_bias);

  Tensor<T> encode(const Tensor<T>& patches) const;
  Output forward(const Tensor<T>& patches, std::span<const double> slice_coords) const;
  Output forward_train(const Tensor<T>& patches, std::span<const double> slice_coords);
  /// Accumulates parameter gradients for the last forward_train.
  void backward(const Tensor<T>& d_mu, const Tensor<T>& d_logvar);
  void zero_grad();
  StateRefs<T> state();
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  Encoder<T> encoder_;
  Head<T> mean_head_;
  Head<T> logvar_head_;
};

}  // namespace patch2loc::nn
