#pragma once

#include <optional>
#include <string>
#include <vector>

#include "patch2loc/nn/tensor.hpp"
#include "patch2loc/rng.hpp"

// Layers keep the activations needed for backward only when run through
// forward_train; the const forward path is safe for concurrent callers.
namespace patch2loc::nn {

template <class T>
class Conv2d {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, std::string name);

  /// Kaiming normal, fan-out mode.
  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const;
  Tensor<T> forward_train(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(StateRefs<T>& refs);

  int out_size(int in) const { return (in + 2 * padding_ - kernel_) / stride_ + 1; }

 private:
  void im2col(const Tensor<T>& x, int ho, int wo, std::vector<T>& col) const;
  Tensor<T> apply(const Tensor<T>& x, std::vector<T>& col) const;

  int in_;
  int out_;
  int kernel_;
  int stride_;
  int padding_;
  Parameter<T> weight_;  // out x (in * k * k)
  std::vector<T> col_;
  int cached_n_ = 0;
  int cached_h_ = 0;
  int cached_w_ = 0;
};

/// Per-row (channel or feature) batch normalization.
template <class T>
class BatchNorm {
 public:
  BatchNorm(int channels, std::string name, double momentum = 0.1, double eps = 1e-5);

  Tensor<T> forward(const Tensor<T>& x) const;
  Tensor<T> forward_train(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(StateRefs<T>& refs);

 private:
  int channels_;
  double momentum_;
  double eps_;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  Buffer<T> running_mean_;
  Buffer<T> running_var_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

template <class T>
class Linear {
 public:
  Linear(int in_features, int out_features, std::string name);

  /// Uniform in +-1/sqrt(in_features) for weights and bias.
  void init(Rng& rng);
  void set_bias(T value);
  Tensor<T> forward(const Tensor<T>& x) const;
  Tensor<T> forward_train(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(StateRefs<T>& refs);

 private:
  int in_;
  int out_;
  Parameter<T> weight_;  // out x in
  Parameter<T> bias_;
  Tensor<T> x_;
};

template <class T>
void relu_inplace(Tensor<T>& x);

/// dy *= (y > 0), where y is the ReLU output.
template <class T>
void relu_backward(const Tensor<T>& y, Tensor<T>& dy);

/// ResNet basic block: two 3x3 convolutions with a projection shortcut when
/// the shape changes.
template <class T>
class BasicBlock {
 public:
  BasicBlock(int in_channels, int out_channels, int stride, const std::string& name);

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const;
  Tensor<T> forward_train(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(StateRefs<T>& refs);
  int out_size(int in) const { return conv1_.out_size(in); }

 private:
  Conv2d<T> conv1_;
  BatchNorm<T> bn1_;
  Conv2d<T> conv2_;
  BatchNorm<T> bn2_;
  std::optional<Conv2d<T>> down_conv_;
  std::optional<BatchNorm<T>> down_bn_;
  Tensor<T> a_;  // after the first ReLU
  Tensor<T> y_;  // block output
};

/// Mean over the spatial plane of every (channel, sample).
template <class T>
Tensor<T> global_average_pool(const Tensor<T>& x);
template <class T>
Tensor<T> global_average_pool_backward(const Tensor<T>& dy, int h, int w);

}  // namespace patch2loc::nn
