#include <cmath>
#include <stdexcept>

#include "patch2loc/error.hpp"
#include "patch2loc/nn/gemm.hpp"
#include "patch2loc/nn/layers.hpp"
#include "patch2loc/nn/locnet.hpp"

namespace patch2loc::nn {

// ---- Conv2d -----------------------------------------------------------------

template <class T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, std::string name)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), padding_(padding) {
  weight_.name = std::move(name) + ".weight";
  const std::size_t n = static_cast<std::size_t>(out_) * in_ * kernel_ * kernel_;
  weight_.value.assign(n, T(0));
  weight_.grad.assign(n, T(0));
}

template <class T>
void Conv2d<T>::init(Rng& rng) {
  const double stddev = std::sqrt(2.0 / (static_cast<double>(out_) * kernel_ * kernel_));
  std::normal_distribution<double> dist(0.0, stddev);
  for (T& w : weight_.value) w = static_cast<T>(dist(rng));
}

template <class T>
void Conv2d<T>::im2col(const Tensor<T>& x, int ho, int wo, std::vector<T>& col) const {
  const std::size_t cols = static_cast<std::size_t>(x.n) * ho * wo;
  col.resize(static_cast<std::size_t>(in_) * kernel_ * kernel_ * cols);
  for (int ci = 0; ci < in_; ++ci) {
    const T* src_c = x.row(ci);
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        T* dst = col.data() + ((static_cast<std::size_t>(ci) * kernel_ + ky) * kernel_ + kx) * cols;
        for (int s = 0; s < x.n; ++s) {
          const T* src = src_c + static_cast<std::size_t>(s) * x.h * x.w;
          for (int oy = 0; oy < ho; ++oy) {
            T* d = dst + (static_cast<std::size_t>(s) * ho + oy) * wo;
            const int iy = oy * stride_ + ky - padding_;
            if (iy < 0 || iy >= x.h) {
              std::fill(d, d + wo, T(0));
              continue;
            }
            const T* srow = src + static_cast<std::size_t>(iy) * x.w;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride_ + kx - padding_;
              d[ox] = (ix >= 0 && ix < x.w) ? srow[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <class T>
Tensor<T> Conv2d<T>::apply(const Tensor<T>& x, std::vector<T>& col) const {
  if (x.c != in_) throw ShapeMismatchError("convolution input has the wrong channel count");
  const int ho = out_size(x.h);
  const int wo = out_size(x.w);
  im2col(x, ho, wo, col);
  Tensor<T> y(out_, x.n, ho, wo);
  gemm_nn(out_, static_cast<int>(y.cols()), in_ * kernel_ * kernel_, weight_.value.data(), col.data(), y.data.data());
  return y;
}

template <class T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) const {
  std::vector<T> col;
  return apply(x, col);
}

template <class T>
Tensor<T> Conv2d<T>::forward_train(const Tensor<T>& x) {
  cached_n_ = x.n;
  cached_h_ = x.h;
  cached_w_ = x.w;
  return apply(x, col_);
}

template <class T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy) {
  const int kk = in_ * kernel_ * kernel_;
  const int cols = static_cast<int>(dy.cols());
  gemm_nt(out_, kk, cols, dy.data.data(), col_.data(), weight_.grad.data(), true);

  std::vector<T> dcol(static_cast<std::size_t>(kk) * cols);
  gemm_tn(kk, cols, out_, weight_.value.data(), dy.data.data(), dcol.data());

  Tensor<T> dx(in_, cached_n_, cached_h_, cached_w_);
  const int ho = dy.h;
  const int wo = dy.w;
  for (int ci = 0; ci < in_; ++ci) {
    T* dst_c = dx.row(ci);
    for (int ky = 0; ky < kernel_; ++ky) {
      for (int kx = 0; kx < kernel_; ++kx) {
        const T* src = dcol.data() + ((static_cast<std::size_t>(ci) * kernel_ + ky) * kernel_ + kx) * cols;
        for (int s = 0; s < cached_n_; ++s) {
          T* dst = dst_c + static_cast<std::size_t>(s) * cached_h_ * cached_w_;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride_ + ky - padding_;
            if (iy < 0 || iy >= cached_h_) continue;
            const T* srow = src + (static_cast<std::size_t>(s) * ho + oy) * wo;
            T* drow = dst + static_cast<std::size_t>(iy) * cached_w_;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride_ + kx - padding_;
              if (ix >= 0 && ix < cached_w_) drow[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
  return dx;
}

template <class T>
void Conv2d<T>::collect(StateRefs<T>& refs) {
  refs.params.push_back(&weight_);
}

// ---- BatchNorm --------------------------------------------------------------

template <class T>
BatchNorm<T>::BatchNorm(int channels, std::string name, double momentum, double eps)
    : channels_(channels), momentum_(momentum), eps_(eps) {
  const auto n = static_cast<std::size_t>(channels);
  gamma_ = {name + ".weight", std::vector<T>(n, T(1)), std::vector<T>(n, T(0))};
  beta_ = {name + ".bias", std::vector<T>(n, T(0)), std::vector<T>(n, T(0))};
  running_mean_ = {name + ".running_mean", std::vector<T>(n, T(0))};
  running_var_ = {name + ".running_var", std::vector<T>(n, T(1))};
}

template <class T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x) const {
  if (x.c != channels_) throw ShapeMismatchError("batch norm input has the wrong channel count");
  Tensor<T> y(x.c, x.n, x.h, x.w);
  const std::size_t m = x.cols();
  for (int c = 0; c < x.c; ++c) {
    const double scale = static_cast<double>(gamma_.value[c]) / std::sqrt(static_cast<double>(running_var_.value[c]) + eps_);
    const auto s = static_cast<T>(scale);
    const auto b = static_cast<T>(static_cast<double>(beta_.value[c]) - static_cast<double>(running_mean_.value[c]) * scale);
    const T* in = x.row(c);
    T* out = y.row(c);
    for (std::size_t i = 0; i < m; ++i) out[i] = in[i] * s + b;
  }
  return y;
}

template <class T>
Tensor<T> BatchNorm<T>::forward_train(const Tensor<T>& x) {
  if (x.c != channels_) throw ShapeMismatchError("batch norm input has the wrong channel count");
  Tensor<T> y(x.c, x.n, x.h, x.w);
  xhat_ = Tensor<T>(x.c, x.n, x.h, x.w);
  inv_std_.assign(static_cast<std::size_t>(x.c), T(0));
  const std::size_t m = x.cols();
  for (int c = 0; c < x.c; ++c) {
    const T* in = x.row(c);
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) sum += in[i];
    const double mean = sum / static_cast<double>(m);
    double sq = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double d = in[i] - mean;
      sq += d * d;
    }
    const double var = sq / static_cast<double>(m);
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = static_cast<T>(inv);
    T* xh = xhat_.row(c);
    T* out = y.row(c);
    const T g = gamma_.value[c];
    const T b = beta_.value[c];
    for (std::size_t i = 0; i < m; ++i) {
      xh[i] = static_cast<T>((in[i] - mean) * inv);
      out[i] = g * xh[i] + b;
    }
    const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
    running_mean_.value[c] = static_cast<T>((1.0 - momentum_) * running_mean_.value[c] + momentum_ * mean);
    running_var_.value[c] = static_cast<T>((1.0 - momentum_) * running_var_.value[c] + momentum_ * unbiased);
  }
  return y;
}

template <class T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.c, dy.n, dy.h, dy.w);
  const std::size_t m = dy.cols();
  for (int c = 0; c < dy.c; ++c) {
    const T* g = dy.row(c);
    const T* xh = xhat_.row(c);
    double dgamma = 0.0;
    double dbeta = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      dgamma += static_cast<double>(g[i]) * xh[i];
      dbeta += g[i];
    }
    gamma_.grad[c] += static_cast<T>(dgamma);
    beta_.grad[c] += static_cast<T>(dbeta);
    const double k = static_cast<double>(gamma_.value[c]) * inv_std_[c] / static_cast<double>(m);
    T* out = dx.row(c);
    for (std::size_t i = 0; i < m; ++i) {
      out[i] = static_cast<T>(k * (static_cast<double>(m) * g[i] - dbeta - xh[i] * dgamma));
    }
  }
  return dx;
}

template <class T>
void BatchNorm<T>::collect(StateRefs<T>& refs) {
  refs.params.push_back(&gamma_);
  refs.params.push_back(&beta_);
  refs.buffers.push_back(&running_mean_);
  refs.buffers.push_back(&running_var_);
}

// ---- Linear -----------------------------------------------------------------

template <class T>
Linear<T>::Linear(int in_features, int out_features, std::string name) : in_(in_features), out_(out_features) {
  const std::size_t nw = static_cast<std::size_t>(in_) * out_;
  weight_ = {name + ".weight", std::vector<T>(nw, T(0)), std::vector<T>(nw, T(0))};
  bias_ = {name + ".bias", std::vector<T>(static_cast<std::size_t>(out_), T(0)),
           std::vector<T>(static_cast<std::size_t>(out_), T(0))};
}

template <class T>
void Linear<T>::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (T& w : weight_.value) w = static_cast<T>(dist(rng));
  for (T& b : bias_.value) b = static_cast<T>(dist(rng));
}

template <class T>
void Linear<T>::set_bias(T value) {
  std::fill(bias_.value.begin(), bias_.value.end(), value);
}

template <class T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) const {
  if (x.c != in_ || x.h != 1 || x.w != 1) throw ShapeMismatchError("linear layer input has the wrong shape");
  Tensor<T> y(out_, x.n, 1, 1);
  gemm_nn(out_, x.n, in_, weight_.value.data(), x.data.data(), y.data.data());
  for (int o = 0; o < out_; ++o) {
    T* row = y.row(o);
    for (int s = 0; s < x.n; ++s) row[s] += bias_.value[o];
  }
  return y;
}

template <class T>
Tensor<T> Linear<T>::forward_train(const Tensor<T>& x) {
  x_ = x;
  return forward(x);
}

template <class T>
Tensor<T> Linear<T>::backward(const Tensor<T>& dy) {
  gemm_nt(out_, in_, dy.n, dy.data.data(), x_.data.data(), weight_.grad.data(), true);
  for (int o = 0; o < out_; ++o) {
    const T* row = dy.row(o);
    double s = 0.0;
    for (int i = 0; i < dy.n; ++i) s += row[i];
    bias_.grad[o] += static_cast<T>(s);
  }
  Tensor<T> dx(in_, dy.n, 1, 1);
  gemm_tn(in_, dy.n, out_, weight_.value.data(), dy.data.data(), dx.data.data());
  return dx;
}

template <class T>
void Linear<T>::collect(StateRefs<T>& refs) {
  refs.params.push_back(&weight_);
  refs.params.push_back(&bias_);
}

// ---- elementwise / pooling --------------------------------------------------

template <class T>
void relu_inplace(Tensor<T>& x) {
  for (T& v : x.data) v = v > T(0) ? v : T(0);
}

template <class T>
void relu_backward(const Tensor<T>& y, Tensor<T>& dy) {
  for (std::size_t i = 0; i < dy.data.size(); ++i) {
    if (!(y.data[i] > T(0))) dy.data[i] = T(0);
  }
}

template <class T>
Tensor<T> global_average_pool(const Tensor<T>& x) {
  Tensor<T> y(x.c, x.n, 1, 1);
  const std::size_t plane = x.plane();
  for (int c = 0; c < x.c; ++c) {
    const T* in = x.row(c);
    T* out = y.row(c);
    for (int s = 0; s < x.n; ++s) {
      T acc = T(0);
      const T* p = in + plane * s;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      out[s] = acc / static_cast<T>(plane);
    }
  }
  return y;
}

template <class T>
Tensor<T> global_average_pool_backward(const Tensor<T>& dy, int h, int w) {
  Tensor<T> dx(dy.c, dy.n, h, w);
  const std::size_t plane = dx.plane();
  for (int c = 0; c < dy.c; ++c) {
    const T* g = dy.row(c);
    T* out = dx.row(c);
    for (int s = 0; s < dy.n; ++s) {
      const T v = g[s] / static_cast<T>(plane);
      std::fill(out + plane * s, out + plane * (s + 1), v);
    }
  }
  return dx;
}

// ---- BasicBlock -------------------------------------------------------------

template <class T>
BasicBlock<T>::BasicBlock(int in_channels, int out_channels, int stride, const std::string& name)
    : conv1_(in_channels, out_channels, 3, stride, 1, name + ".conv1"),
      bn1_(out_channels, name + ".bn1"),
      conv2_(out_channels, out_channels, 3, 1, 1, name + ".conv2"),
      bn2_(out_channels, name + ".bn2") {
  if (stride != 1 || in_channels != out_channels) {
    down_conv_.emplace(in_channels, out_channels, 1, stride, 0, name + ".downsample.0");
    down_bn_.emplace(out_channels, name + ".downsample.1");
  }
}

template <class T>
void BasicBlock<T>::init(Rng& rng) {
  conv1_.init(rng);
  conv2_.init(rng);
  if (down_conv_) down_conv_->init(rng);
}

template <class T>
Tensor<T> BasicBlock<T>::forward(const Tensor<T>& x) const {
  Tensor<T> a = bn1_.forward(conv1_.forward(x));
  relu_inplace(a);
  Tensor<T> y = bn2_.forward(conv2_.forward(a));
  const Tensor<T> shortcut = down_conv_ ? down_bn_->forward(down_conv_->forward(x)) : x;
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += shortcut.data[i];
  relu_inplace(y);
  return y;
}

template <class T>
Tensor<T> BasicBlock<T>::forward_train(const Tensor<T>& x) {
  a_ = bn1_.forward_train(conv1_.forward_train(x));
  relu_inplace(a_);
  Tensor<T> y = bn2_.forward_train(conv2_.forward_train(a_));
  if (down_conv_) {
    const Tensor<T> shortcut = down_bn_->forward_train(down_conv_->forward_train(x));
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += shortcut.data[i];
  } else {
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += x.data[i];
  }
  relu_inplace(y);
  y_ = y;
  return y;
}

template <class T>
Tensor<T> BasicBlock<T>::backward(const Tensor<T>& dy_in) {
  Tensor<T> dy = dy_in;
  relu_backward(y_, dy);
  Tensor<T> da = conv2_.backward(bn2_.backward(dy));
  relu_backward(a_, da);
  Tensor<T> dx = conv1_.backward(bn1_.backward(da));
  if (down_conv_) {
    const Tensor<T> ds = down_conv_->backward(down_bn_->backward(dy));
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += ds.data[i];
  } else {
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dy.data[i];
  }
  return dx;
}

template <class T>
void BasicBlock<T>::collect(StateRefs<T>& refs) {
  conv1_.collect(refs);
  bn1_.collect(refs);
  conv2_.collect(refs);
  bn2_.collect(refs);
  if (down_conv_) {
    down_conv_->collect(refs);
    down_bn_->collect(refs);
  }
}

// ---- Encoder ----------------------------------------------------------------

template <class T>
Encoder<T>::Encoder(const ModelConfig& cfg)
    : stem_(1, cfg.stage_widths().front(), cfg.first_conv_kernel, 1, cfg.first_conv_kernel / 2, "encoder.conv1"),
      stem_bn_(cfg.stage_widths().front(), "encoder.bn1") {
  const auto widths = cfg.stage_widths();
  int in = widths.front();
  for (std::size_t s = 0; s < widths.size(); ++s) {
    for (int b = 0; b < cfg.blocks_per_stage; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      blocks_.emplace_back(in, widths[s], stride,
                           "encoder.layer" + std::to_string(s + 1) + "." + std::to_string(b));
      in = widths[s];
    }
  }
}

template <class T>
void Encoder<T>::init(Rng& rng) {
  stem_.init(rng);
  for (auto& b : blocks_) b.init(rng);
}

template <class T>
Tensor<T> Encoder<T>::forward(const Tensor<T>& x) const {
  Tensor<T> h = stem_bn_.forward(stem_.forward(x));
  relu_inplace(h);
  for (const auto& b : blocks_) h = b.forward(h);
  return global_average_pool(h);
}

template <class T>
Tensor<T> Encoder<T>::forward_train(const Tensor<T>& x) {
  stem_out_ = stem_bn_.forward_train(stem_.forward_train(x));
  relu_inplace(stem_out_);
  Tensor<T> h = stem_out_;
  for (auto& b : blocks_) h = b.forward_train(h);
  pooled_h_ = h.h;
  pooled_w_ = h.w;
  return global_average_pool(h);
}

template <class T>
void Encoder<T>::backward(const Tensor<T>& d_latent) {
  Tensor<T> d = global_average_pool_backward(d_latent, pooled_h_, pooled_w_);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d = it->backward(d);
  relu_backward(stem_out_, d);
  stem_.backward(stem_bn_.backward(d));
}

template <class T>
void Encoder<T>::collect(StateRefs<T>& refs) {
  stem_.collect(refs);
  stem_bn_.collect(refs);
  for (auto& b : blocks_) b.collect(refs);
}

// ---- Head -------------------------------------------------------------------

template <class T>
Head<T>::Head(int in_features, const std::vector<int>& widths, const std::string& name)
    : out_(widths.empty() ? in_features : widths.back(), 2, name + ".out") {
  int in = in_features;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    fc_.emplace_back(in, widths[i], name + ".fc" + std::to_string(i));
    bn_.emplace_back(widths[i], name + ".bn" + std::to_string(i));
    in = widths[i];
  }
  act_.resize(widths.size());
}

template <class T>
void Head<T>::init(Rng& rng, T output_bias) {
  for (auto& fc : fc_) fc.init(rng);
  out_.init(rng);
  out_.set_bias(output_bias);
}

template <class T>
Tensor<T> Head<T>::forward(const Tensor<T>& x) const {
  Tensor<T> h = x;
  for (std::size_t i = 0; i < fc_.size(); ++i) {
    h = bn_[i].forward(fc_[i].forward(h));
    relu_inplace(h);
  }
  return out_.forward(h);
}

template <class T>
Tensor<T> Head<T>::forward_train(const Tensor<T>& x) {
  Tensor<T> h = x;
  for (std::size_t i = 0; i < fc_.size(); ++i) {
    h = bn_[i].forward_train(fc_[i].forward_train(h));
    relu_inplace(h);
    act_[i] = h;
  }
  return out_.forward_train(h);
}

template <class T>
Tensor<T> Head<T>::backward(const Tensor<T>& dy) {
  Tensor<T> d = out_.backward(dy);
  for (std::size_t i = fc_.size(); i-- > 0;) {
    relu_backward(act_[i], d);
    d = fc_[i].backward(bn_[i].backward(d));
  }
  return d;
}

template <class T>
void Head<T>::collect(StateRefs<T>& refs) {
  for (std::size_t i = 0; i < fc_.size(); ++i) {
    fc_[i].collect(refs);
    bn_[i].collect(refs);
  }
  out_.collect(refs);
}

// ---- LocNet -----------------------------------------------------------------

template <class T>
Tensor<T> positional_encoding_batch(std::span<const double> slice_coords, int d) {
  if (d % 2 != 0) throw ValidationError("positional encoding needs an even dimension");
  Tensor<T> pe(d, static_cast<int>(slice_coords.size()), 1, 1);
  for (int k = 0; k < d / 2; ++k) {
    const double freq = std::pow(10000.0, 2.0 * k / d);
    T* s_row = pe.row(2 * k);
    T* c_row = pe.row(2 * k + 1);
    for (std::size_t i = 0; i < slice_coords.size(); ++i) {
      s_row[i] = static_cast<T>(std::sin(slice_coords[i] / freq));
      c_row[i] = static_cast<T>(std::cos(slice_coords[i] / freq));
    }
  }
  return pe;
}

template <class T>
LocNet<T>::LocNet(const ModelConfig& cfg)
    : cfg_((cfg.validate(), cfg)),
      encoder_(cfg),
      mean_head_(cfg.latent_dim, cfg.head_widths, "mean_head"),
      logvar_head_(cfg.latent_dim, cfg.head_widths, "logvar_head") {}

template <class T>
void LocNet<T>::init(std::uint64_t seed, T mean_bias, T logvar_bias) {
  Rng rng(seed);
  encoder_.init(rng);
  mean_head_.init(rng, mean_bias);
  logvar_head_.init(rng, logvar_bias);
}

template <class T>
Tensor<T> LocNet<T>::encode(const Tensor<T>& patches) const {
  if (patches.c != 1 || patches.h != cfg_.patch_shape.s2 || patches.w != cfg_.patch_shape.s1) {
    throw ShapeMismatchError("patch shape does not match the model configuration");
  }
  return encoder_.forward(patches);
}

template <class T>
typename LocNet<T>::Output LocNet<T>::forward(const Tensor<T>& patches, std::span<const double> slice_coords) const {
  if (static_cast<int>(slice_coords.size()) != patches.n) throw ShapeMismatchError("one slice coordinate per patch");
  Tensor<T> h = encode(patches);
  const Tensor<T> pe = positional_encoding_batch<T>(slice_coords, cfg_.latent_dim);
  for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] += pe.data[i];
  return {mean_head_.forward(h), logvar_head_.forward(h)};
}

template <class T>
typename LocNet<T>::Output LocNet<T>::forward_train(const Tensor<T>& patches, std::span<const double> slice_coords) {
  if (patches.c != 1 || patches.h != cfg_.patch_shape.s2 || patches.w != cfg_.patch_shape.s1) {
    throw ShapeMismatchError("patch shape does not match the model configuration");
  }
  if (static_cast<int>(slice_coords.size()) != patches.n) throw ShapeMismatchError("one slice coordinate per patch");
  Tensor<T> h = encoder_.forward_train(patches);
  const Tensor<T> pe = positional_encoding_batch<T>(slice_coords, cfg_.latent_dim);
  for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] += pe.data[i];
  return {mean_head_.forward_train(h), logvar_head_.forward_train(h)};
}

template <class T>
void LocNet<T>::backward(const Tensor<T>& d_mu, const Tensor<T>& d_logvar) {
  Tensor<T> dh = mean_head_.backward(d_mu);
  const Tensor<T> dv = logvar_head_.backward(d_logvar);
  for (std::size_t i = 0; i < dh.data.size(); ++i) dh.data[i] += dv.data[i];
  encoder_.backward(dh);
}

template <class T>
void LocNet<T>::zero_grad() {
  for (auto* p : state().params) std::fill(p->grad.begin(), p->grad.end(), T(0));
}

template <class T>
StateRefs<T> LocNet<T>::state() {
  StateRefs<T> refs;
  encoder_.collect(refs);
  mean_head_.collect(refs);
  logvar_head_.collect(refs);
  return refs;
}

#define PATCH2LOC_INSTANTIATE(T)                                                        \
  template class Conv2d<T>;                                                             \
  template class BatchNorm<T>;                                                          \
  template class Linear<T>;                                                             \
  template class BasicBlock<T>;                                                         \
  template class Encoder<T>;                                                            \
  template class Head<T>;                                                               \
  template class LocNet<T>;                                                             \
  template void relu_inplace<T>(Tensor<T>&);                                            \
  template void relu_backward<T>(const Tensor<T>&, Tensor<T>&);                         \
  template Tensor<T> global_average_pool<T>(const Tensor<T>&);                          \
  template Tensor<T> global_average_pool_backward<T>(const Tensor<T>&, int, int);       \
  template Tensor<T> positional_encoding_batch<T>(std::span<const double>, int);

PATCH2LOC_INSTANTIATE(float)
PATCH2LOC_INSTANTIATE(double)

#undef PATCH2LOC_INSTANTIATE

}  // namespace patch2loc::nn
