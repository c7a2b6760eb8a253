#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace patch2loc::nn {

/// Channel-major activations: `c` rows, each holding n*h*w values ordered
/// (sample, y, x). Fully connected activations use h = w = 1.
template <class T>
struct Tensor {
  int c = 0;
  int n = 0;
  int h = 1;
  int w = 1;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int channels, int batch, int height, int width, T fill = T(0))
      : c(channels), n(batch), h(height), w(width), data(static_cast<std::size_t>(channels) * batch * height * width, fill) {}

  std::size_t cols() const { return static_cast<std::size_t>(n) * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  T* row(int ch) { return data.data() + cols() * ch; }
  const T* row(int ch) const { return data.data() + cols() * ch; }
};

template <class T>
struct Parameter {
  std::string name;
  std::vector<T> value;
  std::vector<T> grad;
};

/// Non-trainable state that still belongs in a checkpoint.
template <class T>
struct Buffer {
  std::string name;
  std::vector<T> value;
};

template <class T>
struct StateRefs {
  std::vector<Parameter<T>*> params;
  std::vector<Buffer<T>*> buffers;
};

}  // namespace patch2loc::nn
