#include <doctest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "patch2loc/loc_model.hpp"
#include "patch2loc/nn/gemm.hpp"
#include "patch2loc/nn/layers.hpp"

using namespace patch2loc;
using namespace patch2loc::nn;

namespace {

Tensor<double> random_tensor(int c, int n, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor<double> t(c, n, h, w);
  for (auto& x : t.data) x = d(rng);
  return t;
}

double at(const Tensor<double>& t, int c, int s, int y, int x) {
  return t.data[static_cast<std::size_t>(c) * t.cols() + (static_cast<std::size_t>(s) * t.h + y) * t.w + x];
}

}  // namespace

TEST_CASE("gemm kernels match naive products") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto [m, n, k] : {std::array{3, 5, 7}, std::array{17, 300, 9}, std::array{64, 129, 33}}) {
    std::vector<double> a(static_cast<std::size_t>(m) * k), b(static_cast<std::size_t>(k) * n), c(static_cast<std::size_t>(m) * n);
    for (auto& x : a) x = u(rng);
    for (auto& x : b) x = u(rng);
    gemm_nn(m, n, k, a.data(), b.data(), c.data());
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        double ref = 0.0;
        for (int p = 0; p < k; ++p) ref += a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(p) * n + j];
        CHECK(c[static_cast<std::size_t>(i) * n + j] == doctest::Approx(ref).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("convolution matches direct summation") {
  for (auto [stride, pad, k] : {std::array{1, 1, 3}, std::array{2, 1, 3}, std::array{2, 0, 1}}) {
    Conv2d<double> conv(2, 3, k, stride, pad, "c");
    Rng rng(4);
    conv.init(rng);
    StateRefs<double> refs;
    conv.collect(refs);
    const auto& wt = refs.params.front()->value;
    const Tensor<double> x = random_tensor(2, 2, 7, 6, 9);
    const Tensor<double> y = conv.forward(x);
    CHECK(y.h == conv.out_size(7));
    CHECK(y.w == conv.out_size(6));
    for (int co = 0; co < 3; ++co) {
      for (int s = 0; s < 2; ++s) {
        for (int oy = 0; oy < y.h; ++oy) {
          for (int ox = 0; ox < y.w; ++ox) {
            double ref = 0.0;
            for (int ci = 0; ci < 2; ++ci) {
              for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                  const int iy = oy * stride + ky - pad;
                  const int ix = ox * stride + kx - pad;
                  if (iy < 0 || ix < 0 || iy >= 7 || ix >= 6) continue;
                  ref += wt[((static_cast<std::size_t>(co) * 2 + ci) * k + ky) * k + kx] * at(x, ci, s, iy, ix);
                }
              }
            }
            CHECK(at(y, co, s, oy, ox) == doctest::Approx(ref).epsilon(1e-12));
          }
        }
      }
    }
  }
}

TEST_CASE("batch norm modes") {
  BatchNorm<double> bn(3, "bn");
  const Tensor<double> x = random_tensor(3, 8, 2, 2, 3);
  const Tensor<double> y = bn.forward_train(x);
  for (int c = 0; c < 3; ++c) {
    double m = 0.0, v = 0.0;
    for (std::size_t k = 0; k < y.cols(); ++k) m += y.row(c)[k];
    m /= static_cast<double>(y.cols());
    for (std::size_t k = 0; k < y.cols(); ++k) v += (y.row(c)[k] - m) * (y.row(c)[k] - m);
    v /= static_cast<double>(y.cols());
    CHECK(std::abs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
  }
  // Running statistics: one update with momentum 0.1 from (0, 1).
  StateRefs<double> refs;
  bn.collect(refs);
  REQUIRE(refs.buffers.size() == 2);
  double mean0 = 0.0;
  for (std::size_t k = 0; k < x.cols(); ++k) mean0 += x.row(0)[k];
  mean0 /= static_cast<double>(x.cols());
  CHECK(refs.buffers[0]->value[0] == doctest::Approx(0.1 * mean0));
  // Eval mode is per-sample: a single sample gives the same output alone or
  // inside a batch.
  const Tensor<double> ye = bn.forward(x);
  Tensor<double> one(3, 1, 2, 2);
  for (int c = 0; c < 3; ++c) {
    for (int k = 0; k < 4; ++k) one.row(c)[k] = x.row(c)[k];
  }
  const Tensor<double> y1 = bn.forward(one);
  for (int c = 0; c < 3; ++c) {
    for (int k = 0; k < 4; ++k) CHECK(y1.row(c)[k] == ye.row(c)[k]);
  }
}

TEST_CASE("global average pool") {
  const Tensor<double> x = random_tensor(2, 3, 4, 5, 1);
  const Tensor<double> p = global_average_pool(x);
  CHECK(p.c == 2);
  CHECK(p.n == 3);
  double ref = 0.0;
  for (int k = 0; k < 20; ++k) ref += x.row(1)[20 + k];
  CHECK(p.row(1)[1] == doctest::Approx(ref / 20.0));
}

TEST_CASE("positional encoding") {
  const auto z = positional_encoding(0.0, 8);
  for (int k = 0; k < 8; ++k) CHECK(z[static_cast<std::size_t>(k)] == (k % 2 == 0 ? 0.0 : 1.0));
  const auto p = positional_encoding(50.0, 4);
  CHECK(p[0] == doctest::Approx(std::sin(50.0)));
  CHECK(p[1] == doctest::Approx(std::cos(50.0)));
  CHECK(p[2] == doctest::Approx(std::sin(0.5)));
  CHECK(p[3] == doctest::Approx(std::cos(0.5)));
  for (double a : {0.0, 13.7, 100.0}) {
    for (double v : positional_encoding(a, 64)) CHECK(std::abs(v) <= 1.0);
  }
  CHECK_THROWS(positional_encoding(1.0, 7));
  const std::vector<double> coords{0.0, 50.0};
  const auto batch = positional_encoding_batch<double>(coords, 4);
  CHECK(batch.row(2)[1] == doctest::Approx(std::sin(0.5)));
}

TEST_CASE("parameter gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = testing::check_parameter_gradients(seed, 3);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("float inference is independent of batch composition") {
  ModelConfig cfg = ModelConfig::small_preset();
  LocModel model(cfg, 3);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(0, 1);
  const int n = 37;
  std::vector<float> pixels(static_cast<std::size_t>(n) * 144);
  for (auto& x : pixels) x = u(rng);
  std::vector<double> a(n);
  for (int s = 0; s < n; ++s) a[static_cast<std::size_t>(s)] = 2.5 * s;
  const auto all = model.predict_batch(pixels, a);
  for (int s = 0; s < n; s += 5) {
    const std::span<const float> one(pixels.data() + static_cast<std::size_t>(s) * 144, 144);
    const auto single = model.predict_batch(one, std::span<const double>(&a[static_cast<std::size_t>(s)], 1));
    CHECK(single[0].mu == all[static_cast<std::size_t>(s)].mu);
    CHECK(single[0].logvar == all[static_cast<std::size_t>(s)].logvar);
  }
}
