#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "helpers.hpp"
#include "patch2loc/error.hpp"
#include "patch2loc/scoring.hpp"

using namespace patch2loc;

namespace {

LocModel untrained_model(std::uint64_t seed = 3) {
  LocModel m(ModelConfig::small_preset(), seed);
  m.metadata().modality = Modality::T1;
  return m;
}

LocationPrediction pred(double m1, double m2, double s1, double s2) {
  LocationPrediction p;
  p.mu = {m1, m2};
  p.logvar = {s1, s2};
  return p;
}

}  // namespace

TEST_CASE("worked score examples") {
  auto t = abnormality_score({10, 20}, pred(10, 20, 0, 0));
  CHECK(t.score == doctest::Approx(-0.693147).epsilon(1e-6));
  CHECK(std::abs(t.score - std::log(0.5)) < 1e-12);

  // |y - mu|^2 = 1.5
  t = abnormality_score({1.0, std::sqrt(0.5)}, pred(0, 0, std::log(2.0), std::log(2.0)));
  CHECK(std::abs(t.score - 2 * std::log(2.0)) < 1e-6);
  CHECK(std::abs(t.score - 1.3863) < 1e-4);

  t = abnormality_score({std::sqrt(std::exp(1.0) - 0.5), 0}, pred(0, 0, 0, 0));
  CHECK(std::abs(t.score - 1.0) < 1e-6);
  CHECK(t.score == t.log_error + t.log_variance);
}

TEST_CASE("score is strictly monotone in error and in each log-variance") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> err(0.0, 400.0);
  std::uniform_real_distribution<double> lv(-6.0, 8.0);
  std::uniform_real_distribution<double> bump(1e-3, 5.0);
  for (int i = 0; i < 10000; ++i) {
    const double e = err(rng);
    const double s1 = lv(rng);
    const double s2 = lv(rng);
    const double d = bump(rng);
    const auto base = abnormality_score({std::sqrt(e), 0}, pred(0, 0, s1, s2));
    const auto more_err = abnormality_score({std::sqrt(e + d), 0}, pred(0, 0, s1, s2));
    const auto more_s1 = abnormality_score({std::sqrt(e), 0}, pred(0, 0, s1 + d, s2));
    const auto more_s2 = abnormality_score({std::sqrt(e), 0}, pred(0, 0, s1, s2 + d));
    REQUIRE(more_err.score > base.score);
    REQUIRE(more_s1.score > base.score);
    REQUIRE(more_s2.score > base.score);
    REQUIRE(base.score == base.log_error + base.log_variance);
  }
}

TEST_CASE("log variance is the gaussian entropy up to a constant") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> lv(-4.0, 6.0);
  for (int i = 0; i < 100; ++i) {
    const double s1 = lv(rng);
    const double s2 = lv(rng);
    const auto t = abnormality_score({0, 0}, pred(0, 0, s1, s2));
    // 0.5 ln det(2 pi e Sigma) for a diagonal covariance
    const double two_pi_e = 2 * std::numbers::pi * std::exp(1.0);
    const double entropy = 0.5 * std::log(two_pi_e * std::exp(s1) * two_pi_e * std::exp(s2));
    CHECK(t.log_variance + 1 + std::log(2 * std::numbers::pi) == doctest::Approx(entropy).epsilon(1e-12));
  }
}

TEST_CASE("lattice and upsampling geometry") {
  CHECK(lattice_size(96, 1) == 96);
  CHECK(lattice_size(96, 4) == 24);
  CHECK(lattice_size(97, 4) == 25);
  CHECK(lattice_size(96, 8) == 12);

  Grid2<float> lat(3, 2);
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 3; ++i) lat(i, j) = static_cast<float>(i + 10 * j);
  const auto up = upsample_bilinear(lat, 4, 12, 8);
  CHECK(up.n1 == 12);
  CHECK(up.n2 == 8);
  CHECK(up(0, 0) == 0.0f);
  CHECK(up(4, 0) == 1.0f);
  CHECK(up(2, 0) == doctest::Approx(0.5));
  CHECK(up(4, 4) == 11.0f);
  CHECK(up(6, 2) == doctest::Approx(1.5 + 5.0));
  CHECK(up(11, 0) == 2.0f);  // clamped past the last lattice point
  CHECK(up(8, 7) == 12.0f);
}

TEST_CASE("heatmap shapes at stride 1 and stride 4") {
  const auto model = untrained_model();
  const auto v = testing::random_volume({96, 96, 4}, 21);
  PatchSpec spec;
  spec.stride = 1;
  const auto full = score_slice(model, v, 2, spec);
  CHECK(full.score_map.n1 == 96);
  CHECK(full.score_map.n2 == 96);
  CHECK(full.stride == 1);
  for (std::size_t i = 0; i < full.score_map.data.size(); ++i) {
    REQUIRE(std::isfinite(full.score_map.data[i]));
    if (full.valid.data[i]) {
      REQUIRE(full.score_map.data[i] == full.error_map.data[i] + full.variance_map.data[i]);
    }
  }

  spec.stride = 4;
  ScoringOptions opts;
  const auto up = score_slice(model, v, 2, spec, opts);
  CHECK(up.score_map.n1 == 96);
  CHECK(up.score_map.n2 == 96);
  CHECK(up.upsampled);
  opts.upsample = false;
  const auto lat = score_slice(model, v, 2, spec, opts);
  CHECK(lat.score_map.n1 == 24);
  CHECK(lat.score_map.n2 == 24);
  CHECK_FALSE(lat.upsampled);
  for (int j = 0; j < 24; ++j) {
    for (int i = 0; i < 24; ++i) {
      REQUIRE(up.score_map(4 * i, 4 * j) == lat.score_map(i, j));
      REQUIRE(lat.score_map(i, j) == full.score_map(4 * i, 4 * j));
    }
  }
}

TEST_CASE("chunk size and thread count do not change the output") {
  const auto model = untrained_model(9);
  auto v = testing::random_volume({96, 96, 3}, 4);
  for (int l2 = 0; l2 < 96; ++l2)
    for (int l1 = 0; l1 < 30; ++l1) v.brain_mask(l1, l2, 1) = 0;
  PatchSpec spec;
  spec.stride = 2;
  ScoringOptions a;
  a.chunk_size = 2048;
  ScoringOptions b = a;
  b.chunk_size = 7;
  ScoringOptions c = a;
  c.chunk_size = 100000;
  const auto ra = score_slice(model, v, 1, spec, a);
  const auto rb = score_slice(model, v, 1, spec, b);
  const auto rc = score_slice(model, v, 1, spec, c);
  CHECK(ra.score_map.data == rb.score_map.data);
  CHECK(ra.score_map.data == rc.score_map.data);
  CHECK(ra.error_map.data == rb.error_map.data);
  CHECK(ra.variance_map.data == rb.variance_map.data);

  ScoringOptions t1 = a;
  t1.threads = 1;
  ScoringOptions t3 = a;
  t3.threads = 3;
  const auto s1 = score_volume(model, v, spec, t1);
  const auto s3 = score_volume(model, v, spec, t3);
  CHECK(s1.score.data == s3.score.data);
  CHECK(s1.error.data == s3.error.data);
  CHECK(s1.variance.data == s3.variance.data);
  CHECK(s1.valid.data == s3.valid.data);
  const auto again = score_volume(model, v, spec, t1);
  CHECK(again.score.data == s1.score.data);
}

TEST_CASE("background fill") {
  const auto model = untrained_model();
  auto v = testing::random_volume({96, 96, 3}, 8);
  for (auto& m : v.brain_mask.slice(0)) m = 0;
  PatchSpec spec;
  spec.stride = 4;
  ScoringOptions opts;
  opts.background_fill = 3.25;
  const auto h = score_slice(model, v, 0, spec, opts);
  for (std::size_t i = 0; i < h.score_map.data.size(); ++i) {
    REQUIRE(h.score_map.data[i] == 3.25f);
    REQUIRE(h.valid.data[i] == 0);
  }
  // Without an explicit value the checkpoint fill is used, then zero.
  LocModel with_fill = model;
  with_fill.metadata().background_fill = -1.5;
  const auto h2 = score_slice(with_fill, v, 0, spec);
  CHECK(h2.score_map.data.front() == -1.5f);
  const auto h3 = score_slice(model, v, 0, spec);
  CHECK(h3.score_map.data.front() == 0.0f);
}

TEST_CASE("variance map is translation consistent") {
  const auto model = untrained_model(12);
  const Extents e{96, 96, 2};
  const auto v = testing::random_volume(e, 31);
  const int k = 5;
  Volume shifted = testing::constant_volume(e, 0.0f);
  for (int l3 = 0; l3 < e.e3; ++l3)
    for (int l2 = 0; l2 < e.e2; ++l2)
      for (int l1 = 0; l1 + k < e.e1; ++l1) shifted.intensities(l1 + k, l2, l3) = v.intensities(l1, l2, l3);
  PatchSpec spec;
  spec.stride = 1;
  const auto a = score_slice(model, v, 1, spec);
  const auto b = score_slice(model, shifted, 1, spec);
  const int s = 12;
  int compared = 0;
  for (int l2 = s; l2 < e.e2 - s; ++l2) {
    for (int l1 = s; l1 + k < e.e1 - s; ++l1) {
      REQUIRE(a.variance_map(l1, l2) == b.variance_map(l1 + k, l2));
      ++compared;
    }
  }
  CHECK(compared > 4000);
  // The error map is not shift invariant: the true location moves.
  bool differs = false;
  for (int l2 = s; l2 < e.e2 - s && !differs; ++l2)
    for (int l1 = s; l1 + k < e.e1 - s; ++l1)
      if (a.error_map(l1, l2) != b.error_map(l1 + k, l2)) differs = true;
  CHECK(differs);
}

TEST_CASE("volume scoring checks modality and patch shape") {
  const auto model = untrained_model();
  PatchSpec spec;
  spec.stride = 8;
  auto v = testing::random_volume({96, 96, 2}, 2, Modality::T2);
  CHECK_THROWS_AS(score_volume(model, v, spec), ModalityMismatchError);
  const auto small = testing::random_volume({48, 48, 2}, 2, Modality::T1);
  CHECK_THROWS_AS(score_volume(model, small, spec), ShapeMismatchError);
  v.modality = Modality::T1;
  const auto scores = score_volume(model, v, spec);
  CHECK(scores.score.extents == v.extents());
  CHECK(scores.slices.size() == 2);
  for (float x : scores.score.data) REQUIRE(std::isfinite(x));
}
