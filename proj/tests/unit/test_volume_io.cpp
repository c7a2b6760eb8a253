#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "helpers.hpp"
#include "patch2loc/error.hpp"
#include "patch2loc/volume_io.hpp"

using namespace patch2loc;

namespace {

Volume line_volume(const std::vector<float>& values, Modality m = Modality::T1) {
  Volume v = testing::constant_volume({static_cast<int>(values.size()), 1, 1}, 0.0f, m);
  v.intensities.data = values;
  return v;
}

std::vector<float> iota_values(int lo, int hi, float scale = 1.0f) {
  std::vector<float> v;
  for (int k = lo; k <= hi; ++k) v.push_back(scale * static_cast<float>(k));
  return v;
}

// Sort-based percentile with linear interpolation between order statistics.
double oracle_percentile(std::vector<double> x, double q) {
  std::sort(x.begin(), x.end());
  const double pos = q / 100.0 * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (pos - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

}  // namespace

TEST_CASE("relative coordinates") {
  const auto r = to_relative({60, 80, 45}, {120, 160, 90});
  CHECK(r.y1 == 50.0);
  CHECK(r.y2 == 50.0);
  CHECK(r.a == 50.0);
  const auto z = to_relative({0, 0, 0}, {120, 160, 90});
  CHECK(z.y1 == 0.0);
  const auto full = to_relative({120, 160, 90}, {120, 160, 90});
  CHECK(full.y1 == 100.0);
  CHECK(full.y2 == 100.0);
  CHECK(full.a == 100.0);
  CHECK_THROWS_AS(to_relative({121, 0, 0}, {120, 160, 90}), ValidationError);
  CHECK_THROWS_AS(to_relative({-1, 0, 0}, {120, 160, 90}), ValidationError);

  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> d(0, 97);
  for (int k = 0; k < 1000; ++k) {
    const Extents e{97, 89, 61};
    const std::array<double, 3> l{double(d(rng) % 98), double(d(rng) % 90), double(d(rng) % 62)};
    const auto back = to_absolute(to_relative(l, e), e);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(back[i] - l[i]) < 1e-9);
  }
}

TEST_CASE("load without mask uses positive voxels; native round trip is bit exact") {
  const auto dir = testing::temp_dir("vio");
  Volume ones = testing::constant_volume({4, 4, 4}, 1.0f);
  ones.subject_id = "ones";
  save_volume(ones, dir / "ones");
  const Volume loaded = load_volume(dir / "ones.json");
  CHECK(loaded.extents() == Extents{4, 4, 4});
  CHECK(loaded.brain_voxels() == 64);
  CHECK(loaded.subject_id == "ones");
  CHECK(loaded.modality == Modality::T1);

  Volume r = testing::random_volume({7, 5, 3}, 11);
  r.intensities(0, 0, 0) = 0.0f;
  save_volume(r, dir / "r");
  save_mask(r.brain_mask, dir / "r_mask", r.modality, r.subject_id);
  const Volume back = load_volume(dir / "r", dir / "r_mask.json");
  CHECK(back.intensities.data == r.intensities.data);
  CHECK(back.brain_mask.data == r.brain_mask.data);

  const Grid3<std::uint8_t> wrong({4, 4, 3}, 1);
  save_mask(wrong, dir / "wrong_mask");
  CHECK_THROWS_AS(load_volume(dir / "ones.json", dir / "wrong_mask.json"), ShapeMismatchError);
  CHECK_THROWS_AS(load_volume(dir / "missing.json"), IoError);
}

TEST_CASE("negative intensities are rejected") {
  Volume v = testing::constant_volume({3, 3, 3}, 1.0f);
  v.intensities(1, 1, 1) = -0.5f;
  CHECK_THROWS_AS(v.validate(), ValidationError);
  Volume empty = testing::constant_volume({3, 3, 3}, 1.0f);
  std::fill(empty.brain_mask.data.begin(), empty.brain_mask.data.end(), 0);
  CHECK_THROWS_AS(empty.validate(), ValidationError);
}

TEST_CASE("NIfTI round trip") {
  const auto dir = testing::temp_dir("nifti");
  Volume v = testing::random_volume({9, 7, 5}, 5, Modality::T2);
  v.subject_id = "sub";
  for (const char* name : {"v.nii", "v.nii.gz"}) {
    save_volume(v, dir / name);
    const Volume back = load_volume(dir / name);
    CHECK(back.extents() == v.extents());
    CHECK(back.intensities.data == v.intensities.data);
    CHECK(back.modality == Modality::T2);
    CHECK(back.subject_id == "sub");
  }
  save_mask(v.brain_mask, dir / "m.nii.gz");
  CHECK(load_mask(dir / "m.nii.gz").data == v.brain_mask.data);
  CHECK(detect_format(dir / "x.nii.gz") == VolumeFormat::Nifti);
  CHECK(detect_format(dir / "x.json") == VolumeFormat::Native);
}

TEST_CASE("ground truth shape must match") {
  const auto dir = testing::temp_dir("gt");
  save_mask(Grid3<std::uint8_t>({4, 4, 4}, 0), dir / "gt");
  CHECK(load_ground_truth(dir / "gt", {4, 4, 4}).empty());
  CHECK_THROWS_AS(load_ground_truth(dir / "gt", {4, 4, 5}), ShapeMismatchError);
}

TEST_CASE("percentile normalization") {
  const Volume c = testing::constant_volume({5, 5, 5}, 3.5f);
  const Volume nc = normalize_percentile(c);
  for (float x : nc.intensities.data) CHECK(x == doctest::Approx(1.0));

  const Volume v = line_volume(iota_values(1, 100));
  const double divisor = oracle_percentile(std::vector<double>(v.intensities.data.begin(), v.intensities.data.end()), 98);
  CHECK(divisor == doctest::Approx(98.02));
  const Volume nv = normalize_percentile(v, 98);
  CHECK(nv.intensities.data.back() == doctest::Approx(100.0 / divisor).epsilon(1e-6));

  Volume zero = testing::constant_volume({3, 3, 3}, 0.0f);
  CHECK_THROWS_AS(normalize_percentile(zero), DegenerateVolumeError);

  // Scale invariance.
  Volume r = testing::random_volume({6, 6, 6}, 2);
  Volume scaled = r;
  for (float& x : scaled.intensities.data) x *= 4.0f;
  const auto a = normalize_percentile(r);
  const auto b = normalize_percentile(scaled);
  for (std::size_t k = 0; k < a.intensities.data.size(); ++k) {
    CHECK(a.intensities.data[k] == doctest::Approx(b.intensities.data[k]).epsilon(1e-6));
  }
  // Only in-mask voxels define the divisor.
  Volume masked = line_volume({1, 2, 3, 1000});
  masked.brain_mask.data[3] = 0;
  CHECK(percentile(sorted_brain_intensities(masked), 100) == 3.0);
}

TEST_CASE("percentile matches the sort oracle") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 10);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> x(1 + t * 7);
    for (auto& v : x) v = u(rng);
    for (double q : {0.0, 2.0, 37.5, 50.0, 98.0, 100.0}) CHECK(percentile(x, q) == doctest::Approx(oracle_percentile(x, q)));
  }
}

TEST_CASE("histogram landmarks") {
  const Volume base = line_volume(iota_values(0, 100));
  const std::vector<Volume> one{base};
  const LandmarkModel m = fit_histogram_landmarks(one);
  REQUIRE(m.landmarks.size() == default_landmark_percentiles().size());
  for (std::size_t k = 0; k < m.landmarks.size(); ++k) CHECK(m.landmarks[k] == doctest::Approx(m.percentiles[k]));

  const std::vector<Volume> two{base, line_volume(iota_values(0, 100, 2.0f))};
  const LandmarkModel m2 = fit_histogram_landmarks(two);
  for (std::size_t k = 0; k < m2.landmarks.size(); ++k) CHECK(m2.landmarks[k] == doctest::Approx(1.5 * m.landmarks[k]));

  CHECK_THROWS_AS(fit_histogram_landmarks(std::vector<Volume>{}), ValidationError);
  const std::vector<Volume> mixed{base, line_volume(iota_values(0, 100), Modality::T2)};
  CHECK_THROWS_AS(fit_histogram_landmarks(mixed), ModalityMismatchError);
}

TEST_CASE("histogram standardization") {
  const Volume base = line_volume(iota_values(0, 100));
  const LandmarkModel identity = fit_histogram_landmarks(std::vector<Volume>{base});
  const Volume same = apply_histogram_standardization(base, identity);
  for (std::size_t k = 0; k < base.intensities.data.size(); ++k) {
    CHECK(std::abs(same.intensities.data[k] - base.intensities.data[k]) < 1e-4);
  }

  // A volume used alone to fit the model keeps its deciles on the standard scale.
  std::vector<float> skew;
  for (int k = 0; k < 20000; ++k) skew.push_back(static_cast<float>(std::pow(k / 19999.0, 3.0) * 7.0 + 0.1));
  const Volume sv = line_volume(skew);
  const LandmarkModel own = fit_histogram_landmarks(std::vector<Volume>{sv});
  const auto own_sorted = sorted_brain_intensities(apply_histogram_standardization(sv, own));
  for (std::size_t k = 0; k < own.percentiles.size(); ++k) {
    CHECK(percentile_sorted(own_sorted, own.percentiles[k]) == doctest::Approx(own.landmarks[k]).epsilon(1e-4));
  }

  // Mapped onto another scale, its landmarks land on the target's. The
  // order-statistic interpolation around each breakpoint leaves an error of
  // the order of the sample spacing.
  const LandmarkModel& target = identity;
  const auto sorted = sorted_brain_intensities(apply_histogram_standardization(sv, target));
  for (std::size_t k = 0; k < target.percentiles.size(); ++k) {
    CHECK(percentile_sorted(sorted, target.percentiles[k]) == doctest::Approx(target.landmarks[k]).epsilon(1e-3));
  }

  // Monotone for random fitted models.
  std::mt19937_64 rng(1);
  std::gamma_distribution<float> g(2.0f, 1.0f);
  for (int t = 0; t < 5; ++t) {
    std::vector<Volume> train;
    for (int s = 0; s < 3; ++s) {
      std::vector<float> vals(300);
      for (auto& x : vals) x = g(rng) + 0.01f;
      train.push_back(line_volume(vals));
    }
    const LandmarkModel lm = fit_histogram_landmarks(train);
    std::vector<float> probe(400);
    for (std::size_t k = 0; k < probe.size(); ++k) probe[k] = 0.02f * static_cast<float>(k) + 0.01f;
    const Volume out = apply_histogram_standardization(line_volume(probe), lm);
    for (std::size_t k = 1; k < probe.size(); ++k) CHECK(out.intensities.data[k] >= out.intensities.data[k - 1]);
  }

  CHECK_THROWS_AS(apply_histogram_standardization(line_volume(iota_values(0, 100), Modality::T2), identity),
                  ModalityMismatchError);
}

TEST_CASE("landmark model JSON round trip") {
  const auto dir = testing::temp_dir("lm");
  const LandmarkModel m = fit_histogram_landmarks(std::vector<Volume>{line_volume(iota_values(1, 50))});
  m.save(dir / "lm.json");
  const LandmarkModel back = LandmarkModel::load(dir / "lm.json");
  CHECK(back.landmarks == m.landmarks);
  CHECK(back.percentiles == m.percentiles);
  CHECK(back.modality == m.modality);
  std::ofstream(dir / "bad.json") << R"({"modality":"T1","standard_scale":[2,10],"landmarks":[1],"version":1})";
  CHECK_THROWS_AS(LandmarkModel::load(dir / "bad.json"), ValidationError);
}
