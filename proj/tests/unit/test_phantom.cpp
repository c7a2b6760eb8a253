#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "patch2loc/error.hpp"
#include "patch2loc/patch_sampler.hpp"
#include "patch2loc/phantom.hpp"
#include "patch2loc/volume_io.hpp"

using namespace patch2loc;

namespace {

PhantomConfig small_config(std::uint64_t seed, int lesions = 0) {
  PhantomConfig cfg;
  cfg.extents = {96, 96, 24};
  cfg.seed = seed;
  cfg.lesion_count = lesions;
  return cfg;
}

}  // namespace

TEST_CASE("config validation and json") {
  PhantomConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.extents = {10, 96, 64};
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = PhantomConfig{};
  cfg.lesion_radius_range = {0.0, 3.0};
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = PhantomConfig{};
  cfg.asymmetry_strength = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);

  cfg = PhantomConfig{};
  cfg.lesion_count = 5;
  cfg.seed = 99;
  cfg.extents = {64, 80, 32};
  const auto back = PhantomConfig::from_json(cfg.to_json());
  CHECK(back.lesion_count == 5);
  CHECK(back.seed == 99);
  CHECK(back.extents == cfg.extents);
  CHECK_THROWS_AS(PhantomConfig::from_json(nlohmann::json{{"lesion_cnt", 3}}), ValidationError);
}

TEST_CASE("zero lesions give an empty ground truth") {
  const auto p = generate_phantom(small_config(1, 0));
  CHECK(p.truth.empty());
  CHECK(p.lesions.empty());
  CHECK(p.volume.extents() == Extents{96, 96, 24});
  CHECK_NOTHROW(p.volume.validate());
}

TEST_CASE("same seed is bit identical, different seeds differ") {
  const auto a = generate_phantom(small_config(5, 2));
  const auto b = generate_phantom(small_config(5, 2));
  const auto c = generate_phantom(small_config(6, 2));
  CHECK(a.volume.intensities.data == b.volume.intensities.data);
  CHECK(a.truth.labels.data == b.truth.labels.data);
  CHECK(a.volume.intensities.data != c.volume.intensities.data);
}

TEST_CASE("symmetric phantoms mirror across the mid-sagittal plane") {
  auto cfg = small_config(3);
  cfg.asymmetry_strength = 0.0;
  const auto e = cfg.extents;

  // Noise-free field: exact mirror symmetry.
  double max_sym = 0.0;
  for (int l3 = 0; l3 < e.e3; l3 += 3)
    for (int l2 = 0; l2 < e.e2; ++l2)
      for (int l1 = 0; l1 < e.e1; ++l1)
        max_sym = std::max(max_sym, std::abs(phantom_base_field(cfg, l1, l2, l3) -
                                             phantom_base_field(cfg, e.e1 - 1 - l1, l2, l3)));
  CHECK(max_sym < 1e-12);

  auto asym = cfg;
  asym.asymmetry_strength = 1.0;
  double max_asym = 0.0;
  for (int l2 = 0; l2 < e.e2; ++l2)
    for (int l1 = 0; l1 < e.e1; ++l1)
      max_asym = std::max(max_asym, std::abs(phantom_base_field(asym, l1, l2, 12) -
                                             phantom_base_field(asym, e.e1 - 1 - l1, l2, 12)));
  CHECK(max_asym > 0.1);

  // Generated volume: mirror differences are pure noise, so their RMS is
  // sigma * sqrt(2) inside the brain.
  const auto p = generate_phantom(cfg);
  const auto& v = p.volume;
  double ss = 0.0;
  std::size_t n = 0;
  for (int l3 = 0; l3 < e.e3; ++l3)
    for (int l2 = 0; l2 < e.e2; ++l2)
      for (int l1 = 0; l1 < e.e1 / 2; ++l1) {
        const int m1 = e.e1 - 1 - l1;
        REQUIRE(v.brain_mask(l1, l2, l3) == v.brain_mask(m1, l2, l3));
        if (!v.brain_mask(l1, l2, l3)) continue;
        const double d = v.intensities(l1, l2, l3) - v.intensities(m1, l2, l3);
        ss += d * d;
        ++n;
      }
  const double rms = std::sqrt(ss / n);
  const double gain_free = cfg.noise_sigma * std::sqrt(2.0);
  MESSAGE("mirror rms " << rms << " vs noise " << gain_free);
  CHECK(rms < 1.15 * gain_free);
  CHECK(rms > 0.85 * gain_free);

  auto clean = cfg;
  clean.noise_sigma = 0.0;
  const auto q = generate_phantom(clean);
  float worst = 0.0f;
  for (int l3 = 0; l3 < e.e3; ++l3)
    for (int l2 = 0; l2 < e.e2; ++l2)
      for (int l1 = 0; l1 < e.e1; ++l1)
        worst = std::max(worst, std::abs(q.volume.intensities(l1, l2, l3) - q.volume.intensities(e.e1 - 1 - l1, l2, l3)));
  CHECK(worst < 1e-5f);
}

TEST_CASE("cohorts") {
  auto cfg = small_config(10);
  const auto cohort = generate_cohort(10, cfg, "subj");
  REQUIRE(cohort.size() == 10);
  CHECK(cohort[3].volume.subject_id == "subj_003");
  for (const auto& p : cohort) CHECK(p.truth.empty());
  for (std::size_t i = 0; i < cohort.size(); ++i)
    for (std::size_t j = i + 1; j < cohort.size(); ++j) {
      CHECK(cohort[i].seed != cohort[j].seed);
      CHECK(cohort[i].volume.intensities.data != cohort[j].volume.intensities.data);
    }

  // In-mask deciles agree across subjects within 10% of the cohort mean.
  std::vector<std::vector<double>> deciles;
  for (const auto& p : cohort) {
    const auto sorted = sorted_brain_intensities(p.volume);
    std::vector<double> d;
    for (int k = 1; k <= 9; ++k) d.push_back(percentile_sorted(sorted, 10.0 * k));
    deciles.push_back(d);
  }
  for (int k = 0; k < 9; ++k) {
    double mean = 0;
    for (const auto& d : deciles) mean += d[k] / deciles.size();
    for (const auto& d : deciles) CHECK(std::abs(d[k] - mean) <= 0.10 * mean);
  }

  const auto manifest = cohort_manifest(cohort, cfg);
  CHECK(manifest["subjects"].size() == 10);
  CHECK(manifest["subjects"][0]["subject_id"] == "subj_000");
  CHECK(manifest["subjects"][0]["lesion_voxels"] == 0);
  CHECK(manifest["config"]["lesion_count"] == 0);
}

TEST_CASE("lesions lie inside the mask and stay rare") {
  PhantomConfig cfg;  // full 96 x 96 x 64 defaults
  const auto cohort = generate_cohort(6, cfg, "les");
  for (const auto& p : cohort) {
    REQUIRE(p.lesions.size() == static_cast<std::size_t>(cfg.lesion_count));
    std::size_t inside = 0;
    for (std::size_t i = 0; i < p.truth.labels.data.size(); ++i) {
      if (p.truth.labels.data[i]) {
        REQUIRE(p.volume.brain_mask.data[i] == 1);
        ++inside;
      }
    }
    CHECK(inside > 0);
    const double prevalence = static_cast<double>(inside) / p.volume.brain_voxels();
    CHECK(prevalence < 0.05);
    std::size_t sum = 0;
    for (const auto& l : p.lesions) sum += l.voxels;
    CHECK(sum >= inside);
  }

  cfg.lesion_radius_range = {40.0, 45.0};
  cfg.extents = {96, 96, 64};
  CHECK_THROWS_AS(generate_phantom(cfg), Error);
}

TEST_CASE("locations are identifiable by nearest neighbour") {
  PhantomConfig cfg;
  cfg.asymmetry_strength = 1.0;
  cfg.lesion_count = 0;
  cfg.seed = 77;
  const auto cohort = generate_cohort(5, cfg, "nn");
  const PatchSpec spec;
  const auto shape = patch_size(spec, cfg.extents);
  const auto& query = cohort.front().volume;

  std::mt19937_64 rng(1);
  int hits = 0, total = 0;
  for (int l3 : {12, 24, 32, 40, 52}) {
    struct Entry {
      std::vector<float> px;
      double y1, y2;
    };
    std::vector<Entry> bank;
    for (std::size_t s = 1; s < cohort.size(); ++s) {
      const auto& v = cohort[s].volume;
      for (int l2 = 0; l2 < cfg.extents.e2; l2 += 2)
        for (int l1 = 0; l1 < cfg.extents.e1; l1 += 2) {
          if (brain_fraction(v, l1, l2, l3, shape) < spec.brain_fraction_min) continue;
          const auto p = extract_patch(v, l1, l2, l3, spec);
          bank.push_back({p.pixels.data, p.location.y1, p.location.y2});
        }
    }
    std::uniform_int_distribution<int> c1(0, cfg.extents.e1 - 1), c2(0, cfg.extents.e2 - 1);
    int drawn = 0;
    while (drawn < 60) {
      const int l1 = c1(rng), l2 = c2(rng);
      if (brain_fraction(query, l1, l2, l3, shape) < spec.brain_fraction_min) continue;
      ++drawn;
      const auto q = extract_patch(query, l1, l2, l3, spec);
      double best = std::numeric_limits<double>::infinity();
      const Entry* arg = nullptr;
      for (const auto& b : bank) {
        double d = 0;
        for (std::size_t i = 0; i < b.px.size(); ++i) {
          const double t = b.px[i] - q.pixels.data[i];
          d += t * t;
        }
        if (d < best) {
          best = d;
          arg = &b;
        }
      }
      const double err = std::hypot(arg->y1 - q.location.y1, arg->y2 - q.location.y2);
      hits += err <= 15.0;
      ++total;
    }
  }
  const double rate = static_cast<double>(hits) / total;
  MESSAGE("nearest-neighbour identifiability " << rate);
  CHECK(rate >= 0.80);
}
