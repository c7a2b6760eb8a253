#include "patch2loc/phantom.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "patch2loc/error.hpp"
#include "patch2loc/rng.hpp"

namespace patch2loc {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kPlacementAttempts = 2000;

struct Frame {
  double c1, c2, c3;
  double r1, r2, r3;
};

Frame frame_of(const Extents& e) {
  return {0.5 * (e.e1 - 1), 0.5 * (e.e2 - 1), 0.5 * (e.e3 - 1), 0.42 * e.e1, 0.46 * e.e2, 0.44 * e.e3};
}

struct Coords {
  double u, v, w, rho;
};

Coords coords_of(const Frame& f, int l1, int l2, int l3) {
  Coords c;
  c.u = (l1 - f.c1) / f.r1;
  c.v = (l2 - f.c2) / f.r2;
  c.w = (l3 - f.c3) / f.r3;
  c.rho = std::sqrt(c.u * c.u + c.v * c.v + c.w * c.w);
  return c;
}

// Mirror-symmetric part: depends on |u| only.
double symmetric_field(const Coords& c, double ts) {
  const double au = std::abs(c.u);
  return 0.9 + 0.3 * (1.0 - c.rho * c.rho) + 0.15 * std::cos(kTwoPi * 2.5 * c.rho * ts) + 0.12 * c.v + 0.10 * c.w +
         0.08 * std::cos(3.0 * std::atan2(c.v, au));
}

// Left/right marker: a signed ramp plus stripes on one hemisphere.
double marker_field(const Coords& c, double ts) {
  const double side = 1.0 / (1.0 + std::exp(-8.0 * c.u));
  return 0.15 * std::tanh(3.0 * c.u) + 0.10 * side * std::cos(kTwoPi * 3.0 * (c.v + c.w) * ts);
}

// Smooth per-subject perturbation, symmetric in u.
struct Perturbation {
  std::array<double, 4> amp{};
  std::array<std::array<double, 3>, 4> freq{};
  std::array<double, 4> phase{};
  double gain = 1.0;

  double operator()(const Coords& c) const {
    double p = 0.0;
    const double au = std::abs(c.u);
    for (int k = 0; k < 4; ++k) {
      p += amp[k] * std::cos(kTwoPi * (freq[k][0] * au + freq[k][1] * c.v + freq[k][2] * c.w) + phase[k]);
    }
    return p;
  }
};

Perturbation draw_perturbation(Rng& rng) {
  std::uniform_real_distribution<double> amp(0.01, 0.03);
  std::uniform_real_distribution<double> freq(0.2, 0.8);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  std::normal_distribution<double> gain(1.0, 0.02);
  Perturbation p;
  for (int k = 0; k < 4; ++k) {
    p.amp[k] = amp(rng);
    for (auto& f : p.freq[k]) f = freq(rng);
    p.phase[k] = phase(rng);
  }
  p.gain = gain(rng);
  return p;
}

}  // namespace

void PhantomConfig::validate(double r) const {
  if (!extents.positive()) throw ValidationError("phantom extents must be positive");
  const auto side1 = std::lround(r * extents.e1);
  const auto side2 = std::lround(r * extents.e2);
  if (side1 < 2 || side2 < 2 || extents.e1 < 4 * side1 || extents.e2 < 4 * side2) {
    throw ValidationError("phantom extents must be at least four patch sides in-plane");
  }
  if (extents.e3 < 4) throw ValidationError("phantom needs at least 4 axial slices");
  if (!(texture_scale > 0.0) || !std::isfinite(texture_scale)) throw ValidationError("texture_scale must be positive");
  if (!(asymmetry_strength >= 0.0 && asymmetry_strength <= 1.0)) {
    throw ValidationError("asymmetry_strength must lie in [0, 1]");
  }
  if (lesion_count < 0) throw ValidationError("lesion_count must be >= 0");
  if (!(lesion_radius_range[0] > 0.0) || !(lesion_radius_range[1] >= lesion_radius_range[0])) {
    throw ValidationError("lesion radii must be positive with min <= max");
  }
  if (!std::isfinite(lesion_contrast)) throw ValidationError("lesion_contrast must be finite");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ValidationError("noise_sigma must be >= 0");
}

nlohmann::json PhantomConfig::to_json() const {
  return {{"extents", {extents.e1, extents.e2, extents.e3}},
          {"texture_scale", texture_scale},
          {"asymmetry_strength", asymmetry_strength},
          {"lesion_count", lesion_count},
          {"lesion_radius_range", lesion_radius_range},
          {"lesion_contrast", lesion_contrast},
          {"noise_sigma", noise_sigma},
          {"seed", seed},
          {"modality", std::string(to_string(modality))}};
}

PhantomConfig PhantomConfig::from_json(const nlohmann::json& j, PhantomConfig c) {
  for (const auto& [key, val] : j.items()) {
    if (key == "extents") {
      const auto e = val.get<std::vector<int>>();
      if (e.size() != 3) throw ValidationError("phantom extents need three values");
      c.extents = {e[0], e[1], e[2]};
    } else if (key == "texture_scale") {
      c.texture_scale = val.get<double>();
    } else if (key == "asymmetry_strength") {
      c.asymmetry_strength = val.get<double>();
    } else if (key == "lesion_count") {
      c.lesion_count = val.get<int>();
    } else if (key == "lesion_radius_range") {
      const auto r = val.get<std::vector<double>>();
      if (r.size() != 2) throw ValidationError("lesion_radius_range needs two values");
      c.lesion_radius_range = {r[0], r[1]};
    } else if (key == "lesion_contrast") {
      c.lesion_contrast = val.get<double>();
    } else if (key == "noise_sigma") {
      c.noise_sigma = val.get<double>();
    } else if (key == "seed") {
      c.seed = val.get<std::uint64_t>();
    } else if (key == "modality") {
      c.modality = parse_modality(val.get<std::string>());
    } else {
      throw ValidationError("unknown phantom key '" + key + "'");
    }
  }
  return c;
}

double phantom_base_field(const PhantomConfig& cfg, int l1, int l2, int l3) {
  const Frame f = frame_of(cfg.extents);
  const Coords c = coords_of(f, l1, l2, l3);
  if (c.rho > 1.0) return 0.0;
  return symmetric_field(c, cfg.texture_scale) + cfg.asymmetry_strength * marker_field(c, cfg.texture_scale);
}

Phantom generate_phantom(const PhantomConfig& cfg) {
  cfg.validate();
  const Extents& e = cfg.extents;
  const Frame f = frame_of(e);
  Rng rng(cfg.seed);
  const Perturbation pert = draw_perturbation(rng);
  std::normal_distribution<double> noise(0.0, 1.0);

  Phantom ph;
  ph.seed = cfg.seed;
  Volume& vol = ph.volume;
  vol.intensities = Grid3<float>(e, 0.0f);
  vol.brain_mask = Grid3<std::uint8_t>(e, 0);
  vol.modality = cfg.modality;
  vol.subject_id = cfg.subject_id;
  ph.truth.labels = Grid3<std::uint8_t>(e, 0);

  double sum = 0.0;
  std::size_t count = 0;
  for (int l3 = 0; l3 < e.e3; ++l3) {
    for (int l2 = 0; l2 < e.e2; ++l2) {
      for (int l1 = 0; l1 < e.e1; ++l1) {
        const Coords c = coords_of(f, l1, l2, l3);
        if (c.rho > 1.0) continue;
        const double base = symmetric_field(c, cfg.texture_scale) +
                            cfg.asymmetry_strength * marker_field(c, cfg.texture_scale);
        const double value = pert.gain * (base + pert(c)) + cfg.noise_sigma * noise(rng);
        vol.intensities(l1, l2, l3) = static_cast<float>(std::max(value, 0.01));
        vol.brain_mask(l1, l2, l3) = 1;
        sum += value;
        ++count;
      }
    }
  }
  if (count == 0) throw ValidationError("phantom brain is empty");
  const double mean = sum / static_cast<double>(count);

  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> radius(cfg.lesion_radius_range[0], cfg.lesion_radius_range[1]);
  for (int k = 0; k < cfg.lesion_count; ++k) {
    Lesion lesion;
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      for (auto& r : lesion.radii) r = radius(rng);
      lesion.centre = {f.c1 + 0.8 * f.r1 * unit(rng), f.c2 + 0.8 * f.r2 * unit(rng), f.c3 + 0.8 * f.r3 * unit(rng)};
      // Every voxel of the ellipsoid's bounding box that lies inside the
      // ellipsoid must be brain, with a one-voxel margin.
      placed = true;
      for (int l3 = static_cast<int>(std::floor(lesion.centre[2] - lesion.radii[2] - 1));
           placed && l3 <= static_cast<int>(std::ceil(lesion.centre[2] + lesion.radii[2] + 1)); ++l3) {
        for (int l2 = static_cast<int>(std::floor(lesion.centre[1] - lesion.radii[1] - 1));
             placed && l2 <= static_cast<int>(std::ceil(lesion.centre[1] + lesion.radii[1] + 1)); ++l2) {
          for (int l1 = static_cast<int>(std::floor(lesion.centre[0] - lesion.radii[0] - 1));
               placed && l1 <= static_cast<int>(std::ceil(lesion.centre[0] + lesion.radii[0] + 1)); ++l1) {
            const double d1 = (l1 - lesion.centre[0]) / (lesion.radii[0] + 1.0);
            const double d2 = (l2 - lesion.centre[1]) / (lesion.radii[1] + 1.0);
            const double d3 = (l3 - lesion.centre[2]) / (lesion.radii[2] + 1.0);
            if (d1 * d1 + d2 * d2 + d3 * d3 > 1.0) continue;
            if (l1 < 0 || l2 < 0 || l3 < 0 || l1 >= e.e1 || l2 >= e.e2 || l3 >= e.e3 ||
                vol.brain_mask(l1, l2, l3) == 0) {
              placed = false;
            }
          }
        }
      }
    }
    if (!placed) {
      throw Error("could not place lesion " + std::to_string(k) + " inside the brain after " +
                  std::to_string(kPlacementAttempts) + " attempts");
    }

    const double target = mean + cfg.lesion_contrast;
    for (int l3 = 0; l3 < e.e3; ++l3) {
      for (int l2 = 0; l2 < e.e2; ++l2) {
        for (int l1 = 0; l1 < e.e1; ++l1) {
          const double d1 = (l1 - lesion.centre[0]) / lesion.radii[0];
          const double d2 = (l2 - lesion.centre[1]) / lesion.radii[1];
          const double d3 = (l3 - lesion.centre[2]) / lesion.radii[2];
          if (d1 * d1 + d2 * d2 + d3 * d3 > 1.0) continue;
          float& x = vol.intensities(l1, l2, l3);
          const double blended = 0.15 * x + 0.85 * target + 3.0 * cfg.noise_sigma * noise(rng);
          x = static_cast<float>(std::max(blended, 0.01));
          if (ph.truth.labels(l1, l2, l3) == 0) ++lesion.voxels;
          ph.truth.labels(l1, l2, l3) = 1;
        }
      }
    }
    ph.lesions.push_back(lesion);
  }
  return ph;
}

std::vector<Phantom> generate_cohort(int n, const PhantomConfig& cfg, const std::string& prefix) {
  if (n < 0) throw ValidationError("cohort size must be >= 0");
  cfg.validate();
  std::vector<Phantom> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    PhantomConfig c = cfg;
    c.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(i));
    char id[64];
    std::snprintf(id, sizeof id, "%s_%03d", prefix.c_str(), i);
    c.subject_id = id;
    out.push_back(generate_phantom(c));
  }
  return out;
}

nlohmann::json cohort_manifest(const std::vector<Phantom>& cohort, const PhantomConfig& cfg) {
  nlohmann::json subjects = nlohmann::json::array();
  for (const auto& p : cohort) {
    const std::size_t brain = p.volume.brain_voxels();
    const std::size_t lesion = p.truth.positives();
    nlohmann::json lesions = nlohmann::json::array();
    for (const auto& l : p.lesions) lesions.push_back({{"centre", l.centre}, {"radii", l.radii}, {"voxels", l.voxels}});
    subjects.push_back({{"subject_id", p.volume.subject_id},
                        {"seed", p.seed},
                        {"brain_voxels", brain},
                        {"lesion_voxels", lesion},
                        {"prevalence", brain ? static_cast<double>(lesion) / static_cast<double>(brain) : 0.0},
                        {"lesions", lesions}});
  }
  return {{"format", "patch2loc-phantom-cohort"}, {"version", 1}, {"config", cfg.to_json()}, {"subjects", subjects}};
}

}  // namespace patch2loc
