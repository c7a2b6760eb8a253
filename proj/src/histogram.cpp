#include <algorithm>
#include <fstream>

#include "patch2loc/error.hpp"
#include "patch2loc/volume_io.hpp"

namespace patch2loc {
namespace {

std::vector<double> landmarks_of(const Volume& v, const std::vector<double>& percentiles) {
  const auto values = sorted_brain_intensities(v);
  if (values.empty()) throw DegenerateVolumeError("volume '" + v.subject_id + "' has no brain voxels");
  std::vector<double> out;
  out.reserve(percentiles.size());
  for (double q : percentiles) out.push_back(percentile_sorted(values, q));
  return out;
}

}  // namespace

std::vector<double> default_landmark_percentiles() { return {2, 10, 20, 30, 40, 50, 60, 70, 80, 90, 98}; }

nlohmann::json LandmarkModel::to_json() const {
  return {{"modality", std::string(patch2loc::to_string(modality))},
          {"standard_scale", percentiles},
          {"landmarks", landmarks},
          {"version", version}};
}

LandmarkModel LandmarkModel::from_json(const nlohmann::json& j) {
  LandmarkModel m;
  try {
    m.modality = parse_modality(j.at("modality").get<std::string>());
    m.percentiles = j.at("standard_scale").get<std::vector<double>>();
    m.landmarks = j.at("landmarks").get<std::vector<double>>();
    m.version = j.value("version", 1);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed landmark model: ") + e.what());
  }
  if (m.percentiles.size() != m.landmarks.size() || m.landmarks.size() < 2) {
    throw ValidationError("landmark model needs matching standard_scale/landmarks of length >= 2");
  }
  if (!std::is_sorted(m.landmarks.begin(), m.landmarks.end())) {
    throw ValidationError("landmarks must be non-decreasing");
  }
  return m;
}

void LandmarkModel::save(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << to_json().dump(2) << "\n";
}

LandmarkModel LandmarkModel::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("malformed landmark file " + path.string() + ": " + e.what());
  }
}

LandmarkModel fit_histogram_landmarks(std::span<const Volume> training) {
  if (training.empty()) throw ValidationError("histogram standardization needs at least one training volume");
  LandmarkModel m;
  m.modality = training.front().modality;
  m.percentiles = default_landmark_percentiles();
  m.landmarks.assign(m.percentiles.size(), 0.0);
  for (const Volume& v : training) {
    if (v.modality != m.modality) {
      throw ModalityMismatchError("cannot fit one landmark model on mixed modalities (" +
                                  std::string(to_string(m.modality)) + " and " + std::string(to_string(v.modality)) +
                                  ")");
    }
    const auto own = landmarks_of(v, m.percentiles);
    for (std::size_t k = 0; k < own.size(); ++k) m.landmarks[k] += own[k];
  }
  for (double& x : m.landmarks) x /= static_cast<double>(training.size());
  return m;
}

Volume apply_histogram_standardization(const Volume& v, const LandmarkModel& m) {
  if (v.modality != m.modality) {
    throw ModalityMismatchError("landmark model was fitted for " + std::string(to_string(m.modality)) +
                                " but volume '" + v.subject_id + "' is " + std::string(to_string(v.modality)));
  }
  const auto source = landmarks_of(v, m.percentiles);
  const auto& target = m.landmarks;
  const std::size_t n = source.size();

  // Collapse zero-width source segments so the map stays a function.
  std::vector<double> xs;
  std::vector<double> ys;
  for (std::size_t k = 0; k < n; ++k) {
    if (!xs.empty() && source[k] <= xs.back()) {
      ys.back() = std::max(ys.back(), target[k]);
      continue;
    }
    xs.push_back(source[k]);
    ys.push_back(target[k]);
  }

  auto remap = [&](double x) {
    if (xs.size() == 1) return ys[0] + (x - xs[0]);
    std::size_t seg = 0;
    if (x >= xs.back()) {
      seg = xs.size() - 2;
    } else if (x > xs.front()) {
      seg = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), x) - xs.begin()) - 1;
    }
    const double slope = (ys[seg + 1] - ys[seg]) / (xs[seg + 1] - xs[seg]);
    return ys[seg] + slope * (x - xs[seg]);
  };

  Volume out = v;
  for (std::size_t i = 0; i < out.intensities.data.size(); ++i) {
    if (!out.brain_mask.data[i]) continue;
    out.intensities.data[i] = static_cast<float>(std::max(0.0, remap(out.intensities.data[i])));
  }
  return out;
}

}  // namespace patch2loc
