#include "patch2loc/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "nifti.hpp"
#include "patch2loc/error.hpp"

namespace patch2loc {
namespace {

constexpr const char* kNativeFormat = "patch2loc-raw";

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct NativePaths {
  fs::path header;
  fs::path data;
};

NativePaths native_paths(const fs::path& path) {
  fs::path stem = path;
  const auto ext = path.extension();
  if (ext == ".json" || ext == ".raw") stem.replace_extension();
  fs::path header = stem;
  header += ".json";
  fs::path data = stem;
  data += ".raw";
  return {header, data};
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON header " + path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

template <class T>
void write_raw(const fs::path& path, const std::vector<T>& values) {
  static_assert(std::endian::native == std::endian::little);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(T)));
  if (!out) throw IoError("failed writing " + path.string());
}

template <class T>
std::vector<T> read_raw(const fs::path& path, std::size_t n) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<T> values(n);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(T)));
  if (in.gcount() != static_cast<std::streamsize>(n * sizeof(T))) {
    throw IoError(path.string() + " is shorter than its header declares");
  }
  in.peek();
  if (!in.eof()) throw IoError(path.string() + " is longer than its header declares");
  return values;
}

struct NativeHeader {
  Extents extents;
  std::string dtype;
  std::optional<Modality> modality;
  std::string subject_id;
  fs::path data;
};

NativeHeader read_native_header(const fs::path& path) {
  const NativePaths paths = native_paths(path);
  const auto j = read_json(paths.header);
  NativeHeader h;
  try {
    if (j.value("format", std::string{}) != kNativeFormat) {
      throw IoError(paths.header.string() + " is not a " + kNativeFormat + " header");
    }
    const auto shape = j.at("shape").get<std::vector<int>>();
    if (shape.size() != 3) throw IoError(paths.header.string() + ": shape must have three entries");
    h.extents = Extents{shape[0], shape[1], shape[2]};
    if (!h.extents.positive()) throw IoError(paths.header.string() + ": non-positive shape");
    h.dtype = j.at("dtype").get<std::string>();
    if (j.contains("modality")) h.modality = parse_modality(j.at("modality").get<std::string>());
    h.subject_id = j.value("subject_id", std::string{});
    h.data = paths.header.parent_path() / j.value("data", paths.data.filename().string());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed header " + paths.header.string() + ": " + e.what());
  }
  return h;
}

void write_native(const fs::path& path, const Extents& e, const std::string& dtype, Modality modality,
                  const std::string& subject_id, const nlohmann::json& extra) {
  const NativePaths paths = native_paths(path);
  nlohmann::json j = extra.is_object() ? extra : nlohmann::json::object();
  j["format"] = kNativeFormat;
  j["version"] = 1;
  j["shape"] = {e.e1, e.e2, e.e3};
  j["dtype"] = dtype;
  j["byte_order"] = "little";
  j["axis_order"] = "axis1-fastest";
  j["modality"] = std::string(to_string(modality));
  j["subject_id"] = subject_id;
  j["data"] = paths.data.filename().string();
  write_text(paths.header, j.dump(2) + "\n");
}

std::string nifti_description(Modality modality, const std::string& subject_id) {
  return "patch2loc;modality=" + std::string(to_string(modality)) + ";subject=" + subject_id;
}

void parse_nifti_description(const std::string& d, std::optional<Modality>& modality, std::string& subject) {
  if (d.rfind("patch2loc;", 0) != 0) return;
  std::size_t pos = 0;
  while (pos < d.size()) {
    const std::size_t end = std::min(d.find(';', pos), d.size());
    const std::string item = d.substr(pos, end - pos);
    if (item.rfind("modality=", 0) == 0) modality = parse_modality(item.substr(9));
    if (item.rfind("subject=", 0) == 0) subject = item.substr(8);
    pos = end + 1;
  }
}

std::string default_subject_id(const fs::path& path) {
  std::string name = path.filename().string();
  for (const char* ext : {".nii.gz", ".nii", ".json", ".raw"}) {
    if (ends_with(name, ext)) return name.substr(0, name.size() - std::strlen(ext));
  }
  return name;
}

}  // namespace

VolumeFormat detect_format(const fs::path& path) {
  const std::string name = path.filename().string();
  if (ends_with(name, ".nii") || ends_with(name, ".nii.gz")) return VolumeFormat::Nifti;
  return VolumeFormat::Native;
}

Volume load_volume(const fs::path& path, const std::optional<fs::path>& mask_path, std::optional<Modality> modality) {
  Volume v;
  std::optional<Modality> recorded;
  if (detect_format(path) == VolumeFormat::Nifti) {
    auto img = nifti::read(path);
    v.intensities.extents = img.extents;
    v.intensities.data = std::move(img.values);
    parse_nifti_description(img.description, recorded, v.subject_id);
  } else {
    const NativeHeader h = read_native_header(path);
    if (h.dtype != "float32") throw IoError(path.string() + ": intensity grids must be float32");
    v.intensities.extents = h.extents;
    v.intensities.data = read_raw<float>(h.data, h.extents.voxels());
    recorded = h.modality;
    v.subject_id = h.subject_id;
  }
  if (v.subject_id.empty()) v.subject_id = default_subject_id(path);
  v.modality = modality.value_or(recorded.value_or(Modality::Other));

  if (mask_path) {
    v.brain_mask = load_mask(*mask_path);
    if (!(v.brain_mask.extents == v.intensities.extents)) {
      throw ShapeMismatchError("mask " + mask_path->string() + " shape differs from " + path.string());
    }
  } else {
    v.brain_mask = Grid3<std::uint8_t>(v.intensities.extents);
    std::transform(v.intensities.data.begin(), v.intensities.data.end(), v.brain_mask.data.begin(),
                   [](float x) { return static_cast<std::uint8_t>(x > 0.0f); });
  }
  v.validate();
  return v;
}

void save_volume(const Volume& v, const fs::path& path) {
  if (detect_format(path) == VolumeFormat::Nifti) {
    nifti::write(path, v.extents(), v.intensities.data, nifti_description(v.modality, v.subject_id));
    return;
  }
  write_native(path, v.extents(), "float32", v.modality, v.subject_id, nlohmann::json::object());
  write_raw(native_paths(path).data, v.intensities.data);
}

void save_mask(const Grid3<std::uint8_t>& mask, const fs::path& path, Modality modality,
               const std::string& subject_id) {
  if (detect_format(path) == VolumeFormat::Nifti) {
    nifti::write(path, mask.extents, mask.data, nifti_description(modality, subject_id));
    return;
  }
  write_native(path, mask.extents, "uint8", modality, subject_id, nlohmann::json::object());
  write_raw(native_paths(path).data, mask.data);
}

Grid3<std::uint8_t> load_mask(const fs::path& path) {
  Grid3<std::uint8_t> mask;
  if (detect_format(path) == VolumeFormat::Nifti) {
    const auto img = nifti::read(path);
    mask.extents = img.extents;
    mask.data.resize(img.values.size());
    std::transform(img.values.begin(), img.values.end(), mask.data.begin(),
                   [](float x) { return static_cast<std::uint8_t>(x != 0.0f); });
    return mask;
  }
  const NativeHeader h = read_native_header(path);
  if (h.dtype != "uint8") throw IoError(path.string() + ": mask grids must be uint8");
  mask.extents = h.extents;
  mask.data = read_raw<std::uint8_t>(h.data, h.extents.voxels());
  for (auto& m : mask.data) m = m != 0;
  return mask;
}

GroundTruthMask load_ground_truth(const fs::path& path, const Extents& expected) {
  GroundTruthMask gt{load_mask(path)};
  if (!(gt.labels.extents == expected)) {
    throw ShapeMismatchError("ground truth " + path.string() + " does not match the volume shape");
  }
  return gt;
}

void save_grid(const Grid3<float>& grid, const fs::path& path, const nlohmann::json& extra) {
  if (detect_format(path) == VolumeFormat::Nifti) {
    nifti::write(path, grid.extents, grid.data, "patch2loc;grid");
    return;
  }
  write_native(path, grid.extents, "float32", Modality::Other, extra.value("subject_id", std::string{}), extra);
  write_raw(native_paths(path).data, grid.data);
}

Grid3<float> load_grid(const fs::path& path) {
  Grid3<float> grid;
  if (detect_format(path) == VolumeFormat::Nifti) {
    auto img = nifti::read(path);
    grid.extents = img.extents;
    grid.data = std::move(img.values);
    return grid;
  }
  const NativeHeader h = read_native_header(path);
  if (h.dtype != "float32") throw IoError(path.string() + ": grids must be float32");
  grid.extents = h.extents;
  grid.data = read_raw<float>(h.data, h.extents.voxels());
  return grid;
}

double percentile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ValidationError("percentile of an empty sample");
  if (!(q >= 0.0 && q <= 100.0)) throw ValidationError("percentile must lie in [0, 100]");
  const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

double percentile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  return percentile_sorted(values, q);
}

std::vector<double> sorted_brain_intensities(const Volume& v) {
  std::vector<double> values;
  values.reserve(v.brain_voxels());
  for (std::size_t i = 0; i < v.intensities.data.size(); ++i) {
    if (v.brain_mask.data[i]) values.push_back(v.intensities.data[i]);
  }
  std::sort(values.begin(), values.end());
  return values;
}

Volume normalize_percentile(const Volume& v, double q) {
  const auto values = sorted_brain_intensities(v);
  if (values.empty()) throw DegenerateVolumeError("volume '" + v.subject_id + "' has no brain voxels");
  const double divisor = percentile_sorted(values, q);
  if (!(divisor > 0.0)) {
    throw DegenerateVolumeError("the " + std::to_string(q) + "th in-mask percentile of '" + v.subject_id +
                                "' is zero");
  }
  Volume out = v;
  for (float& x : out.intensities.data) x = static_cast<float>(x / divisor);
  return out;
}

void write_text_file(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace patch2loc
