#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "patch2loc/error.hpp"
#include "patch2loc/loc_model.hpp"

namespace patch2loc {
namespace {

constexpr char kMagic[8] = {'P', '2', 'L', 'C', 'K', 'P', 'T', '\0'};

nlohmann::json metadata_json(const ModelMetadata& m) {
  nlohmann::json j = {{"training_step", m.training_step},
                      {"seed", m.seed},
                      {"modality", std::string(to_string(m.modality))},
                      {"normalization_percentile", m.normalization_percentile},
                      {"slice_coordinate", "percent [0,100], unscaled"},
                      {"run_config", m.run_config}};
  j["background_fill"] = m.background_fill ? nlohmann::json(*m.background_fill) : nlohmann::json(nullptr);
  j["landmarks"] = m.landmarks ? m.landmarks->to_json() : nlohmann::json(nullptr);
  return j;
}

ModelMetadata metadata_from_json(const nlohmann::json& j) {
  ModelMetadata m;
  m.training_step = j.value("training_step", std::int64_t{0});
  m.seed = j.value("seed", std::uint64_t{0});
  m.modality = parse_modality(j.value("modality", std::string("OTHER")));
  m.normalization_percentile = j.value("normalization_percentile", 98.0);
  if (j.contains("background_fill") && !j["background_fill"].is_null()) m.background_fill = j["background_fill"].get<double>();
  if (j.contains("landmarks") && !j["landmarks"].is_null()) m.landmarks = LandmarkModel::from_json(j["landmarks"]);
  if (j.contains("run_config")) m.run_config = j["run_config"];
  return m;
}

}  // namespace

void LocModel::save(const fs::path& path) const {
  static_assert(std::endian::native == std::endian::little);
  auto refs = const_cast<nn::LocNet<float>&>(net_).state();

  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  auto describe = [&](const std::string& name, const char* kind, std::size_t count) {
    tensors.push_back({{"name", name}, {"kind", kind}, {"count", count}, {"offset", offset}});
    offset += count * sizeof(float);
  };
  for (const auto* p : refs.params) describe(p->name, "param", p->value.size());
  for (const auto* b : refs.buffers) describe(b->name, "buffer", b->value.size());

  const nlohmann::json header = {{"format", "patch2loc-checkpoint"},
                                 {"version", kCheckpointVersion},
                                 {"dtype", "float32"},
                                 {"config", config().to_json()},
                                 {"metadata", metadata_json(meta_)},
                                 {"tensors", tensors}};
  const std::string text = header.dump();

  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t length = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&length), sizeof(length));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* p : refs.params) {
      out.write(reinterpret_cast<const char*>(p->value.data()), static_cast<std::streamsize>(p->value.size() * sizeof(float)));
    }
    for (const auto* b : refs.buffers) {
      out.write(reinterpret_cast<const char*>(b->value.data()), static_cast<std::streamsize>(b->value.size() * sizeof(float)));
    }
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

LocModel LocModel::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IoError(path.string() + " is not a checkpoint");
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || version == 0 || version > kCheckpointVersion) {
    throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw IoError(path.string() + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed header: " + e.what());
  }

  LocModel model(ModelConfig::from_json(header.at("config")));
  model.meta_ = metadata_from_json(header.value("metadata", nlohmann::json::object()));

  auto refs = model.net_.state();
  std::unordered_map<std::string, std::vector<float>*> slots;
  for (auto* p : refs.params) slots[p->name] = &p->value;
  for (auto* b : refs.buffers) slots[b->name] = &b->value;

  std::vector<char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t filled = 0;
  for (const auto& t : header.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    const auto count = t.at("count").get<std::size_t>();
    const auto offset = t.at("offset").get<std::size_t>();
    const auto it = slots.find(name);
    if (it == slots.end()) throw IoError(path.string() + ": unexpected tensor " + name);
    if (it->second->size() != count) throw IoError(path.string() + ": tensor " + name + " has the wrong size");
    if (offset + count * sizeof(float) > blob.size()) throw IoError(path.string() + ": truncated tensor data");
    std::memcpy(it->second->data(), blob.data() + offset, count * sizeof(float));
    ++filled;
  }
  if (filled != slots.size()) throw IoError(path.string() + ": checkpoint is missing tensors");
  return model;
}

}  // namespace patch2loc
