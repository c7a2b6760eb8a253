#include "patch2loc/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <toml.hpp>

#include "patch2loc/error.hpp"

namespace patch2loc {

namespace {

using nlohmann::json;

[[noreturn]] void unknown(const std::string& section, const std::string& key) {
  throw ValidationError("unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
}

template <class T>
T get(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config key '" + key + "' has the wrong type");
  }
}

void merge_patch(PatchSpec& p, const json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k == "r") p.r = get<double>(v, k);
    else if (k == "stride") p.stride = get<int>(v, k);
    else if (k == "brain_fraction_min") p.brain_fraction_min = get<double>(v, k);
    else unknown("patch", k);
  }
}

void merge_model(ModelConfig& m, const json& j) {
  if (j.contains("preset")) {
    const auto preset = get<std::string>(j["preset"], "preset");
    if (preset == "small") m = ModelConfig::small_preset();
    else if (preset == "full") m = ModelConfig::full_preset();
    else throw ValidationError("model.preset must be 'small' or 'full'");
  }
  for (const auto& [k, v] : j.items()) {
    if (k == "preset") continue;
    if (k == "latent_dim") m.latent_dim = get<int>(v, k);
    else if (k == "head_widths") m.head_widths = get<std::vector<int>>(v, k);
    else if (k == "first_conv_kernel") m.first_conv_kernel = get<int>(v, k);
    else if (k == "blocks_per_stage") m.blocks_per_stage = get<int>(v, k);
    else unknown("model", k);
  }
}

void merge_train(TrainConfig& t, const json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k == "n_batches") t.n_batches = get<int>(v, k);
    else if (k == "patches_per_batch") t.patches_per_batch = get<int>(v, k);
    else if (k == "learning_rate") t.learning_rate = get<double>(v, k);
    else if (k == "beta") t.beta = get<double>(v, k);
    else if (k == "fold_count") t.fold_count = get<int>(v, k);
    else if (k == "fold") t.fold = get<int>(v, k);
    else if (k == "validation_patches") t.validation_patches = get<int>(v, k);
    else if (k == "validation_every") t.validation_every = get<int>(v, k);
    else if (k == "grad_clip") t.grad_clip = get<double>(v, k);
    else if (k == "divergence_factor") t.divergence_factor = get<double>(v, k);
    else if (k == "divergence_patience") t.divergence_patience = get<int>(v, k);
    else unknown("train", k);
  }
}

void merge_preprocess(PreprocessConfig& p, const json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k == "histogram_standardization") p.histogram_standardization = get<bool>(v, k);
    else if (k == "normalization_percentile") p.normalization_percentile = get<double>(v, k);
    else unknown("preprocess", k);
  }
}

void merge_scoring(ScoringOptions& s, const json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k == "chunk_size") s.chunk_size = get<int>(v, k);
    else if (k == "upsample") s.upsample = get<bool>(v, k);
    else if (k == "background_fill") s.background_fill = v.is_null() ? std::nullopt : std::optional<double>(get<double>(v, k));
    else if (k == "eps") s.eps = get<double>(v, k);
    else unknown("scoring", k);
  }
}

void merge_paths(RunConfig::Paths& p, const json& j) {
  for (const auto& [k, v] : j.items()) {
    std::optional<std::filesystem::path> path;
    if (!v.is_null()) path = get<std::string>(v, k);
    if (k == "data") p.data = path;
    else if (k == "output") p.output = path;
    else if (k == "checkpoint") p.checkpoint = path;
    else if (k == "scores") p.scores = path;
    else unknown("paths", k);
  }
}

void merge_repro(RunConfig::Repro& r, const json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k == "train_subjects") r.train_subjects = get<int>(v, k);
    else if (k == "lesion_subjects") r.lesion_subjects = get<int>(v, k);
    else if (k == "healthy_test_subjects") r.healthy_test_subjects = get<int>(v, k);
    else if (k == "ablation") r.ablation = get<bool>(v, k);
    else if (k == "ablation_subjects") r.ablation_subjects = get<int>(v, k);
    else if (k == "ablation_batches") r.ablation_batches = get<int>(v, k);
    else if (k == "png_slices") r.png_slices = get<int>(v, k);
    else if (k == "stride") r.stride = get<int>(v, k);
    else unknown("repro", k);
  }
}

json opt_path(const std::optional<std::filesystem::path>& p) { return p ? json(p->string()) : json(nullptr); }

}  // namespace

RunConfig::RunConfig() {
  const ReproConfig d = ReproConfig::defaults();
  train = d.train;
  phantom = d.phantom;
  scoring = d.scoring;
}

void RunConfig::merge(const json& j) {
  if (!j.is_object()) throw ValidationError("config must be an object");
  for (const auto& [k, v] : j.items()) {
    if (k == "seed") {
      seed = get<std::uint64_t>(v, k);
      continue;
    }
    if (k == "threads") {
      threads = get<int>(v, k);
      continue;
    }
    if (!v.is_object()) throw ValidationError("config section '" + k + "' must be a table");
    if (k == "patch") merge_patch(patch, v);
    else if (k == "model") merge_model(model, v);
    else if (k == "train") merge_train(train, v);
    else if (k == "phantom") phantom = PhantomConfig::from_json(v, phantom);
    else if (k == "preprocess") merge_preprocess(preprocess, v);
    else if (k == "scoring") merge_scoring(scoring, v);
    else if (k == "eval") {
      for (const auto& [ek, ev] : v.items()) {
        if (ek == "mask_only") mask_only = get<bool>(ev, ek);
        else unknown("eval", ek);
      }
    } else if (k == "paths") merge_paths(paths, v);
    else if (k == "repro") merge_repro(repro, v);
    else unknown("", k);
  }
}

void RunConfig::validate() const {
  patch.validate();
  ModelConfig m = model;
  m.beta = train.beta;
  m.validate();
  train.validate();
  phantom.validate(patch.r);
  if (!(preprocess.normalization_percentile > 0.0 && preprocess.normalization_percentile <= 100.0)) {
    throw ValidationError("normalization_percentile must lie in (0, 100]");
  }
  if (scoring.chunk_size < 1) throw ValidationError("scoring.chunk_size must be positive");
  if (!(scoring.eps > 0.0)) throw ValidationError("scoring.eps must be positive");
  if (repro.stride < 1) throw ValidationError("repro.stride must be positive");
  if (threads < 1) throw ValidationError("threads must be positive");
}

json RunConfig::to_json() const {
  json model_json = model.to_json();
  model_json.erase("patch_shape");
  model_json.erase("beta");
  json train_json = train.to_json();
  train_json.erase("seed");  // the top-level seed drives training
  return {{"seed", seed},
          {"threads", threads},
          {"patch", {{"r", patch.r}, {"stride", patch.stride}, {"brain_fraction_min", patch.brain_fraction_min}}},
          {"model", model_json},
          {"train", train_json},
          {"phantom", phantom.to_json()},
          {"preprocess", preprocess.to_json()},
          {"scoring",
           {{"chunk_size", scoring.chunk_size},
            {"upsample", scoring.upsample},
            {"background_fill", scoring.background_fill ? json(*scoring.background_fill) : json(nullptr)},
            {"eps", scoring.eps}}},
          {"eval", {{"mask_only", mask_only}}},
          {"paths",
           {{"data", opt_path(paths.data)},
            {"output", opt_path(paths.output)},
            {"checkpoint", opt_path(paths.checkpoint)},
            {"scores", opt_path(paths.scores)}}},
          {"repro",
           {{"train_subjects", repro.train_subjects},
            {"lesion_subjects", repro.lesion_subjects},
            {"healthy_test_subjects", repro.healthy_test_subjects},
            {"ablation", repro.ablation},
            {"ablation_subjects", repro.ablation_subjects},
            {"ablation_batches", repro.ablation_batches},
            {"png_slices", repro.png_slices},
            {"stride", repro.stride}}}};
}

ReproConfig RunConfig::to_repro() const {
  ReproConfig r = ReproConfig::defaults();
  if (paths.output) r.output_dir = *paths.output;
  r.seed = seed;
  r.train_subjects = repro.train_subjects;
  r.lesion_subjects = repro.lesion_subjects;
  r.healthy_test_subjects = repro.healthy_test_subjects;
  r.phantom = phantom;
  r.model = model;
  r.train = train;
  r.spec = patch;
  r.spec.stride = repro.stride;
  r.scoring = scoring;
  r.scoring.threads = threads;
  r.preprocess = preprocess;
  r.ablation = repro.ablation;
  r.ablation_subjects = repro.ablation_subjects;
  r.ablation_batches = repro.ablation_batches;
  r.png_slices = repro.png_slices;
  return r;
}

json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  if (path.extension() == ".toml") {
    toml::table table;
    try {
      table = toml::parse(text.str(), path.string());
    } catch (const toml::parse_error& e) {
      std::ostringstream msg;
      msg << "malformed TOML in " << path.string() << ": " << e.description() << " (line " << e.source().begin.line
          << ")";
      throw ValidationError(msg.str());
    }
    std::ostringstream as_json;
    as_json << toml::json_formatter{table};
    return json::parse(as_json.str());
  }
  try {
    return json::parse(text.str());
  } catch (const json::parse_error& e) {
    throw ValidationError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void apply_environment(RunConfig& cfg) {
  const auto env = [](const char* name) -> std::optional<std::filesystem::path> {
    const char* v = std::getenv(name);
    if (v && *v) return std::filesystem::path(v);
    return std::nullopt;
  };
  if (auto p = env("PATCH2LOC_DATA_DIR")) cfg.paths.data = p;
  if (auto p = env("PATCH2LOC_OUTPUT_DIR")) cfg.paths.output = p;
  if (auto p = env("PATCH2LOC_CHECKPOINT")) cfg.paths.checkpoint = p;
  if (auto p = env("PATCH2LOC_SCORES_DIR")) cfg.paths.scores = p;
}

}  // namespace patch2loc
