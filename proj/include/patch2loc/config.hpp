#pragma once

#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "patch2loc/pipeline.hpp"

namespace patch2loc {

/// Everything a CLI command can be configured with. Sections mirror the
/// module configs: patch, model, train, phantom, preprocess, scoring, eval,
/// paths, repro, plus top-level seed and threads.
struct RunConfig {
  PatchSpec patch;
  ModelConfig model = ModelConfig::small_preset();
  TrainConfig train;
  PhantomConfig phantom;
  PreprocessConfig preprocess;
  ScoringOptions scoring;
  bool mask_only = true;
  std::uint64_t seed = 0;
  int threads = 1;

  struct Paths {
    std::optional<std::filesystem::path> data;
    std::optional<std::filesystem::path> output;
    std::optional<std::filesystem::path> checkpoint;
    std::optional<std::filesystem::path> scores;
  } paths;

  struct Repro {
    int train_subjects = 40;
    int lesion_subjects = 20;
    int healthy_test_subjects = 10;
    bool ablation = true;
    int ablation_subjects = 20;
    int ablation_batches = 600;
    int png_slices = 3;
    int stride = 4;  // scoring lattice step for the repro chain
  } repro;

  RunConfig();

  /// Merges a JSON object into the config. Unknown sections or keys raise
  /// ValidationError.
  void merge(const nlohmann::json& j);
  void validate() const;
  nlohmann::json to_json() const;
  ReproConfig to_repro() const;
};

/// Reads a TOML (.toml) or JSON (any other extension) config file.
nlohmann::json read_config_file(const std::filesystem::path& path);

/// PATCH2LOC_DATA_DIR, PATCH2LOC_OUTPUT_DIR, PATCH2LOC_CHECKPOINT and
/// PATCH2LOC_SCORES_DIR override the corresponding paths.
void apply_environment(RunConfig& cfg);

}  // namespace patch2loc
