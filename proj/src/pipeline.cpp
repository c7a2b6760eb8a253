#include "patch2loc/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <cmath>
#include <sstream>

#include "patch2loc/error.hpp"
#include "patch2loc/png_image.hpp"
#include "patch2loc/rng.hpp"
#include "patch2loc/volume_io.hpp"

namespace patch2loc {

nlohmann::json PreprocessConfig::to_json() const {
  return {{"histogram_standardization", histogram_standardization},
          {"normalization_percentile", normalization_percentile}};
}

std::optional<LandmarkModel> fit_preprocessing(std::span<const Volume> training, const PreprocessConfig& cfg) {
  if (!cfg.histogram_standardization) return std::nullopt;
  return fit_histogram_landmarks(training);
}

Volume preprocess(const Volume& v, const std::optional<LandmarkModel>& landmarks, double percentile) {
  if (landmarks) return normalize_percentile(apply_histogram_standardization(v, *landmarks), percentile);
  return normalize_percentile(v, percentile);
}

Volume preprocess_for(const LocModel& model, const Volume& v) {
  return preprocess(v, model.metadata().landmarks, model.metadata().normalization_percentile);
}

TrainResult train_with_preprocessing(std::span<const Volume> raw, const ModelConfig& model_cfg,
                                     const TrainConfig& train_cfg, const PatchSpec& spec,
                                     const PreprocessConfig& pre, const nlohmann::json& run_config,
                                     const TrainProgress& progress) {
  train_cfg.validate();
  const auto fold_of = make_folds(raw.size(), train_cfg.fold_count, train_cfg.seed);
  std::vector<Volume> train_raw;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (fold_of[i] != train_cfg.fold) train_raw.push_back(raw[i]);
  }
  // Standardization statistics come from the training split only.
  const auto landmarks = fit_preprocessing(train_raw, pre);
  train_raw.clear();

  std::vector<Volume> training, validation;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    (fold_of[i] == train_cfg.fold ? validation : training)
        .push_back(preprocess(raw[i], landmarks, pre.normalization_percentile));
  }

  // Checkpoints written during training should already carry the
  // preprocessing, so the output directory is handled here.
  TrainConfig inner = train_cfg;
  inner.output_dir.reset();
  TrainResult result = train_split(training, validation, model_cfg, inner, spec, progress);
  for (LocModel* m : {&result.best, &result.final_model}) {
    m->metadata().landmarks = landmarks;
    m->metadata().normalization_percentile = pre.normalization_percentile;
    m->metadata().run_config = run_config;
  }
  if (train_cfg.output_dir) {
    fs::create_directories(*train_cfg.output_dir);
    result.best.save(*train_cfg.output_dir / "best.ckpt");
    result.final_model.save(*train_cfg.output_dir / "final.ckpt");
    write_training_log(*train_cfg.output_dir / "train_log.csv", result.log);
    if (landmarks) landmarks->save(*train_cfg.output_dir / "landmarks.json");
  }
  return result;
}

nlohmann::json AblationResult::to_json() const {
  return {{"symmetric", {{"full", symmetric_full}, {"half", symmetric_half}, {"increase", symmetric_increase()}}},
          {"asymmetric", {{"full", asymmetric_full}, {"half", asymmetric_half}, {"increase", asymmetric_increase()}}}};
}

ReproConfig ReproConfig::defaults() {
  ReproConfig c;
  c.phantom.asymmetry_strength = 1.0;
  c.phantom.lesion_count = 2;
  c.train.n_batches = 1500;
  c.train.patches_per_batch = 128;
  c.train.learning_rate = 2e-3;
  c.train.validation_patches = 1024;
  c.train.validation_every = 50;
  c.scoring.threads = 1;
  return c;
}

void ReproConfig::validate() const {
  if (train_subjects < train.fold_count) throw ValidationError("repro needs at least fold_count training subjects");
  if (lesion_subjects < 1) throw ValidationError("repro needs at least one lesion subject");
  if (healthy_test_subjects < 1) throw ValidationError("repro needs at least one healthy test subject");
  if (ablation && (ablation_subjects < train.fold_count || ablation_batches < 1)) {
    throw ValidationError("ablation needs fold_count subjects and a positive batch count");
  }
  if (png_slices < 0) throw ValidationError("png_slices must be >= 0");
  phantom.validate(spec.r);
  model.validate();
  train.validate();
  spec.validate();
}

nlohmann::json ReproConfig::to_json() const {
  return {{"output_dir", output_dir.string()},
          {"seed", seed},
          {"train_subjects", train_subjects},
          {"lesion_subjects", lesion_subjects},
          {"healthy_test_subjects", healthy_test_subjects},
          {"phantom", phantom.to_json()},
          {"model", model.to_json()},
          {"train", train.to_json()},
          {"patch", {{"r", spec.r}, {"stride", spec.stride}, {"brain_fraction_min", spec.brain_fraction_min}}},
          {"scoring", {{"chunk_size", scoring.chunk_size}, {"upsample", scoring.upsample}, {"eps", scoring.eps}}},
          {"preprocess", preprocess.to_json()},
          {"ablation", ablation},
          {"ablation_subjects", ablation_subjects},
          {"ablation_batches", ablation_batches},
          {"png_slices", png_slices}};
}

nlohmann::json ReproResult::to_json() const {
  nlohmann::json j = {{"mean_prevalence", mean_prevalence},
                      {"mean_auprc", mean_auprc},
                      {"mean_best_dice", mean_best_dice},
                      {"healthy_median_score", healthy_median_score},
                      {"lesion_median_score", lesion_median_score},
                      {"best_val_loss", best_val_loss},
                      {"patch_stats", patch_stats.to_json()},
                      {"report", report.to_json()},
                      {"seconds", seconds}};
  if (ablation) j["ablation"] = ablation->to_json();
  return j;
}

namespace {

std::vector<Volume> volumes_of(const std::vector<Phantom>& cohort) {
  std::vector<Volume> out;
  out.reserve(cohort.size());
  for (const auto& p : cohort) out.push_back(p.volume);
  return out;
}

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

}  // namespace

double ablation_run(const PhantomConfig& phantom, int subjects, double r, const ModelConfig& model, TrainConfig train,
                    const PreprocessConfig& pre) {
  PhantomConfig pc = phantom;
  pc.lesion_count = 0;
  const auto cohort = generate_cohort(subjects, pc, "ablation");
  const auto raw = volumes_of(cohort);
  PatchSpec spec;
  spec.r = r;
  train.output_dir.reset();
  return train_with_preprocessing(raw, model, train, spec, pre).best_val_loss;
}

AblationResult run_ablation(const ReproConfig& cfg, const Logger& log) {
  TrainConfig train = cfg.train;
  train.n_batches = cfg.ablation_batches;
  train.validation_every = std::min(train.validation_every, cfg.ablation_batches);
  AblationResult a;
  PhantomConfig sym = cfg.phantom;
  sym.asymmetry_strength = 0.0;
  sym.seed = derive_seed(cfg.seed, "ablation-cohort");
  PhantomConfig asym = sym;
  asym.asymmetry_strength = 1.0;
  const double r = cfg.spec.r;
  a.symmetric_full = ablation_run(sym, cfg.ablation_subjects, r, cfg.model, train, cfg.preprocess);
  say(log, "ablation symmetric r=" + std::to_string(r) + " nll=" + std::to_string(a.symmetric_full));
  a.symmetric_half = ablation_run(sym, cfg.ablation_subjects, r / 2, cfg.model, train, cfg.preprocess);
  say(log, "ablation symmetric r=" + std::to_string(r / 2) + " nll=" + std::to_string(a.symmetric_half));
  a.asymmetric_full = ablation_run(asym, cfg.ablation_subjects, r, cfg.model, train, cfg.preprocess);
  say(log, "ablation asymmetric r=" + std::to_string(r) + " nll=" + std::to_string(a.asymmetric_full));
  a.asymmetric_half = ablation_run(asym, cfg.ablation_subjects, r / 2, cfg.model, train, cfg.preprocess);
  say(log, "ablation asymmetric r=" + std::to_string(r / 2) + " nll=" + std::to_string(a.asymmetric_half));
  return a;
}

void write_triptych(const std::filesystem::path& path, const Volume& v, const Grid3<float>& scores, int l3,
                    const GroundTruthMask* truth, double lo, double hi) {
  const Extents& e = v.extents();
  if (!(scores.extents == e)) throw ShapeMismatchError("score grid must match the volume for plotting");
  if (l3 < 0 || l3 >= e.e3) throw ValidationError("slice index outside the volume");
  const int panels = truth ? 3 : 2;
  RgbImage img(panels * e.e1, e.e2);
  float peak = 0.0f;
  for (float x : v.intensities.slice(l3)) peak = std::max(peak, x);
  if (peak <= 0.0f) peak = 1.0f;
  for (int l2 = 0; l2 < e.e2; ++l2) {
    const int y = e.e2 - 1 - l2;
    for (int l1 = 0; l1 < e.e1; ++l1) {
      const double g = v.intensities(l1, l2, l3) / peak;
      img.set_gray(l1, y, g);
      img.set(e.e1 + l1, y, jet((scores(l1, l2, l3) - lo) / (hi - lo)));
      if (truth) {
        if (truth->labels(l1, l2, l3)) {
          img.set(2 * e.e1 + l1, y, {255, 0, 0});
        } else {
          img.set_gray(2 * e.e1 + l1, y, g);
        }
      }
    }
  }
  write_png(path, img);
}

ReproResult run_repro(const ReproConfig& cfg, const Logger& log) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  write_text_file(out / "config.json", cfg.to_json().dump(2) + "\n");

  PhantomConfig healthy = cfg.phantom;
  healthy.lesion_count = 0;
  healthy.seed = derive_seed(cfg.seed, "train-cohort");
  const auto train_cohort = generate_cohort(cfg.train_subjects, healthy, "train");
  write_text_file(out / "train_manifest.json", cohort_manifest(train_cohort, healthy).dump(2) + "\n");

  PhantomConfig lesion_cfg = cfg.phantom;
  lesion_cfg.seed = derive_seed(cfg.seed, "lesion-cohort");
  const auto lesion_cohort = generate_cohort(cfg.lesion_subjects, lesion_cfg, "lesion");
  write_text_file(out / "lesion_manifest.json", cohort_manifest(lesion_cohort, lesion_cfg).dump(2) + "\n");

  PhantomConfig healthy_test = healthy;
  healthy_test.seed = derive_seed(cfg.seed, "healthy-test-cohort");
  const auto healthy_cohort = generate_cohort(cfg.healthy_test_subjects, healthy_test, "healthy");
  write_text_file(out / "healthy_manifest.json", cohort_manifest(healthy_cohort, healthy_test).dump(2) + "\n");
  say(log, "generated " + std::to_string(train_cohort.size() + lesion_cohort.size() + healthy_cohort.size()) +
               " phantoms");

  TrainConfig train = cfg.train;
  train.seed = derive_seed(cfg.seed, "train");
  train.output_dir = out / "model";
  const auto raw = volumes_of(train_cohort);
  int last_reported = 0;
  TrainResult trained = train_with_preprocessing(
      raw, cfg.model, train, cfg.spec, cfg.preprocess, cfg.to_json(), [&](const TrainLogRow& row) {
        if (row.val_loss && row.step - last_reported >= 250) {
          last_reported = static_cast<int>(row.step);
          std::ostringstream msg;
          msg << "step " << row.step << " train " << row.train_loss << " val " << *row.val_loss;
          say(log, msg.str());
        }
      });
  const LocModel& model = trained.best;
  ReproResult res;
  res.best_val_loss = trained.best_val_loss;
  say(log, "best validation NLL " + std::to_string(trained.best_val_loss) + " at step " +
               std::to_string(trained.best_step));

  ScoringOptions sopts = cfg.scoring;
  sopts.upsample = true;
  res.report.mask_only = true;
  res.report.config = cfg.to_json();
  std::vector<double> lesion_scores, healthy_scores, prevalence;
  std::vector<Volume> lesion_volumes;
  std::vector<GroundTruthMask> lesion_truths;
  fs::create_directories(out / "scores");
  fs::create_directories(out / "png");
  for (const auto& p : lesion_cohort) {
    const Volume v = preprocess_for(model, p.volume);
    const VolumeScores vs = score_volume(model, v, cfg.spec, sopts);
    save_grid(vs.score, out / "scores" / (v.subject_id + "_score"), {{"subject_id", v.subject_id}});
    if (auto m = evaluate_subject(vs.score, v, p.truth, true)) {
      m->fold = train.fold;
      res.report.per_subject.push_back(*m);
      prevalence.push_back(static_cast<double>(m->lesion_voxels) / static_cast<double>(m->domain_voxels));
    } else {
      res.report.excluded.push_back(v.subject_id);
    }
    for (std::size_t k = 0; k < v.extents().voxels(); ++k) {
      if (p.truth.labels.data[k]) lesion_scores.push_back(vs.score.data[k]);
    }
    if (cfg.png_slices > 0 && !p.lesions.empty()) {
      const int centre = static_cast<int>(std::lround(p.lesions.front().centre[2]));
      for (int k = 0; k < cfg.png_slices; ++k) {
        const int l3 = std::clamp(centre + (k - cfg.png_slices / 2) * 3, 0, v.extents().e3 - 1);
        write_triptych(out / "png" / (v.subject_id + "_slice" + std::to_string(l3) + ".png"), v, vs.score, l3,
                       &p.truth);
      }
    }
    lesion_volumes.push_back(v);
    lesion_truths.push_back(p.truth);
  }
  for (const auto& p : healthy_cohort) {
    const Volume v = preprocess_for(model, p.volume);
    const VolumeScores vs = score_volume(model, v, cfg.spec, sopts);
    for (std::size_t k = 0; k < v.extents().voxels(); ++k) {
      if (v.brain_mask.data[k]) healthy_scores.push_back(vs.score.data[k]);
    }
  }
  say(log, "scored " + std::to_string(lesion_cohort.size() + healthy_cohort.size()) + " test phantoms");

  std::vector<double> dice, ap;
  for (const auto& s : res.report.per_subject) {
    dice.push_back(s.best_dice);
    ap.push_back(s.auprc);
  }
  res.mean_best_dice = summarize(dice).mean;
  res.mean_auprc = summarize(ap).mean;
  res.mean_prevalence = summarize(prevalence).mean;
  res.lesion_median_score = lesion_scores.empty() ? 0.0 : percentile(std::move(lesion_scores), 50.0);
  res.healthy_median_score = healthy_scores.empty() ? 0.0 : percentile(std::move(healthy_scores), 50.0);

  const auto rows = export_patch_statistics(model, lesion_volumes, lesion_truths, cfg.spec, sopts.eps,
                                            sopts.chunk_size);
  write_patch_statistics(out / "patch_stats.csv", rows);
  res.patch_stats = summarize_patch_statistics(rows);

  if (cfg.ablation) res.ablation = run_ablation(cfg, log);

  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  res.report.write_json(out / "eval_report.json");
  res.report.write_csv(out / "eval_report.csv");
  write_text_file(out / "repro_result.json", res.to_json().dump(2) + "\n");
  return res;
}

void write_phantom_dataset(const fs::path& dir, const std::vector<Phantom>& cohort, const PhantomConfig& cfg,
                           const nlohmann::json& run_config, bool nifti) {
  fs::create_directories(dir);
  const std::string ext = nifti ? ".nii.gz" : ".json";
  nlohmann::json manifest = cohort_manifest(cohort, cfg);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const Phantom& p = cohort[i];
    const std::string id = p.volume.subject_id;
    save_volume(p.volume, dir / (id + ext));
    save_mask(p.volume.brain_mask, dir / (id + "_mask" + ext), p.volume.modality, id);
    save_mask(p.truth.labels, dir / (id + "_gt" + ext), p.volume.modality, id);
    auto& entry = manifest["subjects"][i];
    entry["image"] = id + ext;
    entry["mask"] = id + "_mask" + ext;
    entry["truth"] = id + "_gt" + ext;
    entry["modality"] = std::string(to_string(p.volume.modality));
  }
  manifest["run_config"] = run_config;
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

namespace {

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Splits "x.nii.gz" / "x.nii" / "x.json" into stem and extension.
std::optional<std::pair<std::string, std::string>> split_volume_name(const std::string& name) {
  for (const char* ext : {".nii.gz", ".nii", ".json"}) {
    if (has_suffix(name, ext)) return std::make_pair(name.substr(0, name.size() - std::strlen(ext)), std::string(ext));
  }
  return std::nullopt;
}

Modality modality_of(const nlohmann::json& entry) {
  return entry.contains("modality") ? parse_modality(entry["modality"].get<std::string>()) : Modality::Other;
}

}  // namespace

std::vector<Subject> load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory " + dir.string() + " does not exist");
  std::vector<Subject> out;
  const fs::path manifest_path = dir / "manifest.json";
  if (fs::exists(manifest_path)) {
    nlohmann::json manifest;
    try {
      std::ifstream in(manifest_path);
      manifest = nlohmann::json::parse(in);
      for (const auto& entry : manifest.at("subjects")) {
        Subject s;
        const fs::path image = dir / entry.at("image").get<std::string>();
        std::optional<fs::path> mask;
        if (entry.contains("mask")) mask = dir / entry["mask"].get<std::string>();
        std::optional<Modality> modality;
        if (entry.contains("modality")) modality = modality_of(entry);
        s.volume = load_volume(image, mask, modality);
        if (entry.contains("subject_id")) s.volume.subject_id = entry["subject_id"].get<std::string>();
        if (entry.contains("truth")) s.truth = load_ground_truth(dir / entry["truth"].get<std::string>(), s.volume.extents());
        out.push_back(std::move(s));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    return out;
  }

  std::vector<std::pair<std::string, std::string>> stems;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto split = split_volume_name(entry.path().filename().string());
    if (!split) continue;
    const std::string& stem = split->first;
    if (has_suffix(stem, "_mask") || has_suffix(stem, "_gt") || has_suffix(stem, "_score") ||
        has_suffix(stem, "_error") || has_suffix(stem, "_variance") || stem == "manifest" || stem == "landmarks") {
      continue;
    }
    stems.push_back(*split);
  }
  std::sort(stems.begin(), stems.end());
  for (const auto& [stem, ext] : stems) {
    Subject s;
    std::optional<fs::path> mask;
    if (fs::exists(dir / (stem + "_mask" + ext))) mask = dir / (stem + "_mask" + ext);
    s.volume = load_volume(dir / (stem + ext), mask);
    if (s.volume.subject_id.empty()) s.volume.subject_id = stem;
    if (fs::exists(dir / (stem + "_gt" + ext))) s.truth = load_ground_truth(dir / (stem + "_gt" + ext), s.volume.extents());
    out.push_back(std::move(s));
  }
  if (out.empty()) throw IoError("no volumes found in " + dir.string());
  return out;
}

}  // namespace patch2loc
