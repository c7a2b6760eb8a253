#include "patch2loc/cli.hpp"

#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "patch2loc/config.hpp"
#include "patch2loc/error.hpp"
#include "patch2loc/volume_io.hpp"

namespace patch2loc {

namespace {

using nlohmann::json;

struct Common {
  bool json_output = false;
  std::optional<int> threads;
  std::optional<std::string> config_path;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_flag("--json", c.json_output, "Machine-readable output (errors as JSON on stderr)");
  cmd->add_option("--threads", c.threads, "Worker thread cap");
  cmd->add_option("--config", c.config_path, "TOML or JSON config file");
  cmd->add_flag("--force", c.force, "Overwrite existing outputs");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg;
  if (c.config_path) cfg.merge(read_config_file(*c.config_path));
  apply_environment(cfg);
  if (c.threads) cfg.threads = *c.threads;
  return cfg;
}

template <class T>
void set_if(std::optional<T>& flag, T& target) {
  if (flag) target = *flag;
}

std::filesystem::path require_path(const std::optional<std::filesystem::path>& p, const char* what) {
  if (!p) throw ValidationError(std::string("missing ") + what);
  return *p;
}

void guard_output(const std::filesystem::path& path, bool force) {
  if (fs::exists(path) && !force) {
    throw ValidationError(path.string() + " already exists; pass --force to overwrite");
  }
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

Modality common_modality(const std::vector<Subject>& subjects) {
  const Modality m = subjects.front().volume.modality;
  for (const auto& s : subjects) {
    if (s.volume.modality != m) throw ModalityMismatchError("dataset mixes modalities; train one model per modality");
  }
  return m;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Patch-location anomaly detection toolkit", "patch2loc"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "patch2loc 0.1.0");
  Common common;

  // phantom
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom cohort");
  add_common(phantom, common);
  int ph_n = 20;
  std::optional<int> ph_lesions;
  std::optional<std::filesystem::path> ph_out;
  std::optional<std::uint64_t> ph_seed;
  std::optional<double> ph_asym, ph_contrast;
  std::vector<int> ph_extents;
  std::string ph_prefix = "phantom";
  bool ph_nifti = false;
  phantom->add_option("--n", ph_n, "Number of subjects")->check(CLI::NonNegativeNumber);
  phantom->add_option("--lesions", ph_lesions, "Lesions per subject (0 for a healthy cohort)");
  phantom->add_option("--out,-o", ph_out, "Output directory");
  phantom->add_option("--seed", ph_seed, "Cohort seed");
  phantom->add_option("--asymmetry", ph_asym, "Left/right marker strength in [0, 1]");
  phantom->add_option("--contrast", ph_contrast, "Lesion intensity offset");
  phantom->add_option("--extents", ph_extents, "E1 E2 E3")->expected(3);
  phantom->add_option("--prefix", ph_prefix, "Subject id prefix");
  phantom->add_flag("--nifti", ph_nifti, "Write .nii.gz instead of the native container");

  // train
  auto* train = app.add_subcommand("train", "Train the location network");
  add_common(train, common);
  std::optional<std::filesystem::path> tr_data, tr_out;
  std::string tr_fold = "0";
  std::optional<int> tr_batches, tr_patches, tr_val_every;
  std::optional<double> tr_lr, tr_beta, tr_r;
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::string> tr_preset;
  train->add_option("--data", tr_data, "Dataset directory of healthy volumes");
  train->add_option("--out,-o", tr_out, "Output directory");
  train->add_option("--fold", tr_fold, "Held-out fold index, or 'all'");
  train->add_option("--batches", tr_batches, "Number of batches");
  train->add_option("--patches", tr_patches, "Patches per batch");
  train->add_option("--lr", tr_lr, "Adam learning rate");
  train->add_option("--beta", tr_beta, "beta-NLL exponent in (0, 1]");
  train->add_option("--r", tr_r, "Patch side as a proportion of the in-plane extent");
  train->add_option("--seed", tr_seed, "Training seed");
  train->add_option("--preset", tr_preset, "Model preset: small or full");
  train->add_option("--validation-every", tr_val_every, "Batches between validation passes");

  // infer
  auto* infer = app.add_subcommand("infer", "Score volumes with a trained checkpoint");
  add_common(infer, common);
  std::optional<std::filesystem::path> in_ckpt, in_data, in_volume, in_mask, in_out;
  std::optional<int> in_stride, in_chunk, in_png_every;
  std::optional<std::string> in_modality;
  bool in_no_upsample = false, in_png = false;
  infer->add_option("--checkpoint", in_ckpt, "Checkpoint file");
  infer->add_option("--data", in_data, "Dataset directory");
  infer->add_option("--volume", in_volume, "Single volume file");
  infer->add_option("--mask", in_mask, "Brain mask for --volume");
  infer->add_option("--modality", in_modality, "Modality tag for --volume (T1, T2, OTHER)");
  infer->add_option("--out,-o", in_out, "Output directory");
  infer->add_option("--stride", in_stride, "Lattice step");
  infer->add_flag("--no-upsample", in_no_upsample, "Keep lattice-sized maps when stride > 1");
  infer->add_option("--chunk", in_chunk, "Patches per forward pass");
  infer->add_flag("--png", in_png, "Write per-slice PNG triptychs");
  infer->add_option("--png-every", in_png_every, "Slice step between PNGs (default 8)");

  // eval
  auto* eval = app.add_subcommand("eval", "Segmentation metrics over scored volumes");
  add_common(eval, common);
  std::optional<std::filesystem::path> ev_data, ev_scores, ev_out, ev_ckpt;
  bool ev_patch_stats = false, ev_full_grid = false;
  int ev_fold = 0;
  eval->add_option("--data", ev_data, "Dataset directory with ground truth");
  eval->add_option("--scores", ev_scores, "Directory of score grids written by infer");
  eval->add_option("--out,-o", ev_out, "Output directory");
  eval->add_option("--checkpoint", ev_ckpt, "Checkpoint (needed for --export-patch-stats)");
  eval->add_flag("--export-patch-stats", ev_patch_stats, "Write per-patch statistics CSV");
  eval->add_flag("--full-grid", ev_full_grid, "Evaluate over the whole grid instead of the brain mask");
  eval->add_option("--fold", ev_fold, "Fold label stored in the report");

  // plot
  auto* plot = app.add_subcommand("plot", "Render input / heatmap / ground-truth PNGs");
  add_common(plot, common);
  std::optional<std::filesystem::path> pl_volume, pl_mask, pl_scores, pl_gt, pl_out;
  std::vector<int> pl_slices;
  std::vector<double> pl_range{0.0, 12.0};
  plot->add_option("--volume", pl_volume, "Volume file")->required();
  plot->add_option("--mask", pl_mask, "Brain mask file");
  plot->add_option("--scores", pl_scores, "Score grid file")->required();
  plot->add_option("--gt", pl_gt, "Ground-truth mask file");
  plot->add_option("--slice", pl_slices, "Axial slice indices (default: every 8th)");
  plot->add_option("--range", pl_range, "Colour range")->expected(2);
  plot->add_option("--out,-o", pl_out, "Output directory");

  // repro
  auto* repro = app.add_subcommand("repro", "Phantom experiment: generate, train, score, evaluate");
  add_common(repro, common);
  std::optional<std::filesystem::path> rp_out;
  std::optional<std::uint64_t> rp_seed;
  std::optional<int> rp_batches, rp_ablation_batches;
  bool rp_no_ablation = false;
  repro->add_option("--out,-o", rp_out, "Output directory");
  repro->add_option("--seed", rp_seed, "Experiment seed");
  repro->add_option("--batches", rp_batches, "Training batches for the main model");
  repro->add_option("--ablation-batches", rp_ablation_batches, "Training batches per ablation model");
  repro->add_flag("--no-ablation", rp_no_ablation, "Skip the patch-size ablation");

  auto fail = [&](const char* kind, const std::string& msg, int code) {
    if (common.json_output) {
      err << json{{"error", kind}, {"message", msg}, {"exit_code", code}}.dump() << '\n';
    } else {
      err << "error: " << msg << '\n';
    }
    return code;
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion& e) {
    out << e.what() << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    return fail("usage_error", e.what(), 1);
  }

  try {
    RunConfig cfg = resolve(common);
    auto emit = [&](const json& summary, const std::string& text) {
      if (common.json_output) {
        out << summary.dump(2) << '\n';
      } else {
        out << text;
      }
    };

    if (phantom->parsed()) {
      if (ph_out) cfg.paths.output = ph_out;
      if (ph_lesions) cfg.phantom.lesion_count = *ph_lesions;
      if (ph_seed) cfg.seed = *ph_seed;
      if (ph_asym) cfg.phantom.asymmetry_strength = *ph_asym;
      if (ph_contrast) cfg.phantom.lesion_contrast = *ph_contrast;
      if (!ph_extents.empty()) cfg.phantom.extents = {ph_extents[0], ph_extents[1], ph_extents[2]};
      cfg.phantom.seed = cfg.seed;
      cfg.validate();
      const auto dir = require_path(cfg.paths.output, "output directory (--out)");
      guard_output(dir / "manifest.json", common.force);
      const auto cohort = generate_cohort(ph_n, cfg.phantom, ph_prefix);
      write_phantom_dataset(dir, cohort, cfg.phantom, cfg.to_json(), ph_nifti);
      std::size_t lesion_voxels = 0;
      for (const auto& p : cohort) lesion_voxels += p.truth.positives();
      emit({{"command", "phantom"}, {"subjects", cohort.size()}, {"output", dir.string()}, {"lesion_voxels", lesion_voxels}},
           "wrote " + std::to_string(cohort.size()) + " phantoms to " + dir.string() + "\n");
      return 0;
    }

    if (train->parsed()) {
      if (tr_data) cfg.paths.data = tr_data;
      if (tr_out) cfg.paths.output = tr_out;
      if (tr_preset) cfg.merge({{"model", {{"preset", *tr_preset}}}});
      set_if(tr_batches, cfg.train.n_batches);
      set_if(tr_patches, cfg.train.patches_per_batch);
      set_if(tr_lr, cfg.train.learning_rate);
      set_if(tr_beta, cfg.train.beta);
      set_if(tr_r, cfg.patch.r);
      set_if(tr_val_every, cfg.train.validation_every);
      if (tr_seed) cfg.seed = *tr_seed;
      std::vector<int> folds;
      if (tr_fold == "all") {
        for (int f = 0; f < cfg.train.fold_count; ++f) folds.push_back(f);
      } else {
        try {
          std::size_t used = 0;
          folds.push_back(std::stoi(tr_fold, &used));
          if (used != tr_fold.size()) throw std::invalid_argument(tr_fold);
        } catch (const std::logic_error&) {
          throw ValidationError("--fold must be an integer or 'all'");
        }
        cfg.train.fold = folds.front();
      }
      cfg.train.seed = cfg.seed;
      cfg.validate();
      const auto data = require_path(cfg.paths.data, "dataset directory (--data)");
      const auto dir = require_path(cfg.paths.output, "output directory (--out)");
      const auto subjects = load_dataset(data);
      common_modality(subjects);
      std::vector<Volume> volumes;
      for (const auto& s : subjects) volumes.push_back(s.volume);

      json summary = {{"command", "train"}, {"folds", json::array()}};
      std::string text;
      for (int f : folds) {
        TrainConfig tc = cfg.train;
        tc.fold = f;
        tc.output_dir = dir / ("fold" + std::to_string(f));
        guard_output(*tc.output_dir / "best.ckpt", common.force);
        json resolved = cfg.to_json();
        resolved["train"]["fold"] = f;
        const TrainResult r = train_with_preprocessing(volumes, cfg.model, tc, cfg.patch, cfg.preprocess, resolved);
        summary["folds"].push_back({{"fold", f},
                                    {"best_val_loss", r.best_val_loss},
                                    {"best_step", r.best_step},
                                    {"checkpoint", (*tc.output_dir / "best.ckpt").string()}});
        text += "fold " + std::to_string(f) + ": best validation NLL " + fmt(r.best_val_loss) + " at step " +
                std::to_string(r.best_step) + " -> " + (*tc.output_dir / "best.ckpt").string() + "\n";
      }
      emit(summary, text);
      return 0;
    }

    if (infer->parsed()) {
      if (in_ckpt) cfg.paths.checkpoint = in_ckpt;
      if (in_data) cfg.paths.data = in_data;
      if (in_out) cfg.paths.output = in_out;
      set_if(in_stride, cfg.patch.stride);
      set_if(in_chunk, cfg.scoring.chunk_size);
      if (in_no_upsample) cfg.scoring.upsample = false;
      cfg.scoring.threads = cfg.threads;
      cfg.validate();
      const auto ckpt = require_path(cfg.paths.checkpoint, "checkpoint (--checkpoint)");
      const auto dir = require_path(cfg.paths.output, "output directory (--out)");
      const LocModel model = LocModel::load(ckpt);
      // Patch proportion follows the checkpoint unless a config file is given.
      if (const auto& rc = model.metadata().run_config; !common.config_path && rc.contains("patch")) {
        cfg.patch.r = rc["patch"].value("r", cfg.patch.r);
      }

      std::vector<Subject> subjects;
      if (in_volume) {
        std::optional<Modality> m;
        if (in_modality) m = parse_modality(*in_modality);
        subjects.push_back({load_volume(*in_volume, in_mask, m), std::nullopt});
      } else {
        subjects = load_dataset(require_path(cfg.paths.data, "dataset (--data or --volume)"));
      }
      fs::create_directories(dir);
      json summary = {{"command", "infer"}, {"subjects", json::array()}};
      const int png_every = in_png_every.value_or(8);
      if (png_every < 1) throw ValidationError("--png-every must be positive");
      for (const auto& s : subjects) {
        const std::string id = s.volume.subject_id;
        guard_output(dir / (id + "_score.json"), common.force);
        const Volume v = preprocess_for(model, s.volume);
        const VolumeScores vs = score_volume(model, v, cfg.patch, cfg.scoring);
        const json extra = {{"subject_id", id}, {"checkpoint", ckpt.string()}, {"run_config", cfg.to_json()}};
        save_grid(vs.score, dir / (id + "_score"), extra);
        save_grid(vs.error, dir / (id + "_error"), extra);
        save_grid(vs.variance, dir / (id + "_variance"), extra);
        if (in_png && vs.score.extents == v.extents()) {
          fs::create_directories(dir / "png");
          for (int l3 = 0; l3 < v.extents().e3; l3 += png_every) {
            write_triptych(dir / "png" / (id + "_slice" + std::to_string(l3) + ".png"), v, vs.score, l3,
                           s.truth ? &*s.truth : nullptr);
          }
        }
        summary["subjects"].push_back({{"subject_id", id},
                                       {"shape", {vs.score.extents.e1, vs.score.extents.e2, vs.score.extents.e3}}});
      }
      emit(summary, "scored " + std::to_string(subjects.size()) + " volumes into " + dir.string() + "\n");
      return 0;
    }

    if (eval->parsed()) {
      if (ev_data) cfg.paths.data = ev_data;
      if (ev_scores) cfg.paths.scores = ev_scores;
      if (ev_out) cfg.paths.output = ev_out;
      if (ev_ckpt) cfg.paths.checkpoint = ev_ckpt;
      if (ev_full_grid) cfg.mask_only = false;
      cfg.validate();
      const auto data = require_path(cfg.paths.data, "dataset directory (--data)");
      const auto scores_dir = require_path(cfg.paths.scores, "score directory (--scores)");
      const auto subjects = load_dataset(data);
      std::optional<LocModel> model;
      if (cfg.paths.checkpoint) model = LocModel::load(*cfg.paths.checkpoint);
      if (ev_patch_stats && !model) throw ValidationError("--export-patch-stats needs --checkpoint");

      EvalReport report;
      report.mask_only = cfg.mask_only;
      report.config = cfg.to_json();
      std::vector<Volume> volumes;
      std::vector<GroundTruthMask> truths;
      for (const auto& s : subjects) {
        if (!s.truth) throw ValidationError("subject " + s.volume.subject_id + " has no ground truth");
        const Grid3<float> scores = load_grid(scores_dir / (s.volume.subject_id + "_score"));
        if (auto m = evaluate_subject(scores, s.volume, *s.truth, cfg.mask_only)) {
          m->fold = ev_fold;
          report.per_subject.push_back(*m);
        } else {
          report.excluded.push_back(s.volume.subject_id);
        }
        if (ev_patch_stats) {
          volumes.push_back(preprocess_for(*model, s.volume));
          truths.push_back(*s.truth);
        }
      }
      json summary = {{"command", "eval"}, {"report", report.to_json()}};
      std::ostringstream text;
      text << "subject            best_dice   auprc\n";
      for (const auto& m : report.per_subject) {
        text << std::left << std::setw(18) << m.subject_id << ' ' << fmt(m.best_dice) << "     " << fmt(m.auprc) << '\n';
      }
      const json agg = report.aggregate();
      text << "evaluable subjects: " << report.per_subject.size() << ", excluded (no lesion voxels): "
           << report.excluded.size() << '\n';
      if (!report.per_subject.empty()) {
        text << "best_dice " << fmt(agg["overall"]["best_dice"]["mean"].get<double>()) << "  auprc "
             << fmt(agg["overall"]["auprc"]["mean"].get<double>()) << '\n';
      }
      if (cfg.paths.output) {
        guard_output(*cfg.paths.output / "eval_report.json", common.force);
        report.write_json(*cfg.paths.output / "eval_report.json");
        report.write_csv(*cfg.paths.output / "eval_report.csv");
      }
      if (ev_patch_stats) {
        const auto dir = require_path(cfg.paths.output, "output directory (--out) for patch statistics");
        const auto rows = export_patch_statistics(*model, volumes, truths, cfg.patch, cfg.scoring.eps,
                                                  cfg.scoring.chunk_size);
        write_patch_statistics(dir / "patch_stats.csv", rows);
        const auto ps = summarize_patch_statistics(rows);
        summary["patch_stats"] = ps.to_json();
        text << "patch stats: " << ps.normal << " normal, " << ps.partial << " partial, " << ps.abnormal
             << " abnormal -> " << (dir / "patch_stats.csv").string() << '\n';
      }
      emit(summary, text.str());
      return 0;
    }

    if (plot->parsed()) {
      if (pl_out) cfg.paths.output = pl_out;
      const auto dir = require_path(cfg.paths.output, "output directory (--out)");
      const Volume v = load_volume(*pl_volume, pl_mask);
      const Grid3<float> scores = load_grid(*pl_scores);
      std::optional<GroundTruthMask> truth;
      if (pl_gt) truth = load_ground_truth(*pl_gt, v.extents());
      if (pl_slices.empty()) {
        for (int l3 = 0; l3 < v.extents().e3; l3 += 8) pl_slices.push_back(l3);
      }
      if (!(pl_range[1] > pl_range[0])) throw ValidationError("--range needs lo < hi");
      fs::create_directories(dir);
      json files = json::array();
      for (int l3 : pl_slices) {
        const auto path = dir / (v.subject_id + "_slice" + std::to_string(l3) + ".png");
        guard_output(path, common.force);
        write_triptych(path, v, scores, l3, truth ? &*truth : nullptr, pl_range[0], pl_range[1]);
        files.push_back(path.string());
      }
      emit({{"command", "plot"}, {"files", files}}, "wrote " + std::to_string(files.size()) + " PNGs to " + dir.string() + "\n");
      return 0;
    }

    if (repro->parsed()) {
      if (rp_out) cfg.paths.output = rp_out;
      if (rp_seed) cfg.seed = *rp_seed;
      set_if(rp_batches, cfg.train.n_batches);
      set_if(rp_ablation_batches, cfg.repro.ablation_batches);
      if (rp_no_ablation) cfg.repro.ablation = false;
      cfg.validate();
      ReproConfig rc = cfg.to_repro();
      rc.output_dir = require_path(cfg.paths.output, "output directory (--out)");
      guard_output(rc.output_dir / "repro_result.json", common.force);
      const ReproResult r = run_repro(rc, [&](const std::string& msg) {
        if (!common.json_output) err << msg << '\n';
      });
      std::ostringstream text;
      text << "lesion prevalence      " << fmt(r.mean_prevalence) << '\n'
           << "mean AUPRC             " << fmt(r.mean_auprc) << "  (" << fmt(r.mean_auprc / r.mean_prevalence, 1)
           << "x prevalence)\n"
           << "mean best Dice         " << fmt(r.mean_best_dice) << '\n'
           << "median score healthy   " << fmt(r.healthy_median_score) << '\n'
           << "median score in lesion " << fmt(r.lesion_median_score) << '\n';
      const auto& ps = r.patch_stats;
      auto rho = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string("n/a"); };
      text << "spearman (partial patches): log_error " << rho(ps.rho_log_error) << ", log_variance "
           << rho(ps.rho_log_variance) << ", score " << rho(ps.rho_score) << '\n';
      if (r.ablation) {
        text << "ablation NLL increase when halving the patch: symmetric " << fmt(r.ablation->symmetric_increase())
             << ", asymmetric " << fmt(r.ablation->asymmetric_increase()) << '\n';
      }
      text << "results in " << rc.output_dir.string() << " (" << fmt(r.seconds, 1) << " s)\n";
      json summary = r.to_json();
      summary.erase("report");
      summary["command"] = "repro";
      emit(summary, text.str());
      return 0;
    }
  } catch (const ValidationError& e) {
    return fail(e.kind(), e.what(), 1);
  } catch (const Error& e) {
    return fail(e.kind(), e.what(), 2);
  } catch (const std::exception& e) {
    return fail("runtime_error", e.what(), 2);
  }
  return 1;
}

}  // namespace patch2loc
