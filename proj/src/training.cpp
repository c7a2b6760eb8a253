#include "patch2loc/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include "patch2loc/adam.hpp"
#include "patch2loc/error.hpp"
#include "patch2loc/rng.hpp"
#include "patch2loc/scoring.hpp"

namespace patch2loc {

void TrainConfig::validate() const {
  if (n_batches < 1) throw ValidationError("n_batches must be positive");
  if (patches_per_batch < 1) throw ValidationError("patches_per_batch must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning_rate must be >= 0");
  if (!(beta > 0.0 && beta <= 1.0)) throw ValidationError("beta must lie in (0, 1]");
  if (fold_count < 2) throw ValidationError("fold_count must be at least 2");
  if (fold < 0 || fold >= fold_count) throw ValidationError("fold must lie in [0, fold_count)");
  if (validation_patches < 1) throw ValidationError("validation_patches must be positive");
  if (validation_every < 1) throw ValidationError("validation_every must be positive");
  if (grad_clip < 0.0) throw ValidationError("grad_clip must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"n_batches", n_batches},
          {"patches_per_batch", patches_per_batch},
          {"learning_rate", learning_rate},
          {"beta", beta},
          {"seed", seed},
          {"fold_count", fold_count},
          {"fold", fold},
          {"validation_patches", validation_patches},
          {"validation_every", validation_every},
          {"grad_clip", grad_clip}};
}

std::vector<int> make_folds(std::size_t subject_count, int fold_count, std::uint64_t seed) {
  if (fold_count < 1) throw ValidationError("fold_count must be positive");
  if (static_cast<std::size_t>(fold_count) > subject_count) {
    throw ValidationError("cannot split " + std::to_string(subject_count) + " subjects into " +
                          std::to_string(fold_count) + " folds");
  }
  std::vector<std::size_t> order(subject_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "folds"));
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<int> fold_of(subject_count, 0);
  const std::size_t base = subject_count / static_cast<std::size_t>(fold_count);
  const std::size_t extra = subject_count % static_cast<std::size_t>(fold_count);
  std::size_t pos = 0;
  for (int f = 0; f < fold_count; ++f) {
    const std::size_t size = base + (static_cast<std::size_t>(f) < extra ? 1 : 0);
    for (std::size_t k = 0; k < size; ++k) fold_of[order[pos++]] = f;
  }
  return fold_of;
}

template <class T>
LossBreakdown loss_gradients(nn::LocNet<T>& net, const nn::Tensor<T>& patches, std::span<const double> slice_coords,
                             std::span<const Vec2> targets, double beta) {
  const auto out = net.forward_train(patches, slice_coords);
  const int n = out.mu.n;
  if (static_cast<int>(targets.size()) != n) throw ShapeMismatchError("one target per patch");

  std::vector<LocationPrediction> preds(static_cast<std::size_t>(n));
  nn::Tensor<T> d_mu(2, n, 1, 1);
  nn::Tensor<T> d_logvar(2, n, 1, 1);
  for (int s = 0; s < n; ++s) {
    auto& p = preds[static_cast<std::size_t>(s)];
    p.mu = {static_cast<double>(out.mu.row(0)[s]), static_cast<double>(out.mu.row(1)[s])};
    p.logvar = {static_cast<double>(out.logvar.row(0)[s]), static_cast<double>(out.logvar.row(1)[s])};
    const LossGradient g = beta_nll_gradient(targets[static_cast<std::size_t>(s)], p, beta);
    for (int i = 0; i < 2; ++i) {
      d_mu.row(i)[s] = static_cast<T>(g.d_mu[i] / n);
      d_logvar.row(i)[s] = static_cast<T>(g.d_logvar[i] / n);
    }
  }
  net.backward(d_mu, d_logvar);
  return batch_beta_nll(targets, preds, beta);
}

template LossBreakdown loss_gradients<float>(nn::LocNet<float>&, const nn::Tensor<float>&, std::span<const double>,
                                             std::span<const Vec2>, double);
template LossBreakdown loss_gradients<double>(nn::LocNet<double>&, const nn::Tensor<double>&, std::span<const double>,
                                              std::span<const Vec2>, double);

std::vector<Vec2> batch_targets(const Batch& batch) {
  std::vector<Vec2> y;
  y.reserve(batch.samples.size());
  for (const auto& s : batch.samples) y.push_back({s.location.y1, s.location.y2});
  return y;
}

std::vector<double> batch_slice_coords(const Batch& batch) {
  std::vector<double> a;
  a.reserve(batch.samples.size());
  for (const auto& s : batch.samples) a.push_back(s.location.a);
  return a;
}

LossBreakdown loss_gradients(LocModel& model, const Batch& batch, double beta) {
  const auto targets = batch_targets(batch);
  const auto coords = batch_slice_coords(batch);
  return loss_gradients<float>(model.net(), patches_to_tensor<float>(batch), coords, targets, beta);
}

double validation_nll(const LocModel& model, const Batch& batch) {
  const auto preds = model.predict_batch(batch);
  const auto targets = batch_targets(batch);
  double total = 0.0;
  for (std::size_t s = 0; s < preds.size(); ++s) total += gaussian_nll(targets[s], preds[s]);
  return total / static_cast<double>(preds.size());
}

namespace {

void clip_gradients(const std::vector<nn::Parameter<float>*>& params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params) {
    for (float g : p->grad) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const auto scale = static_cast<float>(max_norm / norm);
  for (auto* p : params) {
    for (float& g : p->grad) g *= scale;
  }
}

double normal_score_percentile(const LocModel& model, const Batch& batch, double q) {
  const auto preds = model.predict_batch(batch);
  const auto targets = batch_targets(batch);
  std::vector<double> scores;
  scores.reserve(preds.size());
  for (std::size_t s = 0; s < preds.size(); ++s) scores.push_back(abnormality_score(targets[s], preds[s]).score);
  return percentile(std::move(scores), q);
}

}  // namespace

TrainResult train_split(std::span<const Volume> training, std::span<const Volume> validation,
                        const ModelConfig& model_cfg, const TrainConfig& train_cfg, const PatchSpec& spec,
                        const TrainProgress& progress) {
  train_cfg.validate();
  spec.validate();
  if (training.empty()) throw ValidationError("training set is empty");
  if (validation.empty()) throw ValidationError("validation set is empty");
  const Extents e = training.front().extents();
  const Modality modality = training.front().modality;
  for (const auto* set : {&training, &validation}) {
    for (const Volume& v : *set) {
      if (!(v.extents() == e)) throw ShapeMismatchError("all volumes must share extents (registered scans)");
      if (v.modality != modality) throw ModalityMismatchError("one model is trained per modality");
    }
  }

  ModelConfig cfg = model_cfg;
  cfg.patch_shape = patch_size(spec, e);
  cfg.beta = train_cfg.beta;
  cfg.validate();

  const auto start = std::chrono::steady_clock::now();
  LocModel model(cfg, derive_seed(train_cfg.seed, "init"));
  model.metadata().modality = modality;
  model.metadata().seed = train_cfg.seed;

  const Batch val_batch =
      sample_training_batch(validation, spec, train_cfg.validation_patches, derive_seed(train_cfg.seed, "validation"));

  if (train_cfg.output_dir) fs::create_directories(*train_cfg.output_dir);

  Adam<float> optimizer(train_cfg.learning_rate);
  const auto params = model.net().state().params;

  TrainResult result{model, model, {}, std::numeric_limits<double>::infinity(), 0};
  double initial_loss = 0.0;
  int over_limit = 0;

  for (int step = 1; step <= train_cfg.n_batches; ++step) {
    const Batch batch = sample_training_batch(training, spec, train_cfg.patches_per_batch,
                                              derive_seed(train_cfg.seed, static_cast<std::uint64_t>(step)));
    model.net().zero_grad();
    const LossBreakdown loss = loss_gradients(model, batch, train_cfg.beta);

    if (!std::isfinite(loss.total)) {
      throw DivergenceError("non-finite training loss at step " + std::to_string(step) +
                            " (error terms " + std::to_string(loss.error_term[0]) + ", " +
                            std::to_string(loss.error_term[1]) + "; log-variance terms " +
                            std::to_string(loss.logvar_term[0]) + ", " + std::to_string(loss.logvar_term[1]) + ")");
    }
    if (step == 1) initial_loss = loss.total;
    if (initial_loss > 0.0 && loss.total > train_cfg.divergence_factor * initial_loss) {
      if (++over_limit >= train_cfg.divergence_patience) {
        throw DivergenceError("training loss stayed above " + std::to_string(train_cfg.divergence_factor) +
                              "x its initial value for " + std::to_string(over_limit) + " batches (step " +
                              std::to_string(step) + ", loss " + std::to_string(loss.total) + ")");
      }
    } else {
      over_limit = 0;
    }

    if (train_cfg.grad_clip > 0.0) clip_gradients(params, train_cfg.grad_clip);
    optimizer.step(params);

    TrainLogRow row;
    row.step = step;
    row.train_loss = loss.total;
    if (step % train_cfg.validation_every == 0 || step == train_cfg.n_batches) {
      const double val = validation_nll(model, val_batch);
      row.val_loss = val;
      if (val < result.best_val_loss) {
        result.best_val_loss = val;
        result.best_step = step;
        result.best = model;
        result.best.metadata().training_step = step;
        if (train_cfg.output_dir) result.best.save(*train_cfg.output_dir / "best.ckpt");
      }
    }
    row.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(row);
    if (progress) progress(row);
  }

  model.metadata().training_step = train_cfg.n_batches;
  result.final_model = model;
  if (!std::isfinite(result.best_val_loss)) {
    result.best = model;
    result.best_step = train_cfg.n_batches;
  }

  // Background fill: 1st percentile of scores on held-out normal patches.
  result.best.metadata().background_fill = normal_score_percentile(result.best, val_batch, 1.0);
  result.final_model.metadata().background_fill = normal_score_percentile(result.final_model, val_batch, 1.0);

  if (train_cfg.output_dir) {
    result.best.save(*train_cfg.output_dir / "best.ckpt");
    result.final_model.save(*train_cfg.output_dir / "final.ckpt");
    write_training_log(*train_cfg.output_dir / "train_log.csv", result.log);
  }
  return result;
}

TrainResult train(std::span<const Volume> volumes, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const PatchSpec& spec, const TrainProgress& progress) {
  train_cfg.validate();
  const auto fold_of = make_folds(volumes.size(), train_cfg.fold_count, train_cfg.seed);
  std::vector<Volume> training;
  std::vector<Volume> validation;
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    (fold_of[i] == train_cfg.fold ? validation : training).push_back(volumes[i]);
  }
  return train_split(training, validation, model_cfg, train_cfg, spec, progress);
}

void write_training_log(const fs::path& path, const std::vector<TrainLogRow>& log) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << "step,train_loss,val_loss,wallclock\n" << std::setprecision(17);
    for (const auto& r : log) {
      out << r.step << ',' << r.train_loss << ',';
      if (r.val_loss) out << *r.val_loss;
      out << ',' << std::setprecision(6) << r.wallclock << std::setprecision(17) << '\n';
    }
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace patch2loc
