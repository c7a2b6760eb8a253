#include "patch2loc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "patch2loc/error.hpp"
#include "patch2loc/scoring.hpp"

namespace patch2loc {

namespace {

// Indices ordered by descending score; ties keep index order.
std::vector<std::uint32_t> descending_order(std::span<const float> scores) {
  std::vector<std::uint32_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return scores[a] > scores[b]; });
  return order;
}

double dice_from_counts(std::size_t tp, std::size_t predicted, std::size_t positives) {
  return 2.0 * static_cast<double>(tp) / static_cast<double>(positives + predicted);
}

}  // namespace

double best_dice(std::span<const float> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ShapeMismatchError("scores and labels differ in length");
  std::size_t positives = 0;
  for (auto l : labels) positives += l != 0;
  if (positives == 0) return 0.0;

  const auto order = descending_order(scores);
  // Group ends in descending order: predicted set = first `end` entries.
  std::vector<std::size_t> group_ends;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (k + 1 == order.size() || scores[order[k + 1]] != scores[order[k]]) group_ends.push_back(k + 1);
  }
  if (group_ends.size() > kDiceExactLimit) {
    std::vector<std::size_t> coarse;
    for (int q = 0; q < kDiceQuantiles; ++q) {
      // Cut after the group holding the q-th quantile position.
      const auto pos = static_cast<std::size_t>(std::llround(static_cast<double>(q) / (kDiceQuantiles - 1) *
                                                              static_cast<double>(order.size() - 1)));
      coarse.push_back(*std::lower_bound(group_ends.begin(), group_ends.end(), pos + 1));
    }
    coarse.erase(std::unique(coarse.begin(), coarse.end()), coarse.end());
    group_ends = std::move(coarse);
  }

  double best = 0.0;  // empty prediction
  std::size_t tp = 0;
  std::size_t k = 0;
  for (std::size_t end : group_ends) {
    for (; k < end; ++k) tp += labels[order[k]] != 0;
    best = std::max(best, dice_from_counts(tp, end, positives));
  }
  return best;
}

double auprc(std::span<const float> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ShapeMismatchError("scores and labels differ in length");
  std::size_t positives = 0;
  for (auto l : labels) positives += l != 0;
  if (positives == 0) throw ValidationError("average precision needs at least one positive label");

  const auto order = descending_order(scores);
  double ap = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    tp += labels[order[k]] != 0;
    if (k + 1 < order.size() && scores[order[k + 1]] == scores[order[k]]) continue;
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(k + 1);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

std::string to_string(PatchCategory c) {
  switch (c) {
    case PatchCategory::Normal: return "normal";
    case PatchCategory::Abnormal: return "abnormal";
    case PatchCategory::Partial: return "partial";
  }
  return "partial";
}

PatchCategory categorize_patch(double f) {
  if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("abnormal fraction must lie in [0, 1]");
  if (f < 0.10) return PatchCategory::Normal;
  if (f > 0.90) return PatchCategory::Abnormal;
  return PatchCategory::Partial;
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("spearman needs equally long inputs");
  if (x.size() < 3) throw ValidationError("spearman needs at least 3 values");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < rx.size(); ++k) {
    sxy += (rx[k] - mx) * (ry[k] - my);
    sxx += (rx[k] - mx) * (rx[k] - mx);
    syy += (ry[k] - my) * (ry[k] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw ValidationError("spearman is undefined for a constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<PatchStatRow> export_patch_statistics(const LocModel& model, std::span<const Volume> volumes,
                                                  std::span<const GroundTruthMask> truths, const PatchSpec& spec,
                                                  double eps, int chunk_size) {
  if (volumes.size() != truths.size()) throw ValidationError("one ground truth per volume is required");
  std::vector<PatchStatRow> rows;
  for (std::size_t n = 0; n < volumes.size(); ++n) {
    const Volume& v = volumes[n];
    const GroundTruthMask& truth = truths[n];
    const Extents& e = v.extents();
    if (!(truth.labels.extents == e)) throw ShapeMismatchError("ground truth shape differs from " + v.subject_id);
    const PatchShape shape = patch_size(spec, e);
    if (!(shape == model.config().patch_shape)) throw ShapeMismatchError("patch shape differs from the checkpoint");
    if (v.modality != model.metadata().modality) throw ModalityMismatchError("volume modality differs from the checkpoint");

    for (int l3 = 0; l3 < e.e3; ++l3) {
      std::vector<std::array<int, 2>> centres;
      for (int o2 = 0; o2 < e.e2; o2 += shape.s2) {
        for (int o1 = 0; o1 < e.e1; o1 += shape.s1) {
          const int l1 = std::min(o1 + shape.s1 / 2, e.e1 - 1);
          const int l2 = std::min(o2 + shape.s2 / 2, e.e2 - 1);
          if (brain_fraction(v, l1, l2, l3, shape) >= spec.brain_fraction_min) centres.push_back({l1, l2});
        }
      }
      const double a = 100.0 * l3 / e.e3;
      const std::size_t chunk = static_cast<std::size_t>(std::max(chunk_size, 1));
      std::vector<float> pixels;
      for (std::size_t start = 0; start < centres.size(); start += chunk) {
        const std::size_t count = std::min(chunk, centres.size() - start);
        const std::span<const std::array<int, 2>> part(centres.data() + start, count);
        gather_patches(v, l3, shape, part, pixels);
        const auto preds = model.predict_batch(pixels, std::vector<double>(count, a));
        for (std::size_t k = 0; k < count; ++k) {
          PatchStatRow row;
          row.subject_id = v.subject_id;
          row.y1 = 100.0 * part[k][0] / e.e1;
          row.y2 = 100.0 * part[k][1] / e.e2;
          row.a = a;
          const ScoreTriple t = abnormality_score({row.y1, row.y2}, preds[k], eps);
          row.log_error = t.log_error;
          row.log_variance = t.log_variance;
          row.score = t.score;
          row.abnormal_fraction = abnormal_fraction(truth, part[k][0], part[k][1], l3, shape);
          row.category = categorize_patch(row.abnormal_fraction);
          rows.push_back(std::move(row));
        }
      }
    }
  }
  return rows;
}

void write_patch_statistics(const std::filesystem::path& path, std::span<const PatchStatRow> rows) {
  std::ostringstream out;
  out << "subject_id,y1,y2,a,log_error,log_variance,score,abnormal_fraction,category\n" << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.subject_id << ',' << r.y1 << ',' << r.y2 << ',' << r.a << ',' << r.log_error << ',' << r.log_variance
        << ',' << r.score << ',' << r.abnormal_fraction << ',' << to_string(r.category) << '\n';
  }
  write_text_file(path, out.str());
}

namespace {

std::optional<double> median(std::vector<double> v) {
  if (v.empty()) return std::nullopt;
  return percentile(std::move(v), 50.0);
}

std::optional<double> safe_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  try {
    return spearman(x, y);
  } catch (const ValidationError&) {
    return std::nullopt;
  }
}

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

PatchStatsSummary summarize_patch_statistics(std::span<const PatchStatRow> rows) {
  PatchStatsSummary s;
  std::vector<double> frac, err, var, score, normal_scores, abnormal_scores;
  for (const auto& r : rows) {
    switch (r.category) {
      case PatchCategory::Normal:
        ++s.normal;
        normal_scores.push_back(r.score);
        break;
      case PatchCategory::Abnormal:
        ++s.abnormal;
        abnormal_scores.push_back(r.score);
        break;
      case PatchCategory::Partial:
        ++s.partial;
        frac.push_back(r.abnormal_fraction);
        err.push_back(r.log_error);
        var.push_back(r.log_variance);
        score.push_back(r.score);
        break;
    }
  }
  s.rho_log_error = safe_spearman(err, frac);
  s.rho_log_variance = safe_spearman(var, frac);
  s.rho_score = safe_spearman(score, frac);
  s.median_score_normal = median(normal_scores);
  s.median_score_abnormal = median(abnormal_scores);
  return s;
}

nlohmann::json PatchStatsSummary::to_json() const {
  return {{"normal", normal},
          {"abnormal", abnormal},
          {"partial", partial},
          {"spearman_partial", {{"log_error", opt_json(rho_log_error)},
                                {"log_variance", opt_json(rho_log_variance)},
                                {"score", opt_json(rho_score)}}},
          {"median_score", {{"normal", opt_json(median_score_normal)}, {"abnormal", opt_json(median_score_abnormal)}}}};
}

std::optional<SubjectMetrics> evaluate_subject(const Grid3<float>& scores, const Volume& v,
                                               const GroundTruthMask& truth, bool mask_only) {
  const Extents& e = v.extents();
  if (!(scores.extents == e)) throw ShapeMismatchError("score grid shape differs from the volume of " + v.subject_id);
  if (!(truth.labels.extents == e)) throw ShapeMismatchError("ground truth shape differs from the volume of " + v.subject_id);
  std::vector<float> s;
  std::vector<std::uint8_t> l;
  s.reserve(e.voxels());
  l.reserve(e.voxels());
  for (std::size_t k = 0; k < e.voxels(); ++k) {
    if (mask_only && v.brain_mask.data[k] == 0) continue;
    s.push_back(scores.data[k]);
    l.push_back(truth.labels.data[k] != 0);
  }
  SubjectMetrics m;
  m.subject_id = v.subject_id;
  m.domain_voxels = s.size();
  m.lesion_voxels = static_cast<std::size_t>(std::count(l.begin(), l.end(), 1));
  if (m.lesion_voxels == 0) return std::nullopt;
  m.best_dice = best_dice(s, l);
  m.auprc = auprc(s, l);
  return m;
}

MetricSummary summarize(std::span<const double> values) {
  MetricSummary m;
  m.count = values.size();
  if (values.empty()) return m;
  m.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double x : values) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return m;
}

namespace {

nlohmann::json summary_json(const MetricSummary& m) { return {{"mean", m.mean}, {"std", m.std}, {"n", m.count}}; }

}  // namespace

nlohmann::json EvalReport::aggregate() const {
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_fold;
  for (const auto& s : per_subject) {
    by_fold[s.fold].first.push_back(s.best_dice);
    by_fold[s.fold].second.push_back(s.auprc);
  }
  nlohmann::json folds = nlohmann::json::object();
  std::vector<double> dice_means, ap_means;
  for (const auto& [fold, vals] : by_fold) {
    const auto d = summarize(vals.first);
    const auto a = summarize(vals.second);
    folds[std::to_string(fold)] = {{"best_dice", summary_json(d)}, {"auprc", summary_json(a)}};
    dice_means.push_back(d.mean);
    ap_means.push_back(a.mean);
  }
  return {{"folds", folds},
          {"overall", {{"best_dice", summary_json(summarize(dice_means))}, {"auprc", summary_json(summarize(ap_means))}}},
          {"evaluable_subjects", per_subject.size()},
          {"excluded_subjects", excluded.size()}};
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json subjects = nlohmann::json::array();
  for (const auto& s : per_subject) {
    subjects.push_back({{"subject_id", s.subject_id},
                        {"fold", s.fold},
                        {"best_dice", s.best_dice},
                        {"auprc", s.auprc},
                        {"lesion_voxels", s.lesion_voxels},
                        {"domain_voxels", s.domain_voxels}});
  }
  return {{"per_subject", subjects},
          {"excluded", excluded},
          {"metric_domain", mask_only ? "brain_mask" : "full_grid"},
          {"aggregate", aggregate()},
          {"config", config}};
}

void EvalReport::write_json(const std::filesystem::path& path) const { write_text_file(path, to_json().dump(2) + "\n"); }

void EvalReport::write_csv(const std::filesystem::path& path) const {
  std::ostringstream out;
  out << "subject_id,fold,best_dice,auprc,lesion_voxels,domain_voxels\n" << std::setprecision(10);
  for (const auto& s : per_subject) {
    out << s.subject_id << ',' << s.fold << ',' << s.best_dice << ',' << s.auprc << ',' << s.lesion_voxels << ','
        << s.domain_voxels << '\n';
  }
  write_text_file(path, out.str());
}

}  // namespace patch2loc
