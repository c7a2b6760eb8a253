#include "patch2loc/scoring.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "patch2loc/error.hpp"

namespace patch2loc {

ScoreTriple abnormality_score(const Vec2& y, const LocationPrediction& pred, double eps) {
  const double d1 = y[0] - pred.mu[0];
  const double d2 = y[1] - pred.mu[1];
  ScoreTriple t;
  t.log_error = std::log(d1 * d1 + d2 * d2 + eps);
  t.log_variance = 0.5 * (pred.logvar[0] + pred.logvar[1]);
  t.score = t.log_error + t.log_variance;
  return t;
}

void gather_patches(const Volume& v, int l3, PatchShape shape, std::span<const std::array<int, 2>> centres,
                    std::vector<float>& out) {
  const Extents& e = v.extents();
  const std::size_t plane = static_cast<std::size_t>(shape.s1) * shape.s2;
  out.assign(plane * centres.size(), 0.0f);
  const auto slice = v.intensities.slice(l3);
  for (std::size_t k = 0; k < centres.size(); ++k) {
    float* dst = out.data() + k * plane;
    const int o1 = window_origin(centres[k][0], shape.s1);
    const int o2 = window_origin(centres[k][1], shape.s2);
    const int a1 = std::max(o1, 0);
    const int b1 = std::min(o1 + shape.s1, e.e1);
    for (int j = 0; j < shape.s2; ++j) {
      const int g2 = o2 + j;
      if (g2 < 0 || g2 >= e.e2) continue;
      const float* src = slice.data() + static_cast<std::size_t>(e.e1) * g2;
      for (int g1 = a1; g1 < b1; ++g1) dst[static_cast<std::size_t>(g1 - o1) + static_cast<std::size_t>(shape.s1) * j] = src[g1];
    }
  }
}

namespace {

struct Interp {
  int i0;
  int i1;
  float t;
};

Interp interp_at(int pixel, int stride, int n) {
  const int i0 = std::min(pixel / stride, n - 1);
  if (i0 == n - 1) return {i0, i0, 0.0f};
  return {i0, i0 + 1, static_cast<float>(pixel - i0 * stride) / static_cast<float>(stride)};
}

}  // namespace

Grid2<float> upsample_bilinear(const Grid2<float>& lattice, int stride, int n1, int n2) {
  Grid2<float> out(n1, n2);
  for (int p2 = 0; p2 < n2; ++p2) {
    const Interp b = interp_at(p2, stride, lattice.n2);
    for (int p1 = 0; p1 < n1; ++p1) {
      const Interp a = interp_at(p1, stride, lattice.n1);
      const float v00 = lattice(a.i0, b.i0);
      const float v10 = lattice(a.i1, b.i0);
      const float v01 = lattice(a.i0, b.i1);
      const float v11 = lattice(a.i1, b.i1);
      const float top = v00 + a.t * (v10 - v00);
      const float bottom = v01 + a.t * (v11 - v01);
      out(p1, p2) = top + b.t * (bottom - top);
    }
  }
  return out;
}

namespace {

double resolve_fill(const LocModel& model, const ScoringOptions& opts) {
  if (opts.background_fill) return *opts.background_fill;
  if (model.metadata().background_fill) return *model.metadata().background_fill;
  return 0.0;
}

void check_compatible(const LocModel& model, const Volume& v, const PatchSpec& spec) {
  if (model.metadata().modality != v.modality) {
    throw ModalityMismatchError("checkpoint was trained on " + std::string(to_string(model.metadata().modality)) +
                                " but the volume is tagged " + std::string(to_string(v.modality)));
  }
  const PatchShape shape = patch_size(spec, v.extents());
  const PatchShape want = model.config().patch_shape;
  if (!(shape == want)) {
    throw ShapeMismatchError("patch shape " + std::to_string(shape.s1) + "x" + std::to_string(shape.s2) +
                             " differs from the checkpoint's " + std::to_string(want.s1) + "x" +
                             std::to_string(want.s2));
  }
}

HeatmapSet score_slice_unchecked(const LocModel& model, const Volume& v, int l3, const PatchSpec& spec,
                                 const ScoringOptions& opts, double fill) {
  const Extents& e = v.extents();
  const PatchShape shape = model.config().patch_shape;
  const int s = spec.stride;
  const int n1 = lattice_size(e.e1, s);
  const int n2 = lattice_size(e.e2, s);

  HeatmapSet h;
  h.stride = s;
  h.error_map = Grid2<float>(n1, n2, static_cast<float>(fill));
  h.variance_map = Grid2<float>(n1, n2, 0.0f);
  h.score_map = Grid2<float>(n1, n2, static_cast<float>(fill));
  h.valid = Grid2<std::uint8_t>(n1, n2, 0);

  std::vector<std::array<int, 2>> centres;
  for (int i2 = 0; i2 < n2; ++i2) {
    for (int i1 = 0; i1 < n1; ++i1) {
      const int l1 = i1 * s;
      const int l2 = i2 * s;
      if (brain_fraction(v, l1, l2, l3, shape) >= spec.brain_fraction_min) centres.push_back({l1, l2});
    }
  }

  const double a = 100.0 * l3 / e.e3;
  const std::size_t chunk = static_cast<std::size_t>(std::max(opts.chunk_size, 1));
  std::vector<float> pixels;
  for (std::size_t start = 0; start < centres.size(); start += chunk) {
    const std::size_t count = std::min(chunk, centres.size() - start);
    const std::span<const std::array<int, 2>> part(centres.data() + start, count);
    gather_patches(v, l3, shape, part, pixels);
    const std::vector<double> coords(count, a);
    const auto preds = model.predict_batch(pixels, coords);
    for (std::size_t k = 0; k < count; ++k) {
      const int l1 = part[k][0];
      const int l2 = part[k][1];
      const Vec2 y{100.0 * l1 / e.e1, 100.0 * l2 / e.e2};
      const ScoreTriple t = abnormality_score(y, preds[k], opts.eps);
      const int i1 = l1 / s;
      const int i2 = l2 / s;
      const auto err = static_cast<float>(t.log_error);
      const auto var = static_cast<float>(t.log_variance);
      h.error_map(i1, i2) = err;
      h.variance_map(i1, i2) = var;
      h.score_map(i1, i2) = err + var;
      h.valid(i1, i2) = 1;
    }
  }

  if (s > 1 && opts.upsample) {
    Grid2<std::uint8_t> valid(e.e1, e.e2, 0);
    for (int p2 = 0; p2 < e.e2; ++p2) {
      for (int p1 = 0; p1 < e.e1; ++p1) {
        const int i1 = std::min((p1 + s / 2) / s, n1 - 1);
        const int i2 = std::min((p2 + s / 2) / s, n2 - 1);
        valid(p1, p2) = h.valid(i1, i2);
      }
    }
    h.error_map = upsample_bilinear(h.error_map, s, e.e1, e.e2);
    h.variance_map = upsample_bilinear(h.variance_map, s, e.e1, e.e2);
    h.score_map = Grid2<float>(e.e1, e.e2);
    for (std::size_t k = 0; k < h.score_map.data.size(); ++k) {
      h.score_map.data[k] = h.error_map.data[k] + h.variance_map.data[k];
    }
    h.valid = std::move(valid);
    h.upsampled = true;
  }
  return h;
}

}  // namespace

HeatmapSet score_slice(const LocModel& model, const Volume& v, int l3, const PatchSpec& spec,
                       const ScoringOptions& opts) {
  spec.validate();
  check_compatible(model, v, spec);
  if (l3 < 0 || l3 >= v.extents().e3) throw ValidationError("slice index " + std::to_string(l3) + " outside the volume");
  return score_slice_unchecked(model, v, l3, spec, opts, resolve_fill(model, opts));
}

VolumeScores score_volume(const LocModel& model, const Volume& v, const PatchSpec& spec,
                          const ScoringOptions& opts) {
  spec.validate();
  check_compatible(model, v, spec);
  const Extents& e = v.extents();
  const double fill = resolve_fill(model, opts);

  VolumeScores out;
  out.slices.resize(static_cast<std::size_t>(e.e3));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (int l3 = next++; l3 < e.e3; l3 = next++) {
      try {
        out.slices[static_cast<std::size_t>(l3)] = score_slice_unchecked(model, v, l3, spec, opts, fill);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int threads = std::clamp(opts.threads, 1, std::max(e.e3, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  const int m1 = out.slices.front().score_map.n1;
  const int m2 = out.slices.front().score_map.n2;
  const Extents ge{m1, m2, e.e3};
  out.error = Grid3<float>(ge);
  out.variance = Grid3<float>(ge);
  out.score = Grid3<float>(ge);
  out.valid = Grid3<std::uint8_t>(ge);
  for (int l3 = 0; l3 < e.e3; ++l3) {
    const HeatmapSet& h = out.slices[static_cast<std::size_t>(l3)];
    std::copy(h.error_map.data.begin(), h.error_map.data.end(), out.error.slice(l3).begin());
    std::copy(h.variance_map.data.begin(), h.variance_map.data.end(), out.variance.slice(l3).begin());
    std::copy(h.score_map.data.begin(), h.score_map.data.end(), out.score.slice(l3).begin());
    std::copy(h.valid.data.begin(), h.valid.data.end(), out.valid.slice(l3).begin());
  }
  return out;
}

}  // namespace patch2loc
