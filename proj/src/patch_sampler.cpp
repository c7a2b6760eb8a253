#include "patch2loc/patch_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "patch2loc/error.hpp"
#include "patch2loc/png_image.hpp"
#include "patch2loc/rng.hpp"

namespace patch2loc {

void PatchSpec::validate() const {
  if (!(r > 0.0 && r <= 1.0)) throw ValidationError("patch proportion r must lie in (0, 1]");
  if (stride < 1) throw ValidationError("stride must be a positive integer");
  if (!(brain_fraction_min >= 0.0 && brain_fraction_min <= 1.0)) {
    throw ValidationError("brain_fraction_min must lie in [0, 1]");
  }
}

PatchShape patch_size(const PatchSpec& spec, const Extents& e) {
  spec.validate();
  if (e.e1 <= 0 || e.e2 <= 0) throw ValidationError("extents must be positive");
  const PatchShape s{static_cast<int>(std::lround(spec.r * e.e1)), static_cast<int>(std::lround(spec.r * e.e2))};
  if (s.s1 < 2 || s.s2 < 2) {
    throw ValidationError("patch of " + std::to_string(s.s1) + "x" + std::to_string(s.s2) +
                          " pixels is smaller than the 2x2 minimum");
  }
  return s;
}

double brain_fraction(const Volume& v, int l1, int l2, int l3, PatchShape shape) {
  const Extents& e = v.extents();
  const int o1 = window_origin(l1, shape.s1);
  const int o2 = window_origin(l2, shape.s2);
  const int a1 = std::max(o1, 0);
  const int b1 = std::min(o1 + shape.s1, e.e1);
  const int a2 = std::max(o2, 0);
  const int b2 = std::min(o2 + shape.s2, e.e2);
  std::size_t inside = 0;
  for (int j = a2; j < b2; ++j) {
    const std::uint8_t* row = &v.brain_mask(0, j, l3);
    for (int i = a1; i < b1; ++i) inside += row[i] != 0;
  }
  return static_cast<double>(inside) / (static_cast<double>(shape.s1) * shape.s2);
}

double brain_fraction(const PatchSample& p, const Volume& v) {
  return brain_fraction(v, p.l1, p.l2, p.l3, PatchShape{p.pixels.n1, p.pixels.n2});
}

double abnormal_fraction(const GroundTruthMask& truth, int l1, int l2, int l3, PatchShape shape) {
  const Extents& e = truth.labels.extents;
  const int o1 = window_origin(l1, shape.s1);
  const int o2 = window_origin(l2, shape.s2);
  std::size_t hits = 0;
  for (int j = std::max(o2, 0); j < std::min(o2 + shape.s2, e.e2); ++j) {
    for (int i = std::max(o1, 0); i < std::min(o1 + shape.s1, e.e1); ++i) hits += truth.labels(i, j, l3) != 0;
  }
  return static_cast<double>(hits) / (static_cast<double>(shape.s1) * shape.s2);
}

PatchSample extract_patch(const Volume& v, int l1, int l2, int l3, const PatchSpec& spec,
                          const GroundTruthMask* truth) {
  const Extents& e = v.extents();
  if (l3 < 0 || l3 >= e.e3) throw ValidationError("slice index " + std::to_string(l3) + " outside the volume");
  if (l1 < 0 || l1 >= e.e1 || l2 < 0 || l2 >= e.e2) {
    throw ValidationError("patch centre outside the slice");
  }
  const PatchShape shape = patch_size(spec, e);
  PatchSample p;
  p.pixels = Grid2<float>(shape.s1, shape.s2, 0.0f);
  p.l1 = l1;
  p.l2 = l2;
  p.l3 = l3;
  p.subject_id = v.subject_id;
  p.location = to_relative({static_cast<double>(l1), static_cast<double>(l2), static_cast<double>(l3)}, e);

  const int o1 = window_origin(l1, shape.s1);
  const int o2 = window_origin(l2, shape.s2);
  for (int j = 0; j < shape.s2; ++j) {
    const int g2 = o2 + j;
    if (g2 < 0 || g2 >= e.e2) continue;
    for (int i = 0; i < shape.s1; ++i) {
      const int g1 = o1 + i;
      if (g1 < 0 || g1 >= e.e1) continue;
      p.pixels(i, j) = v.intensities(g1, g2, l3);
    }
  }
  if (truth) {
    if (!(truth->labels.extents == e)) throw ShapeMismatchError("ground truth shape differs from the volume");
    p.abnormal_fraction = abnormal_fraction(*truth, l1, l2, l3, shape);
  }
  return p;
}

Batch sample_training_batch(std::span<const Volume> volumes, const PatchSpec& spec, int n_patches,
                            std::uint64_t seed) {
  if (volumes.empty()) throw ValidationError("cannot sample a batch from an empty training set");
  if (n_patches < 1) throw ValidationError("n_patches must be at least 1");
  const Extents e = volumes.front().extents();
  for (const Volume& v : volumes) {
    if (!(v.extents() == e)) throw ShapeMismatchError("training volumes must share extents (registered scans)");
  }
  const PatchShape shape = patch_size(spec, e);

  struct PoolSlice {
    std::size_t volume;
    int l3;
  };
  std::vector<PoolSlice> pool;
  pool.reserve(volumes.size());
  for (std::size_t s = 0; s < volumes.size(); ++s) {
    const Volume& v = volumes[s];
    std::vector<int> candidates;
    for (int l3 = 0; l3 < e.e3; ++l3) {
      const auto sl = v.brain_mask.slice(l3);
      if (std::any_of(sl.begin(), sl.end(), [](std::uint8_t m) { return m != 0; })) candidates.push_back(l3);
    }
    Rng subject_rng(derive_seed(seed, v.subject_id + "#" + std::to_string(s)));
    if (candidates.empty()) {
      pool.push_back({s, std::uniform_int_distribution<int>(0, e.e3 - 1)(subject_rng)});
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
      pool.push_back({s, candidates[pick(subject_rng)]});
    }
  }

  Rng rng(derive_seed(seed, "patch-centres"));
  std::uniform_int_distribution<std::size_t> pick_slice(0, pool.size() - 1);
  std::uniform_int_distribution<int> pick1(0, e.e1 - 1);
  std::uniform_int_distribution<int> pick2(0, e.e2 - 1);

  Batch batch;
  batch.seed = seed;
  batch.samples.reserve(static_cast<std::size_t>(n_patches));
  const long long budget = 50LL * n_patches;
  long long attempts = 0;
  while (static_cast<int>(batch.samples.size()) < n_patches) {
    if (attempts++ >= budget) {
      throw SamplingBudgetError("accepted only " + std::to_string(batch.samples.size()) + " of " +
                                std::to_string(n_patches) + " patches within " + std::to_string(budget) +
                                " draws; brain masks are too sparse");
    }
    const PoolSlice& slot = pool[pick_slice(rng)];
    const int l1 = pick1(rng);
    const int l2 = pick2(rng);
    const Volume& v = volumes[slot.volume];
    if (brain_fraction(v, l1, l2, slot.l3, shape) < spec.brain_fraction_min) continue;
    batch.samples.push_back(extract_patch(v, l1, l2, slot.l3, spec));
  }
  return batch;
}

void dump_batch(const Batch& batch, const std::filesystem::path& png_path, const std::filesystem::path& csv_path) {
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot open " + csv_path.string() + " for writing");
  csv << "subject_id,y1,y2,a,abnormal_fraction\n";
  for (const auto& s : batch.samples) {
    csv << s.subject_id << ',' << s.location.y1 << ',' << s.location.y2 << ',' << s.location.a << ','
        << s.abnormal_fraction << '\n';
  }
  if (batch.samples.empty()) return;

  const int s1 = batch.samples.front().pixels.n1;
  const int s2 = batch.samples.front().pixels.n2;
  const int n = static_cast<int>(batch.samples.size());
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  const int rows = (n + cols - 1) / cols;
  float hi = 0.0f;
  for (const auto& s : batch.samples) hi = std::max(hi, *std::max_element(s.pixels.data.begin(), s.pixels.data.end()));
  if (hi <= 0.0f) hi = 1.0f;

  RgbImage img(cols * (s1 + 1), rows * (s2 + 1));
  for (int k = 0; k < n; ++k) {
    const auto& px = batch.samples[static_cast<std::size_t>(k)].pixels;
    const int ox = (k % cols) * (s1 + 1);
    const int oy = (k / cols) * (s2 + 1);
    for (int j = 0; j < s2; ++j) {
      for (int i = 0; i < s1; ++i) img.set_gray(ox + i, oy + j, px(i, j) / hi);
    }
  }
  write_png(png_path, img);
}

}  // namespace patch2loc
