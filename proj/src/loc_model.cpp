#include "patch2loc/loc_model.hpp"

#include <cmath>

#include "patch2loc/error.hpp"

namespace patch2loc {

ModelConfig ModelConfig::small_preset() {
  ModelConfig c;
  c.latent_dim = 64;
  c.head_widths = {64, 32};
  c.patch_shape = {12, 12};
  return c;
}

ModelConfig ModelConfig::full_preset() { return ModelConfig{}; }

std::vector<int> ModelConfig::stage_widths() const {
  return {latent_dim / 8, latent_dim / 4, latent_dim / 2, latent_dim};
}

void ModelConfig::validate() const {
  if (latent_dim <= 0 || latent_dim % 8 != 0) throw ValidationError("latent_dim must be a positive multiple of 8");
  if (head_widths.empty()) throw ValidationError("head_widths must not be empty");
  for (int w : head_widths) {
    if (w <= 0) throw ValidationError("head widths must be positive");
  }
  if (first_conv_kernel < 1 || first_conv_kernel % 2 == 0) {
    throw ValidationError("first_conv_kernel must be a positive odd integer");
  }
  if (blocks_per_stage < 1) throw ValidationError("blocks_per_stage must be at least 1");
  if (!(beta > 0.0 && beta <= 1.0)) throw ValidationError("beta must lie in (0, 1]");
  if (patch_shape.s1 < 2 || patch_shape.s2 < 2) throw ValidationError("patch_shape must be at least 2x2");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"latent_dim", latent_dim},
          {"head_widths", head_widths},
          {"first_conv_kernel", first_conv_kernel},
          {"blocks_per_stage", blocks_per_stage},
          {"beta", beta},
          {"patch_shape", {patch_shape.s1, patch_shape.s2}}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.latent_dim = j.at("latent_dim").get<int>();
    c.head_widths = j.at("head_widths").get<std::vector<int>>();
    c.first_conv_kernel = j.at("first_conv_kernel").get<int>();
    c.blocks_per_stage = j.at("blocks_per_stage").get<int>();
    c.beta = j.at("beta").get<double>();
    const auto shape = j.at("patch_shape").get<std::vector<int>>();
    if (shape.size() != 2) throw ValidationError("patch_shape must have two entries");
    c.patch_shape = {shape[0], shape[1]};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<double> positional_encoding(double a, int d) {
  if (d <= 0 || d % 2 != 0) throw ValidationError("positional encoding needs a positive even dimension");
  std::vector<double> pe(static_cast<std::size_t>(d));
  for (int k = 0; k < d / 2; ++k) {
    const double freq = std::pow(10000.0, 2.0 * k / d);
    pe[2 * k] = std::sin(a / freq);
    pe[2 * k + 1] = std::cos(a / freq);
  }
  return pe;
}

template <class T>
nn::Tensor<T> patches_to_tensor(std::span<const float> pixels, PatchShape shape) {
  const std::size_t per = static_cast<std::size_t>(shape.s1) * shape.s2;
  if (per == 0 || pixels.size() % per != 0) throw ShapeMismatchError("pixel buffer is not a whole number of patches");
  nn::Tensor<T> x(1, static_cast<int>(pixels.size() / per), shape.s2, shape.s1);
  for (std::size_t i = 0; i < pixels.size(); ++i) x.data[i] = static_cast<T>(pixels[i]);
  return x;
}

template <class T>
nn::Tensor<T> patches_to_tensor(const Batch& batch) {
  if (batch.samples.empty()) return {};
  const PatchShape shape{batch.samples.front().pixels.n1, batch.samples.front().pixels.n2};
  const std::size_t per = static_cast<std::size_t>(shape.s1) * shape.s2;
  nn::Tensor<T> x(1, static_cast<int>(batch.samples.size()), shape.s2, shape.s1);
  for (std::size_t s = 0; s < batch.samples.size(); ++s) {
    const auto& px = batch.samples[s].pixels;
    if (px.n1 != shape.s1 || px.n2 != shape.s2) throw ShapeMismatchError("patch shape varies within a batch");
    for (std::size_t i = 0; i < per; ++i) x.data[s * per + i] = static_cast<T>(px.data[i]);
  }
  return x;
}

template nn::Tensor<float> patches_to_tensor<float>(std::span<const float>, PatchShape);
template nn::Tensor<double> patches_to_tensor<double>(std::span<const float>, PatchShape);
template nn::Tensor<float> patches_to_tensor<float>(const Batch&);
template nn::Tensor<double> patches_to_tensor<double>(const Batch&);

namespace {

constexpr double kInitialMean = 50.0;

// Log-variance of a uniform location over [0, 100].
double initial_logvar() { return std::log(100.0 * 100.0 / 12.0); }

std::vector<LocationPrediction> unpack(const nn::LocNet<float>::Output& out) {
  std::vector<LocationPrediction> preds(static_cast<std::size_t>(out.mu.n));
  for (int s = 0; s < out.mu.n; ++s) {
    auto& p = preds[static_cast<std::size_t>(s)];
    p.mu = {out.mu.row(0)[s], out.mu.row(1)[s]};
    p.logvar = {out.logvar.row(0)[s], out.logvar.row(1)[s]};
  }
  return preds;
}

}  // namespace

LocModel::LocModel(const ModelConfig& cfg, std::uint64_t seed) : net_(cfg) {
  net_.init(seed, static_cast<float>(kInitialMean), static_cast<float>(initial_logvar()));
  meta_.seed = seed;
}

namespace {

void check_patch(const Grid2<float>& patch, PatchShape want) {
  if (patch.n1 != want.s1 || patch.n2 != want.s2) {
    throw ShapeMismatchError("patch is " + std::to_string(patch.n1) + "x" + std::to_string(patch.n2) +
                             " but the model expects " + std::to_string(want.s1) + "x" + std::to_string(want.s2));
  }
}

}  // namespace

std::vector<double> LocModel::encode(const Grid2<float>& patch) const {
  check_patch(patch, config().patch_shape);
  const PatchShape shape{patch.n1, patch.n2};
  const auto latent = net_.encode(patches_to_tensor<float>(patch.data, shape));
  return {latent.data.begin(), latent.data.end()};
}

LocationPrediction LocModel::predict(const Grid2<float>& patch, double a) const {
  check_patch(patch, config().patch_shape);
  const double coords[1] = {a};
  return predict_batch(patch.data, coords).front();
}

std::vector<LocationPrediction> LocModel::predict_batch(std::span<const float> pixels, std::span<const double> a) const {
  const auto x = patches_to_tensor<float>(pixels, config().patch_shape);
  if (static_cast<std::size_t>(x.n) != a.size()) throw ShapeMismatchError("one slice coordinate per patch is required");
  return unpack(net_.forward(x, a));
}

std::vector<LocationPrediction> LocModel::predict_batch(const Batch& batch) const {
  std::vector<double> a;
  a.reserve(batch.samples.size());
  for (const auto& s : batch.samples) a.push_back(s.location.a);
  return unpack(net_.forward(patches_to_tensor<float>(batch), a));
}

}  // namespace patch2loc
