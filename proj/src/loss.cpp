#include "patch2loc/loss.hpp"

#include <cmath>

#include "patch2loc/error.hpp"

namespace patch2loc {

double gaussian_nll(const Vec2& y, const LocationPrediction& p) {
  double total = 0.0;
  for (int i = 0; i < 2; ++i) {
    const double r = y[i] - p.mu[i];
    total += r * r / std::exp(p.logvar[i]) + p.logvar[i];
  }
  return total;
}

double beta_nll(const Vec2& y, const LocationPrediction& p, double beta) {
  double total = 0.0;
  for (int i = 0; i < 2; ++i) {
    const double var = std::exp(p.logvar[i]);
    const double r = y[i] - p.mu[i];
    total += std::pow(var, beta) * (r * r / var + p.logvar[i]);
  }
  return total;
}

LossGradient beta_nll_gradient(const Vec2& y, const LocationPrediction& p, double beta) {
  LossGradient g;
  for (int i = 0; i < 2; ++i) {
    const double var = std::exp(p.logvar[i]);
    const double w = std::pow(var, beta);
    const double r = p.mu[i] - y[i];
    // w / var folded into one exponent; exactly 1 when beta = 1.
    g.d_mu[i] = 2.0 * r * std::exp((beta - 1.0) * p.logvar[i]);
    g.d_logvar[i] = w * (1.0 - r * r / var);
  }
  return g;
}

LossBreakdown batch_beta_nll(std::span<const Vec2> targets, std::span<const LocationPrediction> preds, double beta) {
  if (targets.size() != preds.size()) throw ShapeMismatchError("one target per prediction");
  LossBreakdown out;
  if (preds.empty()) return out;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    for (int i = 0; i < 2; ++i) {
      const double var = std::exp(preds[s].logvar[i]);
      const double w = std::pow(var, beta);
      const double r = targets[s][i] - preds[s].mu[i];
      out.error_term[i] += w * r * r / var;
      out.logvar_term[i] += w * preds[s].logvar[i];
    }
  }
  const auto n = static_cast<double>(preds.size());
  for (int i = 0; i < 2; ++i) {
    out.error_term[i] /= n;
    out.logvar_term[i] /= n;
  }
  out.total = out.error_term[0] + out.error_term[1] + out.logvar_term[0] + out.logvar_term[1];
  return out;
}

}  // namespace patch2loc
