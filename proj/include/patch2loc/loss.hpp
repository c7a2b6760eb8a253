#pragma once

#include <array>
#include <span>

#include "patch2loc/loc_model.hpp"

namespace patch2loc {

using Vec2 = std::array<double, 2>;

/// sum_i (y_i - mu_i)^2 / exp(logvar_i) + logvar_i, constants dropped.
double gaussian_nll(const Vec2& y, const LocationPrediction& p);

/// Each axis of gaussian_nll weighted by exp(logvar_i)^beta, where the
/// weight is treated as a constant for differentiation.
double beta_nll(const Vec2& y, const LocationPrediction& p, double beta);

struct LossGradient {
  Vec2 d_mu{};
  Vec2 d_logvar{};
};

/// d beta_nll / d mu_i     = w_i * 2 (mu_i - y_i) / exp(logvar_i)
/// d beta_nll / d logvar_i = w_i * (1 - (y_i - mu_i)^2 / exp(logvar_i))
/// with w_i = exp(logvar_i)^beta held fixed.
LossGradient beta_nll_gradient(const Vec2& y, const LocationPrediction& p, double beta);

/// Batch mean of beta_nll split into its weighted squared-error and
/// log-variance parts per axis; total is their sum.
struct LossBreakdown {
  double total = 0.0;
  Vec2 error_term{};
  Vec2 logvar_term{};
};

LossBreakdown batch_beta_nll(std::span<const Vec2> targets, std::span<const LocationPrediction> preds, double beta);

}  // namespace patch2loc
