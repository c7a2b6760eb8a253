#include <doctest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "patch2loc/loss.hpp"

using namespace patch2loc;

namespace {

LocationPrediction pred(Vec2 mu, Vec2 logvar) {
  LocationPrediction p;
  p.mu = mu;
  p.logvar = logvar;
  return p;
}

}  // namespace

TEST_CASE("gaussian nll") {
  CHECK(gaussian_nll({3, 4}, pred({3, 4}, {0, 0})) == 0.0);
  CHECK(gaussian_nll({1, 1}, pred({0, 0}, {0, 0})) == doctest::Approx(2.0));
  CHECK(gaussian_nll({2, 0}, pred({0, 0}, {std::log(4.0), 0})) == doctest::Approx(1.0 + std::log(4.0)));
  CHECK(gaussian_nll({2, 0}, pred({0, 0}, {std::log(4.0), 0})) == doctest::Approx(2.3863).epsilon(1e-4));
}

TEST_CASE("beta nll") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int k = 0; k < 20; ++k) {
    const Vec2 y{u(rng), u(rng)};
    const auto p = pred({u(rng), u(rng)}, {0, 0});
    CHECK(beta_nll(y, p, 0.3 + 0.03 * k) == doctest::Approx(gaussian_nll(y, p)));
  }
  CHECK(beta_nll({2, 0}, pred({0, 0}, {std::log(4.0), 0}), 0.5) == doctest::Approx(2.0 * (1.0 + std::log(4.0))));
  CHECK(beta_nll({2, 0}, pred({0, 0}, {std::log(4.0), 0}), 0.5) == doctest::Approx(4.7726).epsilon(1e-4));
  const double e = std::exp(1.0);
  CHECK(beta_nll({1, 1}, pred({1, 1}, {1.0, 1.0}), 0.5) == doctest::Approx(2.0 * std::sqrt(e)));
}

TEST_CASE("beta nll gradients") {
  // beta = 1: the mean gradient is the squared-error gradient for any logvar.
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int k = 0; k < 1000; ++k) {
    const Vec2 y{50 + 10 * u(rng), 50 + 10 * u(rng)};
    const auto p = pred({50 + 10 * u(rng), 50 + 10 * u(rng)}, {u(rng), u(rng)});
    const auto g = beta_nll_gradient(y, p, 1.0);
    for (int i = 0; i < 2; ++i) {
      const double mse = 2.0 * (p.mu[i] - y[i]);
      CHECK(std::abs(g.d_mu[i] - mse) <= 1e-12 * std::max(1.0, std::abs(mse)));
    }
  }
  // y = mu: logvar gradient equals the weight, pushing the variance down.
  const auto g = beta_nll_gradient({1, 2}, pred({1, 2}, {0.7, -0.3}), 0.5);
  CHECK(g.d_logvar[0] == doctest::Approx(std::exp(0.5 * 0.7)));
  CHECK(g.d_logvar[1] == doctest::Approx(std::exp(0.5 * -0.3)));
  CHECK(g.d_logvar[0] > 0.0);

  for (std::uint64_t s = 0; s < 200; ++s) CHECK(testing::check_output_gradients(s) < 1e-4);
}

TEST_CASE("batch breakdown") {
  const std::vector<Vec2> y{{0, 0}, {2, 0}};
  const std::vector<LocationPrediction> p{pred({0, 0}, {0, 0}), pred({0, 0}, {std::log(4.0), 0})};
  const auto b = batch_beta_nll(y, p, 0.5);
  CHECK(b.total == doctest::Approx(0.5 * (0.0 + 2.0 * (1.0 + std::log(4.0)))));
  CHECK(b.error_term[0] + b.error_term[1] + b.logvar_term[0] + b.logvar_term[1] == doctest::Approx(b.total));
  // Order does not matter.
  const std::vector<Vec2> y2{y[1], y[0]};
  const std::vector<LocationPrediction> p2{p[1], p[0]};
  CHECK(batch_beta_nll(y2, p2, 0.5).total == doctest::Approx(b.total));
}
