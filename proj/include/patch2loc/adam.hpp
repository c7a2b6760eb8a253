#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "patch2loc/nn/tensor.hpp"

namespace patch2loc {

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8), no
/// weight decay.
template <class T>
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<nn::Parameter<T>*>& params) {
    if (m_.size() != params.size()) {
      m_.assign(params.size(), {});
      v_.assign(params.size(), {});
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(params[i]->value.size(), 0.0);
        v_[i].assign(params[i]->value.size(), 0.0);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double g = p.grad[k];
        m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
        v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
        const double update = lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
        p.value[k] = static_cast<T>(p.value[k] - update);
      }
    }
  }

  std::int64_t steps() const { return t_; }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace patch2loc
