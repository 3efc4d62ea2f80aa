#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string_view>

#include "memefuse/mlp_head.hpp"

namespace memefuse {

enum class OptimizerKind { adam, sgd };

constexpr std::string_view optimizer_name(OptimizerKind k) noexcept {
  return k == OptimizerKind::adam ? "adam" : "sgd";
}

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8, bias-corrected) or plain SGD over
/// every head tensor.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, const HeadShape& shape)
      : kind_(kind), lr_(learning_rate) {
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("optimizer: learning_rate must be >= 0");
    if (kind_ == OptimizerKind::adam) {
      first_ = HeadParameters(shape);
      second_ = HeadParameters(shape);
    }
  }

  void step(HeadParameters& params, const HeadParameters& grads) {
    auto p = params.tensors();
    const auto g = grads.tensors();
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t t = 0; t < p.size(); ++t) {
        for (std::size_t i = 0; i < p[t].size(); ++i) p[t][i] -= lr_ * g[t][i];
      }
      return;
    }
    ++steps_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(steps_));
    auto m = first_.tensors();
    auto v = second_.tensors();
    for (std::size_t t = 0; t < p.size(); ++t) {
      for (std::size_t i = 0; i < p[t].size(); ++i) {
        const double gi = g[t][i];
        m[t][i] = kBeta1 * m[t][i] + (1.0 - kBeta1) * gi;
        v[t][i] = kBeta2 * v[t][i] + (1.0 - kBeta2) * gi * gi;
        const double m_hat = m[t][i] / c1;
        const double v_hat = v[t][i] / c2;
        p[t][i] -= lr_ * m_hat / (std::sqrt(v_hat) + kEpsilon);
      }
    }
  }

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

 private:
  OptimizerKind kind_;
  double lr_;
  long long steps_ = 0;
  HeadParameters first_;
  HeadParameters second_;
};

}  // namespace memefuse
