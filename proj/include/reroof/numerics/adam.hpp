#pragma once

#include <cmath>

#include "reroof/numerics/params.hpp"

namespace reroof::nn {

struct AdamConfig {
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;

  void validate() const {
    if (!(learning_rate > 0.0f)) throw ConfigError("adam: learning_rate must be > 0");
    if (!(beta1 > 0.0f && beta1 < 1.0f)) throw ConfigError("adam: beta1 must lie in (0, 1)");
    if (!(beta2 > 0.0f && beta2 < 1.0f)) throw ConfigError("adam: beta2 must lie in (0, 1)");
    if (!(epsilon > 0.0f)) throw ConfigError("adam: epsilon must be > 0");
  }
};

/// One bias-corrected Adam update over every parameter in the store.
/// Every parameter must carry a gradient (zero_grad + backward).
template <class T>
void adam_step(BasicParamStore<T>& store, const AdamConfig& cfg) {
  cfg.validate();
  for (const auto& e : store.entries()) {
    if (e.var.grad().empty()) {
      throw PreconditionError("adam_step: parameter '" + e.name + "' has no gradient");
    }
  }
  const auto t = static_cast<T>(store.advance_step());
  const T b1 = cfg.beta1, b2 = cfg.beta2;
  const T correction1 = T(1) - std::pow(b1, t);
  const T correction2 = T(1) - std::pow(b2, t);
  const T lr = cfg.learning_rate, eps = cfg.epsilon;
  for (auto& e : store.entries()) {
    auto& w = e.var.mutable_value();
    const auto& g = e.var.grad();
    auto& m = e.first_moment;
    auto& v = e.second_moment;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T m_hat = m[i] / correction1;
      const T v_hat = v[i] / correction2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

}  // namespace reroof::nn
