// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <iostream>
#include <vector>

#include "occufield/tensor.hpp"

namespace occufield {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected adaptive-moment state; moments mirror parameter shapes.
struct OptimState {
  AdamConfig cfg;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  int64_t step_count = 0;
};

inline OptimState make_adam(const std::vector<Tensor>& params, AdamConfig cfg = {}) {
  OptimState st;
  st.cfg = cfg;
  st.first_moment.reserve(params.size());
  st.second_moment.reserve(params.size());
  for (const auto& p : params) {
    st.first_moment.push_back(Tensor::zeros(p.shape()));
    st.second_moment.push_back(Tensor::zeros(p.shape()));
  }
  return st;
}

// One update from the grads attached to `params`. A missing grad counts as
// zero. Any NaN/inf grad skips the whole update and signals a warning.
inline bool adam_step(std::vector<Tensor>& params, OptimState& state) {
  if (params.size() != state.first_moment.size())
    fail("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
         " parameters, got " + std::to_string(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != state.first_moment[i].shape())
      fail("adam_step: parameter " + std::to_string(i) + " shape " +
           shape_str(params[i].shape()) + " does not match moment " +
           shape_str(state.first_moment[i].shape()));
    for (double g : params[i].grad())
      if (!std::isfinite(g)) {
        std::cerr << "[optim] warning: non-finite gradient in parameter " << i
                  << "; update skipped\n";
        return false;
      }
  }
  state.step_count += 1;
  const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step_count));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step_count));
  const double lr = state.cfg.learning_rate, eps = state.cfg.epsilon;
  for (size_t i = 0; i < params.size(); ++i) {
    double* p = params[i].data();
    double* m = state.first_moment[i].data();
    double* v = state.second_moment[i].data();
    const auto& grad = params[i].grad();
    const int64_t n = params[i].numel();
    for (int64_t e = 0; e < n; ++e) {
      const double g = grad.empty() ? 0.0 : grad[static_cast<size_t>(e)];
      m[e] = b1 * m[e] + (1.0 - b1) * g;
      v[e] = b2 * v[e] + (1.0 - b2) * g * g;
      p[e] -= lr * (m[e] / c1) / (std::sqrt(v[e] / c2) + eps);
    }
  }
  return true;
}

inline void zero_grads(std::vector<Tensor>& params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace occufield
