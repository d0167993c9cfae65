// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference oracle for the reverse-mode tape. The numeric
// side re-evaluates the operation under NoGrad and never touches the
// analytic path it is checking.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "occufield/tensor.hpp"

namespace occufield {

using GradFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Max over all requires-grad input elements of
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline double grad_check(const GradFn& op, std::vector<Tensor> inputs, double eps = 1e-5) {
  for (auto& in : inputs) in.zero_grad();
  Tensor loss = op(inputs);
  if (loss.numel() != 1) fail("grad_check: operation must be scalar-valued");
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) {
    if (in.requires_grad() && !in.grad().empty())
      analytic.push_back(in.grad());
    else
      analytic.emplace_back(static_cast<size_t>(in.numel()), 0.0);
  }

  double worst = 0.0;
  autodiff::NoGradGuard ng;
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad()) continue;
    double* d = inputs[i].data();
    for (int64_t e = 0; e < inputs[i].numel(); ++e) {
      const double orig = d[e];
      d[e] = orig + eps;
      const double fp = op(inputs).value();
      d[e] = orig - eps;
      const double fm = op(inputs).value();
      d[e] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[i][static_cast<size_t>(e)];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  for (auto& in : inputs) in.zero_grad();
  return worst;
}

// Named case for the diagnostic suite; run() returns the max relative error
// over its seeds.
struct GradCheckCase {
  std::string name;
  std::function<double()> run;
};

}  // namespace occufield
