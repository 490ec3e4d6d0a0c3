// Copyright 2026 the acap authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Central finite-difference oracle for the analytic backward pass. Test-only;
// independent of the autodiff internals it checks.

#ifndef ACAP_TESTS_GRADCHECK_HPP
#define ACAP_TESTS_GRADCHECK_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "acap/tensor.hpp"

namespace acap_test {

inline double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({1e-3, std::fabs(a), std::fabs(b)});
}

// make_loss must rebuild the graph from the given leaves on every call and
// be deterministic. Returns the max relative error over every coordinate of
// every leaf between analytic gradients and central differences.
inline double gradcheck(const std::function<acap::Tensor()>& make_loss,
                        std::vector<acap::Tensor> leaves, double eps = 1e-5) {
  for (auto& t : leaves) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  acap::Tensor loss = make_loss();
  acap::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& t : leaves) {
    if (t.has_grad())
      analytic.push_back(t.grad_view());
    else
      analytic.emplace_back(t.numel(), 0.0);
  }

  double worst = 0.0;
  for (size_t k = 0; k < leaves.size(); ++k) {
    acap::Tensor& t = leaves[k];
    for (size_t i = 0; i < t.numel(); ++i) {
      double orig = t.data()[i];
      t.data()[i] = orig + eps;
      double fp = make_loss().item();
      t.data()[i] = orig - eps;
      double fm = make_loss().item();
      t.data()[i] = orig;
      double numeric = (fp - fm) / (2.0 * eps);
      worst = std::max(worst, rel_err(analytic[k][i], numeric));
    }
  }
  return worst;
}

// Same, but probing only the listed (leaf, coordinate) pairs. For big models
// where a full sweep is wasteful.
inline double gradcheck_probes(
    const std::function<acap::Tensor()>& make_loss,
    std::vector<acap::Tensor> leaves,
    const std::vector<std::pair<size_t, size_t>>& probes, double eps = 1e-5) {
  for (auto& t : leaves) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  acap::Tensor loss = make_loss();
  acap::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& t : leaves) {
    if (t.has_grad())
      analytic.push_back(t.grad_view());
    else
      analytic.emplace_back(t.numel(), 0.0);
  }

  double worst = 0.0;
  for (auto [k, i] : probes) {
    acap::Tensor& t = leaves[k];
    double orig = t.data()[i];
    t.data()[i] = orig + eps;
    double fp = make_loss().item();
    t.data()[i] = orig - eps;
    double fm = make_loss().item();
    t.data()[i] = orig;
    double numeric = (fp - fm) / (2.0 * eps);
    worst = std::max(worst, rel_err(analytic[k][i], numeric));
  }
  return worst;
}

// Weighted-sum scalarizer so non-scalar ops can be gradchecked. Fixed
// pseudo-random weights keyed on the element index.
inline acap::Tensor weighted_sum(const acap::Tensor& x) {
  auto w = std::make_shared<std::vector<double>>(x.numel());
  for (size_t i = 0; i < w->size(); ++i)
    (*w)[i] = 0.25 + 0.5 * std::fmod(0.618033988749895 * static_cast<double>(i + 1), 1.0);
  return acap::sum_all(acap::mul_mask(x, w));
}

}  // namespace acap_test

#endif  // ACAP_TESTS_GRADCHECK_HPP
