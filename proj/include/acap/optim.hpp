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

#ifndef ACAP_OPTIM_HPP
#define ACAP_OPTIM_HPP

#include <cmath>
#include <string>
#include <vector>

#include "acap/tensor.hpp"

namespace acap {

// A named trainable tensor. Names are dot-separated paths
// ("encoder.cnn.block1.conv1.weight") and unique within a model.
// Frozen parameters receive zero update from the optimizer.
struct Parameter {
  std::string name;
  Tensor tensor;
  bool frozen = false;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step_count = 0;

  void init(const std::vector<Parameter>& params) {
    m.clear();
    v.clear();
    for (const Parameter& p : params) {
      m.emplace_back(p.tensor.numel(), 0.0);
      v.emplace_back(p.tensor.numel(), 0.0);
    }
    step_count = 0;
  }
};

// Bias-corrected Adam. Parameters with no grad buffer are treated as
// zero-gradient; frozen parameters are skipped entirely.
inline void adam_step(std::vector<Parameter>& params, AdamState& state,
                      double lr, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8) {
  if (state.m.size() != params.size()) state.init(params);
  ++state.step_count;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step_count));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step_count));
  for (size_t k = 0; k < params.size(); ++k) {
    Parameter& p = params[k];
    if (p.frozen) continue;
    double* w = p.tensor.data();
    std::vector<double>& m = state.m[k];
    std::vector<double>& v = state.v[k];
    const bool has_grad = p.tensor.has_grad();
    const std::vector<double>& g = p.tensor.grad_view();
    for (size_t i = 0; i < p.tensor.numel(); ++i) {
      double gi = has_grad ? g[i] : 0.0;
      m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
      v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

inline void zero_grads(std::vector<Parameter>& params) {
  for (Parameter& p : params) p.tensor.zero_grad();
}

}  // namespace acap

#endif  // ACAP_OPTIM_HPP
