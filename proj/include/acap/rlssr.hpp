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
// Reconstruction latent space similarity regularization: pool the CNN audio
// latents to a single vector, reconstruct that vector from the decoder's
// text embeddings through a small affine head, and penalize the distance
// between the two. Local max pooling over time picks the prominent audio
// features; global averaging standardizes both sides to fixed-size vectors.

#ifndef ACAP_RLSSR_HPP
#define ACAP_RLSSR_HPP

#include <cmath>
#include <vector>

#include "acap/model.hpp"
#include "acap/tensor.hpp"

namespace acap {

// Combined objective: L_total = alpha * L_ce + beta * L_rlssr.
struct LossBundle {
  Tensor l_ce;
  Tensor l_rlssr;
  Tensor l_total;
  double alpha = 1.0;
  double beta = 1.0;
};

struct RlssrTensors {
  Tensor a_pooled;  // [d_a]
  Tensor a_rec;     // [d_a]
  Tensor loss;      // scalar
};

// Local max pooling over valid time steps (kernel/stride windows; a run
// shorter than the kernel degenerates to one window), then a global mean
// over the surviving steps. A: [t, d_a].
inline Tensor pool_audio(const Tensor& A, const std::vector<uint8_t>& time_mask,
                         int kernel = 3, int stride = 2) {
  if (A.rank() != 2) throw shape_error("pool_audio: expected [t, d_a]");
  if (kernel < 1 || stride < 1) throw shape_error("pool_audio: bad kernel/stride");
  int t = A.dim(0), d = A.dim(1);
  if (static_cast<int>(time_mask.size()) != t)
    throw shape_error("pool_audio: mask length");
  std::vector<int> valid;
  for (int i = 0; i < t; ++i)
    if (time_mask[static_cast<size_t>(i)]) valid.push_back(i);
  int L = static_cast<int>(valid.size());
  if (L == 0) throw shape_error("pool_audio: no valid time steps");

  int n_windows = (L <= kernel) ? 1 : (L - kernel) / stride + 1;
  std::vector<double> out(static_cast<size_t>(d), 0.0);
  std::vector<int> argmax(static_cast<size_t>(n_windows) * d);
  for (int wnd = 0; wnd < n_windows; ++wnd) {
    int begin = wnd * stride;
    int end = std::min(begin + kernel, L);
    for (int j = 0; j < d; ++j) {
      int best = valid[static_cast<size_t>(begin)];
      double best_v = A.data()[static_cast<size_t>(best) * d + j];
      for (int p = begin + 1; p < end; ++p) {
        int row = valid[static_cast<size_t>(p)];
        double v = A.data()[static_cast<size_t>(row) * d + j];
        if (v > best_v) {
          best_v = v;
          best = row;
        }
      }
      argmax[static_cast<size_t>(wnd) * d + j] = best;
      out[static_cast<size_t>(j)] += best_v;
    }
  }
  double inv = 1.0 / n_windows;
  for (double& v : out) v *= inv;
  return detail::make_op({d}, std::move(out), {A},
                         [d, n_windows, inv, argmax = std::move(argmax)](
                             detail::Node& nd) {
                           auto& p = *nd.parents[0];
                           p.ensure_grad();
                           for (int wnd = 0; wnd < n_windows; ++wnd)
                             for (int j = 0; j < d; ++j) {
                               int row = argmax[static_cast<size_t>(wnd) * d + j];
                               p.grad[static_cast<size_t>(row) * d + j] +=
                                   nd.grad[static_cast<size_t>(j)] * inv;
                             }
                         });
}

// A_rec: affine map of the decoder embeddings followed by a masked global
// mean (the affine commutes with the mean, so this equals pooling first).
inline Tensor reconstruct(const Tensor& T, const std::vector<uint8_t>& token_mask,
                          const Tensor& ffn_weight, const Tensor& ffn_bias) {
  return masked_mean_rows(linear(T, ffn_weight, ffn_bias), token_mask);
}

inline Tensor rlssr_loss(const Tensor& a_rec, const Tensor& a_pooled,
                         RlssrParams::Sim similarity) {
  detail::check_same_shape(a_rec, a_pooled, "rlssr_loss");
  Tensor diff = sub(a_rec, a_pooled);
  return similarity == RlssrParams::Sim::kL1 ? mean_all(abs_val(diff))
                                             : mean_all(square(diff));
}

inline RlssrTensors rlssr_forward(const Tensor& A,
                                  const std::vector<uint8_t>& time_mask,
                                  const Tensor& T,
                                  const std::vector<uint8_t>& token_mask,
                                  const Tensor& ffn_weight,
                                  const Tensor& ffn_bias,
                                  const RlssrParams& params) {
  RlssrTensors out;
  out.a_pooled = pool_audio(A, time_mask, params.local_max_kernel,
                            params.local_max_stride);
  if (params.stop_grad_audio) out.a_pooled = stop_grad(out.a_pooled);
  out.a_rec = reconstruct(T, token_mask, ffn_weight, ffn_bias);
  out.loss = rlssr_loss(out.a_rec, out.a_pooled, params.similarity);
  return out;
}

inline LossBundle combine_losses(const Tensor& l_ce, const Tensor& l_rlssr,
                                 double alpha = 1.0, double beta = 1.0) {
  if (alpha < 0.0 || beta < 0.0)
    throw config_error("loss weights must be non-negative");
  LossBundle b;
  b.l_ce = l_ce;
  b.l_rlssr = l_rlssr;
  b.alpha = alpha;
  b.beta = beta;
  b.l_total = add(scale(l_ce, alpha), scale(l_rlssr, beta));
  return b;
}

}  // namespace acap

#endif  // ACAP_RLSSR_HPP
