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
// 2-D conv / batchnorm / pooling ops over [n,c,h,w] tensors (a rank-3
// [c,h,w] input is treated as a batch of one).

#ifndef ACAP_CONV_HPP
#define ACAP_CONV_HPP

#include <cmath>
#include <memory>
#include <vector>

#include "acap/tensor.hpp"

namespace acap {

namespace detail {

struct ConvDims {
  int n, cin, h, w;
  int cout, kh, kw;
  int stride, pad;
  int oh, ow;
  size_t k() const { return static_cast<size_t>(cin) * kh * kw; }
  size_t ohw() const { return static_cast<size_t>(oh) * ow; }
};

inline void im2col(const double* x, const ConvDims& d, double* cols) {
  // cols: [cin*kh*kw, oh*ow] for one example
  for (int c = 0; c < d.cin; ++c) {
    const double* xc = x + static_cast<size_t>(c) * d.h * d.w;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        double* row =
            cols + (static_cast<size_t>(c) * d.kh * d.kw + ky * d.kw + kx) *
                       d.ohw();
        for (int oy = 0; oy < d.oh; ++oy) {
          int iy = oy * d.stride + ky - d.pad;
          double* o = row + static_cast<size_t>(oy) * d.ow;
          if (iy < 0 || iy >= d.h) {
            for (int ox = 0; ox < d.ow; ++ox) o[ox] = 0.0;
            continue;
          }
          const double* xr = xc + static_cast<size_t>(iy) * d.w;
          for (int ox = 0; ox < d.ow; ++ox) {
            int ix = ox * d.stride + kx - d.pad;
            o[ox] = (ix >= 0 && ix < d.w) ? xr[ix] : 0.0;
          }
        }
      }
    }
  }
}

inline void col2im_add(const double* cols, const ConvDims& d, double* dx) {
  for (int c = 0; c < d.cin; ++c) {
    double* xc = dx + static_cast<size_t>(c) * d.h * d.w;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        const double* row =
            cols + (static_cast<size_t>(c) * d.kh * d.kw + ky * d.kw + kx) *
                       d.ohw();
        for (int oy = 0; oy < d.oh; ++oy) {
          int iy = oy * d.stride + ky - d.pad;
          if (iy < 0 || iy >= d.h) continue;
          double* xr = xc + static_cast<size_t>(iy) * d.w;
          const double* o = row + static_cast<size_t>(oy) * d.ow;
          for (int ox = 0; ox < d.ow; ++ox) {
            int ix = ox * d.stride + kx - d.pad;
            if (ix >= 0 && ix < d.w) xr[ix] += o[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// conv2d without bias (the CNN follows every conv with a batchnorm).
// x: [n,cin,h,w] or [cin,h,w]; k: [cout,cin,kh,kw].
inline Tensor conv2d(const Tensor& x, const Tensor& k, int stride = 1,
                     int pad = 0) {
  bool batched = x.rank() == 4;
  if (!batched && x.rank() != 3) throw shape_error("conv2d: expected rank 3/4");
  if (k.rank() != 4) throw shape_error("conv2d: kernel must be rank-4");
  if (stride < 1) throw shape_error("conv2d: stride must be >= 1");
  if (pad < 0) throw shape_error("conv2d: pad must be >= 0");
  detail::ConvDims d;
  d.n = batched ? x.dim(0) : 1;
  d.cin = x.dim(batched ? 1 : 0);
  d.h = x.dim(batched ? 2 : 1);
  d.w = x.dim(batched ? 3 : 2);
  d.cout = k.dim(0);
  if (k.dim(1) != d.cin)
    throw shape_error("conv2d: kernel cin " + std::to_string(k.dim(1)) +
                      " vs input cin " + std::to_string(d.cin));
  d.kh = k.dim(2);
  d.kw = k.dim(3);
  d.stride = stride;
  d.pad = pad;
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  if (d.h + 2 * pad < d.kh || d.w + 2 * pad < d.kw || d.oh <= 0 || d.ow <= 0)
    throw shape_error("conv2d: non-positive output dims");

  size_t ex_in = static_cast<size_t>(d.cin) * d.h * d.w;
  size_t ex_out = static_cast<size_t>(d.cout) * d.ohw();
  std::vector<double> out(static_cast<size_t>(d.n) * ex_out, 0.0);
  std::vector<double> cols(d.k() * d.ohw());
  for (int i = 0; i < d.n; ++i) {
    detail::im2col(x.data() + static_cast<size_t>(i) * ex_in, d, cols.data());
    detail::mm_nn(k.data(), cols.data(), out.data() + static_cast<size_t>(i) * ex_out,
                  d.cout, static_cast<int>(d.k()), static_cast<int>(d.ohw()));
  }
  Shape out_shape = batched ? Shape{d.n, d.cout, d.oh, d.ow}
                            : Shape{d.cout, d.oh, d.ow};
  return detail::make_op(
      std::move(out_shape), std::move(out), {x, k}, [d](detail::Node& nd) {
        auto& px = *nd.parents[0];
        auto& pk = *nd.parents[1];
        size_t ex_in = static_cast<size_t>(d.cin) * d.h * d.w;
        size_t ex_out = static_cast<size_t>(d.cout) * d.ohw();
        std::vector<double> cols(d.k() * d.ohw());
        std::vector<double> dcols;
        if (px.requires_grad) {
          px.ensure_grad();
          dcols.assign(d.k() * d.ohw(), 0.0);
        }
        if (pk.requires_grad) pk.ensure_grad();
        for (int i = 0; i < d.n; ++i) {
          const double* dy = nd.grad.data() + static_cast<size_t>(i) * ex_out;
          if (pk.requires_grad) {
            // dW += dY * cols^T  (im2col recomputed from the saved input)
            detail::im2col(px.value.data() + static_cast<size_t>(i) * ex_in, d,
                           cols.data());
            detail::mm_nt(dy, cols.data(), pk.grad.data(), d.cout,
                          static_cast<int>(d.ohw()), static_cast<int>(d.k()));
          }
          if (px.requires_grad) {
            std::fill(dcols.begin(), dcols.end(), 0.0);
            // dcols = W^T * dY
            detail::mm_tn(pk.value.data(), dy, dcols.data(),
                          static_cast<int>(d.k()), d.cout,
                          static_cast<int>(d.ohw()));
            detail::col2im_add(dcols.data(), d,
                               px.grad.data() + static_cast<size_t>(i) * ex_in);
          }
        }
      });
}

// Per-channel batchnorm over [n,c,h,w] (rank-3 treated as n=1).
// Train mode normalizes with biased batch statistics and updates the
// running buffers in place with momentum 0.1; eval mode uses the buffers.
inline Tensor batchnorm2d(const Tensor& x, const Tensor& gamma,
                          const Tensor& beta, Tensor running_mean,
                          Tensor running_var, bool train,
                          double momentum = 0.1, double eps = 1e-5) {
  bool batched = x.rank() == 4;
  if (!batched && x.rank() != 3)
    throw shape_error("batchnorm2d: expected rank 3/4");
  int n = batched ? x.dim(0) : 1;
  int c = x.dim(batched ? 1 : 0);
  int h = x.dim(batched ? 2 : 1);
  int w = x.dim(batched ? 3 : 2);
  if (gamma.numel() != static_cast<size_t>(c) ||
      beta.numel() != static_cast<size_t>(c) ||
      running_mean.numel() != static_cast<size_t>(c) ||
      running_var.numel() != static_cast<size_t>(c))
    throw shape_error("batchnorm2d: per-channel parameter shape");

  size_t hw = static_cast<size_t>(h) * w;
  size_t chw = static_cast<size_t>(c) * hw;
  double count = static_cast<double>(n) * static_cast<double>(hw);

  std::vector<double> mean(static_cast<size_t>(c), 0.0);
  std::vector<double> var(static_cast<size_t>(c), 0.0);
  if (train) {
    for (int i = 0; i < n; ++i)
      for (int cc = 0; cc < c; ++cc) {
        const double* xc = x.data() + i * chw + cc * hw;
        double s = 0.0;
        for (size_t j = 0; j < hw; ++j) s += xc[j];
        mean[static_cast<size_t>(cc)] += s;
      }
    for (double& m : mean) m /= count;
    for (int i = 0; i < n; ++i)
      for (int cc = 0; cc < c; ++cc) {
        const double* xc = x.data() + i * chw + cc * hw;
        double m = mean[static_cast<size_t>(cc)];
        double s = 0.0;
        for (size_t j = 0; j < hw; ++j) s += (xc[j] - m) * (xc[j] - m);
        var[static_cast<size_t>(cc)] += s;
      }
    for (double& v : var) v /= count;
    for (int cc = 0; cc < c; ++cc) {
      running_mean.data()[cc] =
          (1.0 - momentum) * running_mean.data()[cc] + momentum * mean[cc];
      running_var.data()[cc] =
          (1.0 - momentum) * running_var.data()[cc] + momentum * var[cc];
    }
  } else {
    std::copy_n(running_mean.data(), c, mean.data());
    std::copy_n(running_var.data(), c, var.data());
  }

  std::vector<double> inv_std(static_cast<size_t>(c));
  for (int cc = 0; cc < c; ++cc)
    inv_std[static_cast<size_t>(cc)] = 1.0 / std::sqrt(var[cc] + eps);

  std::vector<double> out(x.numel());
  for (int i = 0; i < n; ++i)
    for (int cc = 0; cc < c; ++cc) {
      const double* xc = x.data() + i * chw + cc * hw;
      double* oc = out.data() + i * chw + cc * hw;
      double m = mean[static_cast<size_t>(cc)];
      double is = inv_std[static_cast<size_t>(cc)];
      double g = gamma.data()[cc], b = beta.data()[cc];
      for (size_t j = 0; j < hw; ++j) oc[j] = g * (xc[j] - m) * is + b;
    }

  return detail::make_op(
      x.shape(), std::move(out), {x, gamma, beta},
      [n, c, hw, chw, count, train, mean = std::move(mean),
       inv_std = std::move(inv_std)](detail::Node& nd) {
        auto& px = *nd.parents[0];
        auto& pg = *nd.parents[1];
        auto& pb = *nd.parents[2];
        if (pg.requires_grad) pg.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        if (px.requires_grad) px.ensure_grad();
        for (int cc = 0; cc < c; ++cc) {
          double m = mean[static_cast<size_t>(cc)];
          double is = inv_std[static_cast<size_t>(cc)];
          double g = pg.value[static_cast<size_t>(cc)];
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int i = 0; i < n; ++i) {
            const double* xc = px.value.data() + i * chw + cc * hw;
            const double* dyc = nd.grad.data() + i * chw + cc * hw;
            for (size_t j = 0; j < hw; ++j) {
              sum_dy += dyc[j];
              sum_dy_xhat += dyc[j] * (xc[j] - m) * is;
            }
          }
          if (pg.requires_grad) pg.grad[static_cast<size_t>(cc)] += sum_dy_xhat;
          if (pb.requires_grad) pb.grad[static_cast<size_t>(cc)] += sum_dy;
          if (!px.requires_grad) continue;
          if (train) {
            double inv_count = 1.0 / count;
            for (int i = 0; i < n; ++i) {
              const double* xc = px.value.data() + i * chw + cc * hw;
              const double* dyc = nd.grad.data() + i * chw + cc * hw;
              double* dxc = px.grad.data() + i * chw + cc * hw;
              for (size_t j = 0; j < hw; ++j) {
                double xhat = (xc[j] - m) * is;
                dxc[j] += g * is *
                          (dyc[j] - inv_count * sum_dy -
                           xhat * inv_count * sum_dy_xhat);
              }
            }
          } else {
            for (int i = 0; i < n; ++i) {
              const double* dyc = nd.grad.data() + i * chw + cc * hw;
              double* dxc = px.grad.data() + i * chw + cc * hw;
              for (size_t j = 0; j < hw; ++j) dxc[j] += dyc[j] * g * is;
            }
          }
        }
      });
}

// 2x2 average pooling, stride 2, floor semantics (odd trailing row/col
// dropped). x: [n,c,h,w] or [c,h,w].
inline Tensor avg_pool2d_2x2(const Tensor& x) {
  bool batched = x.rank() == 4;
  if (!batched && x.rank() != 3)
    throw shape_error("avg_pool2d: expected rank 3/4");
  int n = batched ? x.dim(0) : 1;
  int c = x.dim(batched ? 1 : 0);
  int h = x.dim(batched ? 2 : 1);
  int w = x.dim(batched ? 3 : 2);
  int oh = h / 2, ow = w / 2;
  if (oh <= 0 || ow <= 0) throw shape_error("avg_pool2d: input too small");
  size_t hw = static_cast<size_t>(h) * w;
  size_t ohw = static_cast<size_t>(oh) * ow;
  std::vector<double> out(static_cast<size_t>(n) * c * ohw);
  for (int i = 0; i < n; ++i)
    for (int cc = 0; cc < c; ++cc) {
      const double* xc = x.data() + (static_cast<size_t>(i) * c + cc) * hw;
      double* oc = out.data() + (static_cast<size_t>(i) * c + cc) * ohw;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const double* p = xc + static_cast<size_t>(2 * oy) * w + 2 * ox;
          oc[static_cast<size_t>(oy) * ow + ox] =
              0.25 * (p[0] + p[1] + p[w] + p[w + 1]);
        }
    }
  Shape out_shape = batched ? Shape{n, c, oh, ow} : Shape{c, oh, ow};
  return detail::make_op(
      std::move(out_shape), std::move(out), {x},
      [n, c, h, w, oh, ow, hw, ohw](detail::Node& nd) {
        auto& p = *nd.parents[0];
        p.ensure_grad();
        for (int i = 0; i < n; ++i)
          for (int cc = 0; cc < c; ++cc) {
            double* dxc = p.grad.data() + (static_cast<size_t>(i) * c + cc) * hw;
            const double* dyc =
                nd.grad.data() + (static_cast<size_t>(i) * c + cc) * ohw;
            for (int oy = 0; oy < oh; ++oy)
              for (int ox = 0; ox < ow; ++ox) {
                double g = 0.25 * dyc[static_cast<size_t>(oy) * ow + ox];
                double* q = dxc + static_cast<size_t>(2 * oy) * w + 2 * ox;
                q[0] += g;
                q[1] += g;
                q[w] += g;
                q[w + 1] += g;
              }
          }
      });
}

// mean over the frequency axis: [n,c,t,f] -> [n,t,c]
inline Tensor freq_mean(const Tensor& x) {
  if (x.rank() != 4) throw shape_error("freq_mean: expected rank-4");
  int n = x.dim(0), c = x.dim(1), t = x.dim(2), f = x.dim(3);
  std::vector<double> out(static_cast<size_t>(n) * t * c);
  double inv = 1.0 / f;
  for (int i = 0; i < n; ++i)
    for (int cc = 0; cc < c; ++cc)
      for (int tt = 0; tt < t; ++tt) {
        const double* row = x.data() + ((static_cast<size_t>(i) * c + cc) * t + tt) * f;
        double s = 0.0;
        for (int j = 0; j < f; ++j) s += row[j];
        out[(static_cast<size_t>(i) * t + tt) * c + cc] = s * inv;
      }
  return detail::make_op(
      {n, t, c}, std::move(out), {x}, [n, c, t, f, inv](detail::Node& nd) {
        auto& p = *nd.parents[0];
        p.ensure_grad();
        for (int i = 0; i < n; ++i)
          for (int cc = 0; cc < c; ++cc)
            for (int tt = 0; tt < t; ++tt) {
              double g = nd.grad[(static_cast<size_t>(i) * t + tt) * c + cc] * inv;
              double* row =
                  p.grad.data() + ((static_cast<size_t>(i) * c + cc) * t + tt) * f;
              for (int j = 0; j < f; ++j) row[j] += g;
            }
      });
}

// pick one example out of a [n,t,c] batch -> [t,c]
inline Tensor select_sequence(const Tensor& x, int index) {
  if (x.rank() != 3) throw shape_error("select_sequence: expected rank-3");
  int n = x.dim(0), t = x.dim(1), c = x.dim(2);
  if (index < 0 || index >= n) throw shape_error("select_sequence: index");
  size_t tc = static_cast<size_t>(t) * c;
  std::vector<double> out(tc);
  std::copy_n(x.data() + static_cast<size_t>(index) * tc, tc, out.data());
  return detail::make_op({t, c}, std::move(out), {x},
                         [index, tc](detail::Node& nd) {
                           auto& p = *nd.parents[0];
                           p.ensure_grad();
                           double* dst =
                               p.grad.data() + static_cast<size_t>(index) * tc;
                           for (size_t j = 0; j < tc; ++j) dst[j] += nd.grad[j];
                         });
}

}  // namespace acap

#endif  // ACAP_CONV_HPP
