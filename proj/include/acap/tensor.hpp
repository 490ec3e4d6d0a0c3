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
// Reverse-mode autodiff over dense row-major f64 tensors. Ops build a DAG of
// shared nodes; backward() runs the tape in reverse topological order, then
// frees the graph edges (training re-runs forward each step). Everything is
// single-threaded and deterministic.

#ifndef ACAP_TENSOR_HPP
#define ACAP_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "acap/error.hpp"
#include "acap/rng.hpp"

namespace acap {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw shape_error("non-positive tensor dim");
    n *= static_cast<size_t>(d);
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily, same numel as value
  bool requires_grad = false;
  bool is_leaf = true;
  bool freed = false;  // graph edges released by backward()
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // pull node.grad into parents' grads

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// --- dense matmul kernels, accumulate into C ----------------------------

// C[m,n] += A[m,k] * B[k,n]
inline void mm_nn(const double* A, const double* B, double* C, int m, int k,
                  int n) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<size_t>(i) * k;
    double* c = C + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = a[p];
      const double* b = B + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m,n] += A[m,k] * B^T where B is [n,k]
inline void mm_nt(const double* A, const double* B, double* C, int m, int k,
                  int n) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<size_t>(i) * k;
    double* c = C + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* b = B + static_cast<size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += a[p] * b[p];
      c[j] += acc;
    }
  }
}

// C[m,n] += A^T * B where A is [k,m], B is [k,n]
inline void mm_tn(const double* A, const double* B, double* C, int m, int k,
                  int n) {
  for (int p = 0; p < k; ++p) {
    const double* a = A + static_cast<size_t>(p) * m;
    const double* b = B + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      double av = a[i];
      double* c = C + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return from_data(std::move(shape), {});
  }

  static Tensor full(Shape shape, double v) {
    size_t n = shape_numel(shape);
    Tensor t;
    t.node_ = std::make_shared<detail::Node>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(n, v);
    return t;
  }

  static Tensor scalar(double v) { return full({1}, v); }

  // data may be empty (zeros) or must match numel
  static Tensor from_data(Shape shape, std::vector<double> data) {
    size_t n = shape_numel(shape);
    if (!data.empty() && data.size() != n)
      throw shape_error("data size does not match shape " + shape_str(shape));
    if (data.empty()) data.assign(n, 0.0);
    Tensor t;
    t.node_ = std::make_shared<detail::Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    return t;
  }

  static Tensor randn_trunc(Shape shape, Rng& rng, double stddev) {
    Tensor t = zeros(std::move(shape));
    for (double& v : t.node_->value) v = rng.trunc_normal(stddev);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  size_t numel() const { return node_->value.size(); }

  double* data() { return node_->value.data(); }
  const double* data() const { return node_->value.data(); }
  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }

  double item() const {
    if (numel() != 1) throw shape_error("item() on non-scalar tensor");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return node_->grad.size() == numel(); }
  std::vector<double>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<double>& grad_view() const { return node_->grad; }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  std::shared_ptr<detail::Node> node() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_op(Shape shape, std::vector<double> value,
                      std::vector<Tensor> parents,
                      std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->is_leaf = false;
  for (const Tensor& p : parents) {
    if (p.node()->requires_grad) n->requires_grad = true;
    n->parents.push_back(p.node());
  }
  if (n->requires_grad) n->backprop = std::move(backprop);
  return Tensor(n);
}

inline void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* op) {
  if (a.shape() != b.shape())
    throw shape_error(std::string(op) + ": shape mismatch " +
                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline void accumulate(Node& dst, const std::vector<double>& src) {
  dst.ensure_grad();
  for (size_t i = 0; i < src.size(); ++i) dst.grad[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    for (auto& p : n.parents)
      if (p->requires_grad) detail::accumulate(*p, n.grad);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    if (n.parents[0]->requires_grad) detail::accumulate(*n.parents[0], n.grad);
    if (n.parents[1]->requires_grad) {
      n.parents[1]->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i)
        n.parents[1]->grad[i] -= n.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return detail::make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i)
        pa.grad[i] += n.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i)
        pb.grad[i] += n.grad[i] * pa.value[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  return detail::make_op(a.shape(), std::move(out), {a}, [c](detail::Node& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i] * c;
  });
}

// elementwise multiply by a constant buffer (no gradient into the mask)
inline Tensor mul_mask(const Tensor& a,
                       std::shared_ptr<const std::vector<double>> mask) {
  if (mask->size() != a.numel()) throw shape_error("mul_mask: size mismatch");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * (*mask)[i];
  return detail::make_op(a.shape(), std::move(out), {a},
                         [mask](detail::Node& n) {
                           auto& p = *n.parents[0];
                           p.ensure_grad();
                           for (size_t i = 0; i < n.grad.size(); ++i)
                             p.grad[i] += n.grad[i] * (*mask)[i];
                         });
}

// elementwise add of a constant buffer (positional encodings etc.)
inline Tensor add_const(const Tensor& a,
                        std::shared_ptr<const std::vector<double>> c) {
  if (c->size() != a.numel()) throw shape_error("add_const: size mismatch");
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + (*c)[i];
  return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& n) {
    detail::accumulate(*n.parents[0], n.grad);
  });
}

inline Tensor abs_val(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(a.data()[i]);
  return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      double x = p.value[i];
      double s = (x > 0.0) ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
      p.grad[i] += n.grad[i] * s;
    }
  });
}

inline Tensor square(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * a.data()[i];
  return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      p.grad[i] += n.grad[i] * 2.0 * p.value[i];
  });
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

enum class Act { kRelu, kGelu };

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      if (p.value[i] > 0.0) p.grad[i] += n.grad[i];
  });
}

inline Tensor gelu(const Tensor& a) {
  // exact form: x * Phi(x)
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) {
    double x = a.data()[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
  }
  return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (size_t i = 0; i < n.grad.size(); ++i) {
      double x = p.value[i];
      double phi = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      double Phi = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
      p.grad[i] += n.grad[i] * (Phi + x * phi);
    }
  });
}

inline Tensor activation(const Tensor& a, Act kind) {
  return kind == Act::kRelu ? relu(a) : gelu(a);
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw shape_error("matmul: expected rank-2 tensors");
  if (a.dim(1) != b.dim(0))
    throw shape_error("matmul: inner dims " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()));
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  detail::mm_nn(a.data(), b.data(), out.data(), m, k, n);
  return detail::make_op({m, n}, std::move(out), {a, b},
                         [m, k, n](detail::Node& nd) {
                           auto& pa = *nd.parents[0];
                           auto& pb = *nd.parents[1];
                           if (pa.requires_grad) {
                             pa.ensure_grad();
                             // dA = dC * B^T
                             detail::mm_nt(nd.grad.data(), pb.value.data(),
                                           pa.grad.data(), m, n, k);
                           }
                           if (pb.requires_grad) {
                             pb.ensure_grad();
                             // dB = A^T * dC
                             detail::mm_tn(pa.value.data(), nd.grad.data(),
                                           pb.grad.data(), k, m, n);
                           }
                         });
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw shape_error("transpose: expected rank-2");
  int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.numel());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(j) * m + i] = a.data()[static_cast<size_t>(i) * n + j];
  return detail::make_op({n, m}, std::move(out), {a},
                         [m, n](detail::Node& nd) {
                           auto& p = *nd.parents[0];
                           p.ensure_grad();
                           for (int i = 0; i < m; ++i)
                             for (int j = 0; j < n; ++j)
                               p.grad[static_cast<size_t>(i) * n + j] +=
                                   nd.grad[static_cast<size_t>(j) * m + i];
                         });
}

// x[n,in] * W[in,out] + b[out]; pass an undefined Tensor to skip the bias
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2)
    throw shape_error("linear: expected rank-2 x and w");
  if (x.dim(1) != w.dim(0))
    throw shape_error("linear: " + shape_str(x.shape()) + " x " +
                      shape_str(w.shape()));
  int n = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != out_dim))
    throw shape_error("linear: bias shape");
  std::vector<double> out(static_cast<size_t>(n) * out_dim, 0.0);
  detail::mm_nn(x.data(), w.data(), out.data(), n, in, out_dim);
  if (has_bias) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < out_dim; ++j)
        out[static_cast<size_t>(i) * out_dim + j] += b.data()[j];
  }
  std::vector<Tensor> parents = {x, w};
  if (has_bias) parents.push_back(b);
  return detail::make_op(
      {n, out_dim}, std::move(out), std::move(parents),
      [n, in, out_dim, has_bias](detail::Node& nd) {
        auto& px = *nd.parents[0];
        auto& pw = *nd.parents[1];
        if (px.requires_grad) {
          px.ensure_grad();
          detail::mm_nt(nd.grad.data(), pw.value.data(), px.grad.data(), n,
                        out_dim, in);
        }
        if (pw.requires_grad) {
          pw.ensure_grad();
          detail::mm_tn(px.value.data(), nd.grad.data(), pw.grad.data(), in,
                        n, out_dim);
        }
        if (has_bias && nd.parents[2]->requires_grad) {
          auto& pb = *nd.parents[2];
          pb.ensure_grad();
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < out_dim; ++j)
              pb.grad[j] += nd.grad[static_cast<size_t>(i) * out_dim + j];
        }
      });
}

// ---------------------------------------------------------------------------
// reductions / reshapes
// ---------------------------------------------------------------------------

inline Tensor mean_all(const Tensor& a) {
  double s = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) s += a.data()[i];
  double inv = 1.0 / static_cast<double>(a.numel());
  return detail::make_op({1}, {s * inv}, {a}, [inv](detail::Node& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    double g = n.grad[0] * inv;
    for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
  });
}

inline Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (size_t i = 0; i < a.numel(); ++i) s += a.data()[i];
  return detail::make_op({1}, {s}, {a}, [](detail::Node& n) {
    auto& p = *n.parents[0];
    p.ensure_grad();
    for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[0];
  });
}

// mean over rows selected by mask: x[n,d] -> [d]; at least one valid row
inline Tensor masked_mean_rows(const Tensor& x,
                               const std::vector<uint8_t>& row_valid) {
  if (x.rank() != 2) throw shape_error("masked_mean_rows: expected rank-2");
  int n = x.dim(0), d = x.dim(1);
  if (static_cast<int>(row_valid.size()) != n)
    throw shape_error("masked_mean_rows: mask length");
  int count = 0;
  for (uint8_t v : row_valid) count += v ? 1 : 0;
  if (count == 0)
    throw shape_error("masked_mean_rows: no valid positions");
  std::vector<double> out(static_cast<size_t>(d), 0.0);
  for (int i = 0; i < n; ++i) {
    if (!row_valid[static_cast<size_t>(i)]) continue;
    const double* row = x.data() + static_cast<size_t>(i) * d;
    for (int j = 0; j < d; ++j) out[static_cast<size_t>(j)] += row[j];
  }
  double inv = 1.0 / count;
  for (double& v : out) v *= inv;
  return detail::make_op({d}, std::move(out), {x},
                         [n, d, inv, row_valid](detail::Node& nd) {
                           auto& p = *nd.parents[0];
                           p.ensure_grad();
                           for (int i = 0; i < n; ++i) {
                             if (!row_valid[static_cast<size_t>(i)]) continue;
                             double* g = p.grad.data() + static_cast<size_t>(i) * d;
                             for (int j = 0; j < d; ++j)
                               g[j] += nd.grad[static_cast<size_t>(j)] * inv;
                           }
                         });
}

inline Tensor slice_cols(const Tensor& x, int start, int len) {
  if (x.rank() != 2) throw shape_error("slice_cols: expected rank-2");
  int n = x.dim(0), d = x.dim(1);
  if (start < 0 || len <= 0 || start + len > d)
    throw shape_error("slice_cols: range out of bounds");
  std::vector<double> out(static_cast<size_t>(n) * len);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < len; ++j)
      out[static_cast<size_t>(i) * len + j] =
          x.data()[static_cast<size_t>(i) * d + start + j];
  return detail::make_op({n, len}, std::move(out), {x},
                         [n, d, start, len](detail::Node& nd) {
                           auto& p = *nd.parents[0];
                           p.ensure_grad();
                           for (int i = 0; i < n; ++i)
                             for (int j = 0; j < len; ++j)
                               p.grad[static_cast<size_t>(i) * d + start + j] +=
                                   nd.grad[static_cast<size_t>(i) * len + j];
                         });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw shape_error("concat_cols: no parts");
  int n = parts[0].dim(0);
  int total = 0;
  for (const Tensor& t : parts) {
    if (t.rank() != 2 || t.dim(0) != n)
      throw shape_error("concat_cols: row mismatch");
    total += t.dim(1);
  }
  std::vector<double> out(static_cast<size_t>(n) * total);
  std::vector<int> widths;
  int off = 0;
  for (const Tensor& t : parts) {
    int d = t.dim(1);
    widths.push_back(d);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j)
        out[static_cast<size_t>(i) * total + off + j] =
            t.data()[static_cast<size_t>(i) * d + j];
    off += d;
  }
  return detail::make_op(
      {n, total}, std::move(out), parts,
      [n, total, widths](detail::Node& nd) {
        int off = 0;
        for (size_t k = 0; k < nd.parents.size(); ++k) {
          auto& p = *nd.parents[k];
          int d = widths[k];
          if (p.requires_grad) {
            p.ensure_grad();
            for (int i = 0; i < n; ++i)
              for (int j = 0; j < d; ++j)
                p.grad[static_cast<size_t>(i) * d + j] +=
                    nd.grad[static_cast<size_t>(i) * total + off + j];
          }
          off += d;
        }
      });
}

// ---------------------------------------------------------------------------
// softmax family
// ---------------------------------------------------------------------------

namespace detail {

inline void softmax_row(const double* x, double* y, int d) {
  double m = x[0];
  for (int j = 1; j < d; ++j) m = std::max(m, x[j]);
  double s = 0.0;
  for (int j = 0; j < d; ++j) {
    y[j] = std::exp(x[j] - m);
    s += y[j];
  }
  double inv = 1.0 / s;
  for (int j = 0; j < d; ++j) y[j] *= inv;
}

}  // namespace detail

// softmax over the given axis of a rank-2 tensor (axis 1 = rows)
inline Tensor softmax(const Tensor& x, int axis = 1) {
  if (x.rank() != 2) throw shape_error("softmax: expected rank-2");
  if (axis == 0) return transpose(softmax(transpose(x), 1));
  if (axis != 1) throw shape_error("softmax: bad axis");
  int n = x.dim(0), d = x.dim(1);
  std::vector<double> out(x.numel());
  for (int i = 0; i < n; ++i)
    detail::softmax_row(x.data() + static_cast<size_t>(i) * d,
                        out.data() + static_cast<size_t>(i) * d, d);
  std::vector<double> y = out;  // saved for backward
  return detail::make_op(
      x.shape(), std::move(out), {x},
      [n, d, y = std::move(y)](detail::Node& nd) {
        auto& p = *nd.parents[0];
        p.ensure_grad();
        for (int i = 0; i < n; ++i) {
          const double* yi = y.data() + static_cast<size_t>(i) * d;
          const double* gi = nd.grad.data() + static_cast<size_t>(i) * d;
          double dot = 0.0;
          for (int j = 0; j < d; ++j) dot += gi[j] * yi[j];
          double* o = p.grad.data() + static_cast<size_t>(i) * d;
          for (int j = 0; j < d; ++j) o[j] += yi[j] * (gi[j] - dot);
        }
      });
}

// row-wise softmax restricted to valid columns; invalid columns get 0.
// Every row must have at least one valid column.
inline Tensor masked_softmax_rows(const Tensor& x,
                                  const std::vector<uint8_t>& col_valid) {
  if (x.rank() != 2) throw shape_error("masked_softmax_rows: expected rank-2");
  int n = x.dim(0), d = x.dim(1);
  if (static_cast<int>(col_valid.size()) != d)
    throw shape_error("masked_softmax_rows: mask length");
  bool any = false;
  for (uint8_t v : col_valid) any = any || v;
  if (!any) throw shape_error("masked_softmax_rows: all columns masked");
  std::vector<double> out(x.numel(), 0.0);
  for (int i = 0; i < n; ++i) {
    const double* xi = x.data() + static_cast<size_t>(i) * d;
    double* yi = out.data() + static_cast<size_t>(i) * d;
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < d; ++j)
      if (col_valid[static_cast<size_t>(j)]) m = std::max(m, xi[j]);
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      if (!col_valid[static_cast<size_t>(j)]) continue;
      yi[j] = std::exp(xi[j] - m);
      s += yi[j];
    }
    double inv = 1.0 / s;
    for (int j = 0; j < d; ++j) yi[j] *= inv;
  }
  std::vector<double> y = out;
  return detail::make_op(
      x.shape(), std::move(out), {x},
      [n, d, col_valid, y = std::move(y)](detail::Node& nd) {
        auto& p = *nd.parents[0];
        p.ensure_grad();
        for (int i = 0; i < n; ++i) {
          const double* yi = y.data() + static_cast<size_t>(i) * d;
          const double* gi = nd.grad.data() + static_cast<size_t>(i) * d;
          double dot = 0.0;
          for (int j = 0; j < d; ++j)
            if (col_valid[static_cast<size_t>(j)]) dot += gi[j] * yi[j];
          double* o = p.grad.data() + static_cast<size_t>(i) * d;
          for (int j = 0; j < d; ++j)
            if (col_valid[static_cast<size_t>(j)])
              o[j] += yi[j] * (gi[j] - dot);
        }
      });
}

// causal softmax over square attention scores: row i normalizes over
// columns 0..i, later columns get 0
inline Tensor causal_softmax(const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) != x.dim(1))
    throw shape_error("causal_softmax: expected square scores");
  int n = x.dim(0);
  std::vector<double> out(x.numel(), 0.0);
  for (int i = 0; i < n; ++i) {
    const double* xi = x.data() + static_cast<size_t>(i) * n;
    double* yi = out.data() + static_cast<size_t>(i) * n;
    double m = xi[0];
    for (int j = 1; j <= i; ++j) m = std::max(m, xi[j]);
    double s = 0.0;
    for (int j = 0; j <= i; ++j) {
      yi[j] = std::exp(xi[j] - m);
      s += yi[j];
    }
    double inv = 1.0 / s;
    for (int j = 0; j <= i; ++j) yi[j] *= inv;
  }
  std::vector<double> y = out;
  return detail::make_op(
      x.shape(), std::move(out), {x},
      [n, y = std::move(y)](detail::Node& nd) {
        auto& p = *nd.parents[0];
        p.ensure_grad();
        for (int i = 0; i < n; ++i) {
          const double* yi = y.data() + static_cast<size_t>(i) * n;
          const double* gi = nd.grad.data() + static_cast<size_t>(i) * n;
          double dot = 0.0;
          for (int j = 0; j <= i; ++j) dot += gi[j] * yi[j];
          double* o = p.grad.data() + static_cast<size_t>(i) * n;
          for (int j = 0; j <= i; ++j) o[j] += yi[j] * (gi[j] - dot);
        }
      });
}

// ---------------------------------------------------------------------------
// layer norm (over last dim of a rank-2 tensor)
// ---------------------------------------------------------------------------

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, double eps = 1e-5) {
  if (x.rank() != 2) throw shape_error("layer_norm: expected rank-2");
  int n = x.dim(0), d = x.dim(1);
  if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 ||
      beta.dim(0) != d)
    throw shape_error("layer_norm: gamma/beta shape");
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double* xi = x.data() + static_cast<size_t>(i) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xi[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= d;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = is;
    for (int j = 0; j < d; ++j) {
      double h = (xi[j] - mu) * is;
      xhat[static_cast<size_t>(i) * d + j] = h;
      out[static_cast<size_t>(i) * d + j] = gamma.data()[j] * h + beta.data()[j];
    }
  }
  return detail::make_op(
      x.shape(), std::move(out), {x, gamma, beta},
      [n, d, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](detail::Node& nd) {
        auto& px = *nd.parents[0];
        auto& pg = *nd.parents[1];
        auto& pb = *nd.parents[2];
        const std::vector<double>& g = nd.grad;
        if (pg.requires_grad) pg.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        if (px.requires_grad) px.ensure_grad();
        for (int i = 0; i < n; ++i) {
          const double* hi = xhat.data() + static_cast<size_t>(i) * d;
          const double* gi = g.data() + static_cast<size_t>(i) * d;
          if (pg.requires_grad)
            for (int j = 0; j < d; ++j) pg.grad[j] += gi[j] * hi[j];
          if (pb.requires_grad)
            for (int j = 0; j < d; ++j) pb.grad[j] += gi[j];
          if (px.requires_grad) {
            double mean_dy = 0.0, mean_dyh = 0.0;
            for (int j = 0; j < d; ++j) {
              double dy = gi[j] * pg.value[j];
              mean_dy += dy;
              mean_dyh += dy * hi[j];
            }
            mean_dy /= d;
            mean_dyh /= d;
            double is = inv_std[static_cast<size_t>(i)];
            double* o = px.grad.data() + static_cast<size_t>(i) * d;
            for (int j = 0; j < d; ++j) {
              double dy = gi[j] * pg.value[j];
              o[j] += is * (dy - mean_dy - hi[j] * mean_dyh);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// cross entropy
// ---------------------------------------------------------------------------

// mean NLL over non-ignored positions; no label smoothing
inline Tensor cross_entropy(const Tensor& logits,
                            const std::vector<int>& targets, int ignore_id) {
  if (logits.rank() != 2) throw shape_error("cross_entropy: expected rank-2");
  int n = logits.dim(0), v = logits.dim(1);
  if (static_cast<int>(targets.size()) != n)
    throw shape_error("cross_entropy: target length");
  int valid = 0;
  double total = 0.0;
  std::vector<double> probs(logits.numel(), 0.0);  // softmax rows, saved
  for (int i = 0; i < n; ++i) {
    int t = targets[static_cast<size_t>(i)];
    if (t == ignore_id) continue;
    if (t < 0 || t >= v)
      throw shape_error("cross_entropy: target id " + std::to_string(t) +
                        " out of range");
    const double* xi = logits.data() + static_cast<size_t>(i) * v;
    double* pi = probs.data() + static_cast<size_t>(i) * v;
    detail::softmax_row(xi, pi, v);
    double m = xi[0];
    for (int j = 1; j < v; ++j) m = std::max(m, xi[j]);
    double lse = 0.0;
    for (int j = 0; j < v; ++j) lse += std::exp(xi[j] - m);
    lse = m + std::log(lse);
    total += lse - xi[t];
    ++valid;
  }
  if (valid == 0) throw shape_error("cross_entropy: empty loss (all ignored)");
  double inv = 1.0 / valid;
  return detail::make_op(
      {1}, {total * inv}, {logits},
      [n, v, inv, targets, ignore_id, probs = std::move(probs)](detail::Node& nd) {
        auto& p = *nd.parents[0];
        p.ensure_grad();
        double g = nd.grad[0] * inv;
        for (int i = 0; i < n; ++i) {
          int t = targets[static_cast<size_t>(i)];
          if (t == ignore_id) continue;
          const double* pi = probs.data() + static_cast<size_t>(i) * v;
          double* o = p.grad.data() + static_cast<size_t>(i) * v;
          for (int j = 0; j < v; ++j) o[j] += g * pi[j];
          o[t] -= g;
        }
      });
}

// ---------------------------------------------------------------------------
// embedding lookup
// ---------------------------------------------------------------------------

inline Tensor embedding(const Tensor& weight, const std::vector<int>& ids) {
  if (weight.rank() != 2) throw shape_error("embedding: expected rank-2");
  int v = weight.dim(0), d = weight.dim(1);
  int n = static_cast<int>(ids.size());
  std::vector<double> out(static_cast<size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    int id = ids[static_cast<size_t>(i)];
    if (id < 0 || id >= v)
      throw shape_error("embedding: token id " + std::to_string(id) +
                        " out of range for vocab " + std::to_string(v));
    std::copy_n(weight.data() + static_cast<size_t>(id) * d, d,
                out.data() + static_cast<size_t>(i) * d);
  }
  return detail::make_op({n, d}, std::move(out), {weight},
                         [d, ids](detail::Node& nd) {
                           auto& p = *nd.parents[0];
                           p.ensure_grad();
                           for (size_t i = 0; i < ids.size(); ++i) {
                             double* o = p.grad.data() +
                                         static_cast<size_t>(ids[i]) * d;
                             const double* g = nd.grad.data() + i * d;
                             for (int j = 0; j < d; ++j) o[j] += g[j];
                           }
                         });
}

// ---------------------------------------------------------------------------
// dropout / stop-gradient
// ---------------------------------------------------------------------------

inline Tensor dropout(const Tensor& x, double p, Rng& rng, bool train) {
  if (!train || p <= 0.0) return x;
  if (p >= 1.0) throw shape_error("dropout: p must be < 1");
  double keep_inv = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  for (double& m : *mask) m = (rng.uniform() < p) ? 0.0 : keep_inv;
  return mul_mask(x, std::move(mask));
}

inline Tensor stop_grad(const Tensor& x) {
  return Tensor::from_data(x.shape(),
                           std::vector<double>(x.values()));
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

inline void backward(const Tensor& loss) {
  auto root = loss.node();
  if (!root) throw shape_error("backward: undefined tensor");
  if (root->freed)
    throw std::runtime_error("backward: graph already freed by a previous backward");
  if (root->value.size() != 1)
    throw shape_error("backward: loss must be scalar");
  if (!root->requires_grad)
    throw std::runtime_error("backward: loss does not require grad");

  // post-order DFS (iterative): parents first, node last
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  struct Frame {
    detail::Node* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::Node* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backprop) {
      node->ensure_grad();
      node->backprop(*node);
    }
  }

  // free graph edges; leaves keep their (accumulated) grads
  for (detail::Node* node : order) {
    if (!node->is_leaf) {
      node->parents.clear();
      node->backprop = nullptr;
      node->grad.clear();
      node->grad.shrink_to_fit();
      node->freed = true;
    }
  }
}

}  // namespace acap

#endif  // ACAP_TENSOR_HPP
