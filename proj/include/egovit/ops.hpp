#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "egovit/tensor.hpp"

namespace egovit {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + Tensor::shape_str(a.shape()) +
              " vs " + Tensor::shape_str(b.shape()));
}

struct AxisSpan {
  std::size_t outer, len, inner;
};

inline AxisSpan axis_span(const std::vector<int>& shape, int axis) {
  require(axis >= 0 && axis < static_cast<int>(shape.size()),
          "axis " + std::to_string(axis) + " out of range for " + Tensor::shape_str(shape));
  AxisSpan s{1, static_cast<std::size_t>(shape[static_cast<std::size_t>(axis)]), 1};
  for (int i = 0; i < axis; ++i) s.outer *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i)
    s.inner *= static_cast<std::size_t>(shape[i]);
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = detail::op_result(a.shape(), {&a, &b});
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) + b.at(i);
  if (out.requires_grad()) {
    auto node = detail::make_node({&a, &b});
    auto ga = a.grad_ptr(), gb = b.grad_ptr(), go = out.grad_ptr();
    node->backward = [ga, gb, go, n]() {
      if (ga)
        for (std::size_t i = 0; i < n; ++i) (*ga)[i] += (*go)[i];
      if (gb)
        for (std::size_t i = 0; i < n; ++i) (*gb)[i] += (*go)[i];
    };
    out.attach_node(node);
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = detail::op_result(a.shape(), {&a, &b});
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) - b.at(i);
  if (out.requires_grad()) {
    auto node = detail::make_node({&a, &b});
    auto ga = a.grad_ptr(), gb = b.grad_ptr(), go = out.grad_ptr();
    node->backward = [ga, gb, go, n]() {
      if (ga)
        for (std::size_t i = 0; i < n; ++i) (*ga)[i] += (*go)[i];
      if (gb)
        for (std::size_t i = 0; i < n; ++i) (*gb)[i] -= (*go)[i];
    };
    out.attach_node(node);
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = detail::op_result(a.shape(), {&a, &b});
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = a.at(i) * b.at(i);
  if (out.requires_grad()) {
    auto node = detail::make_node({&a, &b});
    auto da = a.data_ptr(), db = b.data_ptr();
    auto ga = a.grad_ptr(), gb = b.grad_ptr(), go = out.grad_ptr();
    node->backward = [da, db, ga, gb, go, n]() {
      if (ga)
        for (std::size_t i = 0; i < n; ++i) (*ga)[i] += (*go)[i] * (*db)[i];
      if (gb)
        for (std::size_t i = 0; i < n; ++i) (*gb)[i] += (*go)[i] * (*da)[i];
    };
    out.attach_node(node);
  }
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = detail::op_result(a.shape(), {&a});
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = c * a.at(i);
  if (out.requires_grad()) {
    auto node = detail::make_node({&a});
    auto ga = a.grad_ptr();
    auto go = out.grad_ptr();
    node->backward = [ga, go, c, n]() {
      for (std::size_t i = 0; i < n; ++i) (*ga)[i] += c * (*go)[i];
    };
    out.attach_node(node);
  }
  return out;
}

inline Tensor sigmoid(const Tensor& x) {
  Tensor out = detail::op_result(x.shape(), {&x});
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    double v = x.at(i);
    out.at(i) = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                         : std::exp(v) / (1.0 + std::exp(v));
  }
  if (out.requires_grad()) {
    auto node = detail::make_node({&x});
    auto gx = x.grad_ptr();
    auto dy = out.data_ptr();
    auto go = out.grad_ptr();
    node->backward = [gx, dy, go, n]() {
      for (std::size_t i = 0; i < n; ++i) {
        double y = (*dy)[i];
        (*gx)[i] += (*go)[i] * y * (1.0 - y);
      }
    };
    out.attach_node(node);
  }
  return out;
}

inline Tensor tanh_op(const Tensor& x) {
  Tensor out = detail::op_result(x.shape(), {&x});
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out.at(i) = std::tanh(x.at(i));
  if (out.requires_grad()) {
    auto node = detail::make_node({&x});
    auto gx = x.grad_ptr();
    auto dy = out.data_ptr();
    auto go = out.grad_ptr();
    node->backward = [gx, dy, go, n]() {
      for (std::size_t i = 0; i < n; ++i) {
        double y = (*dy)[i];
        (*gx)[i] += (*go)[i] * (1.0 - y * y);
      }
    };
    out.attach_node(node);
  }
  return out;
}

/// GELU, tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
inline Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  Tensor out = detail::op_result(x.shape(), {&x});
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    double v = x.at(i);
    out.at(i) = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  if (out.requires_grad()) {
    auto node = detail::make_node({&x});
    auto dx = x.data_ptr();
    auto gx = x.grad_ptr();
    auto go = out.grad_ptr();
    node->backward = [dx, gx, go, n]() {
      for (std::size_t i = 0; i < n; ++i) {
        double v = (*dx)[i];
        double t = std::tanh(kC * (v + kA * v * v * v));
        double du = kC * (1.0 + 3.0 * kA * v * v);
        (*gx)[i] += (*go)[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
      }
    };
    out.attach_node(node);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

/// C[m,n] = sum_k A[m,k] * B[k,n]. Plain triple loop, k ascending, so results
/// are reproducible against a naive oracle.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.rank() == 2 && b.rank() == 2, "matmul: rank-2 operands required");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  detail::require(b.dim(0) == k, "matmul: inner dims " + std::to_string(k) + " vs " +
                                     std::to_string(b.dim(0)));
  Tensor out = detail::op_result({m, n}, {&a, &b});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += a.at(i * k + p) * b.at(p * n + j);
      out.at(static_cast<std::size_t>(i) * n + j) = s;
    }
  if (out.requires_grad()) {
    auto node = detail::make_node({&a, &b});
    auto da = a.data_ptr(), db = b.data_ptr();
    auto ga = a.grad_ptr(), gb = b.grad_ptr(), go = out.grad_ptr();
    node->backward = [da, db, ga, gb, go, m, k, n]() {
      if (ga)
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += (*go)[i * n + j] * (*db)[p * n + j];
            (*ga)[static_cast<std::size_t>(i) * k + p] += s;
          }
      if (gb)
        for (int p = 0; p < k; ++p)
          for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int i = 0; i < m; ++i) s += (*da)[i * k + p] * (*go)[i * n + j];
            (*gb)[static_cast<std::size_t>(p) * n + j] += s;
          }
    };
    out.attach_node(node);
  }
  return out;
}

/// C[m,n] = sum_k A[m,k] * B[n,k] (B transposed), for attention scores.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require(a.rank() == 2 && b.rank() == 2, "matmul_nt: rank-2 operands required");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  detail::require(b.dim(1) == k, "matmul_nt: inner dims " + std::to_string(k) + " vs " +
                                     std::to_string(b.dim(1)));
  Tensor out = detail::op_result({m, n}, {&a, &b});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += a.at(i * k + p) * b.at(j * k + p);
      out.at(static_cast<std::size_t>(i) * n + j) = s;
    }
  if (out.requires_grad()) {
    auto node = detail::make_node({&a, &b});
    auto da = a.data_ptr(), db = b.data_ptr();
    auto ga = a.grad_ptr(), gb = b.grad_ptr(), go = out.grad_ptr();
    node->backward = [da, db, ga, gb, go, m, k, n]() {
      if (ga)
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += (*go)[i * n + j] * (*db)[j * k + p];
            (*ga)[static_cast<std::size_t>(i) * k + p] += s;
          }
      if (gb)
        for (int j = 0; j < n; ++j)
          for (int p = 0; p < k; ++p) {
            double s = 0.0;
            for (int i = 0; i < m; ++i) s += (*go)[i * n + j] * (*da)[i * k + p];
            (*gb)[static_cast<std::size_t>(j) * k + p] += s;
          }
    };
    out.attach_node(node);
  }
  return out;
}

/// Adds b[K] to every trailing-dim row of x[..., K].
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
  detail::require(b.rank() == 1, "add_bias: bias must be rank-1");
  const int k = b.dim(0);
  detail::require(x.rank() >= 1 && x.dim(x.rank() - 1) == k,
                  "add_bias: last dim " + std::to_string(x.dim(x.rank() - 1)) +
                      " vs bias " + std::to_string(k));
  Tensor out = detail::op_result(x.shape(), {&x, &b});
  const std::size_t rows = x.size() / static_cast<std::size_t>(k);
  for (std::size_t r = 0; r < rows; ++r)
    for (int j = 0; j < k; ++j) out.at(r * k + j) = x.at(r * k + j) + b.at(j);
  if (out.requires_grad()) {
    auto node = detail::make_node({&x, &b});
    auto gx = x.grad_ptr(), gb = b.grad_ptr(), go = out.grad_ptr();
    node->backward = [gx, gb, go, rows, k]() {
      if (gx)
        for (std::size_t i = 0; i < rows * static_cast<std::size_t>(k); ++i)
          (*gx)[i] += (*go)[i];
      if (gb)
        for (int j = 0; j < k; ++j) {
          double s = 0.0;
          for (std::size_t r = 0; r < rows; ++r) s += (*go)[r * k + j];
          (*gb)[static_cast<std::size_t>(j)] += s;
        }
    };
    out.attach_node(node);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalizations and reductions
// ---------------------------------------------------------------------------

/// Softmax along `axis`, computed with max-subtraction. Output entries are in
/// (0,1] and each line sums to 1.
inline Tensor softmax(const Tensor& x, int axis) {
  auto span = detail::axis_span(x.shape(), axis);
  Tensor out = detail::op_result(x.shape(), {&x});
  for (std::size_t o = 0; o < span.outer; ++o)
    for (std::size_t in = 0; in < span.inner; ++in) {
      const std::size_t base = o * span.len * span.inner + in;
      double m = x.at(base);
      for (std::size_t l = 1; l < span.len; ++l)
        m = std::max(m, x.at(base + l * span.inner));
      double s = 0.0;
      for (std::size_t l = 0; l < span.len; ++l) {
        double e = std::exp(x.at(base + l * span.inner) - m);
        out.at(base + l * span.inner) = e;
        s += e;
      }
      for (std::size_t l = 0; l < span.len; ++l) out.at(base + l * span.inner) /= s;
    }
  if (out.requires_grad()) {
    auto node = detail::make_node({&x});
    auto gx = x.grad_ptr();
    auto dy = out.data_ptr();
    auto go = out.grad_ptr();
    node->backward = [gx, dy, go, span]() {
      for (std::size_t o = 0; o < span.outer; ++o)
        for (std::size_t in = 0; in < span.inner; ++in) {
          const std::size_t base = o * span.len * span.inner + in;
          double dot = 0.0;
          for (std::size_t l = 0; l < span.len; ++l) {
            std::size_t i = base + l * span.inner;
            dot += (*go)[i] * (*dy)[i];
          }
          for (std::size_t l = 0; l < span.len; ++l) {
            std::size_t i = base + l * span.inner;
            (*gx)[i] += (*dy)[i] * ((*go)[i] - dot);
          }
        }
    };
    out.attach_node(node);
  }
  return out;
}

/// LayerNorm over the last dim with biased variance: y = gamma*(x-mu)/sqrt(var+eps)+beta.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps) {
  detail::require(gamma.rank() == 1 && beta.rank() == 1, "layer_norm: affine params must be rank-1");
  const int d = gamma.dim(0);
  detail::require(beta.dim(0) == d, "layer_norm: gamma/beta length mismatch");
  detail::require(x.rank() >= 1 && x.dim(x.rank() - 1) == d,
                  "layer_norm: last dim " + std::to_string(x.dim(x.rank() - 1)) +
                      " vs params " + std::to_string(d));
  detail::require(eps > 0.0, "layer_norm: epsilon must be positive");
  Tensor out = detail::op_result(x.shape(), {&x, &gamma, &beta});
  const std::size_t rows = x.size() / static_cast<std::size_t>(d);
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += x.at(base + j);
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      double c = x.at(base + j) - mu;
      var += c * c;
    }
    var /= d;
    double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (int j = 0; j < d; ++j) {
      double h = (x.at(base + j) - mu) * inv;
      xhat[base + j] = h;
      out.at(base + j) = gamma.at(j) * h + beta.at(j);
    }
  }
  if (out.requires_grad()) {
    auto node = detail::make_node({&x, &gamma, &beta});
    auto dgamma = gamma.data_ptr();
    auto gx = x.grad_ptr(), gg = gamma.grad_ptr(), gb = beta.grad_ptr(), go = out.grad_ptr();
    node->backward = [dgamma, gx, gg, gb, go, rows, d, xhat = std::move(xhat),
                      inv_std = std::move(inv_std)]() {
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * d;
        if (gg)
          for (int j = 0; j < d; ++j) (*gg)[j] += (*go)[base + j] * xhat[base + j];
        if (gb)
          for (int j = 0; j < d; ++j) (*gb)[j] += (*go)[base + j];
        if (gx) {
          double mean_dh = 0.0, mean_dh_xhat = 0.0;
          for (int j = 0; j < d; ++j) {
            double dh = (*go)[base + j] * (*dgamma)[j];
            mean_dh += dh;
            mean_dh_xhat += dh * xhat[base + j];
          }
          mean_dh /= d;
          mean_dh_xhat /= d;
          for (int j = 0; j < d; ++j) {
            double dh = (*go)[base + j] * (*dgamma)[j];
            (*gx)[base + j] += inv_std[r] * (dh - mean_dh - xhat[base + j] * mean_dh_xhat);
          }
        }
      }
    };
    out.attach_node(node);
  }
  return out;
}

inline Tensor sum_axis(const Tensor& x, int axis) {
  auto span = detail::axis_span(x.shape(), axis);
  std::vector<int> out_shape;
  for (int i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.dim(i));
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out = detail::op_result(out_shape, {&x});
  for (std::size_t o = 0; o < span.outer; ++o)
    for (std::size_t in = 0; in < span.inner; ++in) {
      double s = 0.0;
      for (std::size_t l = 0; l < span.len; ++l)
        s += x.at((o * span.len + l) * span.inner + in);
      out.at(o * span.inner + in) = s;
    }
  if (out.requires_grad()) {
    auto node = detail::make_node({&x});
    auto gx = x.grad_ptr();
    auto go = out.grad_ptr();
    node->backward = [gx, go, span]() {
      for (std::size_t o = 0; o < span.outer; ++o)
        for (std::size_t in = 0; in < span.inner; ++in) {
          double g = (*go)[o * span.inner + in];
          for (std::size_t l = 0; l < span.len; ++l)
            (*gx)[(o * span.len + l) * span.inner + in] += g;
        }
    };
    out.attach_node(node);
  }
  return out;
}

/// Arithmetic mean along `axis`; the output shape drops that axis.
inline Tensor mean_axis(const Tensor& x, int axis) {
  auto span = detail::axis_span(x.shape(), axis);
  return scale(sum_axis(x, axis), 1.0 / static_cast<double>(span.len));
}

inline Tensor mean_all(const Tensor& x) {
  Tensor out = detail::op_result({1}, {&x});
  const std::size_t n = x.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x.at(i);
  out.at(0) = s / static_cast<double>(n);
  if (out.requires_grad()) {
    auto node = detail::make_node({&x});
    auto gx = x.grad_ptr();
    auto go = out.grad_ptr();
    node->backward = [gx, go, n]() {
      double g = (*go)[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) (*gx)[i] += g;
    };
    out.attach_node(node);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural ops (row views)
// ---------------------------------------------------------------------------

/// Views x as rows of length `row_len` and gathers rows by index. Indices may
/// repeat (broadcast); backward scatter-adds. The workhorse behind window
/// partitioning, cyclic shifts, patch flattening and token-map broadcasts.
inline Tensor gather_rows(const Tensor& x, int row_len, const std::vector<int>& idx) {
  detail::require(row_len > 0 && x.size() % static_cast<std::size_t>(row_len) == 0,
                  "gather_rows: row_len " + std::to_string(row_len) +
                      " does not divide numel " + std::to_string(x.size()));
  const int rows_in = static_cast<int>(x.size()) / row_len;
  for (int i : idx)
    detail::require(i >= 0 && i < rows_in, "gather_rows: index " + std::to_string(i) +
                                               " out of range [0," + std::to_string(rows_in) + ")");
  Tensor out = detail::op_result({static_cast<int>(idx.size()), row_len}, {&x});
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const std::size_t src = static_cast<std::size_t>(idx[j]) * row_len;
    const std::size_t dst = j * row_len;
    for (int c = 0; c < row_len; ++c) out.at(dst + c) = x.at(src + c);
  }
  if (out.requires_grad()) {
    auto node = detail::make_node({&x});
    auto gx = x.grad_ptr();
    auto go = out.grad_ptr();
    node->backward = [gx, go, row_len, idx]() {
      for (std::size_t j = 0; j < idx.size(); ++j) {
        const std::size_t dst = static_cast<std::size_t>(idx[j]) * row_len;
        const std::size_t src = j * row_len;
        for (int c = 0; c < row_len; ++c) (*gx)[dst + c] += (*go)[src + c];
      }
    };
    out.attach_node(node);
  }
  return out;
}

/// Stacks rank-2 tensors with equal column counts along axis 0.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "concat_rows: empty input");
  const int k = parts[0].dim(1);
  int total = 0;
  for (const Tensor& p : parts) {
    detail::require(p.rank() == 2 && p.dim(1) == k, "concat_rows: column mismatch");
    total += p.dim(0);
  }
  Tensor out({total, k});
  bool rg = false;
  if (grad_mode())
    for (const Tensor& p : parts) rg = rg || p.requires_grad();
  if (rg) out.set_requires_grad(true);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    for (std::size_t i = 0; i < p.size(); ++i) out.at(off + i) = p.at(i);
    off += p.size();
  }
  if (out.requires_grad()) {
    auto node = std::make_shared<GradNode>();
    node->parents = parts;
    std::vector<std::shared_ptr<std::vector<double>>> grads;
    std::vector<std::size_t> sizes;
    for (const Tensor& p : parts) {
      grads.push_back(p.grad_ptr());
      sizes.push_back(p.size());
    }
    auto go = out.grad_ptr();
    node->backward = [grads, sizes, go]() {
      std::size_t off2 = 0;
      for (std::size_t pi = 0; pi < grads.size(); ++pi) {
        if (grads[pi])
          for (std::size_t i = 0; i < sizes[pi]; ++i) (*grads[pi])[i] += (*go)[off2 + i];
        off2 += sizes[pi];
      }
    };
    out.attach_node(node);
  }
  return out;
}

/// Concatenates rank-2 tensors with equal row counts along the last axis.
inline Tensor concat_last(const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "concat_last: empty input");
  const int rows = parts[0].dim(0);
  int total_k = 0;
  for (const Tensor& p : parts) {
    detail::require(p.rank() == 2 && p.dim(0) == rows, "concat_last: row mismatch");
    total_k += p.dim(1);
  }
  Tensor out({rows, total_k});
  bool rg = false;
  if (grad_mode())
    for (const Tensor& p : parts) rg = rg || p.requires_grad();
  if (rg) out.set_requires_grad(true);
  int col = 0;
  for (const Tensor& p : parts) {
    const int k = p.dim(1);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < k; ++c)
        out.at(static_cast<std::size_t>(r) * total_k + col + c) = p.at(static_cast<std::size_t>(r) * k + c);
    col += k;
  }
  if (out.requires_grad()) {
    auto node = std::make_shared<GradNode>();
    node->parents = parts;
    std::vector<std::shared_ptr<std::vector<double>>> grads;
    std::vector<int> widths;
    for (const Tensor& p : parts) {
      grads.push_back(p.grad_ptr());
      widths.push_back(p.dim(1));
    }
    auto go = out.grad_ptr();
    node->backward = [grads, widths, go, rows, total_k]() {
      int col2 = 0;
      for (std::size_t pi = 0; pi < grads.size(); ++pi) {
        const int k = widths[pi];
        if (grads[pi])
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < k; ++c)
              (*grads[pi])[static_cast<std::size_t>(r) * k + c] +=
                  (*go)[static_cast<std::size_t>(r) * total_k + col2 + c];
        col2 += k;
      }
    };
    out.attach_node(node);
  }
  return out;
}

inline Tensor slice_rows(const Tensor& x, int from, int count) {
  detail::require(x.rank() == 2, "slice_rows: rank-2 input required");
  detail::require(from >= 0 && count > 0 && from + count <= x.dim(0),
                  "slice_rows: range [" + std::to_string(from) + "," +
                      std::to_string(from + count) + ") out of " + std::to_string(x.dim(0)));
  std::vector<int> idx(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = from + i;
  return gather_rows(x, x.dim(1), idx);
}

inline Tensor slice_last(const Tensor& x, int from, int count) {
  detail::require(x.rank() == 2, "slice_last: rank-2 input required");
  const int rows = x.dim(0), k = x.dim(1);
  detail::require(from >= 0 && count > 0 && from + count <= k,
                  "slice_last: range [" + std::to_string(from) + "," +
                      std::to_string(from + count) + ") out of " + std::to_string(k));
  Tensor out = detail::op_result({rows, count}, {&x});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < count; ++c)
      out.at(static_cast<std::size_t>(r) * count + c) = x.at(static_cast<std::size_t>(r) * k + from + c);
  if (out.requires_grad()) {
    auto node = detail::make_node({&x});
    auto gx = x.grad_ptr();
    auto go = out.grad_ptr();
    node->backward = [gx, go, rows, k, from, count]() {
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < count; ++c)
          (*gx)[static_cast<std::size_t>(r) * k + from + c] +=
              (*go)[static_cast<std::size_t>(r) * count + c];
    };
    out.attach_node(node);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Row geometry (used by the dynamic merge)
// ---------------------------------------------------------------------------

/// Divides each row by max(||row||_2, eps).
inline Tensor normalize_rows(const Tensor& x, double eps) {
  detail::require(x.rank() == 2, "normalize_rows: rank-2 input required");
  const int rows = x.dim(0), d = x.dim(1);
  Tensor out = detail::op_result(x.shape(), {&x});
  std::vector<double> norms(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      double v = x.at(static_cast<std::size_t>(r) * d + j);
      s += v * v;
    }
    norms[static_cast<std::size_t>(r)] = std::sqrt(s);
    double m = std::max(norms[static_cast<std::size_t>(r)], eps);
    for (int j = 0; j < d; ++j)
      out.at(static_cast<std::size_t>(r) * d + j) = x.at(static_cast<std::size_t>(r) * d + j) / m;
  }
  if (out.requires_grad()) {
    auto node = detail::make_node({&x});
    auto gx = x.grad_ptr();
    auto dy = out.data_ptr();
    auto go = out.grad_ptr();
    node->backward = [gx, dy, go, rows, d, eps, norms = std::move(norms)]() {
      for (int r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * d;
        double n = norms[static_cast<std::size_t>(r)];
        if (n > eps) {
          double dot = 0.0;
          for (int j = 0; j < d; ++j) dot += (*go)[base + j] * (*dy)[base + j];
          for (int j = 0; j < d; ++j)
            (*gx)[base + j] += ((*go)[base + j] - (*dy)[base + j] * dot) / n;
        } else {
          for (int j = 0; j < d; ++j) (*gx)[base + j] += (*go)[base + j] / eps;
        }
      }
    };
    out.attach_node(node);
  }
  return out;
}

/// out[r] = a[r,:] . b[r,:].
inline Tensor rowwise_dot(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "rowwise_dot");
  detail::require(a.rank() == 2, "rowwise_dot: rank-2 input required");
  const int rows = a.dim(0), d = a.dim(1);
  Tensor out = detail::op_result({rows}, {&a, &b});
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int j = 0; j < d; ++j)
      s += a.at(static_cast<std::size_t>(r) * d + j) * b.at(static_cast<std::size_t>(r) * d + j);
    out.at(static_cast<std::size_t>(r)) = s;
  }
  if (out.requires_grad()) {
    auto node = detail::make_node({&a, &b});
    auto da = a.data_ptr(), db = b.data_ptr();
    auto ga = a.grad_ptr(), gb = b.grad_ptr(), go = out.grad_ptr();
    node->backward = [da, db, ga, gb, go, rows, d]() {
      for (int r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * d;
        double g = (*go)[static_cast<std::size_t>(r)];
        if (ga)
          for (int j = 0; j < d; ++j) (*ga)[base + j] += g * (*db)[base + j];
        if (gb)
          for (int j = 0; j < d; ++j) (*gb)[base + j] += g * (*da)[base + j];
      }
    };
    out.attach_node(node);
  }
  return out;
}

/// out[r,:] = x[r,:] * s[r].
inline Tensor scale_rows(const Tensor& x, const Tensor& s) {
  detail::require(x.rank() == 2 && s.rank() == 1 && s.dim(0) == x.dim(0),
                  "scale_rows: x [R,D] and s [R] required");
  const int rows = x.dim(0), d = x.dim(1);
  Tensor out = detail::op_result(x.shape(), {&x, &s});
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < d; ++j)
      out.at(static_cast<std::size_t>(r) * d + j) =
          x.at(static_cast<std::size_t>(r) * d + j) * s.at(static_cast<std::size_t>(r));
  if (out.requires_grad()) {
    auto node = detail::make_node({&x, &s});
    auto dx = x.data_ptr(), ds = s.data_ptr();
    auto gx = x.grad_ptr(), gs = s.grad_ptr(), go = out.grad_ptr();
    node->backward = [dx, ds, gx, gs, go, rows, d]() {
      for (int r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * d;
        if (gx)
          for (int j = 0; j < d; ++j)
            (*gx)[base + j] += (*go)[base + j] * (*ds)[static_cast<std::size_t>(r)];
        if (gs) {
          double acc = 0.0;
          for (int j = 0; j < d; ++j) acc += (*go)[base + j] * (*dx)[base + j];
          (*gs)[static_cast<std::size_t>(r)] += acc;
        }
      }
    };
    out.attach_node(node);
  }
  return out;
}

/// -log softmax(logits)[label], as a scalar tensor. Gradient is softmax - onehot.
inline Tensor cross_entropy(const Tensor& logits, int label) {
  detail::require(logits.rank() == 1 || (logits.rank() == 2 && logits.dim(0) == 1),
                  "cross_entropy: logits must be a single vector");
  const int k = logits.dim(logits.rank() - 1);
  detail::require(label >= 0 && label < k,
                  "cross_entropy: label " + std::to_string(label) + " out of " + std::to_string(k));
  Tensor out = detail::op_result({1}, {&logits});
  double m = logits.at(0);
  for (int j = 1; j < k; ++j) m = std::max(m, logits.at(static_cast<std::size_t>(j)));
  double s = 0.0;
  for (int j = 0; j < k; ++j) s += std::exp(logits.at(static_cast<std::size_t>(j)) - m);
  out.at(0) = m + std::log(s) - logits.at(static_cast<std::size_t>(label));
  if (out.requires_grad()) {
    auto node = detail::make_node({&logits});
    auto dl = logits.data_ptr();
    auto gl = logits.grad_ptr();
    auto go = out.grad_ptr();
    node->backward = [dl, gl, go, k, label, m, s]() {
      double g = (*go)[0];
      for (int j = 0; j < k; ++j) {
        double p = std::exp((*dl)[static_cast<std::size_t>(j)] - m) / s;
        (*gl)[static_cast<std::size_t>(j)] +=
            g * (p - (j == label ? 1.0 : 0.0));
      }
    };
    out.attach_node(node);
  }
  return out;
}

}  // namespace egovit
