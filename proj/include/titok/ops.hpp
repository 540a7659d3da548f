#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "titok/tensor.hpp"

// Differentiable operations over titok::Tensor. Every op records its backward
// closure through detail::make_result; inputs are captured by handle so the
// closure owns what it needs until the graph is released.

namespace titok {

namespace kernel {

// c[m x n] += a[m x k] * b[k x n]
template <class T>
void gemm_nn(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m x n] += a[m x k] * b^T, with b stored as [n x k]
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(a, bt.data(), c, m, k, n);
}

// c[k x n] += a^T * b, with a stored as [m x k] and b as [m x n]
template <class T>
void gemm_tn(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    const T* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      T* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

}  // namespace kernel

namespace detail {

template <class T>
void require_rank2(const char* op, const Tensor<T>& t) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " + to_string(t.shape()));
  }
}

template <class T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

}  // namespace detail

/// c = a * b for a[m x k], b[k x n].
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2("matmul", a);
  detail::require_rank2("matmul", b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  std::vector<T> out(m * n, T(0));
  kernel::gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  return detail::make_result<T>("matmul", {m, n}, std::move(out), {&a, &b},
                                [a, b, m, k, n](detail::Node<T>& self) {
                                  if (auto* ga = detail::grad_of(a))
                                    kernel::gemm_nt(self.grad.data(), b.values().data(), ga->data(), m, n, k);
                                  if (auto* gb = detail::grad_of(b))
                                    kernel::gemm_tn(a.values().data(), self.grad.data(), gb->data(), m, k, n);
                                });
}

/// y = x * w + bias for x[r x in], w[in x out], bias[out] (bias may be undefined).
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  detail::require_rank2("linear", x);
  detail::require_rank2("linear", w);
  const std::size_t r = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  if (w.dim(0) != in) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " vs weight " + to_string(w.shape()));
  }
  if (bias.defined() && bias.numel() != out_dim) {
    throw DimensionError("linear: bias " + to_string(bias.shape()) + " vs weight " + to_string(w.shape()));
  }
  std::vector<T> out(r * out_dim, T(0));
  if (bias.defined()) {
    const auto bv = bias.values();
    for (std::size_t i = 0; i < r; ++i) std::copy(bv.begin(), bv.end(), out.begin() + i * out_dim);
  }
  kernel::gemm_nn(x.values().data(), w.values().data(), out.data(), r, in, out_dim);
  return detail::make_result<T>(
      "linear", {r, out_dim}, std::move(out), {&x, &w, &bias},
      [x, w, bias, r, in, out_dim](detail::Node<T>& self) {
        const T* g = self.grad.data();
        if (auto* gx = detail::grad_of(x)) kernel::gemm_nt(g, w.values().data(), gx->data(), r, out_dim, in);
        if (auto* gw = detail::grad_of(w)) kernel::gemm_tn(x.values().data(), g, gw->data(), r, in, out_dim);
        if (auto* gb = detail::grad_of(bias)) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < out_dim; ++j) (*gb)[j] += g[i * out_dim + j];
        }
      });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a, b);
  std::vector<T> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return detail::make_result<T>("add", a.shape(), std::move(out), {&a, &b}, [a, b](detail::Node<T>& self) {
    for (const Tensor<T>* t : {&a, &b})
      if (auto* gt = detail::grad_of(*t))
        for (std::size_t i = 0; i < gt->size(); ++i) (*gt)[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<T> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return detail::make_result<T>("sub", a.shape(), std::move(out), {&a, &b}, [a, b](detail::Node<T>& self) {
    if (auto* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i];
    if (auto* gb = detail::grad_of(b))
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] -= self.grad[i];
  });
}

/// Elementwise product.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<T> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return detail::make_result<T>("mul", a.shape(), std::move(out), {&a, &b}, [a, b](detail::Node<T>& self) {
    if (auto* ga = detail::grad_of(a)) {
      const auto bv = b.values();
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i] * bv[i];
    }
    if (auto* gb = detail::grad_of(b)) {
      const auto av = a.values();
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += self.grad[i] * av[i];
    }
  });
}

/// Adds a vector along the trailing dimension (the only broadcast supported).
template <class T>
Tensor<T> add_rowwise(const Tensor<T>& x, const Tensor<T>& v) {
  const std::size_t d = x.shape().back();
  if (v.numel() != d) {
    throw DimensionError("add_rowwise: " + to_string(x.shape()) + " vs " + to_string(v.shape()));
  }
  std::vector<T> out(x.numel());
  const auto xv = x.values(), vv = v.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + vv[i % d];
  return detail::make_result<T>("add_rowwise", x.shape(), std::move(out), {&x, &v},
                                [x, v, d](detail::Node<T>& self) {
                                  if (auto* gx = detail::grad_of(x))
                                    for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
                                  if (auto* gv = detail::grad_of(v))
                                    for (std::size_t i = 0; i < self.grad.size(); ++i) (*gv)[i % d] += self.grad[i];
                                });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  std::vector<T> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * s;
  return detail::make_result<T>("scale", x.shape(), std::move(out), {&x}, [x, s](detail::Node<T>& self) {
    if (auto* gx = detail::grad_of(x))
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i] * s;
  });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * xv[i];
  return detail::make_result<T>("square", x.shape(), std::move(out), {&x}, [x](detail::Node<T>& self) {
    if (auto* gx = detail::grad_of(x)) {
      const auto xv = x.values();
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += T(2) * xv[i] * self.grad[i];
    }
  });
}

/// Sum of all elements, as a one-element tensor.
template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.values()) acc += v;
  return detail::make_result<T>("sum", {1}, {acc}, {&x}, [x](detail::Node<T>& self) {
    if (auto* gx = detail::grad_of(x))
      for (T& g : *gx) g += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Mean squared difference over all elements.
template <class T>
Tensor<T> mse_loss(const Tensor<T>& a, const Tensor<T>& b) {
  return mean(square(sub(a, b)));
}

/// Softmax along `axis`, computed with max-subtraction.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + to_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  const auto xv = x.values();
  std::vector<T> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = xv[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, xv[base + k * inner]);
      T total = T(0);
      for (std::size_t k = 0; k < n; ++k) {
        const T e = std::exp(xv[base + k * inner] - mx);
        out[base + k * inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= total;
    }
  }
  return detail::make_result<T>(
      "softmax", x.shape(), std::move(out), {&x}, [x, outer, inner, n](detail::Node<T>& self) {
        auto* gx = detail::grad_of(x);
        if (!gx) return;
        const auto& y = self.value;
        const auto& gy = self.grad;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            T dot = T(0);
            for (std::size_t k = 0; k < n; ++k) dot += y[base + k * inner] * gy[base + k * inner];
            for (std::size_t k = 0; k < n; ++k) {
              const std::size_t idx = base + k * inner;
              (*gx)[idx] += y[idx] * (gy[idx] - dot);
            }
          }
        }
      });
}

/// Normalises each row over the trailing dimension D, then applies gamma/beta.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: input " + to_string(x.shape()) + " with gamma " +
                         to_string(gamma.shape()) + " / beta " + to_string(beta.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto xv = x.values(), gv = gamma.values(), bv = beta.values();
  std::vector<T> out(x.numel()), xhat(x.numel()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mu) * rstd[r];
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  return detail::make_result<T>(
      "layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
      [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), rows, d](detail::Node<T>& self) {
        const auto& gy = self.grad;
        if (auto* gg = detail::grad_of(gamma))
          for (std::size_t i = 0; i < gy.size(); ++i) (*gg)[i % d] += gy[i] * xhat[i];
        if (auto* gb = detail::grad_of(beta))
          for (std::size_t i = 0; i < gy.size(); ++i) (*gb)[i % d] += gy[i];
        if (auto* gx = detail::grad_of(x)) {
          const auto gv = gamma.values();
          std::vector<T> dh(d);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_dh = T(0), mean_dh_h = T(0);
            for (std::size_t j = 0; j < d; ++j) {
              dh[j] = gy[r * d + j] * gv[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * xhat[r * d + j];
            }
            mean_dh /= static_cast<T>(d);
            mean_dh_h /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j)
              (*gx)[r * d + j] += rstd[r] * (dh[j] - mean_dh - xhat[r * d + j] * mean_dh_h);
          }
        }
      });
}

/// Tanh-approximation GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T c = static_cast<T>(0.79788456080286535588);  // sqrt(2/pi)
  constexpr T a = static_cast<T>(0.044715);
  const auto xv = x.values();
  std::vector<T> out(x.numel()), th(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xv[i];
    th[i] = std::tanh(c * (v + a * v * v * v));
    out[i] = T(0.5) * v * (T(1) + th[i]);
  }
  return detail::make_result<T>("gelu", x.shape(), std::move(out), {&x},
                                [x, th = std::move(th)](detail::Node<T>& self) {
                                  auto* gx = detail::grad_of(x);
                                  if (!gx) return;
                                  const auto xv = x.values();
                                  for (std::size_t i = 0; i < gx->size(); ++i) {
                                    const T v = xv[i];
                                    const T dudx = c * (T(1) + T(3) * a * v * v);
                                    const T d = T(0.5) * (T(1) + th[i]) + T(0.5) * v * (T(1) - th[i] * th[i]) * dudx;
                                    (*gx)[i] += self.grad[i] * d;
                                  }
                                });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  const auto xv = x.values();
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-xv[i]));
  return detail::make_result<T>("sigmoid", x.shape(), std::move(out), {&x}, [x](detail::Node<T>& self) {
    if (auto* gx = detail::grad_of(x))
      for (std::size_t i = 0; i < gx->size(); ++i) {
        const T y = self.value[i];
        (*gx)[i] += self.grad[i] * y * (T(1) - y);
      }
  });
}

/// Each row divided by its Euclidean norm (norm floored at eps).
template <class T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x, T eps = T(1e-12)) {
  detail::require_rank2("l2_normalize_rows", x);
  const std::size_t r = x.dim(0), c = x.dim(1);
  const auto xv = x.values();
  std::vector<T> out(x.numel()), inv(r);
  for (std::size_t i = 0; i < r; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += xv[i * c + j] * xv[i * c + j];
    inv[i] = T(1) / std::max(std::sqrt(s), eps);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] * inv[i];
  }
  return detail::make_result<T>("l2_normalize_rows", x.shape(), std::move(out), {&x},
                                [x, inv = std::move(inv), c](detail::Node<T>& self) {
                                  auto* gx = detail::grad_of(x);
                                  if (!gx) return;
                                  const std::size_t r = inv.size();
                                  for (std::size_t i = 0; i < r; ++i) {
                                    const T* y = self.value.data() + i * c;
                                    const T* g = self.grad.data() + i * c;
                                    T dot = 0;
                                    for (std::size_t j = 0; j < c; ++j) dot += y[j] * g[j];
                                    for (std::size_t j = 0; j < c; ++j) (*gx)[i * c + j] += (g[j] - y[j] * dot) * inv[i];
                                  }
                                });
}

/// Same data viewed with a new shape of equal element count.
template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  return detail::make_result<T>("reshape", std::move(shape), x.vector(), {&x}, [x](detail::Node<T>& self) {
    if (auto* gx = detail::grad_of(x))
      for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += self.grad[i];
  });
}

/// Stacks 2-D tensors with equal column counts on top of each other.
template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = parts.front().shape().back();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    detail::require_rank2("concat_rows", p);
    if (p.dim(1) != cols) {
      throw DimensionError("concat_rows: column mismatch " + to_string(parts.front().shape()) + " vs " +
                           to_string(p.shape()));
    }
    rows += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());

  // make_result takes a fixed list, so the graph edges are attached by hand.
  auto result = detail::make_result<T>("concat_rows", {rows, cols}, std::move(out), {}, {});
  bool track = false;
  for (const auto& p : parts) track = track || p.requires_grad();
  if (track && grad_enabled()) {
    auto node = result.node_ptr();
    node->requires_grad = true;
    for (const auto& p : parts) node->inputs.push_back(p.node_ptr());
    node->backward = [parts](detail::Node<T>& self) {
      std::size_t offset = 0;
      for (const auto& p : parts) {
        if (auto* gp = detail::grad_of(p))
          for (std::size_t i = 0; i < gp->size(); ++i) (*gp)[i] += self.grad[offset + i];
        offset += p.numel();
      }
    };
  }
  return result;
}

/// out[i] = x[index[i]]; repeated indices accumulate gradient (scatter-add).
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::size_t> index) {
  detail::require_rank2("gather_rows", x);
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(index.size() * cols);
  const auto xv = x.values();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) {
      throw DimensionError("gather_rows: row " + std::to_string(index[i]) + " out of range for " +
                           to_string(x.shape()));
    }
    std::copy_n(xv.begin() + index[i] * cols, cols, out.begin() + i * cols);
  }
  const std::size_t n = index.size();
  return detail::make_result<T>("gather_rows", {n, cols}, std::move(out), {&x},
                                [x, index = std::move(index), cols](detail::Node<T>& self) {
                                  auto* gx = detail::grad_of(x);
                                  if (!gx) return;
                                  for (std::size_t i = 0; i < index.size(); ++i) {
                                    T* dst = gx->data() + index[i] * cols;
                                    const T* src = self.grad.data() + i * cols;
                                    for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
                                  }
                                });
}

/// Forward value is `selected` exactly; the backward passes the incoming
/// gradient to `z` unchanged and nothing to `selected`.
template <class T>
Tensor<T> straight_through(const Tensor<T>& z, const Tensor<T>& selected) {
  detail::require_same_shape("straight_through", z, selected);
  return detail::make_result<T>("straight_through", z.shape(), selected.vector(), {&z},
                                [z](detail::Node<T>& self) {
                                  if (auto* gz = detail::grad_of(z))
                                    for (std::size_t i = 0; i < gz->size(); ++i) (*gz)[i] += self.grad[i];
                                });
}

/// Mean cross-entropy of logits[r x c] against integer targets; a target of
/// -1 excludes that row. Returns 0 when every row is excluded.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
  detail::require_rank2("cross_entropy", logits);
  const std::size_t r = logits.dim(0), c = logits.dim(1);
  if (targets.size() != r) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         to_string(logits.shape()));
  }
  const auto lv = logits.values();
  std::vector<T> prob(r * c);
  T total = T(0);
  std::size_t counted = 0;
  for (std::size_t i = 0; i < r; ++i) {
    const T* li = lv.data() + i * c;
    T mx = li[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, li[j]);
    T z = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      prob[i * c + j] = std::exp(li[j] - mx);
      z += prob[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) prob[i * c + j] /= z;
    const int t = targets[i];
    if (t < 0) continue;
    if (static_cast<std::size_t>(t) >= c) {
      throw DataError("cross_entropy: target " + std::to_string(t) + " out of range [0, " + std::to_string(c) + ")");
    }
    total += -(li[t] - mx - std::log(z));
    ++counted;
  }
  const T norm = counted ? T(1) / static_cast<T>(counted) : T(0);
  std::vector<int> tgt(targets.begin(), targets.end());
  return detail::make_result<T>(
      "cross_entropy", {1}, {total * norm}, {&logits},
      [logits, prob = std::move(prob), tgt = std::move(tgt), norm, c](detail::Node<T>& self) {
        auto* gl = detail::grad_of(logits);
        if (!gl) return;
        const T g = self.grad[0] * norm;
        for (std::size_t i = 0; i < tgt.size(); ++i) {
          if (tgt[i] < 0) continue;
          for (std::size_t j = 0; j < c; ++j) (*gl)[i * c + j] += g * prob[i * c + j];
          (*gl)[i * c + static_cast<std::size_t>(tgt[i])] -= g;
        }
      });
}

/// Bidirectional multi-head scaled dot-product attention on packed
/// projections. qkv is [batch*seq x 3D] laid out as [Q | K | V]; the result is
/// the concatenated per-head outputs, [batch*seq x D].
template <class T>
Tensor<T> attention(const Tensor<T>& qkv, std::size_t batch, std::size_t heads) {
  detail::require_rank2("attention", qkv);
  if (qkv.dim(1) % 3 != 0 || batch == 0 || qkv.dim(0) % batch != 0) {
    throw DimensionError("attention: packed qkv " + to_string(qkv.shape()) + " with batch " + std::to_string(batch));
  }
  const std::size_t d = qkv.dim(1) / 3;
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: " + std::to_string(heads) + " heads do not divide width " + std::to_string(d));
  }
  const std::size_t seq = qkv.dim(0) / batch, hd = d / heads, stride = 3 * d;
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(hd));
  const auto in = qkv.values();
  std::vector<T> out(batch * seq * d, T(0));
  std::vector<T> probs(batch * heads * seq * seq);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* base = in.data() + b * seq * stride;
    for (std::size_t h = 0; h < heads; ++h) {
      T* p = probs.data() + (b * heads + h) * seq * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        const T* q = base + i * stride + h * hd;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < seq; ++j) {
          const T* k = base + j * stride + d + h * hd;
          T s = T(0);
          for (std::size_t e = 0; e < hd; ++e) s += q[e] * k[e];
          p[i * seq + j] = s * scale_factor;
          mx = std::max(mx, p[i * seq + j]);
        }
        T z = T(0);
        for (std::size_t j = 0; j < seq; ++j) {
          p[i * seq + j] = std::exp(p[i * seq + j] - mx);
          z += p[i * seq + j];
        }
        T* o = out.data() + (b * seq + i) * d + h * hd;
        for (std::size_t j = 0; j < seq; ++j) {
          p[i * seq + j] /= z;
          const T* v = base + j * stride + 2 * d + h * hd;
          const T w = p[i * seq + j];
          for (std::size_t e = 0; e < hd; ++e) o[e] += w * v[e];
        }
      }
    }
  }
  return detail::make_result<T>(
      "attention", {batch * seq, d}, std::move(out), {&qkv},
      [qkv, probs = std::move(probs), batch, heads, seq, d, hd, stride, scale_factor](detail::Node<T>& self) {
        auto* gq = detail::grad_of(qkv);
        if (!gq) return;
        const auto in = qkv.values();
        std::vector<T> dp(seq * seq);
        for (std::size_t b = 0; b < batch; ++b) {
          const T* base = in.data() + b * seq * stride;
          T* gbase = gq->data() + b * seq * stride;
          for (std::size_t h = 0; h < heads; ++h) {
            const T* p = probs.data() + (b * heads + h) * seq * seq;
            for (std::size_t i = 0; i < seq; ++i) {
              const T* go = self.grad.data() + (b * seq + i) * d + h * hd;
              for (std::size_t j = 0; j < seq; ++j) {
                const T* v = base + j * stride + 2 * d + h * hd;
                T* gv = gbase + j * stride + 2 * d + h * hd;
                const T w = p[i * seq + j];
                T s = T(0);
                for (std::size_t e = 0; e < hd; ++e) {
                  gv[e] += w * go[e];
                  s += go[e] * v[e];
                }
                dp[i * seq + j] = s;
              }
              T dot = T(0);
              for (std::size_t j = 0; j < seq; ++j) dot += p[i * seq + j] * dp[i * seq + j];
              for (std::size_t j = 0; j < seq; ++j) dp[i * seq + j] = p[i * seq + j] * (dp[i * seq + j] - dot) * scale_factor;
            }
            for (std::size_t i = 0; i < seq; ++i) {
              const T* q = base + i * stride + h * hd;
              T* gqi = gbase + i * stride + h * hd;
              for (std::size_t j = 0; j < seq; ++j) {
                const T ds = dp[i * seq + j];
                const T* k = base + j * stride + d + h * hd;
                T* gk = gbase + j * stride + d + h * hd;
                for (std::size_t e = 0; e < hd; ++e) {
                  gqi[e] += ds * k[e];
                  gk[e] += ds * q[e];
                }
              }
            }
          }
        }
      });
}

}  // namespace titok
