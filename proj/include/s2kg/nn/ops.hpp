// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "s2kg/nn/graph.hpp"
#include "s2kg/random.hpp"
#include "s2kg/nn/kernels.hpp"

// Differentiable ops over Graph<T>. Each op computes its value eagerly and
// records a closure that maps the output gradient to input gradients.
namespace s2kg::nn {

namespace detail {

inline void require(bool ok, const std::string& op, const std::string& what) {
  if (!ok) throw ShapeError(op + ": " + what);
}

template <class T>
std::vector<T> transpose(const T* a, std::size_t rows, std::size_t cols) {
  std::vector<T> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = a[r * cols + c];
  }
  return t;
}

template <class T>
void softmax_row(T* row, std::size_t n) {
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
  T sum{0};
  for (std::size_t j = 0; j < n; ++j) {
    row[j] = std::exp(row[j] - mx);
    sum += row[j];
  }
  const T inv = T{1} / sum;
  for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
}

}  // namespace detail

// [n,k] x [k,m]
template <class T>
typename Graph<T>::Var matmul(Graph<T>& g, typename Graph<T>::Var a, typename Graph<T>::Var b) {
  const std::size_t n = g.rows(a), k = g.cols(a), m = g.cols(b);
  detail::require(g.rows(b) == k, "matmul",
                  "inner dimension " + std::to_string(k) + " vs " + std::to_string(g.rows(b)));
  std::vector<T> out(n * m, T{0});
  kernels::gemm_nn(n, k, m, g.value(a), g.value(b), out.data());
  const bool rg = g.requires_grad(a) || g.requires_grad(b);
  const auto yid = static_cast<std::uint32_t>(g.node_count());
  return g.push(n, m, std::move(out), rg, [&g, a, b, n, k, m, yid] {
    const T* dy = g.grad(typename Graph<T>::Var{yid});
    if (g.requires_grad(a)) {
      const auto bt = detail::transpose(g.value(b), k, m);
      kernels::gemm_nn(n, m, k, dy, bt.data(), g.grad(a));
    }
    if (g.requires_grad(b)) kernels::gemm_tn(n, k, m, g.value(a), dy, g.grad(b));
  });
}

// a[n,k] x b[m,k]^T
template <class T>
typename Graph<T>::Var matmul_nt(Graph<T>& g, typename Graph<T>::Var a, typename Graph<T>::Var b) {
  const std::size_t n = g.rows(a), k = g.cols(a), m = g.rows(b);
  detail::require(g.cols(b) == k, "matmul_nt",
                  "inner dimension " + std::to_string(k) + " vs " + std::to_string(g.cols(b)));
  std::vector<T> out(n * m, T{0});
  kernels::gemm_nt(n, k, m, g.value(a), g.value(b), out.data());
  const bool rg = g.requires_grad(a) || g.requires_grad(b);
  const auto yid = static_cast<std::uint32_t>(g.node_count());
  return g.push(n, m, std::move(out), rg, [&g, a, b, n, k, m, yid] {
    const T* dy = g.grad(typename Graph<T>::Var{yid});
    if (g.requires_grad(a)) kernels::gemm_nn(n, m, k, dy, g.value(b), g.grad(a));
    if (g.requires_grad(b)) kernels::gemm_tn(n, m, k, dy, g.value(a), g.grad(b));
  });
}

// x[n,in] w[in,out] + b[1,out]
template <class T>
typename Graph<T>::Var linear(Graph<T>& g, typename Graph<T>::Var x, typename Graph<T>::Var w,
                              typename Graph<T>::Var b) {
  const std::size_t n = g.rows(x), in = g.cols(x), out_dim = g.cols(w);
  detail::require(g.rows(w) == in, "linear",
                  "input width " + std::to_string(in) + " vs weight rows " + std::to_string(g.rows(w)));
  detail::require(g.rows(b) == 1 && g.cols(b) == out_dim, "linear",
                  "bias shape " + shape_string(g.rows(b), g.cols(b)) + " vs output width " + std::to_string(out_dim));
  std::vector<T> out(n * out_dim);
  const T* bias = g.value(b);
  for (std::size_t i = 0; i < n; ++i) std::copy(bias, bias + out_dim, out.data() + i * out_dim);
  kernels::gemm_nn(n, in, out_dim, g.value(x), g.value(w), out.data());
  const bool rg = g.requires_grad(x) || g.requires_grad(w) || g.requires_grad(b);
  const auto yid = static_cast<std::uint32_t>(g.node_count());
  return g.push(n, out_dim, std::move(out), rg, [&g, x, w, b, n, in, out_dim, yid] {
    const T* dy = g.grad(typename Graph<T>::Var{yid});
    if (g.requires_grad(b)) {
      T* db = g.grad(b);
      for (std::size_t i = 0; i < n; ++i) kernels::axpy(out_dim, T{1}, dy + i * out_dim, db);
    }
    if (g.requires_grad(w)) kernels::gemm_tn(n, in, out_dim, g.value(x), dy, g.grad(w));
    if (g.requires_grad(x)) {
      const auto wt = detail::transpose(g.value(w), in, out_dim);
      kernels::gemm_nn(n, out_dim, in, dy, wt.data(), g.grad(x));
    }
  });
}

template <class T>
typename Graph<T>::Var add(Graph<T>& g, typename Graph<T>::Var a, typename Graph<T>::Var b) {
  detail::require(g.rows(a) == g.rows(b) && g.cols(a) == g.cols(b), "add",
                  shape_string(g.rows(a), g.cols(a)) + " vs " + shape_string(g.rows(b), g.cols(b)));
  const std::size_t n = g.size(a);
  std::vector<T> out(g.value(a), g.value(a) + n);
  kernels::axpy(n, T{1}, g.value(b), out.data());
  const auto yid = static_cast<std::uint32_t>(g.node_count());
  return g.push(g.rows(a), g.cols(a), std::move(out), g.requires_grad(a) || g.requires_grad(b), [&g, a, b, n, yid] {
    const T* dy = g.grad(typename Graph<T>::Var{yid});
    if (g.requires_grad(a)) kernels::axpy(n, T{1}, dy, g.grad(a));
    if (g.requires_grad(b)) kernels::axpy(n, T{1}, dy, g.grad(b));
  });
}

// x[n,m] + b[1,m] broadcast over rows
template <class T>
typename Graph<T>::Var add_row(Graph<T>& g, typename Graph<T>::Var x, typename Graph<T>::Var b) {
  const std::size_t n = g.rows(x), m = g.cols(x);
  detail::require(g.rows(b) == 1 && g.cols(b) == m, "add_row",
                  shape_string(g.rows(b), g.cols(b)) + " vs width " + std::to_string(m));
  std::vector<T> out(g.value(x), g.value(x) + n * m);
  for (std::size_t i = 0; i < n; ++i) kernels::axpy(m, T{1}, g.value(b), out.data() + i * m);
  const auto yid = static_cast<std::uint32_t>(g.node_count());
  return g.push(n, m, std::move(out), g.requires_grad(x) || g.requires_grad(b), [&g, x, b, n, m, yid] {
    const T* dy = g.grad(typename Graph<T>::Var{yid});
    if (g.requires_grad(x)) kernels::axpy(n * m, T{1}, dy, g.grad(x));
    if (g.requires_grad(b)) {
      T* db = g.grad(b);
      for (std::size_t i = 0; i < n; ++i) kernels::axpy(m, T{1}, dy + i * m, db);
    }
  });
}

template <class T>
typename Graph<T>::Var scale(Graph<T>& g, typename Graph<T>::Var a, T s) {
  const std::size_t n = g.size(a);
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = s * g.value(a)[i];
  const auto yid = static_cast<std::uint32_t>(g.node_count());
  return g.push(g.rows(a), g.cols(a), std::move(out), g.requires_grad(a), [&g, a, s, n, yid] {
    kernels::axpy(n, s, g.grad(typename Graph<T>::Var{yid}), g.grad(a));
  });
}

// tanh-approximated GELU
template <class T>
typename Graph<T>::Var gelu(Graph<T>& g, typename Graph<T>::Var x) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  const std::size_t n = g.size(x);
  std::vector<T> out(n);
  const T* xv = g.value(x);
  for (std::size_t i = 0; i < n; ++i) {
    const T v = xv[i];
    out[i] = T(0.5) * v * (T{1} + std::tanh(kC * (v + kA * v * v * v)));
  }
  const auto yid = static_cast<std::uint32_t>(g.node_count());
  return g.push(g.rows(x), g.cols(x), std::move(out), g.requires_grad(x), [&g, x, n, yid] {
    const T* dy = g.grad(typename Graph<T>::Var{yid});
    const T* xv = g.value(x);
    T* dx = g.grad(x);
    for (std::size_t i = 0; i < n; ++i) {
      const T v = xv[i];
      const T u = kC * (v + kA * v * v * v);
      const T t = std::tanh(u);
      const T du = kC * (T{1} + T{3} * kA * v * v);
      dx[i] += dy[i] * (T(0.5) * (T{1} + t) + T(0.5) * v * (T{1} - t * t) * du);
    }
  });
}

// Row-wise layer normalization with gain/bias of shape [1,d].
template <class T>
typename Graph<T>::Var layer_norm(Graph<T>& g, typename Graph<T>::Var x, typename Graph<T>::Var gain,
                                  typename Graph<T>::Var bias, T eps = T(1e-5)) {
  const std::size_t n = g.rows(x), d = g.cols(x);
  detail::require(g.size(gain) == d && g.size(bias) == d, "layer_norm",
                  "gain/bias width " + std::to_string(g.size(gain)) + " vs " + std::to_string(d));
  std::vector<T> out(n * d);
  std::vector<T> xhat(n * d);
  std::vector<T> inv_std(n);
  const T* xv = g.value(x);
  const T* gv = g.value(gain);
  const T* bv = g.value(bias);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = xv + i * d;
    T mean{0};
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(d);
    inv_std[i] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mean) * inv_std[i];
      out[i * d + j] = xhat[i * d + j] * gv[j] + bv[j];
    }
  }
  const bool rg = g.requires_grad(x) || g.requires_grad(gain) || g.requires_grad(bias);
  const auto yid = static_cast<std::uint32_t>(g.node_count());
  return g.push(n, d, std::move(out), rg,
                [&g, x, gain, bias, n, d, yid, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
                  const T* dy = g.grad(typename Graph<T>::Var{yid});
                  const T* gv = g.value(gain);
                  if (g.requires_grad(gain) || g.requires_grad(bias)) {
                    T* dg = g.requires_grad(gain) ? g.grad(gain) : nullptr;
                    T* db = g.requires_grad(bias) ? g.grad(bias) : nullptr;
                    for (std::size_t i = 0; i < n; ++i) {
                      for (std::size_t j = 0; j < d; ++j) {
                        if (dg) dg[j] += dy[i * d + j] * xhat[i * d + j];
                        if (db) db[j] += dy[i * d + j];
                      }
                    }
                  }
                  if (g.requires_grad(x)) {
                    T* dx = g.grad(x);
                    for (std::size_t i = 0; i < n; ++i) {
                      T mean_dxhat{0}, mean_dxhat_xhat{0};
                      for (std::size_t j = 0; j < d; ++j) {
                        const T dxh = dy[i * d + j] * gv[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat[i * d + j];
                      }
                      mean_dxhat /= static_cast<T>(d);
                      mean_dxhat_xhat /= static_cast<T>(d);
                      for (std::size_t j = 0; j < d; ++j) {
                        const T dxh = dy[i * d + j] * gv[j];
                        dx[i * d + j] += inv_std[i] * (dxh - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat);
                      }
                    }
                  }
                });
}

// Gathers rows of table[V,d] for `ids`.
template <class T>
typename Graph<T>::Var embedding(Graph<T>& g, typename Graph<T>::Var table, std::vector<int> ids) {
  const std::size_t v = g.rows(table), d = g.cols(table);
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    detail::require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < v, "embedding",
                    "id " + std::to_string(ids[i]) + " outside table of " + std::to_string(v) + " rows");
    std::copy_n(g.value(table) + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  const std::size_t n = ids.size();
  const auto yid = static_cast<std::uint32_t>(g.node_count());
  return g.push(n, d, std::move(out), g.requires_grad(table), [&g, table, d, yid, ids = std::move(ids)] {
    const T* dy = g.grad(typename Graph<T>::Var{yid});
    T* dt = g.grad(table);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      kernels::axpy(d, T{1}, dy + i * d, dt + static_cast<std::size_t>(ids[i]) * d);
    }
  });
}

template <class T>
typename Graph<T>::Var select_rows(Graph<T>& g, typename Graph<T>::Var x, std::vector<std::size_t> rows) {
  const std::size_t d = g.cols(x);
  std::vector<T> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    detail::require(rows[i] < g.rows(x), "select_rows",
                    "row " + std::to_string(rows[i]) + " of " + std::to_string(g.rows(x)));
    std::copy_n(g.value(x) + rows[i] * d, d, out.data() + i * d);
  }
  const std::size_t n = rows.size();
  const auto yid = static_cast<std::uint32_t>(g.node_count());
  return g.push(n, d, std::move(out), g.requires_grad(x), [&g, x, d, yid, rows = std::move(rows)] {
    const T* dy = g.grad(typename Graph<T>::Var{yid});
    T* dx = g.grad(x);
    for (std::size_t i = 0; i < rows.size(); ++i) kernels::axpy(d, T{1}, dy + i * d, dx + rows[i] * d);
  });
}

template <class T>
typename Graph<T>::Var softmax(Graph<T>& g, typename Graph<T>::Var x) {
  const std::size_t n = g.rows(x), m = g.cols(x);
  std::vector<T> out(g.value(x), g.value(x) + n * m);
  for (std::size_t i = 0; i < n; ++i) detail::softmax_row(out.data() + i * m, m);
  const auto yid = static_cast<std::uint32_t>(g.node_count());
  return g.push(n, m, std::move(out), g.requires_grad(x), [&g, x, n, m, yid] {
    const typename Graph<T>::Var y{yid};
    const T* p = g.value(y);
    const T* dy = g.grad(y);
    T* dx = g.grad(x);
    for (std::size_t i = 0; i < n; ++i) {
      const T s = kernels::dot(m, p + i * m, dy + i * m);
      for (std::size_t j = 0; j < m; ++j) dx[i * m + j] += p[i * m + j] * (dy[i * m + j] - s);
    }
  });
}

// Inverted dropout: zeroes each entry with probability `rate` and scales the
// rest by 1/(1-rate). The mask is drawn from `rng` at construction.
template <class T>
typename Graph<T>::Var dropout(Graph<T>& g, typename Graph<T>::Var x, double rate, Rng& rng) {
  detail::require(rate >= 0.0 && rate < 1.0, "dropout", "rate must be in [0, 1)");
  if (rate == 0.0) return x;
  const std::size_t n = g.size(x);
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(n);
  for (auto& m : mask) m = rng.uniform() < rate ? T{0} : keep;
  std::vector<T> out(n);
  const T* xv = g.value(x);
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[i] * mask[i];
  const auto yid = static_cast<std::uint32_t>(g.node_count());
  return g.push(g.rows(x), g.cols(x), std::move(out), g.requires_grad(x), [&g, x, yid, mask = std::move(mask)] {
    const T* dy = g.grad(typename Graph<T>::Var{yid});
    T* dx = g.grad(x);
    for (std::size_t i = 0; i < mask.size(); ++i) dx[i] += dy[i] * mask[i];
  });
}

namespace detail {

template <class T>
typename Graph<T>::Var attention_impl(Graph<T>& g, typename Graph<T>::Var q, typename Graph<T>::Var k,
                                      typename Graph<T>::Var v, const typename Graph<T>::Var* bias,
                                      std::vector<int> buckets, std::size_t heads, bool causal,
                                      std::vector<T>* weights_out) {
  const std::size_t n = g.rows(q), m = g.rows(k), width = g.cols(q);
  require(g.cols(k) == width && g.cols(v) == width, "attention",
          "q/k/v widths " + std::to_string(width) + "/" + std::to_string(g.cols(k)) + "/" + std::to_string(g.cols(v)));
  require(g.rows(v) == m, "attention", "k rows " + std::to_string(m) + " vs v rows " + std::to_string(g.rows(v)));
  require(heads > 0 && width % heads == 0, "attention",
          "width " + std::to_string(width) + " not divisible by " + std::to_string(heads) + " heads");
  require(!causal || n <= m, "attention", "causal attention needs queries <= keys");
  std::size_t nb = 0;
  if (bias) {
    nb = g.cols(*bias);
    require(g.rows(*bias) == heads, "attention",
            "bias rows " + std::to_string(g.rows(*bias)) + " vs heads " + std::to_string(heads));
    require(buckets.size() == n * m, "attention",
            "bucket count " + std::to_string(buckets.size()) + " vs " + std::to_string(n * m));
    for (const int b : buckets) {
      require(b >= 0 && static_cast<std::size_t>(b) < nb, "attention", "bucket " + std::to_string(b) + " out of range");
    }
  }
  const std::size_t dh = width / heads;
  const T sc = T{1} / std::sqrt(static_cast<T>(dh));
  const T* qv = g.value(q);
  const T* kv = g.value(k);
  const T* vv = g.value(v);
  const T* bv = bias ? g.value(*bias) : nullptr;

  std::vector<T> probs(heads * n * m, T{0});
  std::vector<T> out(n * width, T{0});
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      T* p = probs.data() + (h * n + i) * m;
      const std::size_t visible = causal ? i + 1 : m;
      for (std::size_t j = 0; j < visible; ++j) {
        p[j] = sc * kernels::dot(dh, qv + i * width + h * dh, kv + j * width + h * dh);
        if (bv) p[j] += bv[h * nb + static_cast<std::size_t>(buckets[i * m + j])];
      }
      softmax_row(p, visible);
      T* o = out.data() + i * width + h * dh;
      for (std::size_t j = 0; j < visible; ++j) kernels::axpy(dh, p[j], vv + j * width + h * dh, o);
    }
  }
  if (weights_out) *weights_out = probs;
  const bool bias_rg = bias && g.requires_grad(*bias);
  const bool rg = g.requires_grad(q) || g.requires_grad(k) || g.requires_grad(v) || bias_rg;
  const typename Graph<T>::Var bvar = bias ? *bias : typename Graph<T>::Var{0};
  const auto yid = static_cast<std::uint32_t>(g.node_count());
  return g.push(n, width, std::move(out), rg,
                [&g, q, k, v, bvar, bias_rg, nb, n, m, width, heads, dh, sc, causal, yid, probs = std::move(probs),
                 buckets = std::move(buckets)] {
                  const T* dy = g.grad(typename Graph<T>::Var{yid});
                  const T* qv = g.value(q);
                  const T* kv = g.value(k);
                  const T* vv = g.value(v);
                  T* dq = g.requires_grad(q) ? g.grad(q) : nullptr;
                  T* dk = g.requires_grad(k) ? g.grad(k) : nullptr;
                  T* dv = g.requires_grad(v) ? g.grad(v) : nullptr;
                  T* db = bias_rg ? g.grad(bvar) : nullptr;
                  std::vector<T> dp(m);
                  for (std::size_t h = 0; h < heads; ++h) {
                    for (std::size_t i = 0; i < n; ++i) {
                      const T* p = probs.data() + (h * n + i) * m;
                      const T* dyi = dy + i * width + h * dh;
                      const std::size_t visible = causal ? i + 1 : m;
                      T s{0};
                      for (std::size_t j = 0; j < visible; ++j) {
                        dp[j] = kernels::dot(dh, dyi, vv + j * width + h * dh);
                        s += p[j] * dp[j];
                        if (dv) kernels::axpy(dh, p[j], dyi, dv + j * width + h * dh);
                      }
                      for (std::size_t j = 0; j < visible; ++j) {
                        const T dz = p[j] * (dp[j] - s);
                        if (dz == T{0}) continue;
                        if (db) db[h * nb + static_cast<std::size_t>(buckets[i * m + j])] += dz;
                        const T ds = dz * sc;
                        if (dq) kernels::axpy(dh, ds, kv + j * width + h * dh, dq + i * width + h * dh);
                        if (dk) kernels::axpy(dh, ds, qv + i * width + h * dh, dk + j * width + h * dh);
                      }
                    }
                  }
                });
}

}  // namespace detail

// Scaled dot-product attention over `heads` equal slices of the model
// width. q[n,D], k[m,D], v[m,D] -> [n,D]. With `causal`, query i sees keys
// 0..i. When `weights_out` is given it receives the [heads*n, m] weights.
template <class T>
typename Graph<T>::Var attention(Graph<T>& g, typename Graph<T>::Var q, typename Graph<T>::Var k,
                                 typename Graph<T>::Var v, std::size_t heads, bool causal,
                                 std::vector<T>* weights_out = nullptr) {
  return detail::attention_impl(g, q, k, v, nullptr, {}, heads, causal, weights_out);
}

// Same, with a learned additive score bias: score(h,i,j) += bias[h, buckets[i*m+j]].
template <class T>
typename Graph<T>::Var attention(Graph<T>& g, typename Graph<T>::Var q, typename Graph<T>::Var k,
                                 typename Graph<T>::Var v, typename Graph<T>::Var bias, std::vector<int> buckets,
                                 std::size_t heads, bool causal, std::vector<T>* weights_out = nullptr) {
  return detail::attention_impl(g, q, k, v, &bias, std::move(buckets), heads, causal, weights_out);
}

// Pointer-generator output. With P = softmax(logits[n,V]), A = softmax(
// scores[n,m]) over source positions, g = sigmoid(gate[n,1]) and
// C(w) = sum of A_j over source positions j holding token w, returns
// log(g*P + (1-g)*C) as [n,V]. Rows are normalized log-probabilities, so
// cross_entropy over the result is the mixture's negative log-likelihood.
template <class T>
typename Graph<T>::Var pointer_mixture(Graph<T>& g, typename Graph<T>::Var logits, typename Graph<T>::Var scores,
                                       typename Graph<T>::Var gate, std::vector<int> src_ids) {
  const std::size_t n = g.rows(logits), V = g.cols(logits), m = g.cols(scores);
  detail::require(g.rows(scores) == n && g.rows(gate) == n && g.cols(gate) == 1, "pointer_mixture",
                  "rows " + std::to_string(n) + "/" + std::to_string(g.rows(scores)) + "/" +
                      std::to_string(g.rows(gate)) + " or gate width " + std::to_string(g.cols(gate)));
  detail::require(src_ids.size() == m, "pointer_mixture",
                  "source ids " + std::to_string(src_ids.size()) + " vs score width " + std::to_string(m));
  for (const int id : src_ids) {
    detail::require(id >= 0 && static_cast<std::size_t>(id) < V, "pointer_mixture",
                    "source id " + std::to_string(id) + " outside vocab " + std::to_string(V));
  }
  auto softmax_into = [](const T* x, std::size_t k, double* out) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i) mx = std::max(mx, static_cast<double>(x[i]));
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) sum += (out[i] = std::exp(static_cast<double>(x[i]) - mx));
    for (std::size_t i = 0; i < k; ++i) out[i] /= sum;
  };
  std::vector<double> P(n * V), A(n * m), C(n * V, 0.0), q(n * V), gv(n);
  std::vector<T> out(n * V);
  const T* zv = g.value(logits);
  const T* sv = g.value(scores);
  const T* uv = g.value(gate);
  for (std::size_t i = 0; i < n; ++i) {
    softmax_into(zv + i * V, V, P.data() + i * V);
    softmax_into(sv + i * m, m, A.data() + i * m);
    gv[i] = 1.0 / (1.0 + std::exp(-static_cast<double>(uv[i])));
    for (std::size_t j = 0; j < m; ++j) C[i * V + static_cast<std::size_t>(src_ids[j])] += A[i * m + j];
    for (std::size_t w = 0; w < V; ++w) {
      const double x = gv[i] * P[i * V + w] + (1.0 - gv[i]) * C[i * V + w];
      q[i * V + w] = std::max(x, std::numeric_limits<double>::min());
      out[i * V + w] = static_cast<T>(std::log(q[i * V + w]));
    }
  }
  const bool rg = g.requires_grad(logits) || g.requires_grad(scores) || g.requires_grad(gate);
  const auto yid = static_cast<std::uint32_t>(g.node_count());
  return g.push(n, V, std::move(out), rg,
                [&g, logits, scores, gate, n, V, m, yid, src_ids = std::move(src_ids), P = std::move(P),
                 A = std::move(A), C = std::move(C), q = std::move(q), gv = std::move(gv)] {
                  const T* dy = g.grad(typename Graph<T>::Var{yid});
                  T* dz = g.requires_grad(logits) ? g.grad(logits) : nullptr;
                  T* ds = g.requires_grad(scores) ? g.grad(scores) : nullptr;
                  T* du = g.requires_grad(gate) ? g.grad(gate) : nullptr;
                  std::vector<double> r(V);
                  for (std::size_t i = 0; i < n; ++i) {
                    double rp = 0.0, rc = 0.0;
                    for (std::size_t w = 0; w < V; ++w) {
                      r[w] = static_cast<double>(dy[i * V + w]) / q[i * V + w];
                      rp += r[w] * P[i * V + w];
                      rc += r[w] * C[i * V + w];
                    }
                    const double gi = gv[i];
                    if (dz) {
                      for (std::size_t w = 0; w < V; ++w) dz[i * V + w] += static_cast<T>(gi * P[i * V + w] * (r[w] - rp));
                    }
                    if (ds) {
                      for (std::size_t j = 0; j < m; ++j) {
                        ds[i * m + j] += static_cast<T>((1.0 - gi) * A[i * m + j] *
                                                        (r[static_cast<std::size_t>(src_ids[j])] - rc));
                      }
                    }
                    if (du) du[i] += static_cast<T>(gi * (1.0 - gi) * (rp - rc));
                  }
                });
}

// T5-style bucket of the offset key_pos - query_pos. Small offsets get their
// own bucket, larger ones share log-spaced buckets up to max_distance.
inline int relative_bucket(long offset, bool bidirectional, std::size_t num_buckets, std::size_t max_distance) {
  long nb = static_cast<long>(num_buckets);
  long bucket = 0;
  long dist = 0;
  if (bidirectional) {
    nb /= 2;
    if (offset > 0) bucket += nb;
    dist = offset < 0 ? -offset : offset;
  } else {
    dist = offset < 0 ? -offset : 0;
  }
  const long max_exact = nb / 2;
  if (dist < max_exact) return static_cast<int>(bucket + dist);
  const double scaled = std::log(static_cast<double>(dist) / static_cast<double>(max_exact)) /
                        std::log(static_cast<double>(max_distance) / static_cast<double>(max_exact)) *
                        static_cast<double>(nb - max_exact);
  const long large = std::min(nb - 1, max_exact + static_cast<long>(scaled));
  return static_cast<int>(bucket + large);
}

inline std::vector<int> relative_buckets(std::size_t n, std::size_t m, bool bidirectional, std::size_t num_buckets,
                                         std::size_t max_distance) {
  std::vector<int> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      out[i * m + j] = relative_bucket(static_cast<long>(j) - static_cast<long>(i), bidirectional, num_buckets,
                                       max_distance);
    }
  }
  return out;
}

// Mean token cross-entropy of logits[n,V] against `targets`; entries < 0
// are ignored. Returns a [1,1] node (0 when nothing is counted).
template <class T>
typename Graph<T>::Var cross_entropy(Graph<T>& g, typename Graph<T>::Var logits, std::vector<int> targets) {
  const std::size_t n = g.rows(logits), vsz = g.cols(logits);
  detail::require(targets.size() == n, "cross_entropy",
                  std::to_string(targets.size()) + " targets for " + std::to_string(n) + " rows");
  std::vector<T> probs(g.value(logits), g.value(logits) + n * vsz);
  std::size_t counted = 0;
  T loss{0};
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0) continue;
    detail::require(static_cast<std::size_t>(targets[i]) < vsz, "cross_entropy",
                    "target " + std::to_string(targets[i]) + " outside " + std::to_string(vsz) + " classes");
    T* p = probs.data() + i * vsz;
    detail::softmax_row(p, vsz);
    loss -= std::log(std::max(p[targets[i]], std::numeric_limits<T>::min()));
    ++counted;
  }
  if (counted > 0) loss /= static_cast<T>(counted);
  const auto yid = static_cast<std::uint32_t>(g.node_count());
  return g.push(1, 1, {loss}, g.requires_grad(logits) && counted > 0,
                [&g, logits, n, vsz, counted, yid, targets = std::move(targets), probs = std::move(probs)] {
                  const T scale_ = g.grad(typename Graph<T>::Var{yid})[0] / static_cast<T>(counted);
                  T* dl = g.grad(logits);
                  for (std::size_t i = 0; i < n; ++i) {
                    if (targets[i] < 0) continue;
                    const T* p = probs.data() + i * vsz;
                    for (std::size_t j = 0; j < vsz; ++j) dl[i * vsz + j] += scale_ * p[j];
                    dl[i * vsz + static_cast<std::size_t>(targets[i])] -= scale_;
                  }
                });
}

// Sum over all entries of sigmoid binary cross-entropy with logits.
template <class T>
typename Graph<T>::Var bce_with_logits(Graph<T>& g, typename Graph<T>::Var logits, std::vector<T> labels) {
  const std::size_t n = g.size(logits);
  detail::require(labels.size() == n, "bce_with_logits",
                  std::to_string(labels.size()) + " labels for " + std::to_string(n) + " logits");
  const T* z = g.value(logits);
  T loss{0};
  for (std::size_t i = 0; i < n; ++i) {
    loss += std::max(z[i], T{0}) - z[i] * labels[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  const auto yid = static_cast<std::uint32_t>(g.node_count());
  return g.push(1, 1, {loss}, g.requires_grad(logits), [&g, logits, n, yid, labels = std::move(labels)] {
    const T s = g.grad(typename Graph<T>::Var{yid})[0];
    const T* z = g.value(logits);
    T* dz = g.grad(logits);
    for (std::size_t i = 0; i < n; ++i) dz[i] += s * (T{1} / (T{1} + std::exp(-z[i])) - labels[i]);
  });
}

template <class T>
T sigmoid(T z) {
  return T{1} / (T{1} + std::exp(-z));
}

}  // namespace s2kg::nn
