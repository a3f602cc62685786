// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "s2kg/error.hpp"
#include "s2kg/nn/graph.hpp"

namespace s2kg::nn {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Global gradient-norm clipping; 0 disables it.
  double clip_norm = 0.0;
};

template <class T>
struct AdamState {
  AdamConfig config;
  std::size_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

template <class T>
AdamState<T> make_adam_state(const ParameterSet<T>& params, const AdamConfig& config) {
  AdamState<T> s;
  s.config = config;
  for (const auto& p : params.all()) {
    s.m.emplace_back(p.value.rows(), p.value.cols());
    s.v.emplace_back(p.value.rows(), p.value.cols());
  }
  return s;
}

template <class T>
double grad_norm(const ParameterSet<T>& params) {
  double sq = 0.0;
  for (const auto& p : params.all()) {
    for (const T g : p.grad.span()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

// One bias-corrected Adam update from the accumulated gradients. Gradients
// are left in place; callers zero them before the next accumulation.
template <class T>
void adam_step(ParameterSet<T>& params, AdamState<T>& state) {
  auto& all = params.all();
  if (state.m.size() != all.size()) throw ShapeError("adam state does not match parameter set");
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (state.m[i].shape() != all[i].value.shape()) throw ShapeError("adam moment shape mismatch for " + all[i].name);
    for (const T g : all[i].grad.span()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw ValidationError(all[i].name, "non-finite gradient");
      }
    }
  }
  const AdamConfig& c = state.config;
  T clip = T{1};
  if (c.clip_norm > 0.0) {
    const double norm = grad_norm(params);
    if (norm > c.clip_norm) clip = static_cast<T>(c.clip_norm / norm);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T bc1 = static_cast<T>(1.0 - std::pow(c.beta1, t));
  const T bc2 = static_cast<T>(1.0 - std::pow(c.beta2, t));
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T lr = static_cast<T>(c.lr), eps = static_cast<T>(c.eps);
  for (std::size_t i = 0; i < all.size(); ++i) {
    T* w = all[i].value.data();
    const T* g = all[i].grad.data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    const std::size_t n = all[i].value.size();
    for (std::size_t j = 0; j < n; ++j) {
      const T gj = g[j] * clip;
      m[j] = b1 * m[j] + (T{1} - b1) * gj;
      v[j] = b2 * v[j] + (T{1} - b2) * gj * gj;
      const T mhat = m[j] / bc1;
      const T vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace s2kg::nn
