#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "inatlas/errors.hpp"

namespace inatlas::engine {

// Adam with bias correction. Each parameter group (network, per-subject
// latent, rigid, condition) owns an independent state whose step counter
// advances only when that group receives gradients.
struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  long long step = 0;
  AdamConfig cfg;

  void ensure_size(std::size_t n) {
    if (m.size() != n) {
      m.assign(n, T(0));
      v.assign(n, T(0));
    }
  }
};

template <typename T>
void adam_step(std::vector<T>& params, const std::vector<T>& grads, AdamState<T>& state,
               double lr, const std::string& group_name) {
  if (params.size() != grads.size())
    throw ShapeError("adam_step: gradient/parameter size mismatch for group " + group_name);
  for (const T& g : grads)
    if (!std::isfinite(static_cast<double>(g)))
      throw NumericError("adam_step: non-finite gradient in group " + group_name);

  state.ensure_size(params.size());
  state.step += 1;
  const double b1 = state.cfg.beta1;
  const double b2 = state.cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grads[i]);
    const double m = b1 * static_cast<double>(state.m[i]) + (1.0 - b1) * g;
    const double v = b2 * static_cast<double>(state.v[i]) + (1.0 - b2) * g * g;
    state.m[i] = static_cast<T>(m);
    state.v[i] = static_cast<T>(v);
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    params[i] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + state.cfg.eps));
  }
}

// Convenience overload for small fixed arrays (rigid parameters).
template <typename T, std::size_t N>
void adam_step(std::array<T, N>& params, const std::array<T, N>& grads, AdamState<T>& state,
               double lr, const std::string& group_name) {
  std::vector<T> p(params.begin(), params.end());
  std::vector<T> g(grads.begin(), grads.end());
  adam_step(p, g, state, lr, group_name);
  for (std::size_t i = 0; i < N; ++i) params[i] = p[i];
}

}  // namespace inatlas::engine
