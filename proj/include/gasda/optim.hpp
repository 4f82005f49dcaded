#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "gasda/error.hpp"
#include "gasda/networks.hpp"
#include "gasda/tensor.hpp"

namespace gasda::optim {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("adam: lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("adam: betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("adam: eps must be > 0");
  }
};

// First and second moments, one slot per parameter tensor of a ParamSet.
template <class T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::size_t step = 0;
};

// One bias-corrected Adam update using the grads stored on each parameter.
// A parameter without a grad buffer is treated as having zero gradient.
template <class T>
void adam_step(nets::ParamSet<T>& params, AdamState<T>& state, const AdamConfig& cfg) {
  cfg.validate();
  const std::size_t np = params.params.size();
  if (state.m.empty()) {
    state.m.resize(np);
    state.v.resize(np);
    for (std::size_t i = 0; i < np; ++i) {
      state.m[i].assign(params.params[i].second.numel(), T(0));
      state.v[i].assign(params.params[i].second.numel(), T(0));
    }
  }
  if (state.m.size() != np) throw ShapeError("adam: state built for a different parameter set");
  for (std::size_t i = 0; i < np; ++i) {
    const auto& t = params.params[i].second;
    if (state.m[i].size() != t.numel()) throw ShapeError("adam: state/parameter size mismatch for " + params.params[i].first);
    if (t.has_grad()) {
      for (const T g : t.grad()) {
        if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient in " + params.name + "/" + params.params[i].first);
      }
    }
  }

  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  for (std::size_t i = 0; i < np; ++i) {
    auto& t = params.params[i].second;
    if (!t.has_grad()) {
      // Moments still decay so a later gradient sees the correct history.
      for (auto& x : state.m[i]) x *= b1;
      for (auto& x : state.v[i]) x *= b2;
    }
    const auto g = t.grad();
    auto p = t.mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (t.has_grad()) {
        m[j] = b1 * m[j] + (T(1) - b1) * g[j];
        v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      }
      const double mh = static_cast<double>(m[j]) / c1;
      const double vh = static_cast<double>(v[j]) / c2;
      p[j] = static_cast<T>(static_cast<double>(p[j]) - cfg.lr * mh / (std::sqrt(vh) + cfg.eps));
    }
  }
}

}  // namespace gasda::optim
