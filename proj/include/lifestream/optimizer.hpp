#pragma once

// Adaptive-moment (Adam) updates over named tensors, plus global-norm
// gradient clipping.

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>

#include "lifestream/errors.hpp"
#include "lifestream/ndgrad.hpp"

namespace lifestream {

struct AdamConfig {
  double learning_rate = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
struct AdamState {
  std::int64_t step = 0;
  std::map<std::string, nd::Array<S>> m;
  std::map<std::string, nd::Array<S>> v;
};

template <typename S>
using NamedParams = std::span<const std::pair<std::string, nd::Array<S>*>>;

template <typename S>
double global_norm(std::span<const nd::Array<S>> grads) {
  double sq = 0;
  for (const auto& g : grads) sq += static_cast<double>(g.squaredNorm());
  return std::sqrt(sq);
}

// Scales all gradients by max_norm / norm when the global norm exceeds
// max_norm. Returns the norm before clipping.
template <typename S>
double clip_global_norm(std::span<nd::Array<S>> grads, double max_norm) {
  const double norm = global_norm(std::span<const nd::Array<S>>(grads.data(), grads.size()));
  if (norm > max_norm) {
    const S factor = static_cast<S>(max_norm / norm);
    for (auto& g : grads) g *= factor;
  }
  return norm;
}

// One bias-corrected Adam update applied to every named tensor.
template <typename S>
void adam_step(NamedParams<S> params, std::span<const nd::Array<S>> grads, AdamState<S>& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = *params[i].second;
    if (grads[i].rows() != p.rows() || grads[i].cols() != p.cols()) {
      throw ShapeError("adam_step: gradient shape mismatch for " + params[i].first);
    }
    if (!grads[i].allFinite()) throw NumericError("adam_step: non-finite gradient for " + params[i].first);
  }
  state.step += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params[i].first;
    nd::Array<S>& p = *params[i].second;
    const nd::Array<S>& g = grads[i];
    auto [mit, m_new] = state.m.try_emplace(name, nd::Array<S>::Zero(p.rows(), p.cols()));
    auto [vit, v_new] = state.v.try_emplace(name, nd::Array<S>::Zero(p.rows(), p.cols()));
    nd::Array<S>& m = mit->second;
    nd::Array<S>& v = vit->second;
    m = b1 * m + (S(1) - b1) * g;
    v = (b2 * v.array() + (S(1) - b2) * g.array().square()).matrix();
    const S lr = static_cast<S>(cfg.learning_rate);
    const S mc = static_cast<S>(1.0 / c1), vc = static_cast<S>(1.0 / c2);
    const S e = static_cast<S>(cfg.eps);
    p.array() -= lr * (m.array() * mc) / ((v.array() * vc).sqrt() + e);
  }
}

}  // namespace lifestream
