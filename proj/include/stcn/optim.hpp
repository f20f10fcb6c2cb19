// Copyright 2026 The STCN Authors
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

#ifndef STCN__OPTIM_HPP_
#define STCN__OPTIM_HPP_

#include <cmath>
#include <map>
#include <string>

#include "stcn/parameters.hpp"

namespace stcn
{

struct AdamConfig
{
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState
{
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::size_t step = 0;
};

/// Step learning rate: lr0 * decay^floor(epoch / every).
inline double scheduled_lr(double lr0, std::size_t epoch, double decay = 0.98, std::size_t every = 10)
{
  return lr0 * std::pow(decay, static_cast<double>(epoch / every));
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`. Returns the pre-clip norm.
inline double clip_global_norm(std::map<std::string, Tensor> & grads, double max_norm)
{
  double sq = 0.0;
  for (const auto & [_, g] : grads) sq += squared_norm(g.data());
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto & [_, g] : grads) {
      for (auto & x : g.mutable_data()) x *= s;
    }
  }
  return norm;
}

/**
 * One bias-corrected Adam update of every parameter that has a gradient.
 * Parameters without a gradient entry are left untouched.
 */
inline void adam_step(
  ParameterSet & params, const std::map<std::string, Tensor> & grads, AdamState & state,
  const AdamConfig & cfg)
{
  for (const auto & [name, g] : grads) {
    if (!g.all_finite()) throw NumericalError("non-finite gradient for parameter '" + name + "'");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (const auto & [name, g] : grads) {
    if (!params.contains(name)) continue;
    Tensor & p = params.get_mutable(name);
    if (p.shape() != g.shape()) {
      throw ShapeError("gradient shape mismatch for parameter '" + name + "'");
    }
    auto [mit, m_new] = state.m.try_emplace(name, Tensor(p.shape()));
    auto [vit, v_new] = state.v.try_emplace(name, Tensor(p.shape()));
    if (mit->second.shape() != p.shape() || vit->second.shape() != p.shape()) {
      throw ShapeError("optimizer moment shape mismatch for parameter '" + name + "'");
    }
    auto m = mit->second.mutable_data();
    auto v = vit->second.mutable_data();
    auto w = p.mutable_data();
    const auto gd = g.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gd[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      w[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
}

}  // namespace stcn

#endif  // STCN__OPTIM_HPP_
