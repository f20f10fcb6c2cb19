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

// Central finite-difference oracle shared by the test suites. It rebuilds the
// loss from scratch for each perturbation and never touches the backward pass.

#ifndef STCN_TESTS__GRADCHECK_HPP_
#define STCN_TESTS__GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "stcn/parameters.hpp"

namespace stcn::check
{

using LossBuilder = std::function<Var(Graph &, Binder &)>;

struct GradCheckResult
{
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t entries = 0;
};

inline double loss_value(const ParameterSet & params, const LossBuilder & build)
{
  Graph g;
  Binder b(g, params);
  return build(g, b).value().item();
}

inline std::vector<double> numeric_gradient(
  const ParameterSet & params, const std::string & name, const LossBuilder & build, double step)
{
  const std::size_t n = params.get(name).size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    ParameterSet plus = params, minus = params;
    plus.get_mutable(name)[i] += step;
    minus.get_mutable(name)[i] -= step;
    out[i] = (loss_value(plus, build) - loss_value(minus, build)) / (2.0 * step);
  }
  return out;
}

/// Per-tensor relative error ||a - n|| / max(||a||, ||n||, floor), maximized over tensors.
inline GradCheckResult check_gradients(
  const ParameterSet & params, const LossBuilder & build, double step = 1e-5, double floor = 1e-8)
{
  Graph g;
  Binder b(g, params);
  const Var loss = build(g, b);
  const auto analytic = g.backward(loss).parameters();

  GradCheckResult res;
  for (const auto & [name, value] : params.items()) {
    const auto numeric = numeric_gradient(params, name, build, step);
    std::vector<double> a(value.size(), 0.0);
    if (auto it = analytic.find(name); it != analytic.end()) {
      a.assign(it->second.data().begin(), it->second.data().end());
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      diff += (a[i] - numeric[i]) * (a[i] - numeric[i]);
      na += a[i] * a[i];
      nn += numeric[i] * numeric[i];
    }
    const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
    res.entries += a.size();
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst = name;
    }
  }
  return res;
}

}  // namespace stcn::check

#endif  // STCN_TESTS__GRADCHECK_HPP_
