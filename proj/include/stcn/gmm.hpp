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

#ifndef STCN__GMM_HPP_
#define STCN__GMM_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "stcn/graph.hpp"
#include "stcn/random.hpp"

namespace stcn
{

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Softmax with max subtraction.
inline std::vector<double> anchor_probabilities(std::span<const double> logits)
{
  if (logits.empty()) throw std::invalid_argument("anchor_probabilities needs at least one logit");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> q(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) s += (q[i] = std::exp(logits[i] - m));
  for (auto & v : q) v /= s;
  return q;
}

inline double log_component_density(
  std::span<const double> z, std::span<const double> mean, std::span<const double> var)
{
  if (z.size() != mean.size() || z.size() != var.size()) throw ShapeError("component density dimension mismatch");
  double lp = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!(var[i] > 0.0)) throw std::invalid_argument("component variance must be > 0");
    const double e = z[i] - mean[i];
    lp -= 0.5 * (kLog2Pi + std::log(var[i]) + e * e / var[i]);
  }
  return lp;
}

/// Diagonal-covariance normal density.
inline double component_density(std::span<const double> z, std::span<const double> mean, std::span<const double> var)
{
  return std::exp(log_component_density(z, mean, var));
}

/// Mixture over anchors: weights q, means a_n + mu_n and diagonal variances, rows of [N x l].
struct MixtureHead
{
  std::vector<double> q;
  Tensor means;
  Tensor variances;

  std::size_t count() const { return q.size(); }
  std::size_t dim() const { return means.dim(1); }
  std::span<const double> mean(std::size_t n) const { return means.data().subspan(n * dim(), dim()); }
  std::span<const double> variance(std::size_t n) const { return variances.data().subspan(n * dim(), dim()); }

  void validate() const
  {
    if (q.empty()) throw std::invalid_argument("mixture needs N >= 1 components");
    if (means.rank() != 2 || means.dim(0) != q.size() || variances.shape() != means.shape()) {
      throw ShapeError("mixture means/variances must be [N x l] with N = " + std::to_string(q.size()));
    }
    double s = 0.0;
    for (double v : q) {
      if (!(v >= 0.0)) throw std::invalid_argument("mixture weights must be >= 0");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("mixture weights must sum to 1");
    for (double v : variances.data()) {
      if (!(v > 0.0)) throw std::invalid_argument("mixture variances must be > 0");
    }
  }
};

inline double log_mixture_density(std::span<const double> z, const MixtureHead & head)
{
  std::vector<double> terms;
  for (std::size_t n = 0; n < head.count(); ++n) {
    if (head.q[n] == 0.0) continue;
    terms.push_back(std::log(head.q[n]) + log_component_density(z, head.mean(n), head.variance(n)));
  }
  if (terms.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

inline double mixture_density(std::span<const double> z, const MixtureHead & head)
{
  return std::exp(log_mixture_density(z, head));
}

struct LatentSample
{
  std::size_t anchor = 0;
  std::size_t sample = 0;
  double q = 0.0;
  std::vector<double> z;
};

/// M draws per component, anchor-major; not weighted by q.
inline std::vector<LatentSample> sample_latents(const MixtureHead & head, std::size_t M, Rng & rng)
{
  if (M == 0) throw std::invalid_argument("samples per anchor M must be >= 1");
  head.validate();
  std::vector<LatentSample> out;
  out.reserve(head.count() * M);
  for (std::size_t n = 0; n < head.count(); ++n) {
    const auto mu = head.mean(n);
    const auto var = head.variance(n);
    for (std::size_t m = 0; m < M; ++m) {
      LatentSample s{n, m, head.q[n], std::vector<double>(mu.size())};
      for (std::size_t j = 0; j < mu.size(); ++j) s.z[j] = mu[j] + std::sqrt(var[j]) * normal(rng);
      out.push_back(std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Graph forms.

/**
 * Negative log-likelihood of the matched component, batch mean:
 *   -(1/B) sum_m [ log Q_k(X_m) + log N(s_m | a_k + mu_k, diag exp(logvar_k)) ],  k = k_hat_m
 *
 * logits [B x N], offsets and logvar [B x N x l], anchors [N x l], s [B x l].
 */
inline Var nll_loss(
  const Var & logits, const Var & offsets, const Var & logvar, const Tensor & anchors, const Var & s,
  const std::vector<std::size_t> & k_hat)
{
  const Shape os = offsets.shape();
  if (os.size() != 3 || logvar.shape() != os || logits.shape() != Shape{os[0], os[1]} ||
      anchors.shape() != Shape{os[1], os[2]} || s.shape() != Shape{os[0], os[2]}) {
    throw ShapeError(
      "nll_loss: logits " + shape_str(logits.shape()) + ", offsets " + shape_str(os) + ", anchors " +
      shape_str(anchors.shape()) + ", s " + shape_str(s.shape()));
  }
  const std::size_t B = os[0], N = os[1], l = os[2];
  if (k_hat.size() != B) throw ShapeError("nll_loss: one matched index per batch row required");
  std::vector<std::size_t> flat(B);
  std::vector<double> a(B * l);
  for (std::size_t m = 0; m < B; ++m) {
    if (k_hat[m] >= N) {
      throw std::out_of_range("matched anchor index " + std::to_string(k_hat[m]) + " >= N = " + std::to_string(N));
    }
    flat[m] = m * N + k_hat[m];
    std::copy_n(anchors.data().begin() + static_cast<std::ptrdiff_t>(k_hat[m] * l), l, a.begin() + static_cast<std::ptrdiff_t>(m * l));
  }
  Graph & g = *logits.graph();
  const Var logq = gather_rows(reshape(log_softmax(logits), {B * N, 1}), flat);
  const Var mu = gather_rows(reshape(offsets, {B * N, l}), flat);
  const Var lv = gather_rows(reshape(logvar, {B * N, l}), flat);
  const Var err = s - (mu + g.constant(Tensor({B, l}, std::move(a))));
  const Var quad = sum(square(err) * exp(-lv));
  const double c = static_cast<double>(B * l) * kLog2Pi;
  const Var total = -sum(logq) + 0.5 * add_scalar(sum(lv) + quad, c);
  return scale(total, 1.0 / static_cast<double>(B));
}

/**
 * Reparameterized draws z = a_n + mu_n + exp(logvar_n / 2) * eps.
 *
 * offsets and logvar [B x N x l], anchors [N x l], eps [M x B x N x l].
 * Returns [B*N*M x l] with rows ordered (batch, anchor, sample).
 */
inline Var reparameterize(const Var & anchors, const Var & offsets, const Var & logvar, const Tensor & eps)
{
  const Shape os = offsets.shape();
  if (eps.rank() != 4 || Shape(eps.shape().begin() + 1, eps.shape().end()) != os) {
    throw ShapeError("eps " + shape_str(eps.shape()) + " must be [M x " + shape_str(os) + "]");
  }
  const std::size_t M = eps.dim(0), B = os[0], N = os[1], l = os[2];
  Graph & g = *offsets.graph();
  const Var z = (offsets + anchors) + exp(0.5 * logvar) * g.constant(eps);  // [M x B x N x l]
  return reshape(permute(z, {1, 2, 0, 3}), {B * N * M, l});
}

}  // namespace stcn

#endif  // STCN__GMM_HPP_
