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

#ifndef STCN__ANCHORS_HPP_
#define STCN__ANCHORS_HPP_

#include <algorithm>
#include <limits>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "stcn/graph.hpp"
#include "stcn/parameters.hpp"
#include "stcn/random.hpp"

namespace stcn
{

/// N anchors of dimension l, rows of a [N x l] tensor.
struct AnchorSet
{
  Tensor anchors;

  std::size_t count() const { return anchors.rank() == 2 ? anchors.dim(0) : 0; }
  std::size_t dim() const { return anchors.rank() == 2 ? anchors.dim(1) : 0; }
  std::span<const double> row(std::size_t n) const { return anchors.data().subspan(n * dim(), dim()); }

  void validate() const
  {
    if (count() == 0) throw std::invalid_argument("anchor set must hold N >= 1 anchors");
    if (!anchors.all_finite()) throw NumericalError("anchor set has non-finite entries");
    for (std::size_t a = 0; a < count(); ++a) {
      for (std::size_t b = a + 1; b < count(); ++b) {
        if (squared_distance(row(a), row(b)) == 0.0) {
          throw std::invalid_argument("anchors " + std::to_string(a) + " and " + std::to_string(b) + " coincide");
        }
      }
    }
  }
};

/// Index of the closest row of `anchors` ([N x l]); ties resolve to the lowest index.
inline std::size_t nearest_anchor(std::span<const double> z, const Tensor & anchors)
{
  if (anchors.rank() != 2 || anchors.dim(1) != z.size() || anchors.dim(0) == 0) {
    throw ShapeError("query of width " + std::to_string(z.size()) + " against anchors " + shape_str(anchors.shape()));
  }
  const std::size_t d = z.size();
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < anchors.dim(0); ++n) {
    const double dist = squared_distance(z, anchors.data().subspan(n * d, d));
    if (dist < bd) {
      bd = dist;
      best = n;
    }
  }
  return best;
}

inline std::vector<std::size_t> nearest_anchors(const Tensor & rows, const Tensor & anchors)
{
  const std::size_t d = anchors.dim(1);
  std::vector<std::size_t> out(rows.size() / d);
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = nearest_anchor(rows.data().subspan(r * d, d), anchors);
  return out;
}

struct KMeansConfig
{
  std::size_t clusters = 20;
  std::size_t restarts = 8;
  std::size_t max_iters = 100;
  std::uint64_t seed = 0;
};

struct KMeansRun
{
  Tensor centroids;
  std::vector<std::size_t> assignment;
  double objective = 0.0;
  std::vector<double> trace;  // within-cluster sum of squares after each assignment step
};

struct KMeansResult
{
  KMeansRun best;
  std::size_t best_restart = 0;
  std::vector<double> restart_objectives;
};

namespace detail
{

inline std::size_t count_distinct(const Tensor & pts)
{
  const std::size_t d = pts.dim(1);
  std::set<std::vector<double>> rows;
  for (std::size_t i = 0; i < pts.dim(0); ++i) {
    rows.emplace(pts.data().begin() + static_cast<std::ptrdiff_t>(i * d), pts.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  }
  return rows.size();
}

inline double assign(const Tensor & pts, const Tensor & c, std::vector<std::size_t> & a, std::vector<double> & dist)
{
  const std::size_t d = pts.dim(1), n = pts.dim(0);
  a.resize(n);
  dist.resize(n);
  double j = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = pts.data().subspan(i * d, d);
    a[i] = nearest_anchor(p, c);
    dist[i] = squared_distance(p, c.data().subspan(a[i] * d, d));
    j += dist[i];
  }
  return j;
}

}  // namespace detail

/// k-means++ initial centroids.
inline Tensor seed_plusplus(const Tensor & pts, std::size_t k, Rng & rng)
{
  const std::size_t n = pts.dim(0), d = pts.dim(1);
  Tensor c({k, d});
  auto put = [&](std::size_t cluster, std::size_t point) {
    std::copy_n(
      pts.data().begin() + static_cast<std::ptrdiff_t>(point * d), d,
      c.mutable_data().begin() + static_cast<std::ptrdiff_t>(cluster * d));
  };
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  put(0, first(rng));
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  for (std::size_t m = 1; m < k; ++m) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(pts.data().subspan(i * d, d), c.data().subspan((m - 1) * d, d)));
      total += d2[i];
    }
    // Sample proportional to d2; points already chosen have weight 0.
    const double u = uniform(rng, 0.0, total);
    double acc = 0.0;
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      acc += d2[i];
      if (d2[i] > 0.0) {
        pick = i;
        if (u < acc) break;
      }
    }
    put(m, pick);
  }
  return c;
}

/// Lloyd iterations from the given centroids; empty clusters move to the farthest points.
inline KMeansRun lloyd(const Tensor & pts, Tensor c, std::size_t max_iters)
{
  const std::size_t n = pts.dim(0), d = pts.dim(1), k = c.dim(0);
  KMeansRun run;
  std::vector<double> dist;
  auto cd = c.mutable_data();
  for (std::size_t it = 0; it < max_iters; ++it) {
    std::vector<std::size_t> prev = run.assignment;
    run.objective = detail::assign(pts, c, run.assignment, dist);
    run.trace.push_back(run.objective);
    if (it > 0 && run.assignment == prev) break;

    std::vector<double> sums(k * d, 0.0);
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++sizes[run.assignment[i]];
      for (std::size_t j = 0; j < d; ++j) sums[run.assignment[i] * d + j] += pts[i * d + j];
    }
    std::vector<bool> taken(n, false);
    for (std::size_t m = 0; m < k; ++m) {
      if (sizes[m] > 0) {
        for (std::size_t j = 0; j < d; ++j) cd[m * d + j] = sums[m * d + j] / static_cast<double>(sizes[m]);
        continue;
      }
      std::size_t far = 0;
      double fd = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!taken[i] && dist[i] > fd) {
          fd = dist[i];
          far = i;
        }
      }
      taken[far] = true;
      std::copy_n(pts.data().begin() + static_cast<std::ptrdiff_t>(far * d), d, cd.begin() + static_cast<std::ptrdiff_t>(m * d));
    }
  }
  run.centroids = std::move(c);
  return run;
}

inline KMeansRun kmeans_single(const Tensor & pts, std::size_t k, std::size_t max_iters, Rng & rng)
{
  return lloyd(pts, seed_plusplus(pts, k, rng), max_iters);
}

/// Best-of-restarts k-means on the rows of `points` ([n x l]).
inline KMeansResult kmeans(const Tensor & points, const KMeansConfig & cfg)
{
  if (points.rank() != 2 || points.dim(0) == 0) throw ShapeError("kmeans expects [n x l] points, got " + shape_str(points.shape()));
  if (cfg.clusters == 0 || cfg.restarts == 0 || cfg.max_iters == 0) {
    throw std::invalid_argument("kmeans needs clusters, restarts and max_iters >= 1");
  }
  if (!points.all_finite()) throw NumericalError("kmeans input has non-finite entries");
  const std::size_t distinct = detail::count_distinct(points);
  if (distinct < cfg.clusters) {
    throw std::invalid_argument(
      "kmeans: " + std::to_string(distinct) + " distinct points for " + std::to_string(cfg.clusters) + " clusters");
  }
  KMeansResult res;
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    Rng rng(derive_seed(cfg.seed, "kmeans.restart." + std::to_string(r)));
    KMeansRun run = kmeans_single(points, cfg.clusters, cfg.max_iters, rng);
    res.restart_objectives.push_back(run.objective);
    if (r == 0 || run.objective < res.best.objective) {
      res.best = std::move(run);
      res.best_restart = r;
    }
  }
  return res;
}

/**
 * min_n ||FC(a_n + mu_n) - h0||^2, averaged over the batch.
 *
 * anchors [N x l], offsets [B x N x l], h0 [B x l]; FC(x) = x W + b with the
 * parameters under `prefix`.
 */
inline Var anchor_loss(
  Binder & b, const Var & anchors, const Var & offsets, const Var & h0, const std::string & prefix = "anchor_fc.")
{
  const Shape os = offsets.shape();
  if (anchors.shape().size() != 2 || os.size() != 3 || os[1] != anchors.shape()[0] || os[2] != anchors.shape()[1] ||
      h0.shape() != Shape{os[0], os[2]}) {
    throw ShapeError(
      "anchor_loss: anchors " + shape_str(anchors.shape()) + ", offsets " + shape_str(os) + ", h0 " +
      shape_str(h0.shape()));
  }
  const std::size_t B = os[0], N = os[1], l = os[2];
  const Var moved = matmul(offsets + anchors, b(prefix + "w")) + b(prefix + "b");
  std::vector<std::size_t> rep(B * N);
  for (std::size_t i = 0; i < rep.size(); ++i) rep[i] = i / N;
  const Var target = reshape(gather_rows(h0, rep), {B, N, l});
  return mean(min_axis(sum_axis(square(moved - target), 2), 1));
}

inline void init_anchor_fc(ParameterSet & p, std::size_t l, const std::string & prefix = "anchor_fc.")
{
  Tensor w({l, l});
  for (std::size_t i = 0; i < l; ++i) w[i * l + i] = 1.0;
  p.set(prefix + "w", w);
  p.set(prefix + "b", Tensor({l}));
}

/// One row per anchor: index, then the l coordinates.
inline void export_anchors_csv(const Tensor & anchors, std::ostream & os)
{
  const std::size_t l = anchors.dim(1);
  os << "anchor";
  for (std::size_t j = 0; j < l; ++j) os << ",z" << j;
  os << '\n';
  const auto old = os.precision(17);
  for (std::size_t n = 0; n < anchors.dim(0); ++n) {
    os << n;
    for (std::size_t j = 0; j < l; ++j) os << ',' << anchors.at(n, j);
    os << '\n';
  }
  os.precision(old);
}

}  // namespace stcn

#endif  // STCN__ANCHORS_HPP_
