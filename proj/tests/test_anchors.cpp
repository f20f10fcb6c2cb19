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

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "gradcheck.hpp"
#include "stcn/anchors.hpp"

namespace stcn
{
namespace
{

Tensor planted(Rng & rng, std::size_t per, std::size_t d, double sep, std::vector<std::size_t> & labels)
{
  Tensor pts({2 * per, d});
  labels.clear();
  for (std::size_t i = 0; i < 2 * per; ++i) {
    const std::size_t k = i % 2;
    labels.push_back(k);
    for (std::size_t j = 0; j < d; ++j) pts[i * d + j] = normal(rng) + (j == 0 && k == 1 ? sep : 0.0);
  }
  return pts;
}

TEST(KMeans, SingleClusterIsGlobalMean)
{
  Rng rng(1);
  const auto pts = normal_tensor({30, 3}, rng);
  const auto res = kmeans(pts, {1, 2, 50, 7});
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < 30; ++i) m += pts[i * 3 + j] / 30.0;
    EXPECT_NEAR(res.best.centroids[j], m, 1e-12);
  }
}

TEST(KMeans, RecoversPlantedClusters)
{
  std::size_t ok = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng(derive_seed(trial, "planted"));
    std::vector<std::size_t> labels;
    const auto pts = planted(rng, 40, 3, 10.0, labels);
    const auto res = kmeans(pts, {2, 8, 100, trial});
    // Oracle: exact means of the planted assignments.
    double mean[2][3] = {};
    for (std::size_t i = 0; i < 80; ++i) {
      for (std::size_t j = 0; j < 3; ++j) mean[labels[i]][j] += pts[i * 3 + j] / 40.0;
    }
    bool good = true;
    for (std::size_t k = 0; k < 2; ++k) {
      double best = 1e300;
      for (std::size_t c = 0; c < 2; ++c) {
        double e = 0.0;
        for (std::size_t j = 0; j < 3; ++j) e += std::pow(res.best.centroids.at(c, j) - mean[k][j], 2);
        best = std::min(best, std::sqrt(e));
      }
      good = good && best <= 0.5;
    }
    ok += good;
  }
  EXPECT_EQ(ok, 100u);
}

TEST(KMeans, ObjectiveNonIncreasingAndRestartsMonotone)
{
  Rng rng(2);
  const auto pts = normal_tensor({200, 4}, rng);
  const KMeansConfig cfg{6, 8, 100, 5};
  const auto res = kmeans(pts, cfg);
  ASSERT_EQ(res.restart_objectives.size(), 8u);
  for (std::size_t r = 0; r < 8; ++r) {
    EXPECT_LE(res.best.objective, res.restart_objectives[r]);
    Rng again(derive_seed(cfg.seed, "kmeans.restart." + std::to_string(r)));
    const auto run = kmeans_single(pts, 6, 100, again);
    EXPECT_EQ(run.objective, res.restart_objectives[r]);
    for (std::size_t i = 1; i < run.trace.size(); ++i) EXPECT_LE(run.trace[i], run.trace[i - 1] + 1e-12);
  }
  EXPECT_EQ(res.best.centroids.shape(), (Shape{6, 4}));
}

TEST(KMeans, Deterministic)
{
  Rng rng(3);
  const auto pts = normal_tensor({50, 2}, rng);
  EXPECT_EQ(kmeans(pts, {4, 3, 100, 9}).best.centroids, kmeans(pts, {4, 3, 100, 9}).best.centroids);
}

TEST(KMeans, TooFewDistinctPoints)
{
  const auto pts = Tensor::matrix(4, 1, {1, 1, 2, 2});
  EXPECT_THROW(kmeans(pts, {3, 1, 10, 0}), std::invalid_argument);
  EXPECT_NO_THROW(kmeans(pts, {2, 1, 10, 0}));
}

TEST(KMeans, EmptyClusterMovesToFarthestPoint)
{
  const auto pts = Tensor::matrix(4, 1, {0.0, 1.0, 2.0, 10.0});
  // Centroid 1 starts far away and captures nothing.
  const auto run = lloyd(pts, Tensor::matrix(2, 1, {1.0, 100.0}), 1 + 1);
  EXPECT_EQ(run.centroids.at(1, 0), 10.0);
  const auto done = lloyd(pts, Tensor::matrix(2, 1, {1.0, 100.0}), 100);
  EXPECT_NEAR(done.centroids.at(0, 0), 1.0, 1e-12);
  EXPECT_EQ(done.centroids.at(1, 0), 10.0);
  EXPECT_EQ(done.objective, 2.0);
}

TEST(NearestAnchor, ExactTieAndScan)
{
  Rng rng(4);
  const auto a = normal_tensor({20, 3}, rng);
  EXPECT_EQ(nearest_anchor(a.data().subspan(21, 3), a), 7u);

  Tensor t({6, 1}, {9, 9, -1, 9, 9, 1});
  EXPECT_EQ(nearest_anchor(std::vector<double>{0.0}, t), 2u);

  for (int i = 0; i < 200; ++i) {
    const auto z = normal_tensor({3}, rng);
    std::size_t best = 0;
    double bd = 1e300;
    for (std::size_t n = 0; n < 20; ++n) {
      double e = 0.0;
      for (std::size_t j = 0; j < 3; ++j) e += (z[j] - a.at(n, j)) * (z[j] - a.at(n, j));
      if (e < bd) {
        bd = e;
        best = n;
      }
    }
    EXPECT_EQ(nearest_anchor(z.data(), a), best);
  }
  EXPECT_THROW(nearest_anchor(std::vector<double>{0.0, 1.0}, a), ShapeError);
}

TEST(NearestAnchor, InvariantUnderFartherAnchors)
{
  Rng rng(5);
  const auto a = normal_tensor({5, 2}, rng);
  const auto z = normal_tensor({2}, rng);
  const auto k = nearest_anchor(z.data(), a);
  std::vector<double> more = a.values();
  for (double v : {50.0, 50.0, -40.0, 30.0}) more.push_back(v);
  EXPECT_EQ(nearest_anchor(z.data(), Tensor({7, 2}, more)), k);
}

TEST(AnchorLoss, ClosedForms)
{
  {
    ParameterSet p;
    init_anchor_fc(p, 2);
    Graph g;
    Binder b(g, p);
    const auto a = g.constant(Tensor::matrix(3, 2, {0, 0, 1, 2, 5, 5}));
    const auto loss = anchor_loss(b, a, g.constant(Tensor({1, 3, 2})), g.constant(Tensor::matrix(1, 2, {1, 2})));
    EXPECT_EQ(loss.value().item(), 0.0);
  }
  {
    ParameterSet p;
    p.set("anchor_fc.w", Tensor::matrix(1, 1, {2.0}));
    p.set("anchor_fc.b", Tensor({1}));
    Graph g;
    Binder b(g, p);
    const auto loss = anchor_loss(
      b, g.constant(Tensor::matrix(1, 1, {1.0})), g.constant(Tensor({1, 1, 1})), g.constant(Tensor::matrix(1, 1, {0.0})));
    EXPECT_DOUBLE_EQ(loss.value().item(), 4.0);
  }
}

TEST(AnchorLoss, GradientOnlyOnMinimizingBranch)
{
  Rng rng(6);
  ParameterSet p;
  init_anchor_fc(p, 3);
  p.set("anchor_fc.w", normal_tensor({3, 3}, rng));
  p.set("mu", normal_tensor({2, 4, 3}, rng, 0.3));
  const auto anchors = normal_tensor({4, 3}, rng, 3.0);
  const auto h0 = normal_tensor({2, 3}, rng);
  auto build = [&](Graph & g, Binder & b) { return anchor_loss(b, g.constant(anchors), b("mu"), g.constant(h0)); };
  const auto res = check::check_gradients(p, build, 1e-6);
  EXPECT_LT(res.max_rel_error, 1e-6) << res.worst;

  Graph g;
  Binder b(g, p);
  const auto grads = g.backward(build(g, b)).parameters();
  const auto & gm = grads.at("mu");
  for (std::size_t m = 0; m < 2; ++m) {
    std::size_t nonzero = 0;
    for (std::size_t n = 0; n < 4; ++n) {
      double s = 0.0;
      for (std::size_t j = 0; j < 3; ++j) s += std::abs(gm[(m * 4 + n) * 3 + j]);
      nonzero += s > 0.0;
    }
    EXPECT_EQ(nonzero, 1u) << "row " << m;
  }
  EXPECT_GE(build(g, b).value().item(), 0.0);
}

TEST(AnchorLoss, ShapeErrors)
{
  ParameterSet p;
  init_anchor_fc(p, 2);
  Graph g;
  Binder b(g, p);
  EXPECT_THROW(anchor_loss(b, g.constant(Tensor({3, 2})), g.constant(Tensor({1, 2, 2})), g.constant(Tensor({1, 2}))), ShapeError);
}

TEST(AnchorSet, ValidateAndCsv)
{
  EXPECT_THROW((AnchorSet{Tensor::matrix(2, 1, {1, 1})}.validate()), std::invalid_argument);
  EXPECT_NO_THROW((AnchorSet{Tensor::matrix(2, 1, {1, 2})}.validate()));
  std::ostringstream os;
  export_anchors_csv(Tensor::matrix(2, 2, {1, 2, 3, 4.5}), os);
  EXPECT_EQ(os.str(), "anchor,z0,z1\n0,1,2\n1,3,4.5\n");
}

}  // namespace
}  // namespace stcn
