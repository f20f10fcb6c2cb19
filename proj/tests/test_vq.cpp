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

#include "gradcheck.hpp"
#include "stcn/vq.hpp"

namespace stcn
{
namespace
{

// Independent scan: explicit loops, strict comparison keeps the first minimizer.
std::vector<std::size_t> brute_force(const Tensor & z, const Tensor & book)
{
  const std::size_t d = book.dim(1);
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < z.size() / d; ++r) {
    std::size_t best = 0;
    double bd = 0.0;
    for (std::size_t e = 0; e < book.dim(0); ++e) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += (z[r * d + j] - book.at(e, j)) * (z[r * d + j] - book.at(e, j));
      if (e == 0 || s < bd) {
        bd = s;
        best = e;
      }
    }
    out.push_back(best);
  }
  return out;
}

TEST(Quantize, TwoEntryExample)
{
  const auto book = Tensor::matrix(2, 2, {0, 0, 1, 1});
  const auto q = quantize(Tensor::matrix(1, 2, {0.2, 0.1}), book);
  EXPECT_EQ(q.indices, (std::vector<std::size_t>{0}));
  EXPECT_EQ(q.values.values(), (std::vector<double>{0, 0}));
}

TEST(Quantize, ExactEntry)
{
  Rng rng(1);
  const auto book = normal_tensor({8, 3}, rng);
  const Tensor z({1, 3}, {book.at(3, 0), book.at(3, 1), book.at(3, 2)});
  const auto q = quantize(z, book);
  EXPECT_EQ(q.indices[0], 3u);
  EXPECT_EQ(squared_distance(q.values.data(), z.data()), 0.0);
}

TEST(Quantize, MatchesScanOnRandomBooks)
{
  Rng rng(2);
  const auto book = normal_tensor({64, 5}, rng);
  const auto z = normal_tensor({100, 5}, rng);
  EXPECT_EQ(quantize(z, book).indices, brute_force(z, book));
}

TEST(Quantize, TiesResolveToLowestIndex)
{
  // Integer grids make exact ties common.
  Rng rng(3);
  std::uniform_int_distribution<int> cell(-2, 2);
  std::size_t ties = 0;
  for (int trial = 0; trial < 300; ++trial) {
    Tensor book({6, 2}), z({4, 2});
    for (auto & v : book.mutable_data()) v = cell(rng);
    for (auto & v : z.mutable_data()) v = cell(rng);
    const auto got = quantize(z, book).indices;
    EXPECT_EQ(got, brute_force(z, book));
    for (std::size_t r = 0; r < 4; ++r) {
      const double best = squared_distance(z.data().subspan(r * 2, 2), book.data().subspan(got[r] * 2, 2));
      for (std::size_t e = 0; e < got[r]; ++e) {
        EXPECT_GT(squared_distance(z.data().subspan(r * 2, 2), book.data().subspan(e * 2, 2)), best);
      }
      for (std::size_t e = got[r] + 1; e < 6; ++e) {
        ties += squared_distance(z.data().subspan(r * 2, 2), book.data().subspan(e * 2, 2)) == best;
      }
    }
  }
  EXPECT_GT(ties, 50u);
}

TEST(Quantize, IdempotentAndNeverFarther)
{
  Rng rng(4);
  const auto book = normal_tensor({16, 4}, rng);
  const auto z = normal_tensor({50, 4}, rng);
  const auto q = quantize(z, book);
  EXPECT_EQ(quantize(q.values, book).values, q.values);
  for (std::size_t r = 0; r < 50; ++r) {
    const double d = squared_distance(z.data().subspan(r * 4, 4), q.values.data().subspan(r * 4, 4));
    for (std::size_t e = 0; e < 16; ++e) EXPECT_LE(d, squared_distance(z.data().subspan(r * 4, 4), book.data().subspan(e * 4, 4)));
  }
}

TEST(Quantize, GraphFormAgrees)
{
  Rng rng(5);
  const auto book = normal_tensor({10, 3}, rng);
  const auto z = normal_tensor({2, 4, 3}, rng);
  Graph g;
  const auto qv = quantize(g.constant(z), g.constant(book));
  const auto q = quantize(z, book);
  EXPECT_EQ(qv.indices, q.indices);
  EXPECT_EQ(qv.values.value(), q.values);
}

TEST(Quantize, Errors)
{
  EXPECT_THROW(quantize(Tensor({2, 3}), Tensor({4, 2})), ShapeError);
  EXPECT_THROW(quantize(Tensor({2, 3}), Tensor({3})), ShapeError);
}

TEST(VqLoss, ZeroWhenExact)
{
  Graph g;
  Rng rng(6);
  const auto y = g.constant(normal_tensor({2, 5, 6}, rng));
  const auto z = g.constant(normal_tensor({3, 4}, rng));
  EXPECT_EQ(vq_loss(y, y, z, z, 0.25, 2).value().item(), 0.0);
}

TEST(VqLoss, ScalarSubstitution)
{
  Graph g;
  const auto y = g.constant(Tensor::matrix(1, 3, {1, 2, 3}));
  const auto z = g.constant(Tensor::matrix(1, 1, {0.0}));
  const auto zq = g.constant(Tensor::matrix(1, 1, {1.0}));
  EXPECT_DOUBLE_EQ(vq_loss(y, y, z, zq, 0.25, 1).value().item(), 1.25);
  EXPECT_THROW(vq_loss(y, y, z, zq, -0.1, 1), std::invalid_argument);
}

TEST(VqLoss, JointL2IsPerJointEuclidean)
{
  Graph g;
  // Two joints of 2 coords: errors (3,4) and (0,1) -> 5 + 1.
  const auto y = g.constant(Tensor::matrix(1, 4, {3, 4, 0, 1}));
  const auto o = g.constant(Tensor({1, 4}));
  EXPECT_DOUBLE_EQ(joint_l2(y, o, 2).value().item(), 6.0);
  EXPECT_THROW(joint_l2(y, o, 3), ShapeError);
}

TEST(VqLoss, NonNegativeOnRandomInputs)
{
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    Graph g;
    const auto y = g.constant(normal_tensor({3, 4}, rng));
    const auto yh = g.constant(normal_tensor({3, 4}, rng));
    const auto z = g.constant(normal_tensor({2, 3}, rng));
    const auto zq = g.constant(normal_tensor({2, 3}, rng));
    EXPECT_GT(vq_loss(y, yh, z, zq, 0.25, 2).value().item(), 0.0);
  }
}

TEST(VqLoss, CodebookGradientIsRoutedResidual)
{
  Rng rng(8);
  ParameterSet p;
  p.set("book", normal_tensor({5, 3}, rng));
  const auto zval = normal_tensor({4, 3}, rng);
  Graph g;
  Binder b(g, p);
  const auto z = g.constant(zval);
  const auto q = quantize(z, b("book"));
  const auto y = g.constant(Tensor({1, 2}));
  const auto loss = vq_loss(y, y, z, q.values, 0.25, 1);
  const auto grad = g.backward(loss).parameters().at("book");
  Tensor expect({5, 3});
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t j = 0; j < 3; ++j) expect[q.indices[r] * 3 + j] += 2.0 * (q.values.value()[r * 3 + j] - zval[r * 3 + j]);
  }
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(grad[i], expect[i], 1e-12);
}

TEST(StraightThrough, ForwardAndIdentityGradient)
{
  Rng rng(9);
  ParameterSet p;
  p.set("z", normal_tensor({3, 2}, rng));
  const auto zq_val = normal_tensor({3, 2}, rng);
  const auto w = normal_tensor({3, 2}, rng);
  Graph g;
  Binder b(g, p);
  const auto st = straight_through(b("z"), g.constant(zq_val));
  for (std::size_t i = 0; i < zq_val.size(); ++i) EXPECT_NEAR(st.value()[i], zq_val[i], 1e-15);
  const auto grad = g.backward(sum(st * g.constant(w))).parameters().at("z");
  EXPECT_EQ(grad, w);
}

// Toy encoder -> quantizer -> decoder with every stop-gradient replaced by a
// constant frozen at the base parameters; finite differences of that
// surrogate equal the intended gradient.
struct Toy
{
  Toy()
  {
    Rng rng(10);
    p.set("enc", normal_tensor({6, 4}, rng, 0.5));
    p.set("book", normal_tensor({7, 2}, rng));
    p.set("dec", normal_tensor({4, 6}, rng, 0.5));
    x = normal_tensor({3, 6}, rng);
    y = normal_tensor({3, 6}, rng);
    Graph g;
    Binder b(g, p);
    const auto z = reshape(matmul(g.constant(x), b("enc")), {6, 2});
    const auto q = quantize(z, b("book"));
    z0 = z.value();
    zq0 = q.values.value();
    idx = q.indices;
  }

  Var exact(Graph & g, Binder & b) const
  {
    const auto z = reshape(matmul(g.constant(x), b("enc")), {6, 2});
    const auto q = quantize(z, b("book"));
    const auto yh = matmul(reshape(straight_through(z, q.values), {3, 4}), b("dec"));
    return vq_loss(g.constant(y), yh, z, q.values, 0.25, 3);
  }

  Var surrogate(Graph & g, Binder & b) const
  {
    const auto z = reshape(matmul(g.constant(x), b("enc")), {6, 2});
    const auto zq = gather_rows(b("book"), idx);
    const auto yh = matmul(reshape(z + g.constant(zq0) - g.constant(z0), {3, 4}), b("dec"));
    return joint_l2(g.constant(y), yh, 3) + sum(square(zq - g.constant(z0))) +
           0.25 * sum(square(g.constant(zq0) - z));
  }

  ParameterSet p;
  Tensor x, y, z0, zq0;
  std::vector<std::size_t> idx;
};

TEST(VqLoss, GradientMatchesStopGradientSurrogate)
{
  const Toy toy;
  Graph g;
  Binder b(g, toy.p);
  const auto analytic = g.backward(toy.exact(g, b)).parameters();
  for (const auto & [name, t] : toy.p.items()) {
    const auto fd = check::numeric_gradient(
      toy.p, name, [&](Graph & gg, Binder & bb) { return toy.surrogate(gg, bb); }, 1e-6);
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
      diff += (analytic.at(name)[i] - fd[i]) * (analytic.at(name)[i] - fd[i]);
      norm += fd[i] * fd[i];
    }
    EXPECT_LT(std::sqrt(diff / norm), 1e-6) << name;
  }
  // The reconstruction gradient reaches the encoder despite the argmin.
  double enc = 0.0;
  for (double v : analytic.at("enc").data()) enc += v * v;
  EXPECT_GT(enc, 1e-6);
}

TEST(Usage, DeadEntriesAreReseededFromRows)
{
  Rng rng(11);
  Tensor book = normal_tensor({4, 2}, rng);
  const Tensor original = book;
  CodebookUsage usage(4);
  usage.record(std::vector<std::size_t>{0, 2, 2});
  EXPECT_EQ(usage.dead(), (std::vector<std::size_t>{1, 3}));
  const auto rows = Tensor::matrix(2, 2, {10, 11, 20, 21});
  EXPECT_EQ(reseed_dead(book, usage, rows, rng), 2u);
  EXPECT_EQ(book.at(0, 0), original.at(0, 0));
  EXPECT_EQ(book.at(2, 1), original.at(2, 1));
  for (std::size_t e : {1u, 3u}) {
    EXPECT_TRUE((book.at(e, 0) == 10 && book.at(e, 1) == 11) || (book.at(e, 0) == 20 && book.at(e, 1) == 21));
  }
}

}  // namespace
}  // namespace stcn
