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

#ifndef STCN__VQ_HPP_
#define STCN__VQ_HPP_

#include <limits>
#include <span>
#include <vector>

#include "stcn/graph.hpp"
#include "stcn/random.hpp"

namespace stcn
{

struct Quantized
{
  Tensor values;                     // selected codewords, shaped like the query
  std::vector<std::size_t> indices;  // one per query row
};

inline void check_codebook(const Tensor & book)
{
  if (book.rank() != 2) throw ShapeError("codebook must be [K x l], got " + shape_str(book.shape()));
  if (!book.all_finite()) throw NumericalError("codebook has non-finite entries");
}

/// Nearest codeword per row of `z` (last axis = l); ties resolve to the lowest index.
inline Quantized quantize(const Tensor & z, const Tensor & book)
{
  check_codebook(book);
  const std::size_t entries = book.dim(0), d = book.dim(1);
  if (entries == 0) throw std::invalid_argument("empty codebook");
  if (z.rank() == 0 || z.shape().back() != d) {
    throw ShapeError("query rows " + shape_str(z.shape()) + " do not match codebook width " + std::to_string(d));
  }
  Quantized q{Tensor(z.shape()), std::vector<std::size_t>(z.size() / d)};
  const auto zd = z.data(), bd = book.data();
  auto out = q.values.mutable_data();
  for (std::size_t r = 0; r < q.indices.size(); ++r) {
    const std::span<const double> row = zd.subspan(r * d, d);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < entries; ++e) {
      const double dist = squared_distance(row, bd.subspan(e * d, d));
      if (dist < best) {
        best = dist;
        q.indices[r] = e;
      }
    }
    std::copy_n(bd.begin() + static_cast<std::ptrdiff_t>(q.indices[r] * d), d, out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return q;
}

struct QuantizedVar
{
  Var values;
  std::vector<std::size_t> indices;
};

/// Graph form; the codebook receives gradient, the query does not.
inline QuantizedVar quantize(const Var & z, const Var & book)
{
  const Var zq = nearest_rows(z, book);
  return {zq, zq.graph()->node(zq.id()).routes};
}

/// Forward value zq, identity gradient to z.
inline Var straight_through(const Var & z, const Var & zq) { return z + stop_gradient(zq - z); }

/// Sum over frames and joints of the per-joint Euclidean error; last axis holds joints * coords.
inline Var joint_l2(const Var & y, const Var & y_hat, std::size_t joints)
{
  Shape s = y.shape();
  if (s.empty() || joints == 0 || s.back() % joints != 0) {
    throw ShapeError("last axis " + shape_str(s) + " is not a multiple of " + std::to_string(joints) + " joints");
  }
  const std::size_t c = s.back() / joints;
  s.back() = joints;
  s.push_back(c);
  return sum(row_norm(reshape(y - y_hat, s)));
}

/**
 * Reconstruction + codebook + commitment terms:
 *   joint_l2(Y, Y_hat) + ||Zq - sg(Z)||^2 + beta ||sg(Zq) - Z||^2
 * The squared norms sum the per-row squared distances.
 */
inline Var vq_loss(
  const Var & y, const Var & y_hat, const Var & z, const Var & zq, double beta, std::size_t joints)
{
  if (beta < 0.0) throw std::invalid_argument("commitment weight beta must be >= 0");
  if (z.shape() != zq.shape()) throw ShapeError("Z and Zq shapes differ");
  const Var codebook_term = sum(square(zq - stop_gradient(z)));
  const Var commit_term = sum(square(stop_gradient(zq) - z));
  return joint_l2(y, y_hat, joints) + codebook_term + beta * commit_term;
}

inline Tensor init_codebook(std::size_t entries, std::size_t dim, Rng & rng, double scale = 1.0)
{
  if (entries == 0 || dim == 0) throw std::invalid_argument("codebook needs K, l >= 1");
  return uniform_tensor({entries, dim}, rng, -scale, scale);
}

/// Per-entry usage counts over one epoch.
struct CodebookUsage
{
  std::vector<std::size_t> counts;

  explicit CodebookUsage(std::size_t entries = 0) : counts(entries, 0) {}

  void record(std::span<const std::size_t> indices)
  {
    for (auto i : indices) ++counts.at(i);
  }

  std::vector<std::size_t> dead() const
  {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] == 0) out.push_back(i);
    }
    return out;
  }
};

/**
 * Replace every entry unused during the epoch by a randomly drawn encoder
 * output row from `rows` ([n x l]). Returns the number of re-seeded entries.
 */
inline std::size_t reseed_dead(Tensor & book, const CodebookUsage & usage, const Tensor & rows, Rng & rng)
{
  const auto dead = usage.dead();
  if (dead.empty() || rows.size() == 0) return 0;
  const std::size_t d = book.dim(1);
  if (rows.shape().back() != d) throw ShapeError("re-seed rows do not match codebook width");
  const std::size_t n = rows.size() / d;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  auto bd = book.mutable_data();
  const auto rd = rows.data();
  for (auto e : dead) {
    const std::size_t r = pick(rng);
    std::copy_n(rd.begin() + static_cast<std::ptrdiff_t>(r * d), d, bd.begin() + static_cast<std::ptrdiff_t>(e * d));
  }
  return dead.size();
}

}  // namespace stcn

#endif  // STCN__VQ_HPP_
