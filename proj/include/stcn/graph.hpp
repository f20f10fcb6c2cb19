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

#ifndef STCN__GRAPH_HPP_
#define STCN__GRAPH_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stcn/tensor.hpp"

namespace stcn
{

/**
 * @file graph.hpp
 * @brief Define-by-run expression graph with reverse-mode gradients.
 *
 * Nodes are appended in topological order. When every parent of a new node
 * already has a value, the node is evaluated immediately; otherwise it waits
 * for Graph::evaluate() with bindings for the unbound leaves. Operations that
 * make a discrete choice (nearest codeword, min reduction) record their choice
 * during the forward pass and route gradients through it.
 *
 * Broadcasting is limited to suffix broadcasting for the elementwise binary
 * ops: the smaller operand's shape must equal the trailing dimensions of the
 * larger one, which makes index arithmetic a plain modulo.
 */

enum class LeafKind { Parameter, Input, Constant };

enum class Op {
  Leaf,
  Add,
  Sub,
  Mul,
  MatMul,
  Scale,
  AddScalar,
  Tanh,
  Sigmoid,
  Exp,
  Log,
  Square,
  Softmax,
  LogSoftmax,
  SumAll,
  SumAxis,
  Reshape,
  Permute,
  Slice,
  Select,
  Concat,
  Stack,
  GatherRows,
  NearestRows,
  MinAxis,
  PairwiseSqDist,
  RowNorm,
  LinComb,
  StopGradient,
};

inline const char * op_name(Op op)
{
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::MatMul: return "matmul";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Square: return "square";
    case Op::Softmax: return "softmax";
    case Op::LogSoftmax: return "log_softmax";
    case Op::SumAll: return "sum";
    case Op::SumAxis: return "sum_axis";
    case Op::Reshape: return "reshape";
    case Op::Permute: return "permute";
    case Op::Slice: return "slice";
    case Op::Select: return "select";
    case Op::Concat: return "concat";
    case Op::Stack: return "stack";
    case Op::GatherRows: return "gather_rows";
    case Op::NearestRows: return "nearest_rows";
    case Op::MinAxis: return "min_axis";
    case Op::PairwiseSqDist: return "pairwise_sq_dist";
    case Op::RowNorm: return "row_norm";
    case Op::LinComb: return "lincomb";
    case Op::StopGradient: return "stop_gradient";
  }
  return "?";
}

using NodeId = std::size_t;

struct Node
{
  Op op = Op::Leaf;
  std::vector<NodeId> parents;
  Shape shape;

  LeafKind leaf_kind = LeafKind::Constant;
  std::string name;

  std::size_t axis = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  double scalar = 0.0;
  std::vector<double> coeffs;
  std::vector<std::size_t> indices;

  // Discrete choices made by the last forward pass (argmin routes).
  std::vector<std::size_t> routes;

  bool has_value = false;
  Tensor value;
};

class Graph;

class Var
{
public:
  Var() = default;
  Var(Graph * graph, NodeId id) : graph_(graph), id_(id) {}

  Graph * graph() const { return graph_; }
  NodeId id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  inline const Tensor & value() const;
  inline const Shape & shape() const;

private:
  Graph * graph_ = nullptr;
  NodeId id_ = 0;
};

using Bindings = std::map<std::string, Tensor>;

/// Gradients of a scalar loss with respect to every leaf reached by the loss.
class Gradients
{
public:
  Gradients() = default;
  Gradients(std::map<NodeId, Tensor> by_node, std::map<std::string, Tensor> by_name)
  : by_node_(std::move(by_node)), by_name_(std::move(by_name))
  {
  }

  const Tensor & wrt(const Var & v) const
  {
    auto it = by_node_.find(v.id());
    if (it == by_node_.end()) throw std::out_of_range("no gradient recorded for node");
    return it->second;
  }

  const std::map<std::string, Tensor> & parameters() const { return by_name_; }

private:
  std::map<NodeId, Tensor> by_node_;
  std::map<std::string, Tensor> by_name_;
};

namespace detail
{

struct Axis3
{
  std::size_t outer, len, inner;
};

inline Axis3 split_axis(const Shape & s, std::size_t axis)
{
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, s[axis], inner};
}

inline bool is_suffix(const Shape & small, const Shape & big)
{
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline Shape drop_axis(const Shape & s, std::size_t axis)
{
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out.push_back(s[i]);
  }
  return out;
}

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(
  const double * a, const double * b, double * c, std::size_t m, std::size_t k, std::size_t n)
{
  for (std::size_t i = 0; i < m; ++i) {
    double * ci = c + i * n;
    const double * ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double * bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x k] += G[m x n] * B^T where B is [k x n]
inline void gemm_nt(
  const double * g, const double * b, double * c, std::size_t m, std::size_t n, std::size_t k)
{
  for (std::size_t i = 0; i < m; ++i) {
    const double * gi = g + i * n;
    double * ci = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double * bp = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += gi[j] * bp[j];
      ci[p] += s;
    }
  }
}

// C[k x n] += A^T * G where A is [m x k], G is [m x n]
inline void gemm_tn(
  const double * a, const double * g, double * c, std::size_t m, std::size_t k, std::size_t n)
{
  for (std::size_t i = 0; i < m; ++i) {
    const double * ai = a + i * k;
    const double * gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double * cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

// Maps each output linear index of a permutation to its input offset.
inline std::vector<std::size_t> permute_map(const Shape & in, const std::vector<std::size_t> & perm)
{
  const std::size_t rank = in.size();
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) out[i] = in[perm[i]];
  const std::size_t n = shape_size(in);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t lin = 0; lin < n; ++lin) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < rank; ++i) off += idx[i] * in_stride[perm[i]];
    map[lin] = off;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < out[i]) break;
      idx[i] = 0;
    }
  }
  return map;
}

}  // namespace detail

class Graph
{
public:
  Graph() = default;
  Graph(const Graph &) = delete;
  Graph & operator=(const Graph &) = delete;

  Var parameter(std::string name, Tensor value)
  {
    return leaf(LeafKind::Parameter, std::move(name), std::move(value));
  }

  Var input(std::string name, Tensor value)
  {
    return leaf(LeafKind::Input, std::move(name), std::move(value));
  }

  /// An input leaf with a declared shape and no value; bind it in evaluate().
  Var placeholder(std::string name, Shape shape)
  {
    Node n;
    n.op = Op::Leaf;
    n.leaf_kind = LeafKind::Input;
    n.name = std::move(name);
    n.shape = std::move(shape);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  Var constant(Tensor value) { return leaf(LeafKind::Constant, "", std::move(value)); }

  Var make(Node proto)
  {
    const NodeId id = nodes_.size();
    proto.shape = infer_shape(proto, id);
    nodes_.push_back(std::move(proto));
    Node & n = nodes_.back();
    bool ready = true;
    for (auto p : n.parents) ready = ready && nodes_[p].has_value;
    if (ready) compute(n, id);
    return Var(this, id);
  }

  const Node & node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  const Tensor & value(NodeId id) const
  {
    const Node & n = nodes_.at(id);
    if (!n.has_value) {
      throw std::logic_error(
        "node " + std::to_string(id) + " (" + op_name(n.op) + ") has no value; bind its inputs");
    }
    return n.value;
  }

  /**
   * Recompute every node from the leaves. Bindings override leaf values by
   * name; placeholders must be bound.
   */
  void evaluate(const Bindings & bindings = {})
  {
    for (NodeId id = 0; id < nodes_.size(); ++id) {
      Node & n = nodes_[id];
      if (n.op == Op::Leaf) {
        auto it = n.name.empty() ? bindings.end() : bindings.find(n.name);
        if (it != bindings.end()) {
          if (it->second.shape() != n.shape) {
            throw ShapeError(
              "binding for leaf '" + n.name + "' has shape " + shape_str(it->second.shape()) +
              ", expected " + shape_str(n.shape));
          }
          n.value = it->second;
          n.has_value = true;
        } else if (!n.has_value) {
          throw std::invalid_argument("unbound leaf '" + n.name + "'");
        }
        continue;
      }
      compute(n, id);
    }
  }

  /// Reverse-mode gradients of a scalar node with respect to all leaves it reaches.
  Gradients backward(const Var & loss) const
  {
    const Node & ln = nodes_.at(loss.id());
    if (shape_size(ln.shape) != 1) {
      throw ShapeError("gradient requires a scalar loss, got shape " + shape_str(ln.shape));
    }
    if (!ln.has_value) throw std::logic_error("loss node has not been evaluated");

    std::vector<std::vector<double>> grads(loss.id() + 1);
    grads[loss.id()].assign(1, 1.0);
    for (NodeId id = loss.id() + 1; id-- > 0;) {
      if (grads[id].empty()) continue;
      const Node & n = nodes_[id];
      if (n.op == Op::Leaf || n.op == Op::StopGradient) continue;
      propagate(n, grads[id], grads);
    }

    std::map<NodeId, Tensor> by_node;
    std::map<std::string, Tensor> by_name;
    for (NodeId id = 0; id <= loss.id(); ++id) {
      const Node & n = nodes_[id];
      if (n.op != Op::Leaf) continue;
      Tensor g = grads[id].empty() ? Tensor(n.shape) : Tensor(n.shape, std::move(grads[id]));
      if (n.leaf_kind == LeafKind::Parameter) by_name[n.name] = g;
      by_node.emplace(id, std::move(g));
    }
    for (NodeId id = loss.id() + 1; id < nodes_.size(); ++id) {
      const Node & n = nodes_[id];
      if (n.op == Op::Leaf) {
        by_node.emplace(id, Tensor(n.shape));
        if (n.leaf_kind == LeafKind::Parameter) by_name[n.name] = Tensor(n.shape);
      }
    }
    return Gradients(std::move(by_node), std::move(by_name));
  }

private:
  Var leaf(LeafKind kind, std::string name, Tensor value)
  {
    Node n;
    n.op = Op::Leaf;
    n.leaf_kind = kind;
    n.name = std::move(name);
    n.shape = value.shape();
    n.value = std::move(value);
    n.has_value = true;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  [[noreturn]] void fail(const Node & n, NodeId id, const std::string & what) const
  {
    std::string parents;
    for (auto p : n.parents) {
      if (!parents.empty()) parents += ", ";
      parents += shape_str(nodes_[p].shape);
    }
    throw ShapeError(
      std::string("node ") + std::to_string(id) + " (" + op_name(n.op) + "): " + what +
      " [parent shapes: " + parents + "]");
  }

  Shape infer_shape(const Node & n, NodeId id) const
  {
    auto ps = [&](std::size_t i) -> const Shape & { return nodes_.at(n.parents.at(i)).shape; };
    auto need = [&](std::size_t count) {
      if (n.parents.size() != count) fail(n, id, "wrong number of operands");
    };
    switch (n.op) {
      case Op::Leaf: return n.shape;
      case Op::Add:
      case Op::Sub:
      case Op::Mul: {
        need(2);
        const Shape & a = ps(0);
        const Shape & b = ps(1);
        if (a == b) return a;
        if (detail::is_suffix(b, a)) return a;
        if (detail::is_suffix(a, b)) return b;
        fail(n, id, "operands are not suffix-broadcastable");
      }
      case Op::MatMul: {
        need(2);
        const Shape & a = ps(0);
        const Shape & b = ps(1);
        if (a.size() < 2 || b.size() < 2) fail(n, id, "matmul needs rank >= 2 operands");
        const std::size_t m = a[a.size() - 2], k = a.back();
        if (b[b.size() - 2] != k) fail(n, id, "inner dimensions differ");
        if (b.size() != 2) {
          if (b.size() != a.size() || !std::equal(a.begin(), a.end() - 2, b.begin())) {
            fail(n, id, "batched matmul needs identical leading dimensions");
          }
        }
        Shape out(a.begin(), a.end() - 2);
        out.push_back(m);
        out.push_back(b.back());
        return out;
      }
      case Op::Scale:
      case Op::AddScalar:
      case Op::Tanh:
      case Op::Sigmoid:
      case Op::Exp:
      case Op::Log:
      case Op::Square:
      case Op::StopGradient:
        need(1);
        return ps(0);
      case Op::Softmax:
      case Op::LogSoftmax:
        need(1);
        if (ps(0).empty()) fail(n, id, "softmax needs rank >= 1");
        return ps(0);
      case Op::SumAll: need(1); return Shape{};
      case Op::SumAxis:
      case Op::MinAxis:
        need(1);
        if (n.axis >= ps(0).size()) fail(n, id, "axis out of range");
        return detail::drop_axis(ps(0), n.axis);
      case Op::Reshape:
        need(1);
        if (shape_size(n.shape) != shape_size(ps(0))) {
          fail(n, id, "reshape to " + shape_str(n.shape) + " changes element count");
        }
        return n.shape;
      case Op::Permute: {
        need(1);
        const Shape & a = ps(0);
        if (n.indices.size() != a.size()) fail(n, id, "permutation rank mismatch");
        std::vector<bool> seen(a.size(), false);
        Shape out(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
          const std::size_t p = n.indices[i];
          if (p >= a.size() || seen[p]) fail(n, id, "invalid permutation");
          seen[p] = true;
          out[i] = a[p];
        }
        return out;
      }
      case Op::Slice: {
        need(1);
        const Shape & a = ps(0);
        if (n.axis >= a.size() || n.begin >= n.end || n.end > a[n.axis]) {
          fail(n, id, "slice bounds out of range");
        }
        Shape out = a;
        out[n.axis] = n.end - n.begin;
        return out;
      }
      case Op::Select: {
        need(1);
        const Shape & a = ps(0);
        if (n.axis >= a.size() || n.begin >= a[n.axis]) fail(n, id, "select index out of range");
        return detail::drop_axis(a, n.axis);
      }
      case Op::Concat: {
        if (n.parents.empty()) fail(n, id, "concat of nothing");
        Shape out = ps(0);
        if (n.axis >= out.size()) fail(n, id, "axis out of range");
        for (std::size_t i = 1; i < n.parents.size(); ++i) {
          const Shape & s = ps(i);
          if (s.size() != out.size()) fail(n, id, "concat rank mismatch");
          for (std::size_t d = 0; d < s.size(); ++d) {
            if (d != n.axis && s[d] != out[d]) fail(n, id, "concat dimension mismatch");
          }
          out[n.axis] += s[n.axis];
        }
        return out;
      }
      case Op::Stack: {
        if (n.parents.empty()) fail(n, id, "stack of nothing");
        for (std::size_t i = 1; i < n.parents.size(); ++i) {
          if (ps(i) != ps(0)) fail(n, id, "stack operands differ in shape");
        }
        Shape out{n.parents.size()};
        out.insert(out.end(), ps(0).begin(), ps(0).end());
        return out;
      }
      case Op::GatherRows: {
        need(1);
        const Shape & a = ps(0);
        if (a.empty()) fail(n, id, "gather needs rank >= 1");
        if (n.indices.empty()) fail(n, id, "gather with no indices");
        for (auto i : n.indices) {
          if (i >= a[0]) fail(n, id, "gather index " + std::to_string(i) + " out of range");
        }
        Shape out = a;
        out[0] = n.indices.size();
        return out;
      }
      case Op::NearestRows: {
        need(2);
        const Shape & z = ps(0);
        const Shape & k = ps(1);
        if (z.empty() || k.size() != 2 || k[1] != z.back()) {
          fail(n, id, "codebook must be [K x d] matching the query row width");
        }
        return z;
      }
      case Op::PairwiseSqDist: {
        need(2);
        const Shape & a = ps(0);
        const Shape & b = ps(1);
        if (a.size() != 2 || b.size() != 2 || a[1] != b[1]) fail(n, id, "expects [S x F], [P x F]");
        return Shape{a[0], b[0]};
      }
      case Op::RowNorm:
        need(1);
        if (ps(0).empty()) fail(n, id, "row_norm needs rank >= 1");
        return Shape(ps(0).begin(), ps(0).end() - 1);
      case Op::LinComb: {
        if (n.parents.empty() || n.coeffs.size() != n.parents.size()) {
          fail(n, id, "coefficient count must equal operand count");
        }
        for (std::size_t i = 1; i < n.parents.size(); ++i) {
          if (ps(i) != ps(0)) fail(n, id, "lincomb operands differ in shape");
        }
        return ps(0);
      }
    }
    fail(n, id, "unknown op");
  }

  void compute(Node & n, NodeId id)
  {
    for (auto p : n.parents) {
      if (!nodes_[p].has_value) fail(n, id, "parent has no value");
    }
    auto pv = [&](std::size_t i) -> const Tensor & { return nodes_[n.parents[i]].value; };
    Tensor out(n.shape);
    auto o = out.mutable_data();

    switch (n.op) {
      case Op::Leaf: return;
      case Op::Add:
      case Op::Sub:
      case Op::Mul: {
        const auto a = pv(0).data();
        const auto b = pv(1).data();
        const std::size_t na = a.size(), nb = b.size();
        for (std::size_t i = 0; i < o.size(); ++i) {
          const double x = a[i % na], y = b[i % nb];
          o[i] = n.op == Op::Add ? x + y : n.op == Op::Sub ? x - y : x * y;
        }
        break;
      }
      case Op::MatMul: {
        const Tensor & a = pv(0);
        const Tensor & b = pv(1);
        const std::size_t m = a.shape()[a.rank() - 2], k = a.shape().back(), nn = b.shape().back();
        const std::size_t batch = a.size() / (m * k);
        const bool shared = b.rank() == 2;
        for (std::size_t bi = 0; bi < batch; ++bi) {
          detail::gemm_nn(
            a.data().data() + bi * m * k, b.data().data() + (shared ? 0 : bi * k * nn),
            o.data() + bi * m * nn, m, k, nn);
        }
        break;
      }
      case Op::Scale: {
        const auto a = pv(0).data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = n.scalar * a[i];
        break;
      }
      case Op::AddScalar: {
        const auto a = pv(0).data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + n.scalar;
        break;
      }
      case Op::Tanh: {
        const auto a = pv(0).data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(a[i]);
        break;
      }
      case Op::Sigmoid: {
        const auto a = pv(0).data();
        for (std::size_t i = 0; i < o.size(); ++i) {
          o[i] = a[i] >= 0 ? 1.0 / (1.0 + std::exp(-a[i])) : std::exp(a[i]) / (1.0 + std::exp(a[i]));
        }
        break;
      }
      case Op::Exp: {
        const auto a = pv(0).data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::exp(a[i]);
        break;
      }
      case Op::Log: {
        const auto a = pv(0).data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::log(a[i]);
        break;
      }
      case Op::Square: {
        const auto a = pv(0).data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * a[i];
        break;
      }
      case Op::Softmax:
      case Op::LogSoftmax: {
        const auto a = pv(0).data();
        const std::size_t w = n.shape.back();
        for (std::size_t r = 0; r < o.size() / w; ++r) {
          const double * x = a.data() + r * w;
          double * y = o.data() + r * w;
          const double mx = *std::max_element(x, x + w);
          double s = 0.0;
          for (std::size_t j = 0; j < w; ++j) s += std::exp(x[j] - mx);
          if (n.op == Op::Softmax) {
            for (std::size_t j = 0; j < w; ++j) y[j] = std::exp(x[j] - mx) / s;
          } else {
            const double lse = mx + std::log(s);
            for (std::size_t j = 0; j < w; ++j) y[j] = x[j] - lse;
          }
        }
        break;
      }
      case Op::SumAll: {
        double s = 0.0;
        for (double v : pv(0).data()) s += v;
        o[0] = s;
        break;
      }
      case Op::SumAxis: {
        const auto a = pv(0).data();
        const auto ax = detail::split_axis(pv(0).shape(), n.axis);
        for (std::size_t i = 0; i < ax.outer; ++i) {
          for (std::size_t l = 0; l < ax.len; ++l) {
            const double * src = a.data() + (i * ax.len + l) * ax.inner;
            double * dst = o.data() + i * ax.inner;
            for (std::size_t j = 0; j < ax.inner; ++j) dst[j] += src[j];
          }
        }
        break;
      }
      case Op::MinAxis: {
        const auto a = pv(0).data();
        const auto ax = detail::split_axis(pv(0).shape(), n.axis);
        n.routes.assign(ax.outer * ax.inner, 0);
        for (std::size_t i = 0; i < ax.outer; ++i) {
          for (std::size_t j = 0; j < ax.inner; ++j) {
            std::size_t best = 0;
            double bv = a[i * ax.len * ax.inner + j];
            for (std::size_t l = 1; l < ax.len; ++l) {
              const double v = a[(i * ax.len + l) * ax.inner + j];
              if (v < bv) {
                bv = v;
                best = l;
              }
            }
            o[i * ax.inner + j] = bv;
            n.routes[i * ax.inner + j] = best;
          }
        }
        break;
      }
      case Op::Reshape:
      case Op::StopGradient: {
        const auto a = pv(0).data();
        std::copy(a.begin(), a.end(), o.begin());
        break;
      }
      case Op::Permute: {
        const auto a = pv(0).data();
        const auto map = detail::permute_map(pv(0).shape(), n.indices);
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[map[i]];
        break;
      }
      case Op::Slice:
      case Op::Select: {
        const auto a = pv(0).data();
        const auto ax = detail::split_axis(pv(0).shape(), n.axis);
        const std::size_t b = n.begin, len = n.op == Op::Slice ? n.end - n.begin : 1;
        for (std::size_t i = 0; i < ax.outer; ++i) {
          const double * src = a.data() + (i * ax.len + b) * ax.inner;
          std::copy(src, src + len * ax.inner, o.data() + i * len * ax.inner);
        }
        break;
      }
      case Op::Concat: {
        const auto ax = detail::split_axis(n.shape, n.axis);
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < n.parents.size(); ++pi) {
          const Tensor & p = pv(pi);
          const std::size_t len = p.shape()[n.axis];
          for (std::size_t i = 0; i < ax.outer; ++i) {
            const double * src = p.data().data() + i * len * ax.inner;
            std::copy(src, src + len * ax.inner, o.data() + (i * ax.len + offset) * ax.inner);
          }
          offset += len;
        }
        break;
      }
      case Op::Stack: {
        const std::size_t w = pv(0).size();
        for (std::size_t pi = 0; pi < n.parents.size(); ++pi) {
          const auto src = pv(pi).data();
          std::copy(src.begin(), src.end(), o.begin() + pi * w);
        }
        break;
      }
      case Op::GatherRows: {
        const auto a = pv(0).data();
        const std::size_t w = pv(0).size() / pv(0).shape()[0];
        for (std::size_t r = 0; r < n.indices.size(); ++r) {
          std::copy_n(a.data() + n.indices[r] * w, w, o.data() + r * w);
        }
        break;
      }
      case Op::NearestRows: {
        const auto z = pv(0).data();
        const auto book = pv(1).data();
        const std::size_t d = pv(1).shape()[1], entries = pv(1).shape()[0];
        const std::size_t rows = z.size() / d;
        n.routes.assign(rows, 0);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::span<const double> zr(z.data() + r * d, d);
          std::size_t best = 0;
          double bd = std::numeric_limits<double>::infinity();
          for (std::size_t e = 0; e < entries; ++e) {
            const double dist = squared_distance(zr, std::span<const double>(book.data() + e * d, d));
            if (dist < bd) {
              bd = dist;
              best = e;
            }
          }
          n.routes[r] = best;
          std::copy_n(book.data() + best * d, d, o.data() + r * d);
        }
        break;
      }
      case Op::PairwiseSqDist: {
        const Tensor & a = pv(0);
        const Tensor & b = pv(1);
        const std::size_t s = a.shape()[0], p = b.shape()[0], f = a.shape()[1];
        for (std::size_t i = 0; i < s; ++i) {
          for (std::size_t j = 0; j < p; ++j) {
            o[i * p + j] = squared_distance(
              std::span<const double>(a.data().data() + i * f, f),
              std::span<const double>(b.data().data() + j * f, f));
          }
        }
        break;
      }
      case Op::RowNorm: {
        const auto a = pv(0).data();
        const std::size_t w = nodes_[n.parents[0]].shape.back();
        for (std::size_t r = 0; r < o.size(); ++r) {
          o[r] = std::sqrt(squared_norm(std::span<const double>(a.data() + r * w, w)));
        }
        break;
      }
      case Op::LinComb: {
        for (std::size_t pi = 0; pi < n.parents.size(); ++pi) {
          const double c = n.coeffs[pi];
          if (c == 0.0) continue;
          const auto a = pv(pi).data();
          for (std::size_t i = 0; i < o.size(); ++i) o[i] += c * a[i];
        }
        break;
      }
    }
    n.value = std::move(out);
    n.has_value = true;
  }

  void propagate(
    const Node & n, const std::vector<double> & g, std::vector<std::vector<double>> & grads) const
  {
    auto acc = [&](std::size_t parent_index) -> std::vector<double> & {
      const NodeId p = n.parents[parent_index];
      auto & buf = grads[p];
      if (buf.empty()) buf.assign(shape_size(nodes_[p].shape), 0.0);
      return buf;
    };
    auto pv = [&](std::size_t i) -> const Tensor & { return nodes_[n.parents[i]].value; };
    const auto & y = n.value.values();

    switch (n.op) {
      case Op::Leaf:
      case Op::StopGradient: return;
      case Op::Add:
      case Op::Sub:
      case Op::Mul: {
        const auto a = pv(0).data();
        const auto b = pv(1).data();
        const std::size_t na = a.size(), nb = b.size();
        auto & ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i % na] += n.op == Op::Mul ? g[i] * b[i % nb] : g[i];
        }
        auto & gb = acc(1);
        for (std::size_t i = 0; i < g.size(); ++i) {
          gb[i % nb] += n.op == Op::Mul ? g[i] * a[i % na] : n.op == Op::Sub ? -g[i] : g[i];
        }
        return;
      }
      case Op::MatMul: {
        const Tensor & a = pv(0);
        const Tensor & b = pv(1);
        const std::size_t m = a.shape()[a.rank() - 2], k = a.shape().back(), nn = b.shape().back();
        const std::size_t batch = a.size() / (m * k);
        const bool shared = b.rank() == 2;
        auto & ga = acc(0);
        auto & gb = acc(1);
        for (std::size_t bi = 0; bi < batch; ++bi) {
          const double * gi = g.data() + bi * m * nn;
          const double * bptr = b.data().data() + (shared ? 0 : bi * k * nn);
          detail::gemm_nt(gi, bptr, ga.data() + bi * m * k, m, nn, k);
          detail::gemm_tn(
            a.data().data() + bi * m * k, gi, gb.data() + (shared ? 0 : bi * k * nn), m, k, nn);
        }
        return;
      }
      case Op::Scale: {
        auto & ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.scalar * g[i];
        return;
      }
      case Op::AddScalar:
      case Op::Reshape: {
        auto & ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        return;
      }
      case Op::Tanh: {
        auto & ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
        return;
      }
      case Op::Sigmoid: {
        auto & ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
        return;
      }
      case Op::Exp: {
        auto & ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
        return;
      }
      case Op::Log: {
        const auto a = pv(0).data();
        auto & ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a[i];
        return;
      }
      case Op::Square: {
        const auto a = pv(0).data();
        auto & ga = acc(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * a[i] * g[i];
        return;
      }
      case Op::Softmax: {
        auto & ga = acc(0);
        const std::size_t w = n.shape.back();
        for (std::size_t r = 0; r < g.size() / w; ++r) {
          double dot = 0.0;
          for (std::size_t j = 0; j < w; ++j) dot += g[r * w + j] * y[r * w + j];
          for (std::size_t j = 0; j < w; ++j) ga[r * w + j] += y[r * w + j] * (g[r * w + j] - dot);
        }
        return;
      }
      case Op::LogSoftmax: {
        auto & ga = acc(0);
        const std::size_t w = n.shape.back();
        for (std::size_t r = 0; r < g.size() / w; ++r) {
          double s = 0.0;
          for (std::size_t j = 0; j < w; ++j) s += g[r * w + j];
          for (std::size_t j = 0; j < w; ++j) {
            ga[r * w + j] += g[r * w + j] - std::exp(y[r * w + j]) * s;
          }
        }
        return;
      }
      case Op::SumAll: {
        auto & ga = acc(0);
        for (auto & v : ga) v += g[0];
        return;
      }
      case Op::SumAxis: {
        auto & ga = acc(0);
        const auto ax = detail::split_axis(pv(0).shape(), n.axis);
        for (std::size_t i = 0; i < ax.outer; ++i) {
          for (std::size_t l = 0; l < ax.len; ++l) {
            double * dst = ga.data() + (i * ax.len + l) * ax.inner;
            const double * src = g.data() + i * ax.inner;
            for (std::size_t j = 0; j < ax.inner; ++j) dst[j] += src[j];
          }
        }
        return;
      }
      case Op::MinAxis: {
        auto & ga = acc(0);
        const auto ax = detail::split_axis(pv(0).shape(), n.axis);
        for (std::size_t i = 0; i < ax.outer; ++i) {
          for (std::size_t j = 0; j < ax.inner; ++j) {
            const std::size_t l = n.routes[i * ax.inner + j];
            ga[(i * ax.len + l) * ax.inner + j] += g[i * ax.inner + j];
          }
        }
        return;
      }
      case Op::Permute: {
        auto & ga = acc(0);
        const auto map = detail::permute_map(pv(0).shape(), n.indices);
        for (std::size_t i = 0; i < g.size(); ++i) ga[map[i]] += g[i];
        return;
      }
      case Op::Slice:
      case Op::Select: {
        auto & ga = acc(0);
        const auto ax = detail::split_axis(pv(0).shape(), n.axis);
        const std::size_t b = n.begin, len = n.op == Op::Slice ? n.end - n.begin : 1;
        for (std::size_t i = 0; i < ax.outer; ++i) {
          double * dst = ga.data() + (i * ax.len + b) * ax.inner;
          const double * src = g.data() + i * len * ax.inner;
          for (std::size_t j = 0; j < len * ax.inner; ++j) dst[j] += src[j];
        }
        return;
      }
      case Op::Concat: {
        const auto ax = detail::split_axis(n.shape, n.axis);
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < n.parents.size(); ++pi) {
          const std::size_t len = nodes_[n.parents[pi]].shape[n.axis];
          auto & gp = acc(pi);
          for (std::size_t i = 0; i < ax.outer; ++i) {
            const double * src = g.data() + (i * ax.len + offset) * ax.inner;
            double * dst = gp.data() + i * len * ax.inner;
            for (std::size_t j = 0; j < len * ax.inner; ++j) dst[j] += src[j];
          }
          offset += len;
        }
        return;
      }
      case Op::Stack: {
        const std::size_t w = shape_size(nodes_[n.parents[0]].shape);
        for (std::size_t pi = 0; pi < n.parents.size(); ++pi) {
          auto & gp = acc(pi);
          for (std::size_t j = 0; j < w; ++j) gp[j] += g[pi * w + j];
        }
        return;
      }
      case Op::GatherRows: {
        auto & ga = acc(0);
        const std::size_t w = ga.size() / nodes_[n.parents[0]].shape[0];
        for (std::size_t r = 0; r < n.indices.size(); ++r) {
          for (std::size_t j = 0; j < w; ++j) ga[n.indices[r] * w + j] += g[r * w + j];
        }
        return;
      }
      case Op::NearestRows: {
        // The selection is piecewise constant in the query: only the codebook
        // receives gradient.
        auto & gk = acc(1);
        const std::size_t d = nodes_[n.parents[1]].shape[1];
        for (std::size_t r = 0; r < n.routes.size(); ++r) {
          for (std::size_t j = 0; j < d; ++j) gk[n.routes[r] * d + j] += g[r * d + j];
        }
        return;
      }
      case Op::PairwiseSqDist: {
        const Tensor & a = pv(0);
        const Tensor & b = pv(1);
        const std::size_t s = a.shape()[0], p = b.shape()[0], f = a.shape()[1];
        auto & ga = acc(0);
        auto & gb = acc(1);
        for (std::size_t i = 0; i < s; ++i) {
          for (std::size_t j = 0; j < p; ++j) {
            const double gij = 2.0 * g[i * p + j];
            if (gij == 0.0) continue;
            for (std::size_t c = 0; c < f; ++c) {
              const double diff = a[i * f + c] - b[j * f + c];
              ga[i * f + c] += gij * diff;
              gb[j * f + c] -= gij * diff;
            }
          }
        }
        return;
      }
      case Op::RowNorm: {
        const auto a = pv(0).data();
        auto & ga = acc(0);
        const std::size_t w = nodes_[n.parents[0]].shape.back();
        for (std::size_t r = 0; r < g.size(); ++r) {
          if (y[r] == 0.0) continue;  // subgradient 0 at the origin
          const double s = g[r] / y[r];
          for (std::size_t j = 0; j < w; ++j) ga[r * w + j] += s * a[r * w + j];
        }
        return;
      }
      case Op::LinComb: {
        for (std::size_t pi = 0; pi < n.parents.size(); ++pi) {
          const double c = n.coeffs[pi];
          if (c == 0.0) continue;
          auto & gp = acc(pi);
          for (std::size_t i = 0; i < g.size(); ++i) gp[i] += c * g[i];
        }
        return;
      }
    }
  }

  std::vector<Node> nodes_;
};

inline const Tensor & Var::value() const { return graph_->value(id_); }
inline const Shape & Var::shape() const { return graph_->node(id_).shape; }

// ---------------------------------------------------------------------------
// Op builders. All operands must belong to the same graph.

namespace detail
{

inline Graph & same_graph(const Var & a, const Var & b)
{
  if (a.graph() != b.graph()) throw std::invalid_argument("operands belong to different graphs");
  return *a.graph();
}

inline Var unary(Op op, const Var & a)
{
  Node n;
  n.op = op;
  n.parents = {a.id()};
  return a.graph()->make(std::move(n));
}

inline Var binary(Op op, const Var & a, const Var & b)
{
  Node n;
  n.op = op;
  n.parents = {a.id(), b.id()};
  return same_graph(a, b).make(std::move(n));
}

}  // namespace detail

inline Var operator+(const Var & a, const Var & b) { return detail::binary(Op::Add, a, b); }
inline Var operator-(const Var & a, const Var & b) { return detail::binary(Op::Sub, a, b); }
inline Var operator*(const Var & a, const Var & b) { return detail::binary(Op::Mul, a, b); }
inline Var matmul(const Var & a, const Var & b) { return detail::binary(Op::MatMul, a, b); }

inline Var scale(const Var & a, double c)
{
  Node n;
  n.op = Op::Scale;
  n.parents = {a.id()};
  n.scalar = c;
  return a.graph()->make(std::move(n));
}

inline Var operator*(const Var & a, double c) { return scale(a, c); }
inline Var operator*(double c, const Var & a) { return scale(a, c); }
inline Var operator-(const Var & a) { return scale(a, -1.0); }

inline Var add_scalar(const Var & a, double c)
{
  Node n;
  n.op = Op::AddScalar;
  n.parents = {a.id()};
  n.scalar = c;
  return a.graph()->make(std::move(n));
}

inline Var tanh(const Var & a) { return detail::unary(Op::Tanh, a); }
inline Var sigmoid(const Var & a) { return detail::unary(Op::Sigmoid, a); }
inline Var exp(const Var & a) { return detail::unary(Op::Exp, a); }
inline Var log(const Var & a) { return detail::unary(Op::Log, a); }
inline Var square(const Var & a) { return detail::unary(Op::Square, a); }
inline Var softmax(const Var & a) { return detail::unary(Op::Softmax, a); }
inline Var log_softmax(const Var & a) { return detail::unary(Op::LogSoftmax, a); }
inline Var sum(const Var & a) { return detail::unary(Op::SumAll, a); }
inline Var row_norm(const Var & a) { return detail::unary(Op::RowNorm, a); }

/// Forwards its operand unchanged; blocks every upstream gradient.
inline Var stop_gradient(const Var & a) { return detail::unary(Op::StopGradient, a); }

inline Var mean(const Var & a) { return scale(sum(a), 1.0 / static_cast<double>(shape_size(a.shape()))); }

inline Var sum_axis(const Var & a, std::size_t axis)
{
  Node n;
  n.op = Op::SumAxis;
  n.parents = {a.id()};
  n.axis = axis;
  return a.graph()->make(std::move(n));
}

inline Var mean_axis(const Var & a, std::size_t axis)
{
  const double len = static_cast<double>(a.shape().at(axis));
  return scale(sum_axis(a, axis), 1.0 / len);
}

/// Minimum along an axis; gradient goes to the first minimizing entry.
inline Var min_axis(const Var & a, std::size_t axis)
{
  Node n;
  n.op = Op::MinAxis;
  n.parents = {a.id()};
  n.axis = axis;
  return a.graph()->make(std::move(n));
}

inline Var reshape(const Var & a, Shape shape)
{
  Node n;
  n.op = Op::Reshape;
  n.parents = {a.id()};
  n.shape = std::move(shape);
  return a.graph()->make(std::move(n));
}

inline Var permute(const Var & a, std::vector<std::size_t> perm)
{
  Node n;
  n.op = Op::Permute;
  n.parents = {a.id()};
  n.indices = std::move(perm);
  return a.graph()->make(std::move(n));
}

inline Var transpose(const Var & a)
{
  std::vector<std::size_t> perm(a.shape().size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  if (perm.size() < 2) throw ShapeError("transpose needs rank >= 2");
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(a, std::move(perm));
}

inline Var slice(const Var & a, std::size_t axis, std::size_t begin, std::size_t end)
{
  Node n;
  n.op = Op::Slice;
  n.parents = {a.id()};
  n.axis = axis;
  n.begin = begin;
  n.end = end;
  return a.graph()->make(std::move(n));
}

inline Var select(const Var & a, std::size_t axis, std::size_t index)
{
  Node n;
  n.op = Op::Select;
  n.parents = {a.id()};
  n.axis = axis;
  n.begin = index;
  return a.graph()->make(std::move(n));
}

inline Var concat(const std::vector<Var> & parts, std::size_t axis)
{
  if (parts.empty()) throw ShapeError("concat of nothing");
  Node n;
  n.op = Op::Concat;
  n.axis = axis;
  for (const auto & p : parts) {
    detail::same_graph(parts.front(), p);
    n.parents.push_back(p.id());
  }
  return parts.front().graph()->make(std::move(n));
}

/// Stacks equally shaped operands along a new leading axis.
inline Var stack(const std::vector<Var> & parts)
{
  if (parts.empty()) throw ShapeError("stack of nothing");
  Node n;
  n.op = Op::Stack;
  for (const auto & p : parts) {
    detail::same_graph(parts.front(), p);
    n.parents.push_back(p.id());
  }
  return parts.front().graph()->make(std::move(n));
}

inline Var gather_rows(const Var & a, std::vector<std::size_t> indices)
{
  Node n;
  n.op = Op::GatherRows;
  n.parents = {a.id()};
  n.indices = std::move(indices);
  return a.graph()->make(std::move(n));
}

/**
 * Replace each row of `queries` by its nearest codebook row (squared
 * Euclidean distance, ties to the lowest index). Gradient reaches the
 * codebook only.
 */
inline Var nearest_rows(const Var & queries, const Var & codebook)
{
  return detail::binary(Op::NearestRows, queries, codebook);
}

inline Var pairwise_sq_dist(const Var & a, const Var & b)
{
  return detail::binary(Op::PairwiseSqDist, a, b);
}

/// c[0]*parts[0] + c[1]*parts[1] + ... in a single node.
inline Var lincomb(const std::vector<Var> & parts, std::vector<double> coeffs)
{
  if (parts.empty()) throw ShapeError("lincomb of nothing");
  Node n;
  n.op = Op::LinComb;
  n.coeffs = std::move(coeffs);
  for (const auto & p : parts) {
    detail::same_graph(parts.front(), p);
    n.parents.push_back(p.id());
  }
  return parts.front().graph()->make(std::move(n));
}

// ---------------------------------------------------------------------------
// Free-function front end.

/// Forward values of `requested` after rebinding leaves.
inline std::vector<Tensor> evaluate(
  Graph & graph, const Bindings & bindings, const std::vector<Var> & requested)
{
  graph.evaluate(bindings);
  std::vector<Tensor> out;
  out.reserve(requested.size());
  for (const auto & v : requested) out.push_back(v.value());
  return out;
}

/// Parameter gradients of `loss`. Rebinds and re-evaluates when bindings are given.
inline std::map<std::string, Tensor> gradient(
  Graph & graph, const Var & loss, const Bindings & bindings = {})
{
  if (!bindings.empty()) graph.evaluate(bindings);
  return graph.backward(loss).parameters();
}

}  // namespace stcn

#endif  // STCN__GRAPH_HPP_
