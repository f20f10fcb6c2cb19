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

#ifndef STCN__NETWORKS_HPP_
#define STCN__NETWORKS_HPP_

#include <cmath>
#include <span>
#include <string>

#include "stcn/graph.hpp"
#include "stcn/ode.hpp"
#include "stcn/parameters.hpp"
#include "stcn/random.hpp"

namespace stcn
{

struct ModelConfig
{
  std::size_t joints = 16;
  std::size_t coords = 3;
  std::size_t d_model = 64;
  std::size_t l_dim = 32;
  std::size_t latent_rows = 8;     // V'
  std::size_t ode_hidden = 64;
  std::size_t cond_dim = 32;
  std::size_t readout_hidden = 64;
  std::size_t refine_hidden = 64;
  std::size_t codebook_size = 64;
  std::size_t anchors = 20;        // N
  double init_logvar = -2.0;

  std::size_t frame_dim() const { return joints * coords; }
  std::size_t flat_latent() const { return latent_rows * l_dim; }

  void validate() const
  {
    if (joints == 0 || coords == 0) throw std::invalid_argument("joints and coords must be >= 1");
    if (d_model == 0 || l_dim == 0 || latent_rows == 0) {
      throw std::invalid_argument("d_model, l_dim and latent_rows must be >= 1");
    }
    if (ode_hidden == 0 || cond_dim == 0 || readout_hidden == 0 || refine_hidden == 0) {
      throw std::invalid_argument("hidden sizes must be >= 1");
    }
    if (codebook_size == 0) throw std::invalid_argument("codebook_size must be >= 1");
    if (anchors == 0) throw std::invalid_argument("anchors must be >= 1");
  }
};

namespace detail
{

inline Tensor glorot(std::size_t in, std::size_t out, Rng & rng, double gain = 1.0)
{
  return normal_tensor({in, out}, rng, gain / std::sqrt(static_cast<double>(in)));
}

inline void expect_last(const Var & v, std::size_t width, const char * what)
{
  if (v.shape().empty() || v.shape().back() != width) {
    throw ShapeError(
      std::string(what) + ": expected last axis " + std::to_string(width) + ", got " + shape_str(v.shape()));
  }
}

}  // namespace detail

/**
 * @brief Sequence encoder [B x F x D] -> [B x V' x l].
 *
 * Per-frame tanh embedding, one single-head self-attention block with a
 * residual connection, a GRU scanned over frames, and a linear projection of
 * the final hidden state to V' latent rows.
 */
struct EncoderNet
{
  ModelConfig config;
  std::string prefix = "enc.";

  void init(ParameterSet & p, Rng & rng) const
  {
    const auto D = config.frame_dim(), d = config.d_model;
    p.set(prefix + "emb.w", detail::glorot(D, d, rng));
    p.set(prefix + "emb.b", Tensor({d}));
    for (const char * k : {"attn.q", "attn.k", "attn.v"}) p.set(prefix + k, detail::glorot(d, d, rng));
    p.set(prefix + "attn.o", detail::glorot(d, d, rng, 0.5));
    for (const char * g : {"z", "r", "n"}) {
      p.set(prefix + "gru.w" + g, detail::glorot(d, d, rng));
      p.set(prefix + "gru.u" + g, detail::glorot(d, d, rng));
      p.set(prefix + "gru.b" + g, Tensor({d}));
    }
    p.set(prefix + "out.w", detail::glorot(d, config.flat_latent(), rng));
    p.set(prefix + "out.b", Tensor({config.flat_latent()}));
  }

  Var operator()(Binder & b, const Var & x) const
  {
    if (x.shape().size() != 3) throw ShapeError("encoder input must be [B x F x D], got " + shape_str(x.shape()));
    detail::expect_last(x, config.frame_dim(), "encoder input");
    const std::size_t B = x.shape()[0], F = x.shape()[1], d = config.d_model;
    auto P = [&](const std::string & k) { return b(prefix + k); };

    const Var e = tanh(matmul(x, P("emb.w")) + P("emb.b"));
    const Var q = matmul(e, P("attn.q"));
    const Var k = matmul(e, P("attn.k"));
    const Var v = matmul(e, P("attn.v"));
    const Var att = softmax(scale(matmul(q, permute(k, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(d))));
    const Var e2 = permute(e + matmul(matmul(att, v), P("attn.o")), {1, 0, 2});  // [F x B x d]

    Var h = b.graph().constant(Tensor({B, d}));
    for (std::size_t t = 0; t < F; ++t) {
      const Var xt = select(e2, 0, t);
      const Var z = sigmoid(matmul(xt, P("gru.wz")) + matmul(h, P("gru.uz")) + P("gru.bz"));
      const Var r = sigmoid(matmul(xt, P("gru.wr")) + matmul(h, P("gru.ur")) + P("gru.br"));
      const Var n = tanh(matmul(xt, P("gru.wn")) + matmul(r * h, P("gru.un")) + P("gru.bn"));
      h = n + z * (h - n);
    }
    return reshape(matmul(h, P("out.w")) + P("out.b"), {B, config.latent_rows, config.l_dim});
  }
};

/**
 * @brief Decoder: initial value, latent ODE and conditioned per-frame readout.
 *
 *   h0 = flatten(Z) W_0 + b_0
 *   c  = tanh(flatten(Z_x) W_c + b_c)
 *   y_t = tanh(h_t A + c C + a) W_o + b_o
 */
struct DecoderNet
{
  ModelConfig config;
  std::string prefix = "dec.";

  DynamicsNet dynamics() const { return DynamicsNet{{config.l_dim, config.ode_hidden}, prefix + "ode."}; }

  void init(ParameterSet & p, Rng & rng) const
  {
    const auto L = config.flat_latent(), l = config.l_dim;
    p.set(prefix + "h0.w", detail::glorot(L, l, rng));
    p.set(prefix + "h0.b", Tensor({l}));
    p.set(prefix + "cond.w", detail::glorot(L, config.cond_dim, rng));
    p.set(prefix + "cond.b", Tensor({config.cond_dim}));
    p.set(prefix + "read.h", detail::glorot(l, config.readout_hidden, rng));
    p.set(prefix + "read.c", detail::glorot(config.cond_dim, config.readout_hidden, rng));
    p.set(prefix + "read.b", Tensor({config.readout_hidden}));
    p.set(prefix + "out.w", detail::glorot(config.readout_hidden, config.frame_dim(), rng));
    p.set(prefix + "out.b", Tensor({config.frame_dim()}));
    dynamics().init(p, rng);
  }

  static Var flatten(const Var & z)
  {
    if (z.shape().size() != 3) throw ShapeError("latent must be [B x V' x l], got " + shape_str(z.shape()));
    return reshape(z, {z.shape()[0], z.shape()[1] * z.shape()[2]});
  }

  Var initial_value(Binder & b, const Var & z) const
  {
    const Var f = flatten(z);
    detail::expect_last(f, config.flat_latent(), "initial value");
    return matmul(f, b(prefix + "h0.w")) + b(prefix + "h0.b");
  }

  Var condition(Binder & b, const Var & z_x) const
  {
    const Var f = flatten(z_x);
    detail::expect_last(f, config.flat_latent(), "condition");
    return tanh(matmul(f, b(prefix + "cond.w")) + b(prefix + "cond.b"));
  }

  /// traj [H x R x l], cond [R x cond_dim] -> [R x H x D]
  Var readout(Binder & b, const Var & traj, const Var & cond) const
  {
    if (traj.shape().size() != 3 || cond.shape().size() != 2 || traj.shape()[1] != cond.shape()[0]) {
      throw ShapeError(
        "readout expects [H x R x l] states and [R x c] condition, got " + shape_str(traj.shape()) +
        " and " + shape_str(cond.shape()));
    }
    const Var c = matmul(cond, b(prefix + "read.c")) + b(prefix + "read.b");
    const Var u = tanh(matmul(traj, b(prefix + "read.h")) + c);
    return permute(matmul(u, b(prefix + "out.w")) + b(prefix + "out.b"), {1, 0, 2});
  }

  /// h0 [R x l], cond [R x cond_dim] -> [R x H x D] at the given frame times.
  Var decode(
    Binder & b, const Var & h0, const Var & cond, std::span<const double> times, const SolverConfig & solver,
    SolverStats * stats = nullptr) const
  {
    const Var traj = latent_trajectory(dynamics(), b, h0, times, solver, stats);
    return readout(b, traj, cond);
  }
};

struct RefineOutput
{
  Var logits;    // [B x N]
  Var offsets;   // [B x N x l]
  Var logvar;    // [B x N x l]
  Var variance;  // exp(logvar)
};

/// Scores, offsets and diagonal variances per anchor from the mean of Z_obs rows.
struct RefineNet
{
  ModelConfig config;
  std::string prefix = "refine.";

  void init(ParameterSet & p, Rng & rng) const
  {
    const auto l = config.l_dim, h = config.refine_hidden, N = config.anchors;
    p.set(prefix + "w1", detail::glorot(l, h, rng));
    p.set(prefix + "b1", Tensor({h}));
    p.set(prefix + "score.w", detail::glorot(h, N, rng, 0.1));
    p.set(prefix + "score.b", Tensor({N}));
    p.set(prefix + "mu.w", detail::glorot(h, N * l, rng, 0.1));
    p.set(prefix + "mu.b", Tensor({N * l}));
    p.set(prefix + "logvar.w", detail::glorot(h, N * l, rng, 0.1));
    p.set(prefix + "logvar.b", Tensor::filled({N * l}, config.init_logvar));
  }

  RefineOutput operator()(Binder & b, const Var & z_obs, const Tensor & anchors) const
  {
    const std::size_t N = config.anchors, l = config.l_dim;
    if (anchors.rank() != 2 || anchors.dim(0) != N || anchors.dim(1) != l) {
      throw ShapeError(
        "anchor set " + shape_str(anchors.shape()) + " does not match refine head [" + std::to_string(N) + " x " +
        std::to_string(l) + "]");
    }
    if (z_obs.shape().size() != 3) throw ShapeError("Z_obs must be [B x V' x l], got " + shape_str(z_obs.shape()));
    detail::expect_last(z_obs, l, "Z_obs");
    const std::size_t B = z_obs.shape()[0];
    const Var hbar = tanh(matmul(mean_axis(z_obs, 1), b(prefix + "w1")) + b(prefix + "b1"));
    RefineOutput out;
    out.logits = matmul(hbar, b(prefix + "score.w")) + b(prefix + "score.b");
    out.offsets = reshape(matmul(hbar, b(prefix + "mu.w")) + b(prefix + "mu.b"), {B, N, l});
    out.logvar = reshape(matmul(hbar, b(prefix + "logvar.w")) + b(prefix + "logvar.b"), {B, N, l});
    out.variance = exp(out.logvar);
    return out;
  }
};

/// Copy every `from`-prefixed entry to the same name under `to`.
inline void copy_prefix(ParameterSet & p, const std::string & from, const std::string & to)
{
  const ParameterSet src = p.with_prefix(from);
  for (const auto & [k, v] : src.items()) p.set(to + k.substr(from.size()), v);
}

}  // namespace stcn

#endif  // STCN__NETWORKS_HPP_
