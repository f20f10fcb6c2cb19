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

#ifndef STCN__MODEL_HPP_
#define STCN__MODEL_HPP_

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stcn/anchors.hpp"
#include "stcn/gmm.hpp"
#include "stcn/motion.hpp"
#include "stcn/networks.hpp"
#include "stcn/vq.hpp"

namespace stcn
{

inline constexpr const char * kCodebookKey = "codebook.entries";
inline constexpr const char * kAnchorsKey = "anchors.centroids";
inline constexpr const char * kAnchorFcPrefix = "anchor_fc.";

/// Observation window T and prediction horizon H, in frames.
struct Window
{
  std::size_t observed = 25;
  std::size_t horizon = 100;

  std::size_t total() const { return observed + horizon; }

  void validate() const
  {
    if (observed == 0 || horizon == 0) throw std::invalid_argument("observed and horizon must be >= 1");
  }
};

/**
 * @brief Network bundle of both stages over one ModelConfig.
 *
 * Stage 1 owns enc., codebook.entries and dec.; stage 2 adds enc2.,
 * refine. and anchor_fc. and reuses dec.
 */
struct Pipeline
{
  ModelConfig config;
  Window window;
  double frame_rate = 25.0;
  SolverConfig solver;

  EncoderNet enc1() const { return {config, "enc."}; }
  EncoderNet enc2() const { return {config, "enc2."}; }
  DecoderNet dec() const { return {config, "dec."}; }
  RefineNet refine() const { return {config, "refine."}; }
  std::vector<double> times() const { return frame_times(window.horizon, frame_rate); }
};

/// Mean over the V' latent rows: [B x V' x l] -> [B x l].
inline Var pooled(const Var & z) { return mean_axis(z, 1); }

/// Rows `idx` of a [n x ...] tensor, stacked along a new leading axis.
inline Tensor gather_leading(const Tensor & all, std::span<const std::size_t> idx)
{
  const std::size_t row = all.size() / all.dim(0);
  Shape s = all.shape();
  s[0] = idx.size();
  std::vector<double> out(idx.size() * row);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= all.dim(0)) throw std::out_of_range("row index out of range");
    std::copy_n(all.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * row), row, out.begin() + static_cast<std::ptrdiff_t>(i * row));
  }
  return Tensor(std::move(s), std::move(out));
}

/// Frames [begin, end) of a [B x F x D] tensor.
inline Tensor frame_range(const Tensor & t, std::size_t begin, std::size_t end)
{
  const std::size_t B = t.dim(0), F = t.dim(1), D = t.dim(2);
  if (begin >= end || end > F) throw std::out_of_range("frame range out of bounds");
  Tensor out({B, end - begin, D});
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(
      t.data().begin() + static_cast<std::ptrdiff_t>((b * F + begin) * D), (end - begin) * D,
      out.mutable_data().begin() + static_cast<std::ptrdiff_t>(b * (end - begin) * D));
  }
  return out;
}

struct Stage1Forward
{
  Var z;      // [B*V' x l] encoder rows
  Var zq;     // their codewords
  std::vector<std::size_t> codes;
  Var h0;     // [B x l]
  Var y_hat;  // [B x H x D]
};

/**
 * Encode X+Y, quantize, and decode the future conditioned on Enc(X). xy is
 * [B x (T+H) x D]. A non-empty `keep` ([B], entries 0 or 1) zeroes the
 * condition of the rows marked 0.
 */
inline Stage1Forward stage1_forward(
  const Pipeline & net, Binder & b, const Var & xy, const std::vector<double> & keep = {},
  SolverStats * stats = nullptr)
{
  const auto & c = net.config;
  const std::size_t B = xy.shape()[0];
  const auto enc = net.enc1();
  const auto dec = net.dec();
  Stage1Forward out;
  out.z = reshape(enc(b, xy), {B * c.latent_rows, c.l_dim});
  auto q = quantize(out.z, b(kCodebookKey));
  out.zq = q.values;
  out.codes = std::move(q.indices);
  const Var zst = reshape(straight_through(out.z, out.zq), {B, c.latent_rows, c.l_dim});
  out.h0 = dec.initial_value(b, zst);
  Var cond = dec.condition(b, enc(b, slice(xy, 1, 0, net.window.observed)));
  if (!keep.empty()) {
    const std::size_t w = c.cond_dim;
    Tensor mask({B, w});
    for (std::size_t i = 0; i < B * w; ++i) mask[i] = keep.at(i / w);
    cond = cond * b.graph().constant(mask);
  }
  const auto times = net.times();
  out.y_hat = dec.decode(b, out.h0, cond, times, net.solver, stats);
  return out;
}

/// Frozen stage-1 quantities per sequence: pooled encoder latent and decoder initial value.
struct LatentTargets
{
  Tensor pooled;  // [n x l]
  Tensor h0;      // [n x l]
};

/// Runs the stage-1 encoder on `inputs` [n x F x D] in chunks of `chunk`.
inline LatentTargets stage1_targets(
  const Pipeline & net, const ParameterSet & params, const Tensor & inputs, std::size_t chunk = 64)
{
  const auto & c = net.config;
  const std::size_t n = inputs.dim(0), l = c.l_dim;
  LatentTargets out{Tensor({n, l}), Tensor({n, l})};
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    std::vector<std::size_t> idx(end - begin);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
    Graph g;
    Binder b(g, params);
    const Var z = net.enc1()(b, g.constant(gather_leading(inputs, idx)));
    const std::size_t B = idx.size();
    const Var zq = quantize(reshape(z, {B * c.latent_rows, l}), b(kCodebookKey)).values;
    const Var h0 = net.dec().initial_value(b, reshape(zq, {B, c.latent_rows, l}));
    std::copy_n(pooled(z).value().data().begin(), B * l, out.pooled.mutable_data().begin() + static_cast<std::ptrdiff_t>(begin * l));
    std::copy_n(h0.value().data().begin(), B * l, out.h0.mutable_data().begin() + static_cast<std::ptrdiff_t>(begin * l));
  }
  return out;
}

/// Least-squares affine map rows(x) W + b ~ rows(y) with ridge `lambda` on W; writes anchor_fc.w and anchor_fc.b.
inline void fit_anchor_fc(ParameterSet & p, const Tensor & x, const Tensor & y, double lambda = 1e-6)
{
  if (x.rank() != 2 || y.shape() != x.shape()) throw ShapeError("anchor_fc fit needs matching [n x l] inputs and targets");
  const auto n = static_cast<Eigen::Index>(x.dim(0)), l = static_cast<Eigen::Index>(x.dim(1));
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMat design(n, l + 1);
  design.leftCols(l) = Eigen::Map<const RowMat>(x.data().data(), n, l);
  design.col(l).setOnes();
  const Eigen::Map<const RowMat> target(y.data().data(), n, l);
  Eigen::MatrixXd gram = design.transpose() * design;
  gram.topLeftCorner(l, l).diagonal().array() += lambda * static_cast<double>(n);
  const Eigen::MatrixXd sol = gram.ldlt().solve(design.transpose() * target);
  if (!sol.allFinite()) throw NumericalError("anchor_fc least-squares fit failed");
  Tensor w({x.dim(1), x.dim(1)}), bias({x.dim(1)});
  for (Eigen::Index i = 0; i < l; ++i) {
    for (Eigen::Index k = 0; k < l; ++k) w[static_cast<std::size_t>(i * l + k)] = sol(i, k);
  }
  for (Eigen::Index k = 0; k < l; ++k) bias[static_cast<std::size_t>(k)] = sol(l, k);
  p.set(std::string(kAnchorFcPrefix) + "w", w);
  p.set(std::string(kAnchorFcPrefix) + "b", bias);
}

/// Mixture heads and decoder conditions for a batch of observations x [B x T x D].
struct ObservedEncoding
{
  std::vector<MixtureHead> heads;
  Tensor cond;  // [B x cond_dim]
};

inline ObservedEncoding encode_observed(const Pipeline & net, const ParameterSet & params, const Tensor & x)
{
  Graph g;
  Binder b(g, params);
  const Tensor & anchors = params.get(kAnchorsKey);
  const Var z_obs = net.enc2()(b, g.constant(x));
  const auto r = net.refine()(b, z_obs, anchors);
  const std::size_t B = x.dim(0), N = anchors.dim(0), l = anchors.dim(1);
  ObservedEncoding out;
  out.cond = net.dec().condition(b, z_obs).value();
  const auto logits = r.logits.value().data();
  const auto mu = r.offsets.value().data();
  const auto var = r.variance.value().data();
  for (std::size_t m = 0; m < B; ++m) {
    MixtureHead h;
    h.q = anchor_probabilities(logits.subspan(m * N, N));
    h.means = Tensor({N, l});
    h.variances = Tensor({N, l});
    for (std::size_t i = 0; i < N * l; ++i) {
      h.means[i] = anchors[i] + mu[m * N * l + i];
      h.variances[i] = var[m * N * l + i];
    }
    out.heads.push_back(std::move(h));
  }
  return out;
}

/// Decodes latent draws z [R x l] with per-row conditions cond [R x c]; returns [R x H x D] normalized frames.
inline Tensor decode_latents(
  const Pipeline & net, const ParameterSet & params, const Tensor & cond, const Tensor & z, SolverStats * stats = nullptr)
{
  Graph g;
  Binder b(g, params);
  const Var h0 = matmul(g.constant(z), b(std::string(kAnchorFcPrefix) + "w")) + b(std::string(kAnchorFcPrefix) + "b");
  const auto times = net.times();
  return net.dec().decode(b, h0, g.constant(cond), times, net.solver, stats).value();
}

}  // namespace stcn

#endif  // STCN__MODEL_HPP_
