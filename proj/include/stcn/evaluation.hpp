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

#ifndef STCN__EVALUATION_HPP_
#define STCN__EVALUATION_HPP_

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "stcn/metrics.hpp"
#include "stcn/model.hpp"

namespace stcn
{

struct EvalConfig
{
  std::size_t samples = 50;      // draws from the most probable anchor for ADE/FDE
  std::size_t mm_top = 5;        // anchors used for APD and the multimodal metrics
  std::size_t mm_samples = 50;   // draws per anchor there
  double mm_threshold = 0.5;     // start-pose grouping radius, raw dataset units
  bool deterministic = false;    // one noiseless draw from the most probable anchor
  std::uint64_t seed = 0;
  std::size_t chunk = 32;

  void validate() const
  {
    if (samples == 0 || mm_top == 0 || mm_samples == 0 || chunk == 0) {
      throw std::invalid_argument("sample counts and chunk size must be >= 1");
    }
    if (!(mm_threshold >= 0.0)) throw std::invalid_argument("multimodal threshold must be >= 0");
  }
};

/// Anchor indices by decreasing probability; equal weights keep the lower index first.
inline std::vector<std::size_t> rank_anchors(std::span<const double> q)
{
  std::vector<std::size_t> order(q.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return q[a] > q[b]; });
  return order;
}

/// Predictions for one observation, in raw dataset units.
struct SampleSet
{
  std::vector<LatentSample> tags;  // anchor, draw index, Q and latent per row
  Tensor frames;                   // [S x H x D]
};

/**
 * Draws `per_anchor` latents from each of the `top` most probable anchors
 * (all anchors when top >= N) for every sequence in `idx`, then decodes
 * them. With `noiseless`, each draw is the component mean.
 */
inline std::vector<SampleSet> draw_samples(
  const Pipeline & net, const ParameterSet & params, const Dataset & ds, std::span<const std::size_t> idx,
  std::size_t top, std::size_t per_anchor, Rng & rng, bool noiseless = false, std::size_t chunk = 32)
{
  if (top == 0 || per_anchor == 0) throw std::invalid_argument("need at least one anchor and one draw");
  const std::size_t T = net.window.observed, H = net.window.horizon, D = ds.frame_dim();
  std::vector<SampleSet> out;
  for (std::size_t begin = 0; begin < idx.size(); begin += chunk) {
    const auto part = idx.subspan(begin, std::min(chunk, idx.size() - begin));
    const auto enc = encode_observed(net, params, batch_frames(ds, part, 0, T, true));
    const std::size_t c = enc.cond.dim(1);
    std::vector<double> z, cond;
    std::vector<std::size_t> counts;
    for (std::size_t m = 0; m < part.size(); ++m) {
      const auto & head = enc.heads[m];
      const auto order = rank_anchors(head.q);
      SampleSet set;
      for (std::size_t r = 0; r < std::min(top, order.size()); ++r) {
        const std::size_t n = order[r];
        const auto mu = head.mean(n);
        const auto var = head.variance(n);
        for (std::size_t s = 0; s < per_anchor; ++s) {
          LatentSample t{n, s, head.q[n], std::vector<double>(mu.size())};
          for (std::size_t j = 0; j < mu.size(); ++j) t.z[j] = noiseless ? mu[j] : mu[j] + std::sqrt(var[j]) * normal(rng);
          z.insert(z.end(), t.z.begin(), t.z.end());
          cond.insert(cond.end(), enc.cond.data().begin() + static_cast<std::ptrdiff_t>(m * c), enc.cond.data().begin() + static_cast<std::ptrdiff_t>((m + 1) * c));
          set.tags.push_back(std::move(t));
        }
      }
      counts.push_back(set.tags.size());
      out.push_back(std::move(set));
    }
    const std::size_t rows = z.size() / net.config.l_dim;
    Tensor frames = decode_latents(
      net, params, Tensor({rows, c}, std::move(cond)), Tensor({rows, net.config.l_dim}, std::move(z)));
    ds.norm.invert(frames.mutable_data());
    std::size_t row = 0;
    for (std::size_t m = 0; m < part.size(); ++m) {
      auto & set = out[begin + m];
      std::vector<double> mine(
        frames.data().begin() + static_cast<std::ptrdiff_t>(row * H * D),
        frames.data().begin() + static_cast<std::ptrdiff_t>((row + counts[m]) * H * D));
      set.frames = Tensor({counts[m], H, D}, std::move(mine));
      row += counts[m];
    }
  }
  return out;
}

/// Raw future frames T..T+H-1 of a sequence.
inline std::vector<double> future_of(const Dataset & ds, std::size_t i, const Window & w)
{
  const std::size_t D = ds.frame_dim();
  const auto & d = ds.sequences.at(i).motion.data;
  if (d.size() < w.total() * D) throw ShapeError("sequence shorter than T + H");
  return {d.begin() + static_cast<std::ptrdiff_t>(w.observed * D), d.begin() + static_cast<std::ptrdiff_t>(w.total() * D)};
}

/// Raw last observed frame, the t = 0 pose.
inline std::vector<double> start_pose_of(const Dataset & ds, std::size_t i, const Window & w)
{
  const std::size_t D = ds.frame_dim();
  const auto & d = ds.sequences.at(i).motion.data;
  return {d.begin() + static_cast<std::ptrdiff_t>((w.observed - 1) * D), d.begin() + static_cast<std::ptrdiff_t>(w.observed * D)};
}

/**
 * @brief Test-split protocol.
 *
 * ADE/FDE use `samples` draws from the most probable anchor. APD and the
 * multimodal metrics use `mm_samples` draws from each of the `mm_top` most
 * probable anchors, grouped by start pose. Deterministic mode replaces both
 * sets by one noiseless draw.
 */
inline MetricReport evaluate(
  const Pipeline & net, const ParameterSet & params, const Dataset & ds, std::span<const std::size_t> idx,
  const EvalConfig & cfg)
{
  cfg.validate();
  if (idx.empty()) throw std::invalid_argument("no sequences to evaluate");
  Rng rng(derive_seed(cfg.seed, "eval.samples"));
  Rng mm_rng(derive_seed(cfg.seed, "eval.multimodal"));
  std::vector<SampleSet> single, multi;
  if (cfg.deterministic) {
    single = draw_samples(net, params, ds, idx, 1, 1, rng, true, cfg.chunk);
    multi = single;
  } else {
    single = draw_samples(net, params, ds, idx, 1, cfg.samples, rng, false, cfg.chunk);
    multi = draw_samples(net, params, ds, idx, cfg.mm_top, cfg.mm_samples, mm_rng, false, cfg.chunk);
  }
  std::vector<std::vector<double>> truths, poses;
  for (auto i : idx) {
    truths.push_back(future_of(ds, i, net.window));
    poses.push_back(start_pose_of(ds, i, net.window));
  }
  MetricReport r;
  r.inputs = idx.size();
  r.samples_per_input = single.front().tags.size();
  r.mm_samples_per_input = multi.front().tags.size();
  std::vector<Tensor> mm_frames;
  for (std::size_t q = 0; q < idx.size(); ++q) {
    r.ade += ade(single[q].frames, truths[q]);
    r.fde += fde(single[q].frames, truths[q]);
    r.apd += apd(multi[q].frames);
    mm_frames.push_back(multi[q].frames);
  }
  const double n = static_cast<double>(idx.size());
  r.ade /= n;
  r.fde /= n;
  r.apd /= n;
  const auto mm = multimodal_metrics(mm_frames, truths, multimodal_groups(poses, cfg.mm_threshold));
  r.mmade = mm.mmade;
  r.mmfde = mm.mmfde;
  r.mean_group_size = mm.mean_group_size;
  return r;
}

/// Per-pattern mean future over the given sequences, in raw units: [K x H*D].
inline std::vector<std::vector<double>> pattern_means(
  const Dataset & ds, std::span<const std::size_t> idx, const Window & w)
{
  std::vector<std::vector<double>> mu(ds.pattern_count, std::vector<double>(w.horizon * ds.frame_dim(), 0.0));
  std::vector<double> n(ds.pattern_count, 0.0);
  for (auto i : idx) {
    const auto f = future_of(ds, i, w);
    const auto k = ds.sequences[i].label;
    for (std::size_t j = 0; j < f.size(); ++j) mu[k][j] += f[j];
    n[k] += 1.0;
  }
  for (std::size_t k = 0; k < mu.size(); ++k) {
    if (n[k] == 0.0) throw std::invalid_argument("pattern " + std::to_string(k) + " has no sequences");
    for (auto & x : mu[k]) x /= n[k];
  }
  return mu;
}

/// Index of the nearest pattern mean for every sample of a set.
inline std::vector<std::size_t> nearest_patterns(const SampleSet & set, const std::vector<std::vector<double>> & means)
{
  const std::size_t row = set.frames.size() / set.frames.dim(0);
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < set.frames.dim(0); ++s) {
    const auto y = set.frames.data().subspan(s * row, row);
    std::size_t best = 0;
    double bd = squared_distance(y, means[0]);
    for (std::size_t k = 1; k < means.size(); ++k) {
      const double d = squared_distance(y, means[k]);
      if (d < bd) {
        bd = d;
        best = k;
      }
    }
    out.push_back(best);
  }
  return out;
}

/// Fraction of sample sets whose nearest-pattern labels cover every planted pattern.
inline double mode_coverage(const std::vector<SampleSet> & sets, const std::vector<std::vector<double>> & means)
{
  std::size_t full = 0;
  for (const auto & s : sets) {
    std::vector<bool> seen(means.size(), false);
    for (auto k : nearest_patterns(s, means)) seen[k] = true;
    if (std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) ++full;
  }
  return static_cast<double>(full) / static_cast<double>(sets.size());
}

}  // namespace stcn

#endif  // STCN__EVALUATION_HPP_
