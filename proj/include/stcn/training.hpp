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

#ifndef STCN__TRAINING_HPP_
#define STCN__TRAINING_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stcn/model.hpp"
#include "stcn/optim.hpp"

namespace stcn
{

struct LossWeights
{
  double nll = 0.4;
  double anchor = 0.3;
  double re = 0.3;
};

/// Which sequence the frozen stage-1 encoder sees when building stage-2 targets.
enum class TargetSource { ObservedAndFuture, Future };

inline const char * target_source_name(TargetSource s) { return s == TargetSource::Future ? "y" : "xy"; }

inline TargetSource parse_target_source(const std::string & s)
{
  if (s == "xy") return TargetSource::ObservedAndFuture;
  if (s == "y") return TargetSource::Future;
  throw std::invalid_argument("unknown target source '" + s + "' (expected xy or y)");
}

struct TrainConfig
{
  std::size_t batch_size = 128;
  std::size_t epochs = 500;
  double lr0 = 1e-4;
  double lr_decay = 0.98;
  std::size_t decay_every = 10;
  LossWeights alpha;
  double beta = 0.25;
  double pseudo_threshold = 0.1;   // raw dataset units
  double clip_norm = 10.0;
  double cond_dropout = 0.5;       // stage 1: probability of decoding a window without its condition
  std::size_t train_samples = 1;   // draws per anchor while training stage 2
  bool freeze_decoder = false;
  TargetSource latent_source = TargetSource::ObservedAndFuture;
  TargetSource h0_source = TargetSource::ObservedAndFuture;
  std::size_t kmeans_restarts = 8;
  std::size_t kmeans_iters = 100;
  std::uint64_t seed = 0;

  void validate() const
  {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    if (!(lr0 > 0.0) || !(lr_decay > 0.0) || decay_every == 0) {
      throw std::invalid_argument("lr0 and lr_decay must be > 0, decay_every >= 1");
    }
    if (alpha.nll < 0.0 || alpha.anchor < 0.0 || alpha.re < 0.0) throw std::invalid_argument("loss weights must be >= 0");
    if (beta < 0.0) throw std::invalid_argument("beta must be >= 0");
    if (!(pseudo_threshold >= 0.0)) throw std::invalid_argument("pseudo-label threshold must be >= 0");
    if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be > 0");
    if (!(cond_dropout >= 0.0 && cond_dropout < 1.0)) throw std::invalid_argument("cond_dropout must lie in [0, 1)");
    if (train_samples == 0) throw std::invalid_argument("train_samples must be >= 1");
    if (kmeans_restarts == 0 || kmeans_iters == 0) throw std::invalid_argument("k-means restarts and iterations must be >= 1");
  }
};

class TrainingDivergence : public NumericalError
{
public:
  TrainingDivergence(std::size_t epoch, std::size_t batch, const std::string & what)
  : NumericalError(
      "training diverged at epoch " + std::to_string(epoch) + " batch " + std::to_string(batch) + ": " + what),
    epoch_(epoch), batch_(batch)
  {
  }

  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

private:
  std::size_t epoch_;
  std::size_t batch_;
};

struct LossRow
{
  std::size_t epoch = 0;
  double lr = 0.0;
  std::vector<double> values;  // values[0] is the optimized loss
};

struct LossLog
{
  std::vector<std::string> columns;
  std::vector<LossRow> rows;

  double initial() const { return rows.at(0).values.at(0); }
  double last() const { return rows.at(rows.size() - 1).values.at(0); }

  void write_csv(std::ostream & os) const
  {
    os << "epoch,lr";
    for (const auto & c : columns) os << ',' << c;
    os << '\n';
    os.precision(17);
    for (const auto & r : rows) {
      os << r.epoch << ',' << r.lr;
      for (double v : r.values) os << ',' << v;
      os << '\n';
    }
  }
};

using EpochCallback = std::function<void(const LossRow &)>;

// ---------------------------------------------------------------------------
// Pseudo ground truth.

/// Mean over frames of the per-frame Euclidean distance between two [F x D] blocks.
inline double mean_frame_distance(std::span<const double> a, std::span<const double> b, std::size_t d)
{
  if (a.size() != b.size() || d == 0 || a.size() % d != 0 || a.empty()) {
    throw ShapeError("frame blocks must have equal, non-zero length divisible by D");
  }
  const std::size_t f = a.size() / d;
  double s = 0.0;
  for (std::size_t i = 0; i < f; ++i) s += std::sqrt(squared_distance(a.subspan(i * d, d), b.subspan(i * d, d)));
  return s / static_cast<double>(f);
}

/**
 * @brief For each training sample, the training samples whose first T
 * frames lie within `threshold`. Entries are positions into `members`.
 */
struct PseudoLabelIndex
{
  std::vector<std::size_t> members;             // dataset indices
  std::vector<std::vector<std::size_t>> lists;  // lists[i] has positions j into members

  std::size_t size() const { return members.size(); }
};

/// Positions j (into `members`) whose observed prefix is within threshold of `query` ([T x D], raw units).
inline std::vector<std::size_t> pseudo_ground_truth(
  const Dataset & ds, std::span<const std::size_t> members, std::span<const double> query, std::size_t observed,
  double threshold)
{
  if (!(threshold >= 0.0)) throw std::invalid_argument("pseudo-label threshold must be >= 0");
  const std::size_t d = ds.frame_dim();
  if (query.size() != observed * d) throw ShapeError("query must hold T frames");
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < members.size(); ++j) {
    const auto & data = ds.sequences.at(members[j]).motion.data;
    if (data.size() < observed * d) throw ShapeError("member sequence shorter than T");
    const std::span<const double> pre(data.data(), observed * d);
    if (mean_frame_distance(pre, query, d) <= threshold) out.push_back(j);
  }
  return out;
}

inline PseudoLabelIndex build_pseudo_index(
  const Dataset & ds, std::vector<std::size_t> members, std::size_t observed, double threshold)
{
  PseudoLabelIndex idx;
  idx.members = std::move(members);
  const std::size_t d = ds.frame_dim();
  for (std::size_t i = 0; i < idx.members.size(); ++i) {
    const auto & data = ds.sequences.at(idx.members[i]).motion.data;
    auto list = pseudo_ground_truth(ds, idx.members, std::span<const double>(data.data(), observed * d), observed, threshold);
    // The sample itself is at distance 0 and always present.
    if (std::find(list.begin(), list.end(), i) == list.end()) list.insert(std::lower_bound(list.begin(), list.end(), i), i);
    idx.lists.push_back(std::move(list));
  }
  return idx;
}

// ---------------------------------------------------------------------------
// Losses.

/**
 * (1/P) sum_p min_j ||Y_hat_j - Y_p||^2 over predictions [S x ...] and
 * pseudo targets [P x ...]; both are flattened to rows.
 */
inline Var reconstruction_loss(const Var & predictions, const Var & pseudo)
{
  const Shape a = predictions.shape();
  const Shape b = pseudo.shape();
  if (a.empty() || b.empty() || Shape(a.begin() + 1, a.end()) != Shape(b.begin() + 1, b.end())) {
    throw ShapeError("reconstruction_loss: predictions " + shape_str(a) + " vs pseudo targets " + shape_str(b));
  }
  const std::size_t row = shape_size(a) / a[0];
  const Var d = pairwise_sq_dist(reshape(predictions, {a[0], row}), reshape(pseudo, {b[0], row}));
  return mean(min_axis(d, 0));
}

inline double total_loss(double nll, double anchor, double re, const LossWeights & w = {})
{
  return w.nll * nll + w.anchor * anchor + w.re * re;
}

inline Var total_loss(const Var & nll, const Var & anchor, const Var & re, const LossWeights & w = {})
{
  return lincomb({nll, anchor, re}, {w.nll, w.anchor, w.re});
}

// ---------------------------------------------------------------------------
// Loops.

namespace detail
{

/// Normalized [n x (T+H) x D] frames of the given sequences.
inline Tensor normalized_windows(const Dataset & ds, std::span<const std::size_t> idx, const Window & w)
{
  return batch_frames(ds, idx, 0, w.total(), true);
}

inline std::vector<std::vector<std::size_t>> batches(std::vector<std::size_t> order, std::size_t size)
{
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < order.size(); b += size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b), order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + size)));
  }
  return out;
}

inline std::vector<std::size_t> iota(std::size_t n)
{
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

inline void check_pipeline(const Pipeline & net, const Dataset & ds)
{
  net.config.validate();
  net.window.validate();
  net.solver.validate();
  if (net.config.joints != ds.joints || net.config.coords != ds.coords) {
    throw ShapeError("model skeleton does not match the dataset");
  }
  if (net.frame_rate != ds.frame_rate) throw std::invalid_argument("model frame rate does not match the dataset");
  if (ds.norm.empty()) throw std::invalid_argument("dataset carries no normalization statistics");
}

struct Accumulator
{
  std::vector<double> sums;
  double weight = 0.0;

  void add(const std::vector<double> & v, double w)
  {
    if (sums.empty()) sums.assign(v.size(), 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) sums[i] += w * v[i];
    weight += w;
  }

  std::vector<double> mean() const
  {
    auto m = sums;
    for (auto & x : m) x /= weight;
    return m;
  }
};

/// Backward, clip, Adam; non-finite losses or gradients abort with the step position.
inline void apply_update(
  Graph & g, const Var & loss, ParameterSet & params, AdamState & state, const AdamConfig & adam, double clip,
  std::size_t epoch, std::size_t batch)
{
  auto grads = g.backward(loss).parameters();
  for (const auto & [name, t] : grads) {
    if (!t.all_finite()) throw TrainingDivergence(epoch, batch, "non-finite gradient for '" + name + "'");
  }
  clip_global_norm(grads, clip);
  adam_step(params, grads, state, adam);
}

/// Runs one step, re-raising numerical failures from inside it with the step position.
template <class Fn>
auto guarded(std::size_t epoch, std::size_t batch, Fn && fn)
{
  try {
    return fn();
  } catch (const TrainingDivergence &) {
    throw;
  } catch (const NumericalError & e) {
    throw TrainingDivergence(epoch, batch, e.what());
  }
}

inline void check_finite(const std::vector<double> & v, std::size_t epoch, std::size_t batch)
{
  for (double x : v) {
    if (!std::isfinite(x)) throw TrainingDivergence(epoch, batch, "loss is not finite");
  }
}

}  // namespace detail

struct Stage1Result
{
  ParameterSet params;
  LossLog log;
  std::size_t reseeded = 0;  // dead codewords replaced over the whole run
  KMeansResult kmeans;
};

/// Fresh stage-1 parameters; the codebook starts from encoder outputs on the training windows.
inline ParameterSet init_stage1(const Pipeline & net, const Tensor & windows, std::uint64_t seed)
{
  ParameterSet p;
  Rng rng(derive_seed(seed, "stage1.init"));
  net.enc1().init(p, rng);
  net.dec().init(p, rng);
  const auto & c = net.config;
  Graph g;
  Binder b(g, p);
  const Tensor rows = reshape(net.enc1()(b, g.constant(windows)), {windows.dim(0) * c.latent_rows, c.l_dim}).value();
  Tensor book({c.codebook_size, c.l_dim});
  std::uniform_int_distribution<std::size_t> pick(0, rows.dim(0) - 1);
  for (std::size_t k = 0; k < c.codebook_size; ++k) {
    const std::size_t r = pick(rng);
    for (std::size_t j = 0; j < c.l_dim; ++j) book[k * c.l_dim + j] = rows.at(r, j) + 1e-3 * normal(rng);
  }
  p.set(kCodebookKey, book);
  return p;
}

/**
 * @brief Stage 1: reconstruct Y from the quantized latent of X+Y, with Enc(X)
 * as the decoder condition. Logs the batch-mean L_VQ per epoch (epoch 0 is
 * the initial weights), re-seeds dead codewords after every epoch and ends
 * with k-means over the decoder initial values h0 of the training windows.
 */
inline Stage1Result train_stage1(
  const Pipeline & net, const Dataset & ds, const TrainConfig & cfg, const EpochCallback & on_epoch = {})
{
  cfg.validate();
  detail::check_pipeline(net, ds);
  const auto members = ds.indices(Split::Train);
  if (members.empty()) throw std::invalid_argument("dataset has no training sequences");
  const auto & c = net.config;
  const Tensor windows = detail::normalized_windows(ds, members, net.window);
  const std::size_t T = net.window.observed;

  Stage1Result res;
  res.params = init_stage1(net, windows, cfg.seed);
  res.log.columns = {"loss", "recon", "codebook", "commit"};

  Rng shuffle(derive_seed(cfg.seed, "stage1.shuffle"));
  Rng reseed(derive_seed(cfg.seed, "stage1.reseed"));
  Rng dropout(derive_seed(cfg.seed, "stage1.dropout"));
  AdamState state;

  auto step = [&](const std::vector<std::size_t> & batch, std::size_t epoch, std::size_t bi, bool update,
                  CodebookUsage * usage, std::vector<double> * rows) {
    Graph g;
    Binder b(g, res.params);
    const Var xy = g.input("xy", gather_leading(windows, batch));
    std::vector<double> keep;
    if (update && cfg.cond_dropout > 0.0) {
      std::bernoulli_distribution drop(cfg.cond_dropout);
      for (std::size_t i = 0; i < batch.size(); ++i) keep.push_back(drop(dropout) ? 0.0 : 1.0);
    }
    const auto fw = stage1_forward(net, b, xy, keep);
    const double inv = 1.0 / static_cast<double>(batch.size());
    const Var y = slice(xy, 1, T, net.window.total());
    const Var loss = scale(vq_loss(y, fw.y_hat, fw.z, fw.zq, cfg.beta, c.joints), inv);
    const double recon = joint_l2(y, fw.y_hat, c.joints).value().item() * inv;
    const double book = squared_distance(fw.z.value().data(), fw.zq.value().data()) * inv;
    std::vector<double> v{loss.value().item(), recon, book, cfg.beta * book};
    detail::check_finite(v, epoch, bi);
    if (usage) usage->record(fw.codes);
    if (rows) rows->insert(rows->end(), fw.z.value().data().begin(), fw.z.value().data().end());
    if (update) {
      AdamConfig adam;
      adam.lr = scheduled_lr(cfg.lr0, epoch - 1, cfg.lr_decay, cfg.decay_every);
      detail::apply_update(g, loss, res.params, state, adam, cfg.clip_norm, epoch, bi);
    }
    return v;
  };

  auto record = [&](std::size_t epoch, double lr, const detail::Accumulator & acc) {
    res.log.rows.push_back({epoch, lr, acc.mean()});
    if (on_epoch) on_epoch(res.log.rows.back());
  };

  {
    detail::Accumulator acc;
    const auto bs = detail::batches(detail::iota(members.size()), cfg.batch_size);
    for (std::size_t bi = 0; bi < bs.size(); ++bi) {
      acc.add(detail::guarded(0, bi + 1, [&] { return step(bs[bi], 0, bi + 1, false, nullptr, nullptr); }), static_cast<double>(bs[bi].size()));
    }
    record(0, cfg.lr0, acc);
  }

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto order = detail::iota(members.size());
    std::shuffle(order.begin(), order.end(), shuffle);
    const auto bs = detail::batches(order, cfg.batch_size);
    detail::Accumulator acc;
    CodebookUsage usage(c.codebook_size);
    std::vector<double> rows;
    for (std::size_t bi = 0; bi < bs.size(); ++bi) {
      acc.add(
        detail::guarded(epoch, bi + 1, [&] { return step(bs[bi], epoch, bi + 1, true, &usage, &rows); }),
        static_cast<double>(bs[bi].size()));
    }
    const std::size_t n_rows = rows.size() / c.l_dim;
    const Tensor row_t({n_rows, c.l_dim}, std::move(rows));
    res.reseeded += reseed_dead(res.params.get_mutable(kCodebookKey), usage, row_t, reseed);
    record(epoch, scheduled_lr(cfg.lr0, epoch - 1, cfg.lr_decay, cfg.decay_every), acc);
  }

  const auto targets = stage1_targets(net, res.params, windows);
  KMeansConfig km;
  km.clusters = c.anchors;
  km.restarts = cfg.kmeans_restarts;
  km.max_iters = cfg.kmeans_iters;
  km.seed = derive_seed(cfg.seed, "stage1.kmeans");
  res.kmeans = kmeans(targets.h0, km);
  res.params.set(kAnchorsKey, res.kmeans.best.centroids);
  return res;
}

struct Stage2Result
{
  ParameterSet params;
  LossLog log;
  PseudoLabelIndex pseudo;
};

/**
 * Per-anchor, per-dimension spread of the points nearest to each anchor, as
 * the squared scaled median absolute deviation (1.4826 MAD), so a few
 * mis-assigned points do not inflate it. [N x l], floored at `floor`.
 */
inline Tensor cluster_variances(
  const Tensor & points, const Tensor & anchors, const std::vector<std::size_t> & nearest, double floor = 1e-6)
{
  const std::size_t N = anchors.dim(0), l = anchors.dim(1);
  auto robust = [](std::vector<double> & dev) {
    const auto mid = dev.begin() + static_cast<std::ptrdiff_t>(dev.size() / 2);
    std::nth_element(dev.begin(), mid, dev.end());
    const double s = 1.4826 * *mid;
    return s * s;
  };
  Tensor var({N, l});
  for (std::size_t j = 0; j < l; ++j) {
    std::vector<double> all;
    std::vector<std::vector<double>> per(N);
    for (std::size_t i = 0; i < nearest.size(); ++i) {
      const double d = std::abs(points.at(i, j) - anchors.at(nearest[i], j));
      per[nearest[i]].push_back(d);
      all.push_back(d);
    }
    const double pooled = robust(all);
    for (std::size_t n = 0; n < N; ++n) {
      // Clusters this small carry no usable spread; use the pooled one.
      const double v = per[n].size() >= 3 ? robust(per[n]) : pooled;
      var[n * l + j] = std::max(v, floor);
    }
  }
  return var;
}

/**
 * Stage-2 starting point: enc2 copied from enc, fresh refine head whose
 * log-variance bias starts at each anchor's cluster variance, and anchor_fc
 * fitted from s to the h0 target.
 */
inline ParameterSet init_stage2(
  const Pipeline & net, const ParameterSet & stage1, const LatentTargets & s, const LatentTargets & h0,
  const std::vector<std::size_t> & k_hat, std::uint64_t seed)
{
  ParameterSet p = stage1;
  const Tensor & anchors = p.get(kAnchorsKey);
  p.get(kCodebookKey);
  copy_prefix(p, "enc.", "enc2.");
  Rng rng(derive_seed(seed, "stage2.init"));
  const auto refine = net.refine();
  refine.init(p, rng);
  const Tensor var = cluster_variances(s.h0, anchors, k_hat);
  Tensor & bias = p.get_mutable(refine.prefix + "logvar.b");
  for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = std::log(var[i]);
  fit_anchor_fc(p, s.h0, h0.h0);
  return p;
}

/**
 * @brief Stage 2: refine head, anchor alignment and pseudo-ground-truth
 * reconstruction through the decoder, weighted by cfg.alpha. The log holds
 * the total and the three weighted terms.
 */
inline Stage2Result train_stage2(
  const Pipeline & net, const Dataset & ds, const ParameterSet & stage1, const TrainConfig & cfg,
  const EpochCallback & on_epoch = {})
{
  cfg.validate();
  detail::check_pipeline(net, ds);
  const auto members = ds.indices(Split::Train);
  if (members.empty()) throw std::invalid_argument("dataset has no training sequences");
  const auto & c = net.config;
  const Tensor & anchors = stage1.get(kAnchorsKey);
  if (anchors.rank() != 2 || anchors.dim(0) != c.anchors || anchors.dim(1) != c.l_dim) {
    throw ShapeError("stage-1 anchors " + shape_str(anchors.shape()) + " do not match the model");
  }
  const std::size_t T = net.window.observed, H = net.window.horizon, l = c.l_dim, N = c.anchors;
  const std::size_t n = members.size(), S = N * cfg.train_samples;
  const Tensor windows = detail::normalized_windows(ds, members, net.window);
  const Tensor futures = frame_range(windows, T, T + H);
  const Tensor observed = frame_range(windows, 0, T);

  auto targets_for = [&](TargetSource src) {
    return stage1_targets(net, stage1, src == TargetSource::Future ? futures : windows);
  };
  const LatentTargets s_t = targets_for(cfg.latent_source);
  const LatentTargets h_t = cfg.h0_source == cfg.latent_source ? s_t : targets_for(cfg.h0_source);
  const auto k_hat = nearest_anchors(s_t.h0, anchors);

  Stage2Result res;
  res.params = init_stage2(net, stage1, s_t, h_t, k_hat, cfg.seed);
  res.pseudo = build_pseudo_index(ds, members, T, cfg.pseudo_threshold);
  res.log.columns = {"total", "nll", "anchor", "re"};

  std::vector<std::string> frozen{"enc.", "codebook.", "anchors."};
  if (cfg.freeze_decoder) frozen.push_back("dec.");

  Rng shuffle(derive_seed(cfg.seed, "stage2.shuffle"));
  Rng noise(derive_seed(cfg.seed, "stage2.noise"));
  Rng eval_noise(derive_seed(cfg.seed, "stage2.eval"));
  AdamState state;

  auto step = [&](const std::vector<std::size_t> & batch, std::size_t epoch, std::size_t bi, bool update, Rng & rng) {
    const std::size_t B = batch.size();
    Graph g;
    Binder b(g, res.params, frozen);
    const Var x = g.input("x", gather_leading(observed, batch));
    const Var z_obs = net.enc2()(b, x);
    const auto r = net.refine()(b, z_obs, anchors);
    const Var a = g.constant(anchors);
    std::vector<std::size_t> kb(B);
    for (std::size_t m = 0; m < B; ++m) kb[m] = k_hat[batch[m]];

    const Var l_nll = nll_loss(r.logits, r.offsets, r.logvar, anchors, g.constant(gather_leading(s_t.h0, batch)), kb);
    const Var l_anchor = anchor_loss(b, a, r.offsets, g.constant(gather_leading(h_t.h0, batch)), kAnchorFcPrefix);
    Var l_re = g.constant(Tensor::scalar(0.0));
    if (cfg.alpha.re > 0.0) {
      Tensor eps({cfg.train_samples, B, N, l});
      for (auto & e : eps.mutable_data()) e = normal(rng);
      const Var z = reparameterize(a, r.offsets, r.logvar, eps);
      const Var h0 = matmul(z, b(std::string(kAnchorFcPrefix) + "w")) + b(std::string(kAnchorFcPrefix) + "b");
      std::vector<std::size_t> rep(B * S);
      for (std::size_t i = 0; i < rep.size(); ++i) rep[i] = i / S;
      const Var cond = gather_rows(net.dec().condition(b, z_obs), rep);
      const auto times = net.times();
      const Var y_hat = net.dec().decode(b, h0, cond, times, net.solver);
      std::vector<Var> parts;
      for (std::size_t m = 0; m < B; ++m) {
        const auto & list = res.pseudo.lists[batch[m]];
        const Tensor pseudo = gather_leading(futures, list);
        parts.push_back(reconstruction_loss(slice(y_hat, 0, m * S, (m + 1) * S), g.constant(pseudo)));
      }
      l_re = scale(sum(stack(parts)), 1.0 / static_cast<double>(B));
    }
    const Var loss = total_loss(l_nll, l_anchor, l_re, cfg.alpha);
    std::vector<double> v{
      loss.value().item(), cfg.alpha.nll * l_nll.value().item(), cfg.alpha.anchor * l_anchor.value().item(),
      cfg.alpha.re * l_re.value().item()};
    detail::check_finite(v, epoch, bi);
    if (update) {
      AdamConfig adam;
      adam.lr = scheduled_lr(cfg.lr0, epoch - 1, cfg.lr_decay, cfg.decay_every);
      detail::apply_update(g, loss, res.params, state, adam, cfg.clip_norm, epoch, bi);
    }
    return v;
  };

  auto record = [&](std::size_t epoch, double lr, const detail::Accumulator & acc) {
    res.log.rows.push_back({epoch, lr, acc.mean()});
    if (on_epoch) on_epoch(res.log.rows.back());
  };

  {
    detail::Accumulator acc;
    const auto bs = detail::batches(detail::iota(n), cfg.batch_size);
    for (std::size_t bi = 0; bi < bs.size(); ++bi) {
      acc.add(detail::guarded(0, bi + 1, [&] { return step(bs[bi], 0, bi + 1, false, eval_noise); }), static_cast<double>(bs[bi].size()));
    }
    record(0, cfg.lr0, acc);
  }
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto order = detail::iota(n);
    std::shuffle(order.begin(), order.end(), shuffle);
    const auto bs = detail::batches(order, cfg.batch_size);
    detail::Accumulator acc;
    for (std::size_t bi = 0; bi < bs.size(); ++bi) {
      acc.add(
        detail::guarded(epoch, bi + 1, [&] { return step(bs[bi], epoch, bi + 1, true, noise); }),
        static_cast<double>(bs[bi].size()));
    }
    record(epoch, scheduled_lr(cfg.lr0, epoch - 1, cfg.lr_decay, cfg.decay_every), acc);
  }
  return res;
}

}  // namespace stcn

#endif  // STCN__TRAINING_HPP_
