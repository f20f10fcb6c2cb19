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

#ifndef STCN__MOTION_HPP_
#define STCN__MOTION_HPP_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stcn/parameters.hpp"
#include "stcn/random.hpp"
#include "stcn/tensor.hpp"

namespace stcn
{

/// Frames of V x C joint coordinates, flattened frame-major.
struct MotionSequence
{
  std::size_t joints = 16;
  std::size_t coords = 3;
  double frame_rate = 25.0;
  std::vector<double> data;

  std::size_t frame_dim() const { return joints * coords; }
  std::size_t frames() const { return frame_dim() == 0 ? 0 : data.size() / frame_dim(); }

  std::span<const double> frame(std::size_t f) const
  {
    return std::span<const double>(data).subspan(f * frame_dim(), frame_dim());
  }

  /// [frames x V*C]
  Tensor as_tensor() const { return Tensor({frames(), frame_dim()}, data); }

  void validate() const
  {
    if (joints == 0 || coords == 0) throw std::invalid_argument("motion needs V, C >= 1");
    if (data.empty() || data.size() % frame_dim() != 0) {
      throw std::invalid_argument("motion payload is not a whole number of V x C frames");
    }
    for (double x : data) {
      if (!std::isfinite(x)) throw std::invalid_argument("non-finite joint coordinate");
    }
  }

  bool operator==(const MotionSequence &) const = default;
};

enum class Split : std::uint8_t { Train = 0, Test = 1 };

struct LabeledSequence
{
  MotionSequence motion;
  std::size_t label = 0;
  Split split = Split::Train;

  bool operator==(const LabeledSequence &) const = default;
};

/// Per-coordinate affine map to zero mean and unit variance.
struct Normalization
{
  std::vector<double> mean;
  std::vector<double> stddev;

  bool empty() const { return mean.empty(); }

  void apply(std::span<double> frames) const
  {
    const std::size_t d = mean.size();
    for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = (frames[i] - mean[i % d]) / stddev[i % d];
  }

  void invert(std::span<double> frames) const
  {
    const std::size_t d = mean.size();
    for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = frames[i] * stddev[i % d] + mean[i % d];
  }

  bool operator==(const Normalization &) const = default;
};

struct Dataset
{
  std::size_t joints = 16;
  std::size_t coords = 3;
  std::size_t pattern_count = 1;
  double frame_rate = 25.0;
  std::vector<LabeledSequence> sequences;
  Normalization norm;

  std::size_t frame_dim() const { return joints * coords; }

  std::vector<std::size_t> indices(Split s) const
  {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < sequences.size(); ++i) {
      if (sequences[i].split == s) out.push_back(i);
    }
    return out;
  }

  bool operator==(const Dataset &) const = default;
};

/// Statistics over the frames of the training split.
inline Normalization compute_normalization(const Dataset & ds)
{
  const std::size_t d = ds.frame_dim();
  Normalization n{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  double count = 0.0;
  for (auto i : ds.indices(Split::Train)) {
    const auto & m = ds.sequences[i].motion;
    for (std::size_t k = 0; k < m.data.size(); ++k) n.mean[k % d] += m.data[k];
    count += static_cast<double>(m.frames());
  }
  if (count == 0.0) throw std::invalid_argument("normalization needs a non-empty training split");
  for (auto & v : n.mean) v /= count;
  for (auto i : ds.indices(Split::Train)) {
    const auto & m = ds.sequences[i].motion;
    for (std::size_t k = 0; k < m.data.size(); ++k) {
      const double e = m.data[k] - n.mean[k % d];
      n.stddev[k % d] += e * e;
    }
  }
  for (auto & v : n.stddev) v = std::max(std::sqrt(v / count), 1e-8);
  return n;
}

// ---------------------------------------------------------------------------
// Synthetic generator.

struct SyntheticConfig
{
  std::size_t pattern_count = 4;
  std::size_t samples_per_pattern = 50;
  std::size_t observed = 25;   // T
  std::size_t horizon = 100;   // H
  std::size_t joints = 16;
  std::size_t coords = 3;
  double frame_rate = 25.0;
  double jitter_scale = 0.05;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const
  {
    if (pattern_count == 0) throw std::invalid_argument("pattern_count must be >= 1");
    if (samples_per_pattern == 0) throw std::invalid_argument("samples_per_pattern must be >= 1");
    if (observed == 0 || horizon == 0) throw std::invalid_argument("observed and horizon frames must be >= 1");
    if (joints == 0 || coords == 0) throw std::invalid_argument("joints and coords must be >= 1");
    if (!(frame_rate > 0.0)) throw std::invalid_argument("frame_rate must be > 0");
    if (!(jitter_scale >= 0.0)) throw std::invalid_argument("jitter_scale must be >= 0");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
      throw std::invalid_argument("test_fraction must be in [0, 1)");
    }
  }
};

/**
 * @brief Multi-pattern skeleton motion.
 *
 * Pattern k moves every coordinate along its own sinusoid around a shared
 * rest pose b, with a pattern-wide frequency w_k and per-coordinate
 * amplitudes A_k and phases phi_k:
 *
 *   x(t) = b + A_k (1 + da) sin(w_k t + phi_k + dp)
 *
 * The amplitude and phase jitter da, dp are drawn per sample from
 * N(0, jitter_scale^2). Amplitudes scale with 1/sqrt(V*C) so a frame has
 * norm of order one.
 */
inline Dataset generate_synthetic(const SyntheticConfig & cfg)
{
  cfg.validate();
  const std::size_t d = cfg.joints * cfg.coords;
  const double tau = 2.0 * std::numbers::pi;
  const double amp = 1.0 / std::sqrt(static_cast<double>(d));

  Rng prng(derive_seed(cfg.seed, "synthetic.patterns"));
  std::vector<double> rest(d);
  for (auto & r : rest) r = uniform(prng, -1.0, 1.0);
  std::vector<double> freq(cfg.pattern_count);
  std::vector<std::vector<double>> pamp(cfg.pattern_count, std::vector<double>(d));
  std::vector<std::vector<double>> pphase(cfg.pattern_count, std::vector<double>(d));
  for (std::size_t k = 0; k < cfg.pattern_count; ++k) {
    freq[k] = tau * uniform(prng, 0.4, 1.2);
    for (std::size_t i = 0; i < d; ++i) {
      pamp[k][i] = 2.0 * amp * uniform(prng, 0.5, 1.5);
      pphase[k][i] = uniform(prng, 0.0, tau);
    }
  }

  Dataset ds;
  ds.joints = cfg.joints;
  ds.coords = cfg.coords;
  ds.pattern_count = cfg.pattern_count;
  ds.frame_rate = cfg.frame_rate;

  Rng srng(derive_seed(cfg.seed, "synthetic.samples"));
  const std::size_t frames = cfg.observed + cfg.horizon;
  const auto n_test = static_cast<std::size_t>(std::round(cfg.test_fraction * cfg.samples_per_pattern));
  for (std::size_t k = 0; k < cfg.pattern_count; ++k) {
    for (std::size_t s = 0; s < cfg.samples_per_pattern; ++s) {
      const double da = cfg.jitter_scale * normal(srng), dp = cfg.jitter_scale * normal(srng);
      LabeledSequence seq;
      seq.label = k;
      seq.split = s >= cfg.samples_per_pattern - n_test ? Split::Test : Split::Train;
      seq.motion = MotionSequence{cfg.joints, cfg.coords, cfg.frame_rate, std::vector<double>(frames * d)};
      for (std::size_t f = 0; f < frames; ++f) {
        const double t = static_cast<double>(f) / cfg.frame_rate;
        for (std::size_t i = 0; i < d; ++i) {
          seq.motion.data[f * d + i] = rest[i] + pamp[k][i] * (1.0 + da) * std::sin(freq[k] * t + pphase[k][i] + dp);
        }
      }
      ds.sequences.push_back(std::move(seq));
    }
  }
  ds.norm = compute_normalization(ds);
  return ds;
}

/// X = first T frames, Y = the next H frames.
inline std::pair<MotionSequence, MotionSequence> split_observed_future(
  const MotionSequence & seq, std::size_t T, std::size_t H)
{
  if (T == 0 || H == 0) throw std::invalid_argument("T and H must be >= 1");
  if (seq.frames() < T + H) {
    throw std::invalid_argument(
      "sequence has " + std::to_string(seq.frames()) + " frames; " + std::to_string(T + H) +
      " required (T + H)");
  }
  const std::size_t d = seq.frame_dim();
  MotionSequence x{seq.joints, seq.coords, seq.frame_rate, {}};
  MotionSequence y = x;
  x.data.assign(seq.data.begin(), seq.data.begin() + static_cast<std::ptrdiff_t>(T * d));
  y.data.assign(
    seq.data.begin() + static_cast<std::ptrdiff_t>(T * d),
    seq.data.begin() + static_cast<std::ptrdiff_t>((T + H) * d));
  return {std::move(x), std::move(y)};
}

/**
 * Frames [begin, begin + count) of the listed sequences, optionally
 * normalized, as a [batch x count x V*C] tensor.
 */
inline Tensor batch_frames(
  const Dataset & ds, std::span<const std::size_t> which, std::size_t begin, std::size_t count,
  bool normalize)
{
  const std::size_t d = ds.frame_dim();
  std::vector<double> out;
  out.reserve(which.size() * count * d);
  for (auto i : which) {
    const auto & m = ds.sequences.at(i).motion;
    if (m.frames() < begin + count) {
      throw std::invalid_argument(
        "sequence " + std::to_string(i) + " has " + std::to_string(m.frames()) + " frames; " +
        std::to_string(begin + count) + " required");
    }
    out.insert(
      out.end(), m.data.begin() + static_cast<std::ptrdiff_t>(begin * d),
      m.data.begin() + static_cast<std::ptrdiff_t>((begin + count) * d));
  }
  if (normalize && !ds.norm.empty()) ds.norm.apply(out);
  return Tensor({which.size(), count, d}, std::move(out));
}

// ---------------------------------------------------------------------------
// Binary format.
//
//   "STCM" | u32 version | u32 V | u32 C | u32 pattern_count | f64 frame_rate
//   | u64 sequence_count | u8 has_norm | [f64 mean[V*C] | f64 std[V*C]]
//   | per sequence: u64 frames | u32 label | u8 split | f64 payload[frames*V*C]

inline constexpr std::uint32_t kDatasetVersion = 1;

class DatasetError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class UnrecognizedFormatError : public DatasetError
{
public:
  using DatasetError::DatasetError;
};

class DimensionMismatchError : public DatasetError
{
public:
  using DatasetError::DatasetError;
};

class TruncatedPayloadError : public DatasetError
{
public:
  using DatasetError::DatasetError;
};

inline void write_dataset(std::ostream & os, const Dataset & ds)
{
  os.write("STCM", 4);
  detail::put<std::uint32_t>(os, kDatasetVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.joints));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.coords));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.pattern_count));
  detail::put<double>(os, ds.frame_rate);
  detail::put<std::uint64_t>(os, ds.sequences.size());
  detail::put<std::uint8_t>(os, ds.norm.empty() ? 0 : 1);
  auto put_doubles = [&](const std::vector<double> & v) {
    os.write(reinterpret_cast<const char *>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  };
  if (!ds.norm.empty()) {
    put_doubles(ds.norm.mean);
    put_doubles(ds.norm.stddev);
  }
  for (const auto & s : ds.sequences) {
    detail::put<std::uint64_t>(os, s.motion.frames());
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(s.label));
    detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(s.split));
    put_doubles(s.motion.data);
  }
}

inline Dataset read_dataset(std::istream & is)
{
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() != 4 || std::string(magic, 4) != "STCM") {
    throw UnrecognizedFormatError("unrecognized format: missing STCM magic");
  }
  auto need = [&](auto & v, const char * what) {
    if (!detail::get(is, v)) throw TruncatedPayloadError(std::string("truncated payload: ") + what);
  };
  auto read_doubles = [&](std::vector<double> & v, const std::string & what) {
    const auto bytes = static_cast<std::streamsize>(v.size() * sizeof(double));
    is.read(reinterpret_cast<char *>(v.data()), bytes);
    if (is.gcount() != bytes) throw TruncatedPayloadError("truncated payload: " + what);
  };
  std::uint32_t version = 0, joints = 0, coords = 0, patterns = 0;
  need(version, "header");
  if (version != kDatasetVersion) {
    throw UnrecognizedFormatError("unrecognized format: dataset version " + std::to_string(version));
  }
  need(joints, "header");
  need(coords, "header");
  need(patterns, "header");
  Dataset ds;
  need(ds.frame_rate, "header");
  std::uint64_t count = 0;
  need(count, "header");
  std::uint8_t has_norm = 0;
  need(has_norm, "header");
  if (joints == 0 || coords == 0 || patterns == 0) {
    throw DimensionMismatchError("dimension mismatch: V, C and pattern count must be >= 1");
  }
  if (has_norm > 1) throw UnrecognizedFormatError("unrecognized format: bad normalization flag");
  ds.joints = joints;
  ds.coords = coords;
  ds.pattern_count = patterns;
  const std::size_t d = ds.frame_dim();
  if (has_norm) {
    ds.norm.mean.resize(d);
    ds.norm.stddev.resize(d);
    read_doubles(ds.norm.mean, "normalization");
    read_doubles(ds.norm.stddev, "normalization");
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint64_t frames = 0;
    std::uint32_t label = 0;
    std::uint8_t split = 0;
    const std::string what = "sequence " + std::to_string(i);
    need(frames, what.c_str());
    need(label, what.c_str());
    need(split, what.c_str());
    if (frames == 0) throw DimensionMismatchError("dimension mismatch: " + what + " has no frames");
    if (label >= patterns) {
      throw DimensionMismatchError(
        "dimension mismatch: " + what + " label " + std::to_string(label) + " >= pattern count " +
        std::to_string(patterns));
    }
    if (split > 1) throw UnrecognizedFormatError("unrecognized format: bad split tag in " + what);
    LabeledSequence s;
    s.label = label;
    s.split = static_cast<Split>(split);
    s.motion = MotionSequence{joints, coords, ds.frame_rate, std::vector<double>(frames * d)};
    read_doubles(s.motion.data, what);
    ds.sequences.push_back(std::move(s));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw DimensionMismatchError("dimension mismatch: trailing bytes after declared sequences");
  }
  return ds;
}

inline void save_dataset(const Dataset & ds, const std::filesystem::path & path)
{
  detail::write_atomically(path, [&](std::ostream & os) { write_dataset(os, ds); });
}

inline Dataset load_dataset(const std::filesystem::path & path)
{
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DatasetError("cannot open dataset '" + path.string() + "'");
  return read_dataset(is);
}

/// One row per frame: sample_id, pattern, frame, then V*C coordinates.
inline void export_csv(const Dataset & ds, std::ostream & os)
{
  static const char axes[] = {'x', 'y', 'z'};
  os << "sample_id,pattern,frame";
  for (std::size_t j = 0; j < ds.joints; ++j) {
    for (std::size_t c = 0; c < ds.coords; ++c) {
      os << ",j" << j << '_';
      if (c < 3) os << axes[c];
      else os << 'c' << c;
    }
  }
  os << '\n';
  const auto old = os.precision(17);
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
    const auto & s = ds.sequences[i];
    for (std::size_t f = 0; f < s.motion.frames(); ++f) {
      os << i << ',' << s.label << ',' << f;
      for (double x : s.motion.frame(f)) os << ',' << x;
      os << '\n';
    }
  }
  os.precision(old);
}

}  // namespace stcn

#endif  // STCN__MOTION_HPP_
