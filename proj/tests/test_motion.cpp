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
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stcn/motion.hpp"

namespace stcn
{
namespace
{

namespace fs = std::filesystem;

SyntheticConfig small(std::uint64_t seed = 3)
{
  SyntheticConfig c;
  c.pattern_count = 4;
  c.samples_per_pattern = 50;
  c.observed = 10;
  c.horizon = 20;
  c.frame_rate = 10.0;
  c.seed = seed;
  return c;
}

struct TempDir
{
  TempDir() : path(fs::temp_directory_path() / ("stcn_motion_" + std::to_string(::getpid())))
  {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path path;
};

std::string slurp(const fs::path & p)
{
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

TEST(Synthetic, Shapes)
{
  const auto ds = generate_synthetic(small());
  ASSERT_EQ(ds.sequences.size(), 200u);
  EXPECT_EQ(ds.indices(Split::Test).size(), 40u);
  EXPECT_EQ(ds.indices(Split::Train).size(), 160u);
  for (const auto & s : ds.sequences) {
    EXPECT_EQ(s.motion.frames(), 30u);
    EXPECT_EQ(s.motion.joints, 16u);
    EXPECT_EQ(s.motion.coords, 3u);
    EXPECT_LT(s.label, 4u);
    EXPECT_NO_THROW(s.motion.validate());
  }
}

TEST(Synthetic, Deterministic)
{
  EXPECT_EQ(generate_synthetic(small(9)), generate_synthetic(small(9)));
  EXPECT_NE(generate_synthetic(small(9)).sequences[0], generate_synthetic(small(10)).sequences[0]);
}

TEST(Synthetic, NoJitterMeansIdenticalWithinPattern)
{
  auto c = small();
  c.jitter_scale = 0.0;
  const auto ds = generate_synthetic(c);
  EXPECT_EQ(ds.sequences[0].motion, ds.sequences[1].motion);
  EXPECT_NE(ds.sequences[0].motion, ds.sequences[50].motion);
}

TEST(Synthetic, ZeroPatternsRejected)
{
  auto c = small();
  c.pattern_count = 0;
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
  c = small();
  c.jitter_scale = -1.0;
  EXPECT_THROW(generate_synthetic(c), std::invalid_argument);
}

// Brute-force summary read back from the emitted file.
struct Separation
{
  double min_between = 0.0;
  double rms_within = 0.0;
};

Separation separation(const Dataset & ds, std::size_t H, std::size_t begin)
{
  const std::size_t d = ds.frame_dim();
  std::vector<std::vector<double>> mu(ds.pattern_count, std::vector<double>(H * d, 0.0));
  std::vector<double> n(ds.pattern_count, 0.0);
  for (const auto & s : ds.sequences) {
    n[s.label] += 1.0;
    for (std::size_t i = 0; i < H * d; ++i) mu[s.label][i] += s.motion.data[begin * d + i];
  }
  for (std::size_t k = 0; k < mu.size(); ++k) {
    for (auto & x : mu[k]) x /= n[k];
  }
  Separation out{1e300, 0.0};
  for (const auto & s : ds.sequences) {
    double e = 0.0;
    for (std::size_t i = 0; i < H * d; ++i) {
      const double q = s.motion.data[begin * d + i] - mu[s.label][i];
      e += q * q;
    }
    out.rms_within += e / static_cast<double>(ds.sequences.size());
  }
  out.rms_within = std::sqrt(out.rms_within);
  for (std::size_t a = 0; a < mu.size(); ++a) {
    for (std::size_t b = a + 1; b < mu.size(); ++b) {
      double e = 0.0;
      for (std::size_t i = 0; i < H * d; ++i) e += (mu[a][i] - mu[b][i]) * (mu[a][i] - mu[b][i]);
      out.min_between = std::min(out.min_between, std::sqrt(e));
    }
  }
  return out;
}

TEST(Synthetic, FuturePatternsAreSeparated)
{
  TempDir tmp;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    save_dataset(generate_synthetic(small(seed)), tmp.path / "d.stcm");
    const auto ds = load_dataset(tmp.path / "d.stcm");
    const auto sep = separation(ds, 20, 10);
    EXPECT_GE(sep.min_between, 5.0 * sep.rms_within) << "seed " << seed;
  }
  const auto full = generate_synthetic(SyntheticConfig{});
  const auto sep = separation(full, 100, 25);
  EXPECT_GE(sep.min_between, 5.0 * sep.rms_within);
}

TEST(Synthetic, ObservedSegmentIdentifiesPattern)
{
  const auto ds = generate_synthetic(small());
  const auto obs = separation(ds, 10, 0);
  EXPECT_GE(obs.min_between, 5.0 * obs.rms_within);
}

TEST(Split, Lengths)
{
  MotionSequence m{2, 3, 25.0, std::vector<double>(125 * 6)};
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = static_cast<double>(i);
  auto [x, y] = split_observed_future(m, 25, 100);
  EXPECT_EQ(x.frames(), 25u);
  EXPECT_EQ(y.frames(), 100u);
  EXPECT_EQ(y.data.front(), 150.0);
  m.data.resize(75 * 6);
  auto [x2, y2] = split_observed_future(m, 15, 60);
  EXPECT_EQ(x2.frames(), 15u);
  EXPECT_EQ(y2.frames(), 60u);
  m.data.resize(2 * 6);
  auto [x3, y3] = split_observed_future(m, 1, 1);
  EXPECT_EQ(x3.data, std::vector<double>(m.data.begin(), m.data.begin() + 6));
  EXPECT_EQ(y3.data, std::vector<double>(m.data.begin() + 6, m.data.end()));
}

TEST(Split, TooShortNamesRequiredLength)
{
  MotionSequence m{2, 3, 25.0, std::vector<double>(10 * 6)};
  try {
    split_observed_future(m, 5, 6);
    FAIL();
  } catch (const std::invalid_argument & e) {
    EXPECT_NE(std::string(e.what()).find("11 required"), std::string::npos) << e.what();
  }
}

TEST(Normalization, TrainSplitZeroMeanUnitVariance)
{
  const auto ds = generate_synthetic(small());
  const std::size_t d = ds.frame_dim();
  std::vector<double> s(d, 0.0), s2(d, 0.0);
  double n = 0.0;
  for (auto i : ds.indices(Split::Train)) {
    auto v = ds.sequences[i].motion.data;
    ds.norm.apply(v);
    for (std::size_t k = 0; k < v.size(); ++k) {
      s[k % d] += v[k];
      s2[k % d] += v[k] * v[k];
    }
    n += static_cast<double>(v.size() / d);
  }
  for (std::size_t k = 0; k < d; ++k) {
    EXPECT_NEAR(s[k] / n, 0.0, 1e-10);
    EXPECT_NEAR(s2[k] / n, 1.0, 1e-10);
  }
  auto v = ds.sequences[0].motion.data;
  ds.norm.apply(v);
  ds.norm.invert(v);
  for (std::size_t k = 0; k < v.size(); ++k) EXPECT_NEAR(v[k], ds.sequences[0].motion.data[k], 1e-12);
}

TEST(Batch, FramesAndShapes)
{
  const auto ds = generate_synthetic(small());
  const std::vector<std::size_t> idx{3, 7};
  const auto raw = batch_frames(ds, idx, 10, 20, false);
  EXPECT_EQ(raw.shape(), (Shape{2, 20, 48}));
  EXPECT_EQ(raw[0], ds.sequences[3].motion.data[10 * 48]);
  EXPECT_EQ(raw[20 * 48], ds.sequences[7].motion.data[10 * 48]);
  const auto nrm = batch_frames(ds, idx, 0, 10, true);
  EXPECT_DOUBLE_EQ(nrm[5], (ds.sequences[3].motion.data[5] - ds.norm.mean[5]) / ds.norm.stddev[5]);
  EXPECT_THROW(batch_frames(ds, idx, 25, 10, false), std::invalid_argument);
}

TEST(Format, RoundTripIsBitExact)
{
  TempDir tmp;
  const auto ds = generate_synthetic(small());
  save_dataset(ds, tmp.path / "a.stcm");
  const auto back = load_dataset(tmp.path / "a.stcm");
  EXPECT_EQ(back, ds);
  save_dataset(back, tmp.path / "b.stcm");
  EXPECT_EQ(slurp(tmp.path / "a.stcm"), slurp(tmp.path / "b.stcm"));
  EXPECT_FALSE(fs::exists(tmp.path / "a.stcm.tmp"));
}

TEST(Format, DistinctErrors)
{
  std::stringstream good;
  write_dataset(good, generate_synthetic(small()));
  const std::string bytes = good.str();

  std::istringstream wrong("XXXX" + bytes.substr(4));
  EXPECT_THROW(read_dataset(wrong), UnrecognizedFormatError);
  try {
    std::istringstream again("XXXX" + bytes.substr(4));
    read_dataset(again);
  } catch (const DatasetError & e) {
    EXPECT_NE(std::string(e.what()).find("unrecognized format"), std::string::npos);
  }

  std::istringstream cut(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_dataset(cut), TruncatedPayloadError);

  std::istringstream extra(bytes + "tail");
  EXPECT_THROW(read_dataset(extra), DimensionMismatchError);

  std::string zero_v = bytes;
  std::uint32_t z = 0;
  std::memcpy(zero_v.data() + 8, &z, 4);
  std::istringstream zv(zero_v);
  EXPECT_THROW(read_dataset(zv), DimensionMismatchError);

  std::string bad_label = bytes;
  // First sequence record follows the fixed header and the two stats vectors.
  const std::size_t rec = 4 + 4 * 4 + 8 + 8 + 1 + 2 * 48 * 8;
  const std::uint32_t label = 99;
  std::memcpy(bad_label.data() + rec + 8, &label, 4);
  std::istringstream bl(bad_label);
  EXPECT_THROW(read_dataset(bl), DimensionMismatchError);
}

TEST(Format, CsvRows)
{
  auto c = small();
  c.samples_per_pattern = 2;
  c.pattern_count = 2;
  const auto ds = generate_synthetic(c);
  std::ostringstream os;
  export_csv(ds, os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line.rfind("sample_id,pattern,frame,j0_x,j0_y,j0_z,j1_x", 0), 0u);
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 2 + 48);
  }
  EXPECT_EQ(rows, 4u * 30u);
  std::istringstream first(os.str());
  std::getline(first, line);
  std::getline(first, line);
  std::vector<double> vals;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
  EXPECT_EQ(vals[3], ds.sequences[0].motion.data[0]);
}

}  // namespace
}  // namespace stcn
