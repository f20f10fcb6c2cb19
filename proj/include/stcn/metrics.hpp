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

#ifndef STCN__METRICS_HPP_
#define STCN__METRICS_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "stcn/tensor.hpp"

namespace stcn
{

namespace detail
{

/// Samples [S x f x D]; returns (S, f, D).
inline std::array<std::size_t, 3> sample_dims(const Tensor & samples)
{
  if (samples.rank() != 3) throw ShapeError("samples must be [S x frames x D], got " + shape_str(samples.shape()));
  return {samples.dim(0), samples.dim(1), samples.dim(2)};
}

inline void check_truth(const Tensor & samples, std::span<const double> truth)
{
  const auto [S, f, D] = sample_dims(samples);
  if (truth.size() != f * D) {
    throw ShapeError(
      "ground truth holds " + std::to_string(truth.size()) + " values, samples have " + std::to_string(f) +
      " frames of " + std::to_string(D));
  }
}

}  // namespace detail

/// Mean Frobenius distance over ordered pairs i != j; 0 for a single sample.
inline double apd(const Tensor & samples)
{
  const auto [S, f, D] = detail::sample_dims(samples);
  if (S == 1) return 0.0;
  const std::size_t row = f * D;
  const auto d = samples.data();
  double s = 0.0;
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = i + 1; j < S; ++j) s += std::sqrt(squared_distance(d.subspan(i * row, row), d.subspan(j * row, row)));
  }
  return 2.0 * s / static_cast<double>(S * (S - 1));
}

/// (1/f) min_i ||Y_i - Y*|| over whole sequences.
inline double ade(const Tensor & samples, std::span<const double> truth)
{
  detail::check_truth(samples, truth);
  const auto [S, f, D] = detail::sample_dims(samples);
  const std::size_t row = f * D;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < S; ++i) best = std::min(best, squared_distance(samples.data().subspan(i * row, row), truth));
  return std::sqrt(best) / static_cast<double>(f);
}

/// min_i ||Y_i[f] - Y*[f]|| over last frames.
inline double fde(const Tensor & samples, std::span<const double> truth)
{
  detail::check_truth(samples, truth);
  const auto [S, f, D] = detail::sample_dims(samples);
  const std::size_t row = f * D;
  const auto last = truth.subspan((f - 1) * D, D);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < S; ++i) {
    best = std::min(best, squared_distance(samples.data().subspan(i * row + (f - 1) * D, D), last));
  }
  return std::sqrt(best);
}

/// For each start pose, the indices of all start poses within `threshold` (Euclidean); always contains itself.
inline std::vector<std::vector<std::size_t>> multimodal_groups(
  const std::vector<std::vector<double>> & start_poses, double threshold)
{
  if (!(threshold >= 0.0)) throw std::invalid_argument("multimodal threshold must be >= 0");
  std::vector<std::vector<std::size_t>> groups(start_poses.size());
  for (std::size_t i = 0; i < start_poses.size(); ++i) {
    for (std::size_t j = 0; j < start_poses.size(); ++j) {
      if (j == i || std::sqrt(squared_distance(start_poses[i], start_poses[j])) <= threshold) groups[i].push_back(j);
    }
  }
  return groups;
}

struct MultimodalResult
{
  double mmade = 0.0;
  double mmfde = 0.0;
  double mean_group_size = 0.0;
};

/**
 * Per query, ADE/FDE of its samples against every future in its group,
 * averaged within the group and then over queries.
 */
inline MultimodalResult multimodal_metrics(
  const std::vector<Tensor> & samples, const std::vector<std::vector<double>> & truths,
  const std::vector<std::vector<std::size_t>> & groups)
{
  if (samples.empty() || samples.size() != truths.size() || groups.size() != truths.size()) {
    throw ShapeError("multimodal_metrics needs one sample set, truth and group per query");
  }
  MultimodalResult r;
  for (std::size_t q = 0; q < samples.size(); ++q) {
    if (groups[q].empty()) throw std::invalid_argument("multimodal group is empty");
    double a = 0.0, f = 0.0;
    for (auto g : groups[q]) {
      a += ade(samples[q], truths.at(g));
      f += fde(samples[q], truths.at(g));
    }
    const double k = static_cast<double>(groups[q].size());
    r.mmade += a / k;
    r.mmfde += f / k;
    r.mean_group_size += k;
  }
  const double n = static_cast<double>(samples.size());
  r.mmade /= n;
  r.mmfde /= n;
  r.mean_group_size /= n;
  return r;
}

struct MetricReport
{
  double apd = 0.0;
  double ade = 0.0;
  double fde = 0.0;
  double mmade = 0.0;
  double mmfde = 0.0;
  std::size_t inputs = 0;
  std::size_t samples_per_input = 0;
  std::size_t mm_samples_per_input = 0;
  double mean_group_size = 0.0;

  nlohmann::ordered_json to_json() const
  {
    return {
      {"apd", apd}, {"ade", ade}, {"fde", fde}, {"mmade", mmade}, {"mmfde", mmfde}, {"inputs", inputs},
      {"samples_per_input", samples_per_input}, {"mm_samples_per_input", mm_samples_per_input},
      {"mean_group_size", mean_group_size}};
  }

  static const char * csv_header() { return "APD,ADE,FDE,MMADE,MMFDE"; }

  void write_csv_row(std::ostream & os) const
  {
    const auto old = os.precision(17);
    os << apd << ',' << ade << ',' << fde << ',' << mmade << ',' << mmfde << '\n';
    os.precision(old);
  }
};

}  // namespace stcn

#endif  // STCN__METRICS_HPP_
