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

#ifndef STCN__RANDOM_HPP_
#define STCN__RANDOM_HPP_

#include <cstdint>
#include <random>
#include <string_view>

#include "stcn/tensor.hpp"

namespace stcn
{

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x)
{
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Independent seed for a named subsystem, derived from one root seed.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag)
{
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return splitmix64(root ^ splitmix64(h));
}

inline double normal(Rng & rng)
{
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

inline double uniform(Rng & rng, double lo, double hi)
{
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(rng);
}

inline Tensor normal_tensor(Shape shape, Rng & rng, double stddev = 1.0)
{
  Tensor t(std::move(shape));
  for (auto & v : t.mutable_data()) v = stddev * normal(rng);
  return t;
}

inline Tensor uniform_tensor(Shape shape, Rng & rng, double lo, double hi)
{
  Tensor t(std::move(shape));
  for (auto & v : t.mutable_data()) v = uniform(rng, lo, hi);
  return t;
}

}  // namespace stcn

#endif  // STCN__RANDOM_HPP_
