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

#ifndef STCN__PARAMETERS_HPP_
#define STCN__PARAMETERS_HPP_

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "stcn/graph.hpp"

namespace stcn
{

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

/// Named tensors, ordered by name.
class ParameterSet
{
public:
  void set(const std::string & name, Tensor value) { values_[name] = std::move(value); }

  const Tensor & get(const std::string & name) const
  {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("missing parameter '" + name + "'");
    return it->second;
  }

  Tensor & get_mutable(const std::string & name)
  {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("missing parameter '" + name + "'");
    return it->second;
  }

  bool contains(const std::string & name) const { return values_.count(name) != 0; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  const std::map<std::string, Tensor> & items() const { return values_; }

  /// Entries whose name starts with `prefix`.
  ParameterSet with_prefix(const std::string & prefix) const
  {
    ParameterSet out;
    for (const auto & [k, v] : values_) {
      if (k.rfind(prefix, 0) == 0) out.set(k, v);
    }
    return out;
  }

  void merge(const ParameterSet & other)
  {
    for (const auto & [k, v] : other.values_) values_[k] = v;
  }

  bool operator==(const ParameterSet & o) const { return values_ == o.values_; }

private:
  std::map<std::string, Tensor> values_;
};

/**
 * @brief Lazily exposes ParameterSet entries as graph leaves.
 *
 * Each name is bound once per graph. Names under a frozen prefix become
 * constants and receive no gradient.
 */
class Binder
{
public:
  Binder(Graph & graph, const ParameterSet & params, std::vector<std::string> frozen = {})
  : graph_(graph), params_(params), frozen_(std::move(frozen))
  {
  }

  Var operator()(const std::string & name)
  {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const Tensor & value = params_.get(name);
    Var v = is_frozen(name) ? graph_.constant(value) : graph_.parameter(name, value);
    bound_.emplace(name, v);
    return v;
  }

  Graph & graph() { return graph_; }

private:
  bool is_frozen(const std::string & name) const
  {
    for (const auto & p : frozen_) {
      if (name.rfind(p, 0) == 0) return true;
    }
    return false;
  }

  Graph & graph_;
  const ParameterSet & params_;
  std::vector<std::string> frozen_;
  std::map<std::string, Var> bound_;
};

class CheckpointError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

// Checkpoint layout (little-endian):
//   "STCN" | u32 version | records until EOF
//   record: u32 name_len | name bytes | u32 rank | u64 dims[rank] | f64 payload
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail
{

template <class T>
void put(std::ostream & os, T v)
{
  os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <class T>
bool get(std::istream & is, T & v)
{
  is.read(reinterpret_cast<char *>(&v), sizeof(T));
  return static_cast<std::size_t>(is.gcount()) == sizeof(T);
}

/// Write to a sibling temp file, then rename over the destination.
template <class Fn>
void write_atomically(const std::filesystem::path & path, Fn && body)
{
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    body(os);
    os.flush();
    if (!os) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline void write_checkpoint(std::ostream & os, const ParameterSet & params)
{
  os.write("STCN", 4);
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  for (const auto & [name, t] : params.items()) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put<std::uint64_t>(os, d);
    os.write(
      reinterpret_cast<const char *>(t.data().data()),
      static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
}

inline ParameterSet read_checkpoint(std::istream & is)
{
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() != 4 || std::string(magic, 4) != "STCN") {
    throw CheckpointError("unrecognized format: missing STCN magic");
  }
  std::uint32_t version = 0;
  if (!detail::get(is, version)) throw CheckpointError("truncated checkpoint header");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  ParameterSet out;
  while (true) {
    std::uint32_t name_len = 0;
    is.read(reinterpret_cast<char *>(&name_len), sizeof(name_len));
    if (is.gcount() == 0) break;
    if (is.gcount() != sizeof(name_len)) throw CheckpointError("truncated record header");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    std::uint32_t rank = 0;
    if (static_cast<std::uint32_t>(is.gcount()) != name_len || !detail::get(is, rank)) {
      throw CheckpointError("truncated record '" + name + "'");
    }
    Shape shape(rank);
    for (auto & d : shape) {
      std::uint64_t v = 0;
      if (!detail::get(is, v)) throw CheckpointError("truncated dims for '" + name + "'");
      d = static_cast<std::size_t>(v);
    }
    std::vector<double> data(shape_size(shape));
    const auto bytes = static_cast<std::streamsize>(data.size() * sizeof(double));
    is.read(reinterpret_cast<char *>(data.data()), bytes);
    if (is.gcount() != bytes) throw CheckpointError("truncated payload for '" + name + "'");
    out.set(name, Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

inline void save_checkpoint(const std::filesystem::path & path, const ParameterSet & params)
{
  detail::write_atomically(path, [&](std::ostream & os) { write_checkpoint(os, params); });
}

inline ParameterSet load_checkpoint(const std::filesystem::path & path)
{
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(is);
}

}  // namespace stcn

#endif  // STCN__PARAMETERS_HPP_
