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

#ifndef STCN__TENSOR_HPP_
#define STCN__TENSOR_HPP_

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace stcn
{

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

inline std::size_t shape_size(const Shape & shape)
{
  return std::accumulate(
    shape.begin(), shape.end(), std::size_t{1}, std::multiplies<std::size_t>());
}

inline std::string shape_str(const Shape & shape)
{
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/**
 * @brief Dense row-major tensor of doubles.
 *
 * A rank-0 tensor (empty shape) is a scalar holding one value. Every
 * dimension of a non-scalar tensor is positive.
 */
class Tensor
{
public:
  Tensor() : data_(1, 0.0) {}

  explicit Tensor(Shape shape) : shape_(std::move(shape))
  {
    check_dims();
    data_.assign(shape_size(shape_), 0.0);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data))
  {
    check_dims();
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError(
        "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
        shape_str(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }

  static Tensor filled(Shape shape, double v)
  {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor vector(std::vector<double> v)
  {
    Shape s{v.size()};
    return Tensor(std::move(s), std::move(v));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v)
  {
    return Tensor(Shape{rows, cols}, std::move(v));
  }

  const Shape & shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<const double> data() const { return data_; }
  std::span<double> mutable_data() { return data_; }
  const std::vector<double> & values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double & operator[](std::size_t i) { return data_[i]; }

  double item() const
  {
    if (data_.size() != 1) {
      throw ShapeError("item() on non-scalar tensor of shape " + shape_str(shape_));
    }
    return data_[0];
  }

  // Row-major element access for rank-2 tensors.
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_.at(1) + c]; }

  bool all_finite() const
  {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  Tensor reshaped(Shape shape) const
  {
    return Tensor(std::move(shape), data_);
  }

  bool operator==(const Tensor & o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
  void check_dims() const
  {
    for (auto d : shape_) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

inline double squared_norm(std::span<const double> v)
{
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b)
{
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace stcn

#endif  // STCN__TENSOR_HPP_
