#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "chimle/errors.hpp"

namespace chimle {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major n-d array. `grad` stays empty until something accumulates into it.
template <typename T>
struct BasicTensor {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<T> grad;

  BasicTensor() = default;

  explicit BasicTensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_numel(shape), fill) {}

  BasicTensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_numel(shape)) {
      throw DimensionError("tensor of shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(data.size()));
    }
  }

  static BasicTensor scalar(T v) { return BasicTensor(Shape{}, std::vector<T>{v}); }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  T item() const {
    if (data.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape));
    return data[0];
  }

  void zero_grad() { grad.assign(data.size(), T(0)); }

  void accumulate_grad(const T* g, std::size_t n) {
    if (n != data.size()) throw DimensionError("gradient size mismatch for " + shape_str(shape));
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    for (std::size_t i = 0; i < n; ++i) grad[i] += g[i];
  }

  template <typename U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  bool same_values(const BasicTensor& other) const { return shape == other.shape && data == other.data; }
};

using Tensor = BasicTensor<float>;

}  // namespace chimle
