#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace gazeracer::nn {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& s);

/// Dense row-major tensor of up to 4 axes. The layout convention is
/// (N, F) for features, (N, C, L) for sequences and (N, C, H, W) for images.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_size(shape), fill) {
    if (shape.empty() || shape.size() > 4) throw std::invalid_argument("tensor: 1 to 4 axes");
  }
  Tensor(std::initializer_list<int> s) : Tensor(Shape(s)) {}

  std::size_t size() const { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }
  int rank() const { return static_cast<int>(shape.size()); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  T& operator[](std::size_t i) { return data[i]; }
  T operator[](std::size_t i) const { return data[i]; }

  /// Elements per leading-axis entry.
  std::size_t stride0() const { return shape.empty() || shape[0] == 0 ? 0 : size() / shape[0]; }

  Tensor reshaped(Shape s) const {
    if (shape_size(s) != size()) {
      throw std::invalid_argument("tensor: cannot reshape " + shape_str(shape) + " to " +
                                  shape_str(s));
    }
    Tensor t;
    t.shape = std::move(s);
    t.data = data;
    return t;
  }
  void zero() { std::fill(data.begin(), data.end(), T(0)); }
  bool finite() const;
};

/// Trainable weight or persistent buffer (batch-norm running statistics).
template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, Shape s, bool train = true)
      : name(std::move(n)), value(s), grad(s), trainable(train) {}
};

/// Converts between precisions (weights trained in float, checked in double).
template <class To, class From>
Tensor<To> cast(const Tensor<From>& t) {
  Tensor<To> out;
  out.shape = t.shape;
  out.data.assign(t.data.begin(), t.data.end());
  return out;
}

}  // namespace gazeracer::nn
