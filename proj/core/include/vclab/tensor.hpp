#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "vclab/common.hpp"
#include "vclab/rng.hpp"

namespace vclab {

// Dense row-major tensor. Image data is kept NHWC so convolution lowers to
// im2col + GEMM with contiguous panels.
template <typename T>
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), T(0));
  }
  Tensor(std::initializer_list<int64_t> s)
      : Tensor(std::vector<int64_t>(s)) {}

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) {
      VCLAB_CHECK_ARG(d >= 0, "negative dimension " << d);
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  T& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
  const T& at(int64_t i, int64_t j) const {
    return data[static_cast<size_t>(i * shape[1] + j)];
  }
  T& at(int64_t i, int64_t j, int64_t k) {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  const T& at(int64_t i, int64_t j, int64_t k) const {
    return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
  }
  T& at(int64_t i, int64_t j, int64_t k, int64_t l) {
    return data[static_cast<size_t>(
        ((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
  }
  const T& at(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return data[static_cast<size_t>(
        ((i * shape[1] + j) * shape[2] + k) * shape[3] + l)];
  }

  void zero() { std::fill(data.begin(), data.end(), T(0)); }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  void fill_normal(Rng& rng, T mean = T(0), T stddev = T(1)) {
    for (auto& x : data) x = static_cast<T>(rng.normal(mean, stddev));
  }

  void fill_uniform(Rng& rng, T lo, T hi) {
    for (auto& x : data) x = static_cast<T>(rng.uniform(lo, hi));
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

template <typename T>
void axpy(T alpha, const Tensor<T>& x, Tensor<T>& y) {
  VCLAB_CHECK_ARG(x.numel() == y.numel(), "axpy size mismatch");
  for (int64_t i = 0; i < x.numel(); ++i) y[i] += alpha * x[i];
}

template <typename T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  VCLAB_CHECK_ARG(a.numel() == b.numel(), "dot size mismatch");
  T s = T(0);
  for (int64_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  VCLAB_CHECK_ARG(a.numel() == b.numel(), "size mismatch");
  T m = T(0);
  for (int64_t i = 0; i < a.numel(); ++i) {
    T d = std::abs(a[i] - b[i]);
    if (d > m) m = d;
  }
  return m;
}

std::string shape_to_string(const std::vector<int64_t>& shape);

}  // namespace vclab
