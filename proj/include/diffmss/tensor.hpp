// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffmss {

/// Dense row-major n-d array. Rank is small (<= 4) and known from context;
/// shape is carried dynamically so one type serves maps (C,H,W), token
/// matrices (L,D), vectors and scalars.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> d;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), d(count(shape), T(0)) {}
  Tensor(std::vector<int> s, T fill) : shape(std::move(s)), d(count(shape), fill) {}

  static int64_t count(const std::vector<int>& s) {
    int64_t n = 1;
    for (int v : s) n *= v;
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(d.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  bool empty() const { return d.empty(); }

  T* data() { return d.data(); }
  const T* data() const { return d.data(); }
  T& operator[](int64_t i) { return d[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return d[static_cast<size_t>(i)]; }

  // (rows, cols)
  T& at(int i, int j) { return d[static_cast<size_t>(i) * shape[1] + j]; }
  const T& at(int i, int j) const { return d[static_cast<size_t>(i) * shape[1] + j]; }
  // (channel, row, col)
  T& at(int c, int h, int w) {
    return d[(static_cast<size_t>(c) * shape[1] + h) * shape[2] + w];
  }
  const T& at(int c, int h, int w) const {
    return d[(static_cast<size_t>(c) * shape[1] + h) * shape[2] + w];
  }

  void fill(T v) { std::fill(d.begin(), d.end(), v); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.d.resize(d.size());
    for (size_t i = 0; i < d.size(); ++i) out.d[i] = static_cast<U>(d[i]);
    return out;
  }
};

template <class T>
std::string shape_str(const Tensor<T>& t) {
  std::string s = "(";
  for (size_t i = 0; i < t.shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(t.shape[i]);
  }
  return s + ")";
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

/// Raised when a computation produces NaN/Inf; the CLI maps it to exit code 3.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace diffmss
