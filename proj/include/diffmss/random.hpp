// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "diffmss/tensor.hpp"

namespace diffmss {

/// Deterministic random stream. mt19937_64 has a standard-mandated output
/// sequence; the distributions below are hand-rolled so draws are identical
/// across standard libraries and platforms.
class RandomStream {
 public:
  explicit RandomStream(uint64_t seed) : eng_(seed) {}

  uint64_t raw() { return eng_(); }

  /// Uniform in [0,1) with 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Inclusive integer range.
  int64_t randint(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    // Rejection-free modulo bias is negligible for span << 2^64, but stay exact.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t v = eng_();
    while (v >= limit) v = eng_();
    return lo + static_cast<int64_t>(v % span);
  }

  /// Standard normal via Box-Muller (pair cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <class T>
  void fill_normal(Tensor<T>& t, double mean = 0.0, double stddev = 1.0) {
    for (auto& v : t.d) v = static_cast<T>(normal(mean, stddev));
  }

  template <class T>
  void fill_uniform(Tensor<T>& t, double lo, double hi) {
    for (auto& v : t.d) v = static_cast<T>(uniform(lo, hi));
  }

  /// Derive an independent child stream (e.g. one per sample).
  RandomStream fork(uint64_t salt) {
    return RandomStream(splitmix(eng_() ^ salt));
  }

  static uint64_t splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace diffmss
