// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "diffmss/random.hpp"
#include "diffmss/tensor.hpp"

namespace diffmss::nn {

/// Named trainable tensors plus Adam state. Registration order is fixed and
/// is the serialization order of checkpoints.
template <class T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    Tensor<T> m;  // Adam first moment
    Tensor<T> v;  // Adam second moment
  };

  int add(const std::string& name, Tensor<T> init) {
    check(!index_.count(name), "duplicate parameter: " + name);
    const int idx = static_cast<int>(entries_.size());
    Entry e;
    e.name = name;
    e.m = Tensor<T>(init.shape);
    e.v = Tensor<T>(init.shape);
    e.value = std::move(init);
    entries_.push_back(std::move(e));
    index_[name] = idx;
    return idx;
  }

  int size() const { return static_cast<int>(entries_.size()); }
  Entry& entry(int i) { return entries_[static_cast<size_t>(i)]; }
  const Entry& entry(int i) const { return entries_[static_cast<size_t>(i)]; }
  const Tensor<T>& value(int i) const { return entries_[static_cast<size_t>(i)].value; }
  Tensor<T>& value(int i) { return entries_[static_cast<size_t>(i)].value; }

  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const Entry& e : entries_) n += e.value.numel();
    return n;
  }

  std::vector<Tensor<T>> make_grad_sink() const {
    return std::vector<Tensor<T>>(entries_.size());
  }

  bool values_finite() const {
    for (const Entry& e : entries_)
      for (const T& x : e.value.d)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

// -- initializers -----------------------------------------------------------

template <class T>
Tensor<T> he_normal(std::vector<int> shape, int fan_in, RandomStream& rng) {
  Tensor<T> t(std::move(shape));
  rng.fill_normal(t, 0.0, std::sqrt(2.0 / fan_in));
  return t;
}

template <class T>
Tensor<T> xavier_normal(std::vector<int> shape, int fan_in, int fan_out, RandomStream& rng) {
  Tensor<T> t(std::move(shape));
  rng.fill_normal(t, 0.0, std::sqrt(2.0 / (fan_in + fan_out)));
  return t;
}

template <class T>
Tensor<T> small_normal(std::vector<int> shape, double stddev, RandomStream& rng) {
  Tensor<T> t(std::move(shape));
  rng.fill_normal(t, 0.0, stddev);
  return t;
}

// -- optimizer --------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables
};

/// One Adam update over all parameters. `grads` is consumed (zeroed) so the
/// sink can be reused; missing (empty) grads are treated as zero.
template <class T>
void adam_step(ParamStore<T>& store, std::vector<Tensor<T>>& grads, const AdamConfig& cfg,
               int64_t step) {
  double scale = 1.0;
  if (cfg.grad_clip > 0.0) {
    double sq = 0.0;
    for (int i = 0; i < store.size(); ++i) {
      const Tensor<T>& g = grads[static_cast<size_t>(i)];
      for (int64_t j = 0; j < g.numel(); ++j) sq += static_cast<double>(g[j]) * g[j];
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) scale = cfg.grad_clip / norm;
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (int i = 0; i < store.size(); ++i) {
    auto& e = store.entry(i);
    Tensor<T>& g = grads[static_cast<size_t>(i)];
    if (g.empty()) continue;
    for (int64_t j = 0; j < g.numel(); ++j) {
      const double gj = static_cast<double>(g[j]) * scale;
      const double m = cfg.beta1 * e.m[j] + (1.0 - cfg.beta1) * gj;
      const double v = cfg.beta2 * e.v[j] + (1.0 - cfg.beta2) * gj * gj;
      e.m[j] = static_cast<T>(m);
      e.v[j] = static_cast<T>(v);
      e.value[j] -= static_cast<T>(cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps));
    }
    g.fill(T(0));
  }
}

}  // namespace diffmss::nn
