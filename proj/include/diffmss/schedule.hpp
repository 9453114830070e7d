// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "diffmss/tensor.hpp"

namespace diffmss {

/// Convention for the leading coefficient of the reverse-process mean.
/// `kPaper` uses 1/sqrt(alpha_bar_t); `kDdpm` the textbook 1/sqrt(alpha_t).
enum class PosteriorMeanConvention { kPaper, kDdpm };

/// Precomputed linear noise schedule over steps t = 1..T (1-indexed API).
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;           // beta_t
  std::vector<double> alphas;          // 1 - beta_t
  std::vector<double> alpha_bars;      // prod_{i<=t} alpha_i
  std::vector<double> posterior_vars;  // (1-abar_{t-1})/(1-abar_t) * beta_t, abar_0 := 1

  double beta(int t) const { return betas[static_cast<size_t>(t - 1)]; }
  double alpha(int t) const { return alphas[static_cast<size_t>(t - 1)]; }
  double alpha_bar(int t) const { return alpha_bars[static_cast<size_t>(t - 1)]; }
  // alpha_bar with the abar_0 := 1 convention, valid for t = 0..T.
  double alpha_bar0(int t) const { return t == 0 ? 1.0 : alpha_bar(t); }
  double posterior_var(int t) const { return posterior_vars[static_cast<size_t>(t - 1)]; }

  void require_step(int t) const {
    check(t >= 1 && t <= T, "schedule: step out of range [1,T]");
  }
};

inline NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
  check(T >= 1, "make_linear_schedule: T must be >= 1");
  check(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end,
        "make_linear_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.betas.resize(static_cast<size_t>(T));
  s.alphas.resize(static_cast<size_t>(T));
  s.alpha_bars.resize(static_cast<size_t>(T));
  s.posterior_vars.resize(static_cast<size_t>(T));
  double abar = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double b = (T == 1) ? beta_start
                              : beta_start + (beta_end - beta_start) * (t - 1) / double(T - 1);
    const double abar_prev = abar;
    abar *= 1.0 - b;
    s.betas[t - 1] = b;
    s.alphas[t - 1] = 1.0 - b;
    s.alpha_bars[t - 1] = abar;
    s.posterior_vars[t - 1] = (1.0 - abar_prev) / (1.0 - abar) * b;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Closed-form diffusion arithmetic. All array ops are elementwise and shape
// checked; they work on any scalar type used by the training stack.
// ---------------------------------------------------------------------------

/// x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps  (marginal of the forward chain)
template <class T>
Tensor<T> q_sample(const Tensor<T>& x0, int t, const Tensor<T>& eps, const NoiseSchedule& s) {
  s.require_step(t);
  check(x0.same_shape(eps), "q_sample: x0/eps shape mismatch");
  const double a = std::sqrt(s.alpha_bar(t));
  const double b = std::sqrt(1.0 - s.alpha_bar(t));
  Tensor<T> out(x0.shape);
  for (int64_t i = 0; i < x0.numel(); ++i)
    out[i] = static_cast<T>(a * x0[i] + b * eps[i]);
  return out;
}

/// One Markov step: x_t = sqrt(1-beta_t) x_{t-1} + sqrt(beta_t) eps
template <class T>
Tensor<T> q_step(const Tensor<T>& x_prev, int t, const Tensor<T>& eps, const NoiseSchedule& s) {
  s.require_step(t);
  check(x_prev.same_shape(eps), "q_step: shape mismatch");
  const double a = std::sqrt(1.0 - s.beta(t));
  const double b = std::sqrt(s.beta(t));
  Tensor<T> out(x_prev.shape);
  for (int64_t i = 0; i < x_prev.numel(); ++i)
    out[i] = static_cast<T>(a * x_prev[i] + b * eps[i]);
  return out;
}

/// x0_hat = (x_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t)
template <class T>
Tensor<T> predict_x0(const Tensor<T>& x_t, const Tensor<T>& eps_hat, int t,
                     const NoiseSchedule& s) {
  s.require_step(t);
  check(x_t.same_shape(eps_hat), "predict_x0: shape mismatch");
  const double inv = 1.0 / std::sqrt(s.alpha_bar(t));
  const double c = std::sqrt(1.0 - s.alpha_bar(t));
  Tensor<T> out(x_t.shape);
  for (int64_t i = 0; i < x_t.numel(); ++i)
    out[i] = static_cast<T>((x_t[i] - c * eps_hat[i]) * inv);
  return out;
}

/// Reverse-process mean. The leading coefficient follows the chosen convention.
template <class T>
Tensor<T> posterior_mean(const Tensor<T>& x_t, const Tensor<T>& eps_hat, int t,
                         const NoiseSchedule& s,
                         PosteriorMeanConvention conv = PosteriorMeanConvention::kPaper) {
  s.require_step(t);
  check(x_t.same_shape(eps_hat), "posterior_mean: shape mismatch");
  const double lead = conv == PosteriorMeanConvention::kPaper
                          ? 1.0 / std::sqrt(s.alpha_bar(t))
                          : 1.0 / std::sqrt(s.alpha(t));
  const double c = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
  Tensor<T> out(x_t.shape);
  for (int64_t i = 0; i < x_t.numel(); ++i)
    out[i] = static_cast<T>(lead * (x_t[i] - c * eps_hat[i]));
  return out;
}

/// Evenly spaced strictly-decreasing sampling steps from T down to 1.
/// For S == 1 the single step is T (the chain starts from pure noise).
inline std::vector<int> ddim_subsequence(int T, int S) {
  check(S >= 1 && S <= T, "ddim_subsequence: need 1 <= S <= T");
  std::vector<int> steps(static_cast<size_t>(S));
  if (S == 1) {
    steps[0] = T;
    return steps;
  }
  const double stride = double(T - 1) / double(S - 1);
  for (int k = 0; k < S; ++k)
    steps[static_cast<size_t>(k)] = static_cast<int>(std::llround(T - k * stride));
  return steps;
}

/// Mask {0,1} <-> signal range [-1,1].
template <class T>
Tensor<T> mask_to_signal(const Tensor<T>& m) {
  Tensor<T> out(m.shape);
  for (int64_t i = 0; i < m.numel(); ++i) out[i] = static_cast<T>(2.0 * m[i] - 1.0);
  return out;
}

template <class T>
Tensor<T> signal_to_mask(const Tensor<T>& x) {
  Tensor<T> out(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double v = (static_cast<double>(x[i]) + 1.0) * 0.5;
    out[i] = static_cast<T>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
  }
  return out;
}

}  // namespace diffmss
