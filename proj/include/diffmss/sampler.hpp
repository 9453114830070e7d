// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "diffmss/diffusion_core.hpp"

namespace diffmss {

enum class BinarizeMode { kPerPredictionMean, kGlobalHalf, kStackMean };
enum class UpdateRule { kDdim, kPosterior };

struct SamplerOptions {
  int steps = 10;  // S
  double phi = 0.5;
  bool use_cds = true;
  BinarizeMode binarize = BinarizeMode::kPerPredictionMean;
  UpdateRule update = UpdateRule::kDdim;
  PosteriorMeanConvention mean_convention = PosteriorMeanConvention::kPaper;
  uint64_t seed = 0;
};

/// The S per-step x0 predictions, their binarizations, the floored vote mask
/// and the fused output. With consensus disabled, `fused` is the final-step
/// prediction alone.
struct EnsembleResult {
  std::vector<int> step_indices;              // visited t values, descending
  std::vector<Tensor<double>> per_step_preds; // P_t in [0,1]
  std::vector<Tensor<double>> binarized;      // P_t^b
  Tensor<double> vote_mask;
  Tensor<double> fused;                       // M_pre
};

namespace detail {
inline double binarize_threshold(const Tensor<double>& p, BinarizeMode mode, double stack_mean) {
  switch (mode) {
    case BinarizeMode::kGlobalHalf:
      return 0.5;
    case BinarizeMode::kStackMean:
      return stack_mean;
    case BinarizeMode::kPerPredictionMean:
    default: {
      double m = 0.0;
      for (double v : p.d) m += v;
      return m / static_cast<double>(p.numel());
    }
  }
}
}  // namespace detail

/// Consensus fusion of per-step predictions: each prediction is binarized
/// (strictly above its threshold, so a constant map binarizes to zeros), the
/// binary maps vote through floor(mean + phi), and surviving pixels carry the
/// min-max normalized mean prediction.
inline EnsembleResult cds_ensemble(const std::vector<Tensor<double>>& preds, double phi,
                                   BinarizeMode mode = BinarizeMode::kPerPredictionMean) {
  check(!preds.empty(), "cds_ensemble: need at least one prediction");
  const int64_t n = preds[0].numel();
  for (const auto& p : preds) check(p.same_shape(preds[0]), "cds_ensemble: shape mismatch");
  EnsembleResult out;
  out.per_step_preds = preds;
  const double s_inv = 1.0 / static_cast<double>(preds.size());

  Tensor<double> mean_pred(preds[0].shape);
  for (const auto& p : preds)
    for (int64_t i = 0; i < n; ++i) mean_pred[i] += p[i] * s_inv;
  double stack_mean = 0.0;
  for (int64_t i = 0; i < n; ++i) stack_mean += mean_pred[i];
  stack_mean /= static_cast<double>(n);

  Tensor<double> vote(preds[0].shape);
  for (const auto& p : preds) {
    const double thr = detail::binarize_threshold(p, mode, stack_mean);
    Tensor<double> b(p.shape);
    for (int64_t i = 0; i < n; ++i) b[i] = p[i] > thr ? 1.0 : 0.0;
    for (int64_t i = 0; i < n; ++i) vote[i] += b[i] * s_inv;
    out.binarized.push_back(std::move(b));
  }
  out.vote_mask = Tensor<double>(preds[0].shape);
  for (int64_t i = 0; i < n; ++i)
    out.vote_mask[i] = std::floor(vote[i] + phi);

  double lo = mean_pred[0], hi = mean_pred[0];
  for (int64_t i = 0; i < n; ++i) {
    lo = std::min(lo, mean_pred[i]);
    hi = std::max(hi, mean_pred[i]);
  }
  Tensor<double> norm(mean_pred.shape);
  if (hi - lo > 0.0)
    for (int64_t i = 0; i < n; ++i) norm[i] = (mean_pred[i] - lo) / (hi - lo);
  out.fused = Tensor<double>(mean_pred.shape);
  for (int64_t i = 0; i < n; ++i) out.fused[i] = out.vote_mask[i] * norm[i];
  return out;
}

/// Deterministic short-schedule reverse diffusion from pure noise; the
/// condition network is re-run at every visited step with the current x_t.
/// Image-only input: no caption or reference mask is consumed.
template <class T>
EnsembleResult sample_mask(const DiffmssModel<T>& model, const Tensor<T>& image,
                           const NoiseSchedule& sched, const SamplerOptions& opt) {
  check(opt.steps >= 1 && opt.steps <= sched.T, "sample_mask: need 1 <= S <= T");
  if (!model.params.values_finite())
    throw NumericalError("sample_mask: model weights contain NaN/Inf");
  const int h = image.dim(1), w = image.dim(2);
  RandomStream rng(opt.seed);
  Tensor<T> x({1, h, w});
  rng.fill_normal(x);

  const std::vector<int> steps = ddim_subsequence(sched.T, opt.steps);
  EnsembleResult out;
  out.step_indices = steps;
  for (size_t k = 0; k < steps.size(); ++k) {
    const int t = steps[k];
    nn::Tape<T> tp;
    tp.grad_enabled = false;
    const ConditionStack stack = model.cfln.forward(tp, model.params, image, x, t);
    const int eps_hat_id = model.denoiser.forward(tp, model.params, tp.constant(x), stack, t);
    const Tensor<T>& eps_hat = tp.val(eps_hat_id);
    for (const T& v : eps_hat.d)
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericalError("sample_mask: non-finite noise prediction at t=" + std::to_string(t));

    const Tensor<T> x0_hat = predict_x0(x, eps_hat, t, sched);
    out.per_step_preds.push_back(signal_to_mask(x0_hat).template cast<double>());

    if (k + 1 < steps.size()) {
      const int t_prev = steps[k + 1];
      if (opt.update == UpdateRule::kDdim) {
        const double a = std::sqrt(sched.alpha_bar(t_prev));
        const double b = std::sqrt(1.0 - sched.alpha_bar(t_prev));
        for (int64_t i = 0; i < x.numel(); ++i)
          x[i] = static_cast<T>(a * x0_hat[i] + b * eps_hat[i]);
      } else {
        Tensor<T> mu = posterior_mean(x, eps_hat, t, sched, opt.mean_convention);
        const double sd = std::sqrt(sched.posterior_var(t));
        for (int64_t i = 0; i < x.numel(); ++i)
          x[i] = static_cast<T>(mu[i] + sd * rng.normal());
      }
    }
  }
  if (opt.use_cds) {
    EnsembleResult fusedr = cds_ensemble(out.per_step_preds, opt.phi, opt.binarize);
    fusedr.step_indices = out.step_indices;
    return fusedr;
  }
  out.fused = out.per_step_preds.back();
  return out;
}

}  // namespace diffmss
