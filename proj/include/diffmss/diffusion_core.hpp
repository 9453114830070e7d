// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "diffmss/cfln.hpp"
#include "diffmss/schedule.hpp"
#include "diffmss/skd.hpp"

namespace diffmss {

// ---------------------------------------------------------------------------
// Mask losses: boundary-weighted BCE + IoU. The per-pixel weight
// w = 1 + 5*|avgpool_31(g) - g| emphasizes pixels near mask boundaries.
// ---------------------------------------------------------------------------

inline constexpr double kBceClamp = 1e-6;

/// 31x31 zero-padded box average (divisor always 31*31), via integral image.
inline Tensor<double> boundary_weights(const Tensor<double>& g) {
  check(g.ndim() == 2, "boundary_weights: expected (H,W)");
  const int h = g.dim(0), w = g.dim(1), r = 15;
  std::vector<double> integral(static_cast<size_t>(h + 1) * (w + 1), 0.0);
  auto I = [&](int y, int x) -> double& {
    return integral[static_cast<size_t>(y) * (w + 1) + x];
  };
  for (int y = 1; y <= h; ++y)
    for (int x = 1; x <= w; ++x)
      I(y, x) = g.at(y - 1, x - 1) + I(y - 1, x) + I(y, x - 1) - I(y - 1, x - 1);
  Tensor<double> wt({h, w});
  const double inv = 1.0 / (31.0 * 31.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int y0 = std::max(0, y - r), y1 = std::min(h, y + r + 1);
      const int x0 = std::max(0, x - r), x1 = std::min(w, x + r + 1);
      const double avg = (I(y1, x1) - I(y0, x1) - I(y1, x0) + I(y0, x0)) * inv;
      wt.at(y, x) = 1.0 + 5.0 * std::fabs(avg - g.at(y, x));
    }
  return wt;
}

template <class T>
double weighted_bce_value(const Tensor<T>& p, const Tensor<double>& g, const Tensor<double>& w) {
  check(p.numel() == g.numel() && g.numel() == w.numel(), "weighted_bce: shape mismatch");
  double num = 0.0, den = 0.0;
  for (int64_t i = 0; i < p.numel(); ++i) {
    const double pi = std::clamp(static_cast<double>(p[i]), kBceClamp, 1.0 - kBceClamp);
    num += w[i] * (-g[i] * std::log(pi) - (1.0 - g[i]) * std::log(1.0 - pi));
    den += w[i];
  }
  return num / den;
}

template <class T>
double weighted_iou_value(const Tensor<T>& p, const Tensor<double>& g, const Tensor<double>& w) {
  check(p.numel() == g.numel() && g.numel() == w.numel(), "weighted_iou: shape mismatch");
  double inter = 0.0, uni = 0.0;
  for (int64_t i = 0; i < p.numel(); ++i) {
    const double pi = static_cast<double>(p[i]);
    inter += w[i] * pi * g[i];
    uni += w[i] * (pi + g[i] - pi * g[i]);
  }
  return 1.0 - (inter + 1.0) / (uni + 1.0);
}

struct MaskLossValue {
  double bce = 0.0;
  double iou = 0.0;
  double total = 0.0;
};

/// Spec-facing value form: both inputs in [0,1], reference binary.
inline MaskLossValue mask_loss(const Tensor<double>& x0_hat, const Tensor<double>& x0_ref) {
  check(x0_hat.same_shape(x0_ref), "mask_loss: shape mismatch");
  const Tensor<double> w = boundary_weights(x0_ref);
  MaskLossValue out;
  out.bce = weighted_bce_value(x0_hat, x0_ref, w);
  out.iou = weighted_iou_value(x0_hat, x0_ref, w);
  out.total = out.bce + out.iou;
  return out;
}

inline double total_loss(double l_consist, double l_mask, double lambda) {
  return l_consist + lambda * l_mask;
}

// Tape ops; gradients match the value forms above.

template <class T>
int weighted_bce_op(nn::Tape<T>& tp, int p, std::shared_ptr<const Tensor<double>> g,
                    std::shared_ptr<const Tensor<double>> w) {
  const double loss = weighted_bce_value(tp.val(p), *g, *w);
  double den = 0.0;
  for (double wi : w->d) den += wi;
  Tensor<T> y({1});
  y[0] = static_cast<T>(loss);
  return tp.make(std::move(y), tp.needs(p), [&tp, p, g, w, den, self = static_cast<int>(tp.size())]() {
    if (!tp.needs(p)) return;
    const double gl = tp.grad(self)[0];
    Tensor<T>& gp = tp.grad(p);
    for (int64_t i = 0; i < gp.numel(); ++i) {
      const double pi = static_cast<double>(tp.val(p)[i]);
      if (pi <= kBceClamp || pi >= 1.0 - kBceClamp) continue;
      gp[i] += static_cast<T>(gl * (*w)[i] * (-(*g)[i] / pi + (1.0 - (*g)[i]) / (1.0 - pi)) / den);
    }
  });
}

template <class T>
int weighted_iou_op(nn::Tape<T>& tp, int p, std::shared_ptr<const Tensor<double>> g,
                    std::shared_ptr<const Tensor<double>> w) {
  double inter = 0.0, uni = 0.0;
  for (int64_t i = 0; i < tp.val(p).numel(); ++i) {
    const double pi = static_cast<double>(tp.val(p)[i]);
    inter += (*w)[i] * pi * (*g)[i];
    uni += (*w)[i] * (pi + (*g)[i] - pi * (*g)[i]);
  }
  Tensor<T> y({1});
  y[0] = static_cast<T>(1.0 - (inter + 1.0) / (uni + 1.0));
  return tp.make(std::move(y), tp.needs(p),
                 [&tp, p, g, w, inter, uni, self = static_cast<int>(tp.size())]() {
                   if (!tp.needs(p)) return;
                   const double gl = tp.grad(self)[0];
                   const double ip1 = inter + 1.0, up1 = uni + 1.0;
                   Tensor<T>& gp = tp.grad(p);
                   for (int64_t i = 0; i < gp.numel(); ++i) {
                     const double dI = (*w)[i] * (*g)[i];
                     const double dU = (*w)[i] * (1.0 - (*g)[i]);
                     gp[i] += static_cast<T>(gl * (-(dI * up1 - ip1 * dU) / (up1 * up1)));
                   }
                 });
}

// ---------------------------------------------------------------------------
// Conditional denoiser: 3-level encoder-decoder with skip connections.
// Aggregated condition maps are resized to the receiving level, concatenated
// channel-wise and fused by 1x1 projections; the step embedding enters as a
// learned per-level channel bias.
// ---------------------------------------------------------------------------

struct DenoiserConfig {
  std::vector<int> widths = {8, 16, 32};
  int time_dim = 64;
  std::vector<int> cond_widths = {32, 64, 128, 256};
};

template <class T>
class Denoiser {
 public:
  DenoiserConfig cfg;

  Denoiser() = default;
  Denoiser(nn::ParamStore<T>& ps, const DenoiserConfig& c, RandomStream& rng) : cfg(c) {
    check(c.widths.size() == 3, "denoiser: expected 3 level widths");
    const int w0 = c.widths[0], w1 = c.widths[1], w2 = c.widths[2];
    const int call = c.cond_widths[0] + c.cond_widths[1] + c.cond_widths[2] + c.cond_widths[3];
    stem_ = nn::Conv2dLayer<T>(ps, "den.stem", 1, w0, 3, 1, 1, rng);
    conv0_ = nn::Conv2dLayer<T>(ps, "den.conv0", w0, w0, 3, 1, 1, rng);
    down1_ = nn::Conv2dLayer<T>(ps, "den.down1", w0, w1, 3, 2, 1, rng);
    fuse1_ = nn::Conv2dLayer<T>(ps, "den.fuse1", w1 + c.cond_widths[0], w1, 1, 1, 0, rng);
    conv1_ = nn::Conv2dLayer<T>(ps, "den.conv1", w1, w1, 3, 1, 1, rng);
    down2_ = nn::Conv2dLayer<T>(ps, "den.down2", w1, w2, 3, 2, 1, rng);
    fuse2_ = nn::Conv2dLayer<T>(ps, "den.fuse2", w2 + call, w2, 1, 1, 0, rng);
    conv2_ = nn::Conv2dLayer<T>(ps, "den.conv2", w2, w2, 3, 1, 1, rng);
    fuse_u1_ = nn::Conv2dLayer<T>(ps, "den.fuse_u1", w2 + w1, w1, 1, 1, 0, rng);
    conv_u1_ = nn::Conv2dLayer<T>(ps, "den.conv_u1", w1, w1, 3, 1, 1, rng);
    fuse_u0_ = nn::Conv2dLayer<T>(ps, "den.fuse_u0", w1 + w0, w0, 1, 1, 0, rng);
    head_ = nn::Conv2dLayer<T>(ps, "den.head", w0, 1, 3, 1, 1, rng);
    // Start near zero noise prediction.
    for (auto& v : ps.value(head_.w).d) v = static_cast<T>(v * 1e-2);
    time0_ = nn::LinearLayer<T>(ps, "den.time0", c.time_dim, w0, rng);
    time1_ = nn::LinearLayer<T>(ps, "den.time1", c.time_dim, w1, rng);
    time2_ = nn::LinearLayer<T>(ps, "den.time2", c.time_dim, w2, rng);
    time_u1_ = nn::LinearLayer<T>(ps, "den.time_u1", c.time_dim, w1, rng);
  }

  /// eps_hat with the shape of x_t. `x_t` must be a tape id of a (1,H,W) map.
  int forward(nn::Tape<T>& tp, const nn::ParamStore<T>& ps, int x_t,
              const ConditionStack& stack, int t) const {
    const Tensor<T>& X = tp.val(x_t);
    check(X.ndim() == 3 && X.dim(0) == 1, "denoiser: expected (1,H,W)");
    const int h = X.dim(1), w = X.dim(2);
    check(h % 4 == 0 && w % 4 == 0, "denoiser: spatial dims must divide 4");

    const int temb = tp.constant(nn::sinusoidal_time_embedding<T>(t, cfg.time_dim));
    auto tbias = [&](const nn::LinearLayer<T>& lin, int ch) {
      return nn::reshape(tp, lin.forward(tp, ps, temb), {ch});
    };
    auto cond_at = [&](int level, int th, int tw) {
      const int id = stack.agg[static_cast<size_t>(level)];
      if (id < 0)
        return tp.constant(Tensor<T>({cfg.cond_widths[static_cast<size_t>(level)], th, tw}));
      return nn::bilinear_resize(tp, id, th, tw);
    };

    const int w0 = cfg.widths[0], w1 = cfg.widths[1], w2 = cfg.widths[2];
    int h0 = nn::silu(tp, nn::add_channel_bias(tp, stem_.forward(tp, ps, x_t), tbias(time0_, w0)));
    h0 = nn::silu(tp, conv0_.forward(tp, ps, h0));

    int d1 = nn::silu(tp, nn::add_channel_bias(tp, down1_.forward(tp, ps, h0), tbias(time1_, w1)));
    d1 = nn::silu(tp, fuse1_.forward(
                          tp, ps, nn::concat_channels(tp, {d1, cond_at(0, h / 2, w / 2)})));
    d1 = nn::silu(tp, conv1_.forward(tp, ps, d1));

    int d2 = nn::silu(tp, nn::add_channel_bias(tp, down2_.forward(tp, ps, d1), tbias(time2_, w2)));
    d2 = nn::silu(tp, fuse2_.forward(
                          tp, ps, nn::concat_channels(tp, {d2, cond_at(0, h / 4, w / 4),
                                                           cond_at(1, h / 4, w / 4),
                                                           cond_at(2, h / 4, w / 4),
                                                           cond_at(3, h / 4, w / 4)})));
    d2 = nn::silu(tp, conv2_.forward(tp, ps, d2));

    int u1 = nn::bilinear_resize(tp, d2, h / 2, w / 2);
    u1 = nn::silu(tp, fuse_u1_.forward(tp, ps, nn::concat_channels(tp, {u1, d1})));
    u1 = nn::add_channel_bias(tp, u1, tbias(time_u1_, w1));
    u1 = nn::silu(tp, conv_u1_.forward(tp, ps, u1));

    int u0 = nn::bilinear_resize(tp, u1, h, w);
    u0 = nn::silu(tp, fuse_u0_.forward(tp, ps, nn::concat_channels(tp, {u0, h0})));
    return head_.forward(tp, ps, u0);
  }

 private:
  nn::Conv2dLayer<T> stem_, conv0_, down1_, fuse1_, conv1_, down2_, fuse2_, conv2_;
  nn::Conv2dLayer<T> fuse_u1_, conv_u1_, fuse_u0_, head_;
  nn::LinearLayer<T> time0_, time1_, time2_, time_u1_;
};

// ---------------------------------------------------------------------------
// Model bundle and training step
// ---------------------------------------------------------------------------

struct ModelConfig {
  CflnConfig cfln;
  DenoiserConfig denoiser;
  int embed_dim = 64;   // word-embedding dimension fed to the text projector
  int latent_dim = 64;  // shared distillation latent width
  uint64_t init_seed = 42;
};

template <class T>
struct DiffmssModel {
  nn::ParamStore<T> params;
  Cfln<T> cfln;
  Denoiser<T> denoiser;
  ProjectorPair<T> projectors;
  ModelConfig cfg;

  explicit DiffmssModel(const ModelConfig& c) : cfg(c) {
    RandomStream rng(c.init_seed);
    cfln = Cfln<T>(params, c.cfln, rng);
    DenoiserConfig dc = c.denoiser;
    dc.cond_widths = c.cfln.widths;
    denoiser = Denoiser<T>(params, dc, rng);
    // The pooled condition is the finest aggregated map, GAP over space.
    projectors = ProjectorPair<T>(params, c.cfln.widths[0], c.embed_dim, c.latent_dim, rng);
  }
};

struct LossBundle {
  double l_consist = 0.0;
  double l_mask = 0.0;
  double l_bce = 0.0;
  double l_iou = 0.0;
  double l_total = 0.0;
  double lambda = 0.5;
  bool skd_skipped = false;
};

/// Everything train_step needs for one sample, with randomness pre-drawn so
/// batched multi-threaded execution stays bit-reproducible.
template <class T>
struct StepInputs {
  const Tensor<T>* image = nullptr;                 // (3,H,W)
  const Tensor<double>* mask = nullptr;             // (H,W) binary
  const std::vector<Tensor<T>>* skd_tokens = nullptr;  // null or empty => skip SKD
  int t = 1;
  Tensor<T> eps;                                    // (1,H,W)
};

template <class T>
struct ForwardIds {
  int l_total = -1, l_mask = -1, l_consist = -1;
  LossBundle bundle;
};

/// Which mask-loss terms participate (ablation axis).
struct LossFlags {
  bool bce = true;
  bool iou = true;
};

/// Forward pass through noising, condition extraction, distillation, noise
/// prediction and the hybrid loss. Leaves the loss nodes on the tape.
template <class T>
ForwardIds<T> diffusion_forward(const DiffmssModel<T>& model, nn::Tape<T>& tp,
                                const StepInputs<T>& in, const NoiseSchedule& sched,
                                double lambda, const LossFlags& flags = {}) {
  const Tensor<double>& mask = *in.mask;
  const int h = mask.dim(0), w = mask.dim(1);
  Tensor<T> x0s({1, h, w});
  for (int64_t i = 0; i < mask.numel(); ++i) x0s[i] = static_cast<T>(2.0 * mask[i] - 1.0);
  const Tensor<T> x_t = q_sample(x0s, in.t, in.eps, sched);

  const ConditionStack stack = model.cfln.forward(tp, model.params, *in.image, x_t, in.t);
  const int xt_id = tp.constant(x_t);
  const int eps_hat = model.denoiser.forward(tp, model.params, xt_id, stack, in.t);

  // x0_hat = x_t/sqrt(abar) - sqrt(1-abar)/sqrt(abar) * eps_hat, then to [0,1].
  const double abar = sched.alpha_bar(in.t);
  Tensor<T> offset(x_t.shape);
  const double inv_r = 1.0 / std::sqrt(abar);
  for (int64_t i = 0; i < x_t.numel(); ++i) offset[i] = static_cast<T>(x_t[i] * inv_r);
  const int x0_hat =
      nn::affine_with_const(tp, static_cast<T>(-std::sqrt(1.0 - abar) * inv_r), eps_hat,
                            std::move(offset));
  const int p = nn::to_unit_straight_through(tp, x0_hat);

  auto g = std::make_shared<const Tensor<double>>(mask);
  auto wt = std::make_shared<const Tensor<double>>(boundary_weights(mask));
  const int bce = weighted_bce_op(tp, p, g, wt);
  const int iou = weighted_iou_op(tp, p, g, wt);
  const int l_mask = nn::weighted_sum_scalars(
      tp, {bce, iou},
      std::vector<T>{flags.bce ? T(1) : T(0), flags.iou ? T(1) : T(0)});

  ForwardIds<T> out;
  const bool use_skd = in.skd_tokens != nullptr && !in.skd_tokens->empty();
  if (use_skd) {
    const int pooled = nn::global_avg_pool(tp, stack.agg[0]);
    const ConsistencyResult cr =
        consistency_loss(tp, model.params, pooled, *in.skd_tokens, model.projectors);
    out.l_consist = cr.loss;
    out.bundle.skd_skipped = cr.skipped;
  } else {
    out.l_consist = tp.constant(Tensor<T>({1}));
    out.bundle.skd_skipped = true;
  }
  out.l_mask = l_mask;
  out.l_total = nn::weighted_sum_scalars(tp, {out.l_consist, l_mask},
                                         std::vector<T>{T(1), static_cast<T>(lambda)});
  out.bundle.l_bce = static_cast<double>(tp.val(bce)[0]);
  out.bundle.l_iou = static_cast<double>(tp.val(iou)[0]);
  out.bundle.l_mask = static_cast<double>(tp.val(l_mask)[0]);
  out.bundle.l_consist = static_cast<double>(tp.val(out.l_consist)[0]);
  out.bundle.l_total = static_cast<double>(tp.val(out.l_total)[0]);
  out.bundle.lambda = lambda;
  return out;
}

/// Single-sample training step: forward, backward, one Adam update.
template <class T>
LossBundle train_step(DiffmssModel<T>& model, const StepInputs<T>& in, const NoiseSchedule& sched,
                      double lambda, const nn::AdamConfig& adam, int64_t step_index,
                      std::vector<Tensor<T>>& grad_sink) {
  nn::Tape<T> tp;
  const ForwardIds<T> ids = diffusion_forward(model, tp, in, sched, lambda);
  if (!std::isfinite(ids.bundle.l_total))
    throw NumericalError("train_step: non-finite loss");
  tp.backward(ids.l_total);
  tp.export_param_grads(grad_sink);
  nn::adam_step(model.params, grad_sink, adam, step_index);
  return ids.bundle;
}

}  // namespace diffmss
