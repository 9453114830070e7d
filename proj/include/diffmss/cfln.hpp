// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "diffmss/nn/layers.hpp"

namespace diffmss {

/// Conditional feature network: a four-stage miniature pyramid transformer
/// over (image, noisy mask x_t, step t). The noisy mask enters stage 1 through
/// a zero-initialized convolution, so before any training the output is a
/// function of the image alone. Strides are 4,2,2,2 (feature strides 4/8/16/32).
struct CflnConfig {
  int in_channels = 3;
  std::vector<int> widths = {32, 64, 128, 256};
  int heads = 2;
  int time_dim = 64;
  int ffn_mult = 2;
  int agg_levels = 4;  // how many stages feed the aggregated condition (from F1 up)
};

/// Tape handles for one forward pass. `agg[l]` is -1 for stages beyond
/// `levels`; `fa` is the aggregation seed LE(F_k) of the deepest used stage.
struct ConditionStack {
  std::array<int, 4> f{-1, -1, -1, -1};    // raw stage outputs F_l (maps)
  std::array<int, 4> agg{-1, -1, -1, -1};  // aggregated pyramid A_l (maps)
  int fa = -1;
  int levels = 4;
  int h = 0, w = 0;  // input spatial size
};

template <class T>
class Cfln {
 public:
  CflnConfig cfg;

  Cfln() = default;
  Cfln(nn::ParamStore<T>& ps, const CflnConfig& c, RandomStream& rng) : cfg(c) {
    check(c.widths.size() == 4, "cfln: expected 4 stage widths");
    check(c.agg_levels >= 1 && c.agg_levels <= 4, "cfln: agg_levels in 1..4");
    for (int l = 0; l < 4; ++l) {
      const std::string base = "cfln.s" + std::to_string(l + 1);
      const int cw = c.widths[static_cast<size_t>(l)];
      const int cin = l == 0 ? c.in_channels : c.widths[static_cast<size_t>(l - 1)];
      const int k = l == 0 ? 4 : 2;
      stage_conv_[l] = nn::Conv2dLayer<T>(ps, base + ".conv", cin, cw, k, k, 0, rng);
      if (l == 0)
        conv_z_ = nn::Conv2dLayer<T>(ps, base + ".conv_z", 1, cw, 4, 4, 0, rng,
                                     /*bias=*/true, /*zero_init=*/true);
      norm_[l] = nn::LayerNormLayer<T>(ps, base + ".norm", cw);
      time_proj_[l] = nn::LinearLayer<T>(ps, base + ".time", c.time_dim, cw, rng);
      attn_[l] = nn::AttentionLayer<T>(ps, base + ".attn", cw, c.heads, rng);
      ffn_norm_[l] = nn::LayerNormLayer<T>(ps, base + ".ffn_norm", cw);
      ffn_in_[l] = nn::LinearLayer<T>(ps, base + ".ffn_in", cw, cw * c.ffn_mult, rng);
      ffn_out_[l] = nn::LinearLayer<T>(ps, base + ".ffn_out", cw * c.ffn_mult, cw, rng);
    }
    for (int l = 0; l < c.agg_levels; ++l) {
      const std::string base = "cfln.le" + std::to_string(l + 1);
      const int cw = c.widths[static_cast<size_t>(l)];
      le_dw_[l] = ps.add(base + ".dw", nn::he_normal<T>({cw, 3, 3}, 9, rng));
      le_pw_[l] = nn::Conv2dLayer<T>(ps, base + ".pw", cw, cw, 1, 1, 0, rng, /*bias=*/false);
    }
    for (int l = 0; l + 1 < c.agg_levels; ++l) {
      const int cw = c.widths[static_cast<size_t>(l)];
      const int cup = c.widths[static_cast<size_t>(l + 1)];
      cascade_[l] = nn::Conv2dLayer<T>(ps, "cfln.agg" + std::to_string(l + 1), cup + cw, cw, 1, 1,
                                       0, rng);
    }
  }

  /// Full pass: four stages plus top-down aggregation.
  ConditionStack forward(nn::Tape<T>& tp, const nn::ParamStore<T>& ps, const Tensor<T>& image,
                         const Tensor<T>& x_t, int t) const {
    check(image.ndim() == 3 && image.dim(0) == cfg.in_channels, "cfln: bad image shape");
    check(x_t.ndim() == 3 && x_t.dim(0) == 1 && x_t.dim(1) == image.dim(1) &&
              x_t.dim(2) == image.dim(2),
          "cfln: x_t spatial dims must match image");
    ConditionStack out;
    out.levels = cfg.agg_levels;
    out.h = image.dim(1);
    out.w = image.dim(2);

    const int img = tp.constant(image);
    const int xt = tp.constant(x_t);
    int cur = -1;
    for (int l = 0; l < 4; ++l) {
      int emb;
      if (l == 0) {
        emb = nn::add(tp, stage_conv_[0].forward(tp, ps, img), conv_z_.forward(tp, ps, xt));
      } else {
        emb = stage_conv_[l].forward(tp, ps, cur);
      }
      const int mh = tp.val(emb).dim(1), mw = tp.val(emb).dim(2);
      int tokens = norm_[l].forward(tp, ps, nn::map_to_tokens(tp, emb));
      const int tt = time_proj_[l].forward(
          tp, ps, tp.constant(nn::sinusoidal_time_embedding<T>(t, cfg.time_dim)));
      int seq = nn::concat_rows(tp, tt, tokens);
      seq = attn_[l].forward(tp, ps, seq);
      const int ff = ffn_out_[l].forward(
          tp, ps, nn::gelu(tp, ffn_in_[l].forward(tp, ps, ffn_norm_[l].forward(tp, ps, seq))));
      seq = nn::add(tp, seq, ff);
      const int body = nn::slice_rows(tp, seq, 1, tp.val(seq).dim(0));
      cur = nn::tokens_to_map(tp, body, mh, mw);
      out.f[static_cast<size_t>(l)] = cur;
    }
    aggregate(tp, ps, out);
    return out;
  }

  /// Local emphasis: depthwise 3x3 + pointwise projection + residual.
  /// No bias terms, so zero input maps to zero output.
  int local_emphasis(nn::Tape<T>& tp, const nn::ParamStore<T>& ps, int x, int level) const {
    const int dw = nn::depthwise3x3(tp, x, tp.param(ps.value(le_dw_[level]), le_dw_[level]));
    return nn::add(tp, x, le_pw_[level].forward(tp, ps, dw));
  }

  /// Top-down cascade over the configured levels: the deepest used stage seeds
  /// the aggregation, each shallower level fuses the upsampled deeper result
  /// with its own locally-emphasized features.
  void aggregate(nn::Tape<T>& tp, const nn::ParamStore<T>& ps, ConditionStack& stack) const {
    const int k = stack.levels;
    for (int l = 0; l < 4; ++l) stack.agg[static_cast<size_t>(l)] = -1;
    int deeper = local_emphasis(tp, ps, stack.f[static_cast<size_t>(k - 1)], k - 1);
    stack.fa = deeper;
    stack.agg[static_cast<size_t>(k - 1)] = deeper;
    for (int l = k - 2; l >= 0; --l) {
      const int le = local_emphasis(tp, ps, stack.f[static_cast<size_t>(l)], l);
      const int lh = tp.val(le).dim(1), lw = tp.val(le).dim(2);
      const int up = nn::bilinear_resize(tp, deeper, lh, lw);
      deeper = cascade_[l].forward(tp, ps, nn::concat_channels(tp, {up, le}));
      stack.agg[static_cast<size_t>(l)] = deeper;
    }
  }

  /// Stage widths, aggregated-map widths equal stage widths.
  int stage_width(int l) const { return cfg.widths[static_cast<size_t>(l)]; }

 private:
  std::array<nn::Conv2dLayer<T>, 4> stage_conv_;
  nn::Conv2dLayer<T> conv_z_;
  std::array<nn::LayerNormLayer<T>, 4> norm_;
  std::array<nn::LinearLayer<T>, 4> time_proj_;
  std::array<nn::AttentionLayer<T>, 4> attn_;
  std::array<nn::LayerNormLayer<T>, 4> ffn_norm_;
  std::array<nn::LinearLayer<T>, 4> ffn_in_;
  std::array<nn::LinearLayer<T>, 4> ffn_out_;
  std::array<int, 4> le_dw_{-1, -1, -1, -1};
  std::array<nn::Conv2dLayer<T>, 4> le_pw_;
  std::array<nn::Conv2dLayer<T>, 3> cascade_;
};

}  // namespace diffmss
