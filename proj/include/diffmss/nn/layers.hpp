// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "diffmss/nn/ops.hpp"
#include "diffmss/nn/params.hpp"

namespace diffmss::nn {

template <class T>
struct Conv2dLayer {
  int w = -1, b = -1;
  int stride = 1, pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(ParamStore<T>& ps, const std::string& name, int cin, int cout, int k, int stride_,
              int pad_, RandomStream& rng, bool bias = true, bool zero_init = false)
      : stride(stride_), pad(pad_) {
    Tensor<T> wt({cout, cin, k, k});
    if (!zero_init) wt = he_normal<T>({cout, cin, k, k}, cin * k * k, rng);
    w = ps.add(name + ".w", std::move(wt));
    if (bias) b = ps.add(name + ".b", Tensor<T>({cout}));
  }

  int forward(Tape<T>& tp, const ParamStore<T>& ps, int x) const {
    const int wv = tp.param(ps.value(w), w);
    const int bv = b >= 0 ? tp.param(ps.value(b), b) : -1;
    return conv2d(tp, x, wv, bv, stride, pad);
  }
};

template <class T>
struct LinearLayer {
  int w = -1, b = -1;

  LinearLayer() = default;
  LinearLayer(ParamStore<T>& ps, const std::string& name, int din, int dout, RandomStream& rng,
              bool bias = true)
      : w(ps.add(name + ".w", xavier_normal<T>({dout, din}, din, dout, rng))) {
    if (bias) b = ps.add(name + ".b", Tensor<T>({dout}));
  }

  int forward(Tape<T>& tp, const ParamStore<T>& ps, int x) const {
    const int wv = tp.param(ps.value(w), w);
    const int bv = b >= 0 ? tp.param(ps.value(b), b) : -1;
    return linear(tp, x, wv, bv);
  }
};

template <class T>
struct LayerNormLayer {
  int g = -1, b = -1;

  LayerNormLayer() = default;
  LayerNormLayer(ParamStore<T>& ps, const std::string& name, int dim)
      : g(ps.add(name + ".g", Tensor<T>({dim}, T(1)))), b(ps.add(name + ".b", Tensor<T>({dim}))) {}

  int forward(Tape<T>& tp, const ParamStore<T>& ps, int x) const {
    return layer_norm(tp, x, tp.param(ps.value(g), g), tp.param(ps.value(b), b));
  }
};

/// Multi-head self-attention with a residual connection:
/// y = x + Wo * Attn(Wq x, Wk x, Wv x).
template <class T>
struct AttentionLayer {
  LinearLayer<T> wq, wk, wv, wo;
  int heads = 2;
  int dim = 0;

  AttentionLayer() = default;
  AttentionLayer(ParamStore<T>& ps, const std::string& name, int dim_, int heads_,
                 RandomStream& rng)
      : wq(ps, name + ".q", dim_, dim_, rng),
        wk(ps, name + ".k", dim_, dim_, rng),
        wv(ps, name + ".v", dim_, dim_, rng),
        wo(ps, name + ".o", dim_, dim_, rng),
        heads(heads_),
        dim(dim_) {
    check(dim_ % heads_ == 0, "attention: dim must divide heads");
  }

  int forward(Tape<T>& tp, const ParamStore<T>& ps, int x) const {
    const int q = wq.forward(tp, ps, x);
    const int k = wk.forward(tp, ps, x);
    const int v = wv.forward(tp, ps, x);
    const int dh = dim / heads;
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<int> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      const int qh = slice_cols(tp, q, h * dh, (h + 1) * dh);
      const int kh = slice_cols(tp, k, h * dh, (h + 1) * dh);
      const int vh = slice_cols(tp, v, h * dh, (h + 1) * dh);
      const int scores = scale(tp, matmul_nt(tp, qh, kh), inv_sqrt);
      const int attn = softmax_rows(tp, scores);
      head_outs.push_back(matmul(tp, attn, vh));
    }
    const int merged = heads == 1 ? head_outs[0] : concat_cols(tp, head_outs);
    return add(tp, x, wo.forward(tp, ps, merged));
  }
};

/// Sinusoidal step embedding, deterministic in t.
template <class T>
Tensor<T> sinusoidal_time_embedding(int t, int dim) {
  Tensor<T> e({1, dim});
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
    e.at(0, i) = static_cast<T>(std::sin(t * freq));
    e.at(0, half + i) = static_cast<T>(std::cos(t * freq));
  }
  return e;
}

}  // namespace diffmss::nn
