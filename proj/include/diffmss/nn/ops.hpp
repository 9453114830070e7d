// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "diffmss/nn/tape.hpp"

namespace diffmss::nn {

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using EMap = Eigen::Map<EMat<T>>;
template <class T>
using ECMap = Eigen::Map<const EMat<T>>;

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class T>
int add(Tape<T>& tp, int a, int b) {
  check(tp.val(a).same_shape(tp.val(b)), "add: shape mismatch");
  Tensor<T> y(tp.val(a).shape);
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = tp.val(a)[i] + tp.val(b)[i];
  const bool needs = tp.needs(a) || tp.needs(b);
  return tp.make(std::move(y), needs, [&tp, a, b, self = static_cast<int>(tp.size())]() {
    const Tensor<T>& g = tp.grad(self);
    if (tp.needs(a)) {
      Tensor<T>& ga = tp.grad(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (tp.needs(b)) {
      Tensor<T>& gb = tp.grad(b);
      for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
    }
  });
}

/// y = sa*a + sb*b
template <class T>
int axpby(Tape<T>& tp, T sa, int a, T sb, int b) {
  check(tp.val(a).same_shape(tp.val(b)), "axpby: shape mismatch");
  Tensor<T> y(tp.val(a).shape);
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = sa * tp.val(a)[i] + sb * tp.val(b)[i];
  const bool needs = tp.needs(a) || tp.needs(b);
  return tp.make(std::move(y), needs, [&tp, a, b, sa, sb, self = static_cast<int>(tp.size())]() {
    const Tensor<T>& g = tp.grad(self);
    if (tp.needs(a)) {
      Tensor<T>& ga = tp.grad(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += sa * g[i];
    }
    if (tp.needs(b)) {
      Tensor<T>& gb = tp.grad(b);
      for (int64_t i = 0; i < g.numel(); ++i) gb[i] += sb * g[i];
    }
  });
}

/// y = k*x + offset (offset is a plain tensor, treated as constant)
template <class T>
int affine_with_const(Tape<T>& tp, T k, int x, Tensor<T> offset) {
  check(tp.val(x).same_shape(offset), "affine_with_const: shape mismatch");
  Tensor<T> y(offset.shape);
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = k * tp.val(x)[i] + offset[i];
  return tp.make(std::move(y), tp.needs(x), [&tp, x, k, self = static_cast<int>(tp.size())]() {
    if (!tp.needs(x)) return;
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    for (int64_t i = 0; i < g.numel(); ++i) gx[i] += k * g[i];
  });
}

template <class T>
int mul(Tape<T>& tp, int a, int b) {
  check(tp.val(a).same_shape(tp.val(b)), "mul: shape mismatch");
  Tensor<T> y(tp.val(a).shape);
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = tp.val(a)[i] * tp.val(b)[i];
  const bool needs = tp.needs(a) || tp.needs(b);
  return tp.make(std::move(y), needs, [&tp, a, b, self = static_cast<int>(tp.size())]() {
    const Tensor<T>& g = tp.grad(self);
    if (tp.needs(a)) {
      Tensor<T>& ga = tp.grad(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * tp.val(b)[i];
    }
    if (tp.needs(b)) {
      Tensor<T>& gb = tp.grad(b);
      for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * tp.val(a)[i];
    }
  });
}

template <class T>
int scale(Tape<T>& tp, int x, T k) {
  Tensor<T> y(tp.val(x).shape);
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = k * tp.val(x)[i];
  return tp.make(std::move(y), tp.needs(x), [&tp, x, k, self = static_cast<int>(tp.size())]() {
    if (!tp.needs(x)) return;
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    for (int64_t i = 0; i < g.numel(); ++i) gx[i] += k * g[i];
  });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <class T>
int gelu(Tape<T>& tp, int x) {
  static constexpr double kInvSqrt2 = 0.7071067811865475244;
  static constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  Tensor<T> y(tp.val(x).shape);
  for (int64_t i = 0; i < y.numel(); ++i) {
    const double v = static_cast<double>(tp.val(x)[i]);
    y[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  }
  return tp.make(std::move(y), tp.needs(x), [&tp, x, self = static_cast<int>(tp.size())]() {
    if (!tp.needs(x)) return;
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double v = static_cast<double>(tp.val(x)[i]);
      const double d =
          0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] += static_cast<T>(d) * g[i];
    }
  });
}

template <class T>
int silu(Tape<T>& tp, int x) {
  Tensor<T> y(tp.val(x).shape);
  for (int64_t i = 0; i < y.numel(); ++i) {
    const double v = static_cast<double>(tp.val(x)[i]);
    y[i] = static_cast<T>(v / (1.0 + std::exp(-v)));
  }
  return tp.make(std::move(y), tp.needs(x), [&tp, x, self = static_cast<int>(tp.size())]() {
    if (!tp.needs(x)) return;
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double v = static_cast<double>(tp.val(x)[i]);
      const double s = 1.0 / (1.0 + std::exp(-v));
      gx[i] += static_cast<T>(s * (1.0 + v * (1.0 - s))) * g[i];
    }
  });
}

template <class T>
int sigmoid(Tape<T>& tp, int x) {
  Tensor<T> y(tp.val(x).shape);
  for (int64_t i = 0; i < y.numel(); ++i)
    y[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(tp.val(x)[i]))));
  return tp.make(std::move(y), tp.needs(x), [&tp, x, self = static_cast<int>(tp.size())]() {
    if (!tp.needs(x)) return;
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& yv = tp.val(self);
    Tensor<T>& gx = tp.grad(x);
    for (int64_t i = 0; i < g.numel(); ++i) gx[i] += yv[i] * (T(1) - yv[i]) * g[i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// y(m,n) = a(m,k) * b(k,n)
template <class T>
int matmul(Tape<T>& tp, int a, int b) {
  const Tensor<T>& A = tp.val(a);
  const Tensor<T>& B = tp.val(b);
  check(A.ndim() == 2 && B.ndim() == 2 && A.dim(1) == B.dim(0), "matmul: bad shapes");
  const int m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor<T> y({m, n});
  EMap<T>(y.data(), m, n).noalias() =
      ECMap<T>(A.data(), m, k) * ECMap<T>(B.data(), k, n);
  const bool needs = tp.needs(a) || tp.needs(b);
  return tp.make(std::move(y), needs,
                 [&tp, a, b, m, k, n, self = static_cast<int>(tp.size())]() {
                   ECMap<T> G(tp.grad(self).data(), m, n);
                   if (tp.needs(a)) {
                     EMap<T>(tp.grad(a).data(), m, k).noalias() +=
                         G * ECMap<T>(tp.val(b).data(), k, n).transpose();
                   }
                   if (tp.needs(b)) {
                     EMap<T>(tp.grad(b).data(), k, n).noalias() +=
                         ECMap<T>(tp.val(a).data(), m, k).transpose() * G;
                   }
                 });
}

/// y(m,n) = a(m,k) * b(n,k)^T
template <class T>
int matmul_nt(Tape<T>& tp, int a, int b) {
  const Tensor<T>& A = tp.val(a);
  const Tensor<T>& B = tp.val(b);
  check(A.ndim() == 2 && B.ndim() == 2 && A.dim(1) == B.dim(1), "matmul_nt: bad shapes");
  const int m = A.dim(0), k = A.dim(1), n = B.dim(0);
  Tensor<T> y({m, n});
  EMap<T>(y.data(), m, n).noalias() =
      ECMap<T>(A.data(), m, k) * ECMap<T>(B.data(), n, k).transpose();
  const bool needs = tp.needs(a) || tp.needs(b);
  return tp.make(std::move(y), needs,
                 [&tp, a, b, m, k, n, self = static_cast<int>(tp.size())]() {
                   ECMap<T> G(tp.grad(self).data(), m, n);
                   if (tp.needs(a)) {
                     EMap<T>(tp.grad(a).data(), m, k).noalias() +=
                         G * ECMap<T>(tp.val(b).data(), n, k);
                   }
                   if (tp.needs(b)) {
                     EMap<T>(tp.grad(b).data(), n, k).noalias() +=
                         G.transpose() * ECMap<T>(tp.val(a).data(), m, k);
                   }
                 });
}

/// y(L,Dout) = x(L,Din) * w(Dout,Din)^T + bias
template <class T>
int linear(Tape<T>& tp, int x, int w, int b) {
  const Tensor<T>& X = tp.val(x);
  const Tensor<T>& W = tp.val(w);
  check(X.ndim() == 2 && W.ndim() == 2 && X.dim(1) == W.dim(1), "linear: bad shapes");
  const int L = X.dim(0), din = X.dim(1), dout = W.dim(0);
  Tensor<T> y({L, dout});
  EMap<T> Y(y.data(), L, dout);
  Y.noalias() = ECMap<T>(X.data(), L, din) * ECMap<T>(W.data(), dout, din).transpose();
  if (b >= 0) {
    const Tensor<T>& B = tp.val(b);
    for (int i = 0; i < L; ++i)
      for (int j = 0; j < dout; ++j) y.at(i, j) += B[j];
  }
  const bool needs = tp.needs(x) || tp.needs(w) || (b >= 0 && tp.needs(b));
  return tp.make(std::move(y), needs,
                 [&tp, x, w, b, L, din, dout, self = static_cast<int>(tp.size())]() {
                   ECMap<T> G(tp.grad(self).data(), L, dout);
                   if (tp.needs(x)) {
                     EMap<T>(tp.grad(x).data(), L, din).noalias() +=
                         G * ECMap<T>(tp.val(w).data(), dout, din);
                   }
                   if (tp.needs(w)) {
                     EMap<T>(tp.grad(w).data(), dout, din).noalias() +=
                         G.transpose() * ECMap<T>(tp.val(x).data(), L, din);
                   }
                   if (b >= 0 && tp.needs(b)) {
                     Tensor<T>& gb = tp.grad(b);
                     for (int i = 0; i < L; ++i)
                       for (int j = 0; j < dout; ++j) gb[j] += tp.grad(self).at(i, j);
                   }
                 });
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

namespace detail {
template <class T>
void im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad, int ho, int wo,
            std::vector<T>& col) {
  const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  col.assign(static_cast<size_t>(cin) * kh * kw * ho * wo, T(0));
  const int64_t ocols = static_cast<int64_t>(ho) * wo;
  for (int c = 0; c < cin; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        T* dst = col.data() + (static_cast<int64_t>(c) * kh * kw + i * kw + j) * ocols;
        for (int oy = 0; oy < ho; ++oy) {
          const int sy = oy * stride - pad + i;
          if (sy < 0 || sy >= h) continue;
          const T* src = &x.at(c, sy, 0);
          for (int ox = 0; ox < wo; ++ox) {
            const int sx = ox * stride - pad + j;
            if (sx >= 0 && sx < w) dst[static_cast<int64_t>(oy) * wo + ox] = src[sx];
          }
        }
      }
}

template <class T>
void col2im_add(const std::vector<T>& col, int cin, int h, int w, int kh, int kw, int stride,
                int pad, int ho, int wo, Tensor<T>& gx) {
  const int64_t ocols = static_cast<int64_t>(ho) * wo;
  for (int c = 0; c < cin; ++c)
    for (int i = 0; i < kh; ++i)
      for (int j = 0; j < kw; ++j) {
        const T* src = col.data() + (static_cast<int64_t>(c) * kh * kw + i * kw + j) * ocols;
        for (int oy = 0; oy < ho; ++oy) {
          const int sy = oy * stride - pad + i;
          if (sy < 0 || sy >= h) continue;
          T* dst = &gx.at(c, sy, 0);
          for (int ox = 0; ox < wo; ++ox) {
            const int sx = ox * stride - pad + j;
            if (sx >= 0 && sx < w) dst[sx] += src[static_cast<int64_t>(oy) * wo + ox];
          }
        }
      }
}
}  // namespace detail

/// x(Cin,H,W) * w(Cout,Cin,kh,kw) -> (Cout,Ho,Wo); pass b = -1 for no bias.
template <class T>
int conv2d(Tape<T>& tp, int x, int w, int b, int stride, int pad) {
  const Tensor<T>& X = tp.val(x);
  const Tensor<T>& W = tp.val(w);
  check(X.ndim() == 3 && W.ndim() == 4 && W.dim(1) == X.dim(0), "conv2d: bad shapes");
  const int cin = X.dim(0), h = X.dim(1), wd = X.dim(2);
  const int cout = W.dim(0), kh = W.dim(2), kw = W.dim(3);
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (wd + 2 * pad - kw) / stride + 1;
  check(ho >= 1 && wo >= 1, "conv2d: output collapses to zero");
  auto col = std::make_shared<std::vector<T>>();
  detail::im2col(X, kh, kw, stride, pad, ho, wo, *col);
  const int krows = cin * kh * kw;
  const int64_t ocols = static_cast<int64_t>(ho) * wo;
  Tensor<T> y({cout, ho, wo});
  EMap<T>(y.data(), cout, ocols).noalias() =
      ECMap<T>(W.data(), cout, krows) * ECMap<T>(col->data(), krows, ocols);
  if (b >= 0) {
    const Tensor<T>& B = tp.val(b);
    for (int c = 0; c < cout; ++c) {
      T* row = &y.at(c, 0, 0);
      for (int64_t i = 0; i < ocols; ++i) row[i] += B[c];
    }
  }
  const bool needs = tp.needs(x) || tp.needs(w) || (b >= 0 && tp.needs(b));
  return tp.make(
      std::move(y), needs,
      [&tp, x, w, b, col, cin, h, wd, cout, kh, kw, stride, pad, ho, wo, krows, ocols,
       self = static_cast<int>(tp.size())]() {
        ECMap<T> G(tp.grad(self).data(), cout, ocols);
        if (tp.needs(w)) {
          EMap<T>(tp.grad(w).data(), cout, krows).noalias() +=
              G * ECMap<T>(col->data(), krows, ocols).transpose();
        }
        if (tp.needs(x)) {
          std::vector<T> dcol(static_cast<size_t>(krows) * ocols);
          EMap<T>(dcol.data(), krows, ocols).noalias() =
              ECMap<T>(tp.val(w).data(), cout, krows).transpose() * G;
          detail::col2im_add(dcol, cin, h, wd, kh, kw, stride, pad, ho, wo, tp.grad(x));
        }
        if (b >= 0 && tp.needs(b)) {
          Tensor<T>& gb = tp.grad(b);
          for (int c = 0; c < cout; ++c) {
            const T* row = &tp.grad(self).at(c, 0, 0);
            T s = T(0);
            for (int64_t i = 0; i < ocols; ++i) s += row[i];
            gb[c] += s;
          }
        }
      });
}

/// Depthwise 3x3, stride 1, pad 1, no bias: x(C,H,W) * w(C,3,3).
template <class T>
int depthwise3x3(Tape<T>& tp, int x, int w) {
  const Tensor<T>& X = tp.val(x);
  const Tensor<T>& W = tp.val(w);
  check(X.ndim() == 3 && W.ndim() == 3 && W.dim(0) == X.dim(0) && W.dim(1) == 3 && W.dim(2) == 3,
        "depthwise3x3: bad shapes");
  const int c = X.dim(0), h = X.dim(1), wd = X.dim(2);
  Tensor<T> y({c, h, wd});
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < wd; ++j) {
        T acc = T(0);
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj) {
            const int si = i + di, sj = j + dj;
            if (si >= 0 && si < h && sj >= 0 && sj < wd)
              acc += W.at(ch, di + 1, dj + 1) * X.at(ch, si, sj);
          }
        y.at(ch, i, j) = acc;
      }
  const bool needs = tp.needs(x) || tp.needs(w);
  return tp.make(std::move(y), needs,
                 [&tp, x, w, c, h, wd, self = static_cast<int>(tp.size())]() {
                   const Tensor<T>& G = tp.grad(self);
                   const bool nx = tp.needs(x), nw = tp.needs(w);
                   for (int ch = 0; ch < c; ++ch)
                     for (int i = 0; i < h; ++i)
                       for (int j = 0; j < wd; ++j) {
                         const T g = G.at(ch, i, j);
                         for (int di = -1; di <= 1; ++di)
                           for (int dj = -1; dj <= 1; ++dj) {
                             const int si = i + di, sj = j + dj;
                             if (si < 0 || si >= h || sj < 0 || sj >= wd) continue;
                             if (nx) tp.grad(x).at(ch, si, sj) += tp.val(w).at(ch, di + 1, dj + 1) * g;
                             if (nw) tp.grad(w).at(ch, di + 1, dj + 1) += tp.val(x).at(ch, si, sj) * g;
                           }
                       }
                 });
}

// ---------------------------------------------------------------------------
// Normalization / attention pieces
// ---------------------------------------------------------------------------

/// Per-row layer norm over the last dim of x(L,D): y = g*(x-mu)/sigma + b.
template <class T>
int layer_norm(Tape<T>& tp, int x, int g, int b, T eps = T(1e-5)) {
  const Tensor<T>& X = tp.val(x);
  check(X.ndim() == 2, "layer_norm: expected (L,D)");
  const int L = X.dim(0), D = X.dim(1);
  Tensor<T> y({L, D});
  auto stats = std::make_shared<Tensor<T>>(Tensor<T>({L, 2}));  // mu, inv_sigma per row
  for (int i = 0; i < L; ++i) {
    double mu = 0.0;
    for (int j = 0; j < D; ++j) mu += X.at(i, j);
    mu /= D;
    double var = 0.0;
    for (int j = 0; j < D; ++j) {
      const double d = X.at(i, j) - mu;
      var += d * d;
    }
    var /= D;
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    stats->at(i, 0) = static_cast<T>(mu);
    stats->at(i, 1) = static_cast<T>(inv);
    for (int j = 0; j < D; ++j)
      y.at(i, j) = tp.val(g)[j] * static_cast<T>((X.at(i, j) - mu) * inv) + tp.val(b)[j];
  }
  const bool needs = tp.needs(x) || tp.needs(g) || tp.needs(b);
  return tp.make(std::move(y), needs,
                 [&tp, x, g, b, stats, L, D, self = static_cast<int>(tp.size())]() {
                   const Tensor<T>& G = tp.grad(self);
                   for (int i = 0; i < L; ++i) {
                     const T mu = stats->at(i, 0), inv = stats->at(i, 1);
                     // dyh = grad wrt normalized activations
                     double m1 = 0.0, m2 = 0.0;
                     std::vector<double> xh(static_cast<size_t>(D)), dyh(static_cast<size_t>(D));
                     for (int j = 0; j < D; ++j) {
                       xh[static_cast<size_t>(j)] = (tp.val(x).at(i, j) - mu) * inv;
                       dyh[static_cast<size_t>(j)] = G.at(i, j) * tp.val(g)[j];
                       m1 += dyh[static_cast<size_t>(j)];
                       m2 += dyh[static_cast<size_t>(j)] * xh[static_cast<size_t>(j)];
                     }
                     m1 /= D;
                     m2 /= D;
                     if (tp.needs(x)) {
                       for (int j = 0; j < D; ++j)
                         tp.grad(x).at(i, j) += static_cast<T>(
                             (dyh[static_cast<size_t>(j)] - m1 - xh[static_cast<size_t>(j)] * m2) *
                             inv);
                     }
                     if (tp.needs(g))
                       for (int j = 0; j < D; ++j)
                         tp.grad(g)[j] += G.at(i, j) * static_cast<T>(xh[static_cast<size_t>(j)]);
                     if (tp.needs(b))
                       for (int j = 0; j < D; ++j) tp.grad(b)[j] += G.at(i, j);
                   }
                 });
}

/// Row-wise softmax of x(R,C).
template <class T>
int softmax_rows(Tape<T>& tp, int x) {
  const Tensor<T>& X = tp.val(x);
  check(X.ndim() == 2, "softmax_rows: expected (R,C)");
  const int R = X.dim(0), C = X.dim(1);
  Tensor<T> y({R, C});
  for (int i = 0; i < R; ++i) {
    double mx = X.at(i, 0);
    for (int j = 1; j < C; ++j) mx = std::max<double>(mx, X.at(i, j));
    double z = 0.0;
    for (int j = 0; j < C; ++j) {
      const double e = std::exp(static_cast<double>(X.at(i, j)) - mx);
      y.at(i, j) = static_cast<T>(e);
      z += e;
    }
    const double izn = 1.0 / z;
    for (int j = 0; j < C; ++j) y.at(i, j) = static_cast<T>(y.at(i, j) * izn);
  }
  return tp.make(std::move(y), tp.needs(x), [&tp, x, R, C, self = static_cast<int>(tp.size())]() {
    if (!tp.needs(x)) return;
    const Tensor<T>& G = tp.grad(self);
    const Tensor<T>& Y = tp.val(self);
    for (int i = 0; i < R; ++i) {
      double dot = 0.0;
      for (int j = 0; j < C; ++j) dot += static_cast<double>(G.at(i, j)) * Y.at(i, j);
      for (int j = 0; j < C; ++j)
        tp.grad(x).at(i, j) += static_cast<T>((G.at(i, j) - dot) * Y.at(i, j));
    }
  });
}

// ---------------------------------------------------------------------------
// Shape plumbing
// ---------------------------------------------------------------------------

/// (C,H,W) -> (H*W, C)
template <class T>
int map_to_tokens(Tape<T>& tp, int x) {
  const Tensor<T>& X = tp.val(x);
  check(X.ndim() == 3, "map_to_tokens: expected (C,H,W)");
  const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
  Tensor<T> y({H * W, C});
  for (int c = 0; c < C; ++c)
    for (int p = 0; p < H * W; ++p) y.at(p, c) = X[static_cast<int64_t>(c) * H * W + p];
  return tp.make(std::move(y), tp.needs(x), [&tp, x, C, H, W, self = static_cast<int>(tp.size())]() {
    if (!tp.needs(x)) return;
    const Tensor<T>& G = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    for (int c = 0; c < C; ++c)
      for (int p = 0; p < H * W; ++p) gx[static_cast<int64_t>(c) * H * W + p] += G.at(p, c);
  });
}

/// (H*W, C) -> (C,H,W)
template <class T>
int tokens_to_map(Tape<T>& tp, int x, int H, int W) {
  const Tensor<T>& X = tp.val(x);
  check(X.ndim() == 2 && X.dim(0) == H * W, "tokens_to_map: bad shapes");
  const int C = X.dim(1);
  Tensor<T> y({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int p = 0; p < H * W; ++p) y[static_cast<int64_t>(c) * H * W + p] = X.at(p, c);
  return tp.make(std::move(y), tp.needs(x), [&tp, x, C, H, W, self = static_cast<int>(tp.size())]() {
    if (!tp.needs(x)) return;
    const Tensor<T>& G = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    for (int c = 0; c < C; ++c)
      for (int p = 0; p < H * W; ++p) gx.at(p, c) += G[static_cast<int64_t>(c) * H * W + p];
  });
}

/// Stack a(La,D) on top of b(Lb,D).
template <class T>
int concat_rows(Tape<T>& tp, int a, int b) {
  const Tensor<T>& A = tp.val(a);
  const Tensor<T>& B = tp.val(b);
  check(A.ndim() == 2 && B.ndim() == 2 && A.dim(1) == B.dim(1), "concat_rows: bad shapes");
  const int la = A.dim(0), lb = B.dim(0), D = A.dim(1);
  Tensor<T> y({la + lb, D});
  std::copy(A.d.begin(), A.d.end(), y.d.begin());
  std::copy(B.d.begin(), B.d.end(), y.d.begin() + A.numel());
  const bool needs = tp.needs(a) || tp.needs(b);
  return tp.make(std::move(y), needs,
                 [&tp, a, b, la, lb, D, self = static_cast<int>(tp.size())]() {
                   const Tensor<T>& G = tp.grad(self);
                   if (tp.needs(a)) {
                     Tensor<T>& ga = tp.grad(a);
                     for (int64_t i = 0; i < static_cast<int64_t>(la) * D; ++i) ga[i] += G[i];
                   }
                   if (tp.needs(b)) {
                     Tensor<T>& gb = tp.grad(b);
                     const int64_t off = static_cast<int64_t>(la) * D;
                     for (int64_t i = 0; i < static_cast<int64_t>(lb) * D; ++i)
                       gb[i] += G[off + i];
                   }
                 });
}

/// Rows [r0, r1) of x(L,D).
template <class T>
int slice_rows(Tape<T>& tp, int x, int r0, int r1) {
  const Tensor<T>& X = tp.val(x);
  check(X.ndim() == 2 && r0 >= 0 && r1 <= X.dim(0) && r0 < r1, "slice_rows: bad range");
  const int D = X.dim(1);
  Tensor<T> y({r1 - r0, D});
  std::copy(X.d.begin() + static_cast<int64_t>(r0) * D, X.d.begin() + static_cast<int64_t>(r1) * D,
            y.d.begin());
  return tp.make(std::move(y), tp.needs(x), [&tp, x, r0, r1, D, self = static_cast<int>(tp.size())]() {
    if (!tp.needs(x)) return;
    const Tensor<T>& G = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    const int64_t off = static_cast<int64_t>(r0) * D;
    for (int64_t i = 0; i < G.numel(); ++i) gx[off + i] += G[i];
  });
}

/// Columns [c0, c1) of x(L,D).
template <class T>
int slice_cols(Tape<T>& tp, int x, int c0, int c1) {
  const Tensor<T>& X = tp.val(x);
  check(X.ndim() == 2 && c0 >= 0 && c1 <= X.dim(1) && c0 < c1, "slice_cols: bad range");
  const int L = X.dim(0), D = X.dim(1), W = c1 - c0;
  Tensor<T> y({L, W});
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < W; ++j) y.at(i, j) = X.at(i, c0 + j);
  return tp.make(std::move(y), tp.needs(x),
                 [&tp, x, c0, L, W, D, self = static_cast<int>(tp.size())]() {
                   (void)D;
                   if (!tp.needs(x)) return;
                   const Tensor<T>& G = tp.grad(self);
                   Tensor<T>& gx = tp.grad(x);
                   for (int i = 0; i < L; ++i)
                     for (int j = 0; j < W; ++j) gx.at(i, c0 + j) += G.at(i, j);
                 });
}

/// Concatenate (L,Di) blocks along columns.
template <class T>
int concat_cols(Tape<T>& tp, const std::vector<int>& xs) {
  check(!xs.empty(), "concat_cols: empty input");
  const int L = tp.val(xs[0]).dim(0);
  int D = 0;
  bool needs = false;
  for (int id : xs) {
    check(tp.val(id).ndim() == 2 && tp.val(id).dim(0) == L, "concat_cols: bad shapes");
    D += tp.val(id).dim(1);
    needs = needs || tp.needs(id);
  }
  Tensor<T> y({L, D});
  int off = 0;
  for (int id : xs) {
    const Tensor<T>& X = tp.val(id);
    const int w = X.dim(1);
    for (int i = 0; i < L; ++i)
      for (int j = 0; j < w; ++j) y.at(i, off + j) = X.at(i, j);
    off += w;
  }
  return tp.make(std::move(y), needs, [&tp, xs, L, self = static_cast<int>(tp.size())]() {
    const Tensor<T>& G = tp.grad(self);
    int off = 0;
    for (int id : xs) {
      const int w = tp.val(id).dim(1);
      if (tp.needs(id)) {
        Tensor<T>& gx = tp.grad(id);
        for (int i = 0; i < L; ++i)
          for (int j = 0; j < w; ++j) gx.at(i, j) += G.at(i, off + j);
      }
      off += w;
    }
  });
}

/// Concatenate (Ci,H,W) maps along channels.
template <class T>
int concat_channels(Tape<T>& tp, const std::vector<int>& xs) {
  check(!xs.empty(), "concat_channels: empty input");
  const int H = tp.val(xs[0]).dim(1), W = tp.val(xs[0]).dim(2);
  int C = 0;
  bool needs = false;
  for (int id : xs) {
    check(tp.val(id).ndim() == 3 && tp.val(id).dim(1) == H && tp.val(id).dim(2) == W,
          "concat_channels: bad shapes");
    C += tp.val(id).dim(0);
    needs = needs || tp.needs(id);
  }
  Tensor<T> y({C, H, W});
  int64_t off = 0;
  for (int id : xs) {
    const Tensor<T>& X = tp.val(id);
    std::copy(X.d.begin(), X.d.end(), y.d.begin() + off);
    off += X.numel();
  }
  return tp.make(std::move(y), needs, [&tp, xs, self = static_cast<int>(tp.size())]() {
    const Tensor<T>& G = tp.grad(self);
    int64_t off = 0;
    for (int id : xs) {
      const int64_t n = tp.val(id).numel();
      if (tp.needs(id)) {
        Tensor<T>& gx = tp.grad(id);
        for (int64_t i = 0; i < n; ++i) gx[i] += G[off + i];
      }
      off += n;
    }
  });
}

// ---------------------------------------------------------------------------
// Resampling / pooling / broadcasting
// ---------------------------------------------------------------------------

/// Bilinear resize of (C,H,W) to (C,Ho,Wo), half-pixel centers.
template <class T>
int bilinear_resize(Tape<T>& tp, int x, int ho, int wo) {
  const Tensor<T>& X = tp.val(x);
  check(X.ndim() == 3, "bilinear_resize: expected (C,H,W)");
  const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
  if (ho == H && wo == W) return x;
  struct Lerp {
    int i0, i1;
    T w0, w1;
  };
  auto make_axis = [](int n_in, int n_out) {
    std::vector<Lerp> v(static_cast<size_t>(n_out));
    const double r = static_cast<double>(n_in) / n_out;
    for (int o = 0; o < n_out; ++o) {
      double s = (o + 0.5) * r - 0.5;
      if (s < 0.0) s = 0.0;
      int i0 = static_cast<int>(s);
      if (i0 > n_in - 1) i0 = n_in - 1;
      int i1 = std::min(i0 + 1, n_in - 1);
      const double f = s - i0;
      v[static_cast<size_t>(o)] = {i0, i1, static_cast<T>(1.0 - f), static_cast<T>(f)};
    }
    return v;
  };
  auto ys = std::make_shared<std::vector<Lerp>>(make_axis(H, ho));
  auto xs = std::make_shared<std::vector<Lerp>>(make_axis(W, wo));
  Tensor<T> y({C, ho, wo});
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < ho; ++oy) {
      const Lerp& ly = (*ys)[static_cast<size_t>(oy)];
      for (int ox = 0; ox < wo; ++ox) {
        const Lerp& lx = (*xs)[static_cast<size_t>(ox)];
        y.at(c, oy, ox) = ly.w0 * (lx.w0 * X.at(c, ly.i0, lx.i0) + lx.w1 * X.at(c, ly.i0, lx.i1)) +
                          ly.w1 * (lx.w0 * X.at(c, ly.i1, lx.i0) + lx.w1 * X.at(c, ly.i1, lx.i1));
      }
    }
  return tp.make(std::move(y), tp.needs(x),
                 [&tp, x, ys, xs, C, ho, wo, self = static_cast<int>(tp.size())]() {
                   if (!tp.needs(x)) return;
                   const Tensor<T>& G = tp.grad(self);
                   Tensor<T>& gx = tp.grad(x);
                   for (int c = 0; c < C; ++c)
                     for (int oy = 0; oy < ho; ++oy) {
                       const Lerp& ly = (*ys)[static_cast<size_t>(oy)];
                       for (int ox = 0; ox < wo; ++ox) {
                         const Lerp& lx = (*xs)[static_cast<size_t>(ox)];
                         const T g = G.at(c, oy, ox);
                         gx.at(c, ly.i0, lx.i0) += ly.w0 * lx.w0 * g;
                         gx.at(c, ly.i0, lx.i1) += ly.w0 * lx.w1 * g;
                         gx.at(c, ly.i1, lx.i0) += ly.w1 * lx.w0 * g;
                         gx.at(c, ly.i1, lx.i1) += ly.w1 * lx.w1 * g;
                       }
                     }
                 });
}

/// (C,H,W) -> (C) spatial mean.
template <class T>
int global_avg_pool(Tape<T>& tp, int x) {
  const Tensor<T>& X = tp.val(x);
  check(X.ndim() == 3, "global_avg_pool: expected (C,H,W)");
  const int C = X.dim(0);
  const int64_t hw = static_cast<int64_t>(X.dim(1)) * X.dim(2);
  Tensor<T> y({C});
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    const T* row = &X.at(c, 0, 0);
    for (int64_t i = 0; i < hw; ++i) s += row[i];
    y[c] = static_cast<T>(s / static_cast<double>(hw));
  }
  return tp.make(std::move(y), tp.needs(x), [&tp, x, C, hw, self = static_cast<int>(tp.size())]() {
    if (!tp.needs(x)) return;
    const Tensor<T>& G = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    const T inv = static_cast<T>(1.0 / static_cast<double>(hw));
    for (int c = 0; c < C; ++c) {
      const T g = G[c] * inv;
      T* row = &gx.at(c, 0, 0);
      for (int64_t i = 0; i < hw; ++i) row[i] += g;
    }
  });
}

/// x(C,H,W) + v(C) broadcast over spatial dims.
template <class T>
int add_channel_bias(Tape<T>& tp, int x, int v) {
  const Tensor<T>& X = tp.val(x);
  const Tensor<T>& V = tp.val(v);
  check(X.ndim() == 3 && V.ndim() == 1 && V.dim(0) == X.dim(0), "add_channel_bias: bad shapes");
  const int C = X.dim(0);
  const int64_t hw = static_cast<int64_t>(X.dim(1)) * X.dim(2);
  Tensor<T> y = X;
  for (int c = 0; c < C; ++c) {
    T* row = &y.at(c, 0, 0);
    for (int64_t i = 0; i < hw; ++i) row[i] += V[c];
  }
  const bool needs = tp.needs(x) || tp.needs(v);
  return tp.make(std::move(y), needs, [&tp, x, v, C, hw, self = static_cast<int>(tp.size())]() {
    const Tensor<T>& G = tp.grad(self);
    if (tp.needs(x)) {
      Tensor<T>& gx = tp.grad(x);
      for (int64_t i = 0; i < G.numel(); ++i) gx[i] += G[i];
    }
    if (tp.needs(v)) {
      Tensor<T>& gv = tp.grad(v);
      for (int c = 0; c < C; ++c) {
        const T* row = &G.at(c, 0, 0);
        T s = T(0);
        for (int64_t i = 0; i < hw; ++i) s += row[i];
        gv[c] += s;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and loss kernels
// ---------------------------------------------------------------------------

template <class T>
int mean_all(Tape<T>& tp, int x) {
  const Tensor<T>& X = tp.val(x);
  double s = 0.0;
  for (int64_t i = 0; i < X.numel(); ++i) s += X[i];
  Tensor<T> y({1});
  y[0] = static_cast<T>(s / static_cast<double>(X.numel()));
  const int64_t n = X.numel();
  return tp.make(std::move(y), tp.needs(x), [&tp, x, n, self = static_cast<int>(tp.size())]() {
    if (!tp.needs(x)) return;
    const T g = tp.grad(self)[0] * static_cast<T>(1.0 / static_cast<double>(n));
    Tensor<T>& gx = tp.grad(x);
    for (int64_t i = 0; i < n; ++i) gx[i] += g;
  });
}

/// y = sum_i coeff_i * scalar_i
template <class T>
int weighted_sum_scalars(Tape<T>& tp, const std::vector<int>& xs, const std::vector<T>& coeffs) {
  check(xs.size() == coeffs.size() && !xs.empty(), "weighted_sum_scalars: bad inputs");
  double s = 0.0;
  bool needs = false;
  for (size_t i = 0; i < xs.size(); ++i) {
    check(tp.val(xs[i]).numel() == 1, "weighted_sum_scalars: non-scalar input");
    s += static_cast<double>(coeffs[i]) * tp.val(xs[i])[0];
    needs = needs || tp.needs(xs[i]);
  }
  Tensor<T> y({1});
  y[0] = static_cast<T>(s);
  return tp.make(std::move(y), needs, [&tp, xs, coeffs, self = static_cast<int>(tp.size())]() {
    const T g = tp.grad(self)[0];
    for (size_t i = 0; i < xs.size(); ++i)
      if (tp.needs(xs[i])) tp.grad(xs[i])[0] += coeffs[i] * g;
  });
}

/// Cosine similarity of two vectors; zero-norm inputs yield 0 with zero grads.
template <class T>
int cosine(Tape<T>& tp, int a, int b) {
  const Tensor<T>& A = tp.val(a);
  const Tensor<T>& B = tp.val(b);
  check(A.same_shape(B) && A.ndim() == 1, "cosine: expected equal-length vectors");
  const int n = A.dim(0);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int i = 0; i < n; ++i) {
    dot += static_cast<double>(A[i]) * B[i];
    na += static_cast<double>(A[i]) * A[i];
    nb += static_cast<double>(B[i]) * B[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  const bool degenerate = na < 1e-12 || nb < 1e-12;
  const double c = degenerate ? 0.0 : dot / (na * nb);
  Tensor<T> y({1});
  y[0] = static_cast<T>(c);
  const bool needs = tp.needs(a) || tp.needs(b);
  return tp.make(std::move(y), needs,
                 [&tp, a, b, n, na, nb, c, degenerate, self = static_cast<int>(tp.size())]() {
                   if (degenerate) return;
                   const double g = tp.grad(self)[0];
                   if (tp.needs(a)) {
                     Tensor<T>& ga = tp.grad(a);
                     for (int i = 0; i < n; ++i)
                       ga[i] += static_cast<T>(
                           g * (tp.val(b)[i] / (na * nb) - c * tp.val(a)[i] / (na * na)));
                   }
                   if (tp.needs(b)) {
                     Tensor<T>& gb = tp.grad(b);
                     for (int i = 0; i < n; ++i)
                       gb[i] += static_cast<T>(
                           g * (tp.val(a)[i] / (na * nb) - c * tp.val(b)[i] / (nb * nb)));
                   }
                 });
}

/// View with a new shape (same element count, same order).
template <class T>
int reshape(Tape<T>& tp, int x, std::vector<int> shape) {
  const Tensor<T>& X = tp.val(x);
  check(Tensor<T>::count(shape) == X.numel(), "reshape: element count mismatch");
  Tensor<T> y;
  y.shape = std::move(shape);
  y.d = X.d;
  return tp.make(std::move(y), tp.needs(x), [&tp, x, self = static_cast<int>(tp.size())]() {
    if (!tp.needs(x)) return;
    const Tensor<T>& G = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    for (int64_t i = 0; i < G.numel(); ++i) gx[i] += G[i];
  });
}

/// Signal range [-1,1] -> probabilities [0,1] with a straight-through clamp:
/// forward clamps, backward passes the 0.5 slope everywhere so high-noise
/// steps keep a training signal even when saturated.
template <class T>
int to_unit_straight_through(Tape<T>& tp, int x) {
  const Tensor<T>& X = tp.val(x);
  Tensor<T> y(X.shape);
  for (int64_t i = 0; i < X.numel(); ++i) {
    const double v = (static_cast<double>(X[i]) + 1.0) * 0.5;
    y[i] = static_cast<T>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
  }
  return tp.make(std::move(y), tp.needs(x), [&tp, x, self = static_cast<int>(tp.size())]() {
    if (!tp.needs(x)) return;
    const Tensor<T>& G = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    for (int64_t i = 0; i < G.numel(); ++i) gx[i] += static_cast<T>(0.5) * G[i];
  });
}

}  // namespace diffmss::nn
