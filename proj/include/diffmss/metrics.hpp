// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "diffmss/tensor.hpp"

namespace diffmss::metrics {

// Saliency evaluation measures between a prediction in [0,1] and a binary
// reference mask. Constructions follow the canonical reference codes for the
// weighted F-measure (beta^2 = 1, 7x7 Gaussian with sigma 5), the enhanced
// alignment measure (max over 256 thresholds), and the structure measure
// (alpha = 0.5). Each has an independently written oracle in the test suite.

inline constexpr double kEps = 2.220446049250313e-16;

inline bool is_binary(const Tensor<double>& m) {
  for (double v : m.d)
    if (v != 0.0 && v != 1.0) return false;
  return true;
}

inline double mae(const Tensor<double>& pred, const Tensor<double>& gt) {
  check(pred.same_shape(gt), "mae: shape mismatch");
  double s = 0.0;
  for (int64_t i = 0; i < pred.numel(); ++i) s += std::fabs(pred[i] - gt[i]);
  return s / static_cast<double>(pred.numel());
}

// -- weighted F-measure ------------------------------------------------------

namespace detail {

/// Exact nearest-foreground assignment. Ties resolve to the first foreground
/// pixel in row-major order, matching the test oracle's scan.
struct NearestField {
  std::vector<double> dist;    // Euclidean distance to nearest foreground
  std::vector<int64_t> index;  // linear (row-major) index of that pixel
};

inline NearestField nearest_foreground(const Tensor<double>& gt) {
  const int h = gt.dim(0), w = gt.dim(1);
  std::vector<int64_t> fg;
  for (int64_t i = 0; i < gt.numel(); ++i)
    if (gt[i] > 0.0) fg.push_back(i);
  check(!fg.empty(), "nearest_foreground: empty reference mask");
  NearestField nf;
  nf.dist.assign(static_cast<size_t>(gt.numel()), 0.0);
  nf.index.assign(static_cast<size_t>(gt.numel()), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int64_t p = static_cast<int64_t>(y) * w + x;
      if (gt[p] > 0.0) {
        nf.index[static_cast<size_t>(p)] = p;
        continue;
      }
      int64_t best = -1;
      int64_t best_d2 = INT64_MAX;
      for (int64_t f : fg) {
        const int fy = static_cast<int>(f / w), fx = static_cast<int>(f % w);
        const int64_t d2 =
            static_cast<int64_t>(fy - y) * (fy - y) + static_cast<int64_t>(fx - x) * (fx - x);
        if (d2 < best_d2) {
          best_d2 = d2;
          best = f;
        }
      }
      nf.dist[static_cast<size_t>(p)] = std::sqrt(static_cast<double>(best_d2));
      nf.index[static_cast<size_t>(p)] = best;
    }
  return nf;
}

/// Normalized kxk Gaussian kernel.
inline std::vector<double> gaussian_kernel(int k, double sigma) {
  std::vector<double> ker(static_cast<size_t>(k) * k);
  const int r = k / 2;
  double s = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const double v =
          std::exp(-((i - r) * (i - r) + (j - r) * (j - r)) / (2.0 * sigma * sigma));
      ker[static_cast<size_t>(i) * k + j] = v;
      s += v;
    }
  for (double& v : ker) v /= s;
  return ker;
}

/// Zero-padded correlation with a kxk kernel.
inline Tensor<double> filter_zero_pad(const Tensor<double>& x, const std::vector<double>& ker,
                                      int k) {
  const int h = x.dim(0), w = x.dim(1), r = k / 2;
  Tensor<double> y({h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int di = -r; di <= r; ++di)
        for (int dj = -r; dj <= r; ++dj) {
          const int si = i + di, sj = j + dj;
          if (si >= 0 && si < h && sj >= 0 && sj < w)
            acc += ker[static_cast<size_t>(di + r) * k + (dj + r)] * x.at(si, sj);
        }
      y.at(i, j) = acc;
    }
  return y;
}

}  // namespace detail

inline double weighted_fmeasure(const Tensor<double>& pred, const Tensor<double>& gt) {
  check(pred.same_shape(gt), "weighted_fmeasure: shape mismatch");
  check(is_binary(gt), "weighted_fmeasure: reference must be binary");
  const int64_t n = gt.numel();
  double gt_sum = 0.0;
  for (int64_t i = 0; i < n; ++i) gt_sum += gt[i];
  check(gt_sum > 0.0, "weighted_fmeasure: reference has no foreground");

  const detail::NearestField nf = detail::nearest_foreground(gt);
  Tensor<double> E(gt.shape);
  for (int64_t i = 0; i < n; ++i) E[i] = std::fabs(pred[i] - gt[i]);
  Tensor<double> Et = E;
  for (int64_t i = 0; i < n; ++i)
    if (gt[i] == 0.0) Et[i] = E[nf.index[static_cast<size_t>(i)]];
  const auto ker = detail::gaussian_kernel(7, 5.0);
  const Tensor<double> EA = detail::filter_zero_pad(Et, ker, 7);

  double tp_loss = 0.0, fpw = 0.0, ew_fg_sum = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    if (gt[i] > 0.0) {
      const double mine = std::min(E[i], EA[i]);
      ew_fg_sum += mine;  // B = 1 on foreground
      tp_loss += mine;
    } else {
      const double B =
          2.0 - std::exp(std::log(0.5) / 5.0 * nf.dist[static_cast<size_t>(i)]);
      fpw += E[i] * B;
    }
  }
  const double tpw = gt_sum - tp_loss;
  const double recall = 1.0 - ew_fg_sum / gt_sum;
  const double precision = tpw / (kEps + tpw + fpw);
  return 2.0 * precision * recall / (kEps + precision + recall);
}

// -- enhanced alignment (E) measure -----------------------------------------

namespace detail {
inline double e_measure_binary(const Tensor<double>& fm, const Tensor<double>& gt) {
  const int64_t n = gt.numel();
  double gs = 0.0, fs = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    gs += gt[i];
    fs += fm[i];
  }
  double sum_enh = 0.0;
  if (gs == 0.0) {
    sum_enh = static_cast<double>(n) - fs;  // enhanced = 1 - fm
  } else if (gs == static_cast<double>(n)) {
    sum_enh = fs;  // enhanced = fm
  } else {
    const double mu_f = fs / n, mu_g = gs / n;
    for (int64_t i = 0; i < n; ++i) {
      const double pf = fm[i] - mu_f, pg = gt[i] - mu_g;
      const double align = 2.0 * pf * pg / (pf * pf + pg * pg + kEps);
      sum_enh += (align + 1.0) * (align + 1.0) / 4.0;
    }
  }
  return sum_enh / static_cast<double>(n);
}
}  // namespace detail

/// Max over the 256 thresholds k/256, k = 1..256, binarizing pred >= threshold.
inline double e_measure_max(const Tensor<double>& pred, const Tensor<double>& gt) {
  check(pred.same_shape(gt), "e_measure_max: shape mismatch");
  check(is_binary(gt), "e_measure_max: reference must be binary");
  Tensor<double> fm(pred.shape);
  double best = 0.0;
  for (int k = 1; k <= 256; ++k) {
    const double thr = k / 256.0;
    for (int64_t i = 0; i < pred.numel(); ++i) fm[i] = pred[i] >= thr ? 1.0 : 0.0;
    best = std::max(best, detail::e_measure_binary(fm, gt));
  }
  return best;
}

// -- structure (S) measure ---------------------------------------------------

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double std_unbiased(const std::vector<double>& v) {
  if (v.size() <= 1) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline double object_score(const std::vector<double>& vals) {
  const double x = mean_of(vals);
  const double sig = std_unbiased(vals);
  return 2.0 * x / (x * x + 1.0 + sig + kEps);
}

inline double s_object(const Tensor<double>& pred, const Tensor<double>& gt) {
  std::vector<double> fg_vals, bg_vals;
  double u = 0.0;
  for (int64_t i = 0; i < gt.numel(); ++i) {
    if (gt[i] > 0.0) {
      fg_vals.push_back(pred[i]);
      u += 1.0;
    } else {
      bg_vals.push_back(1.0 - pred[i]);
    }
  }
  u /= static_cast<double>(gt.numel());
  return u * object_score(fg_vals) + (1.0 - u) * object_score(bg_vals);
}

/// Region similarity on one quadrant (view given by row/col ranges).
inline double region_ssim(const Tensor<double>& pred, const Tensor<double>& gt, int r0, int r1,
                          int c0, int c1) {
  const int64_t n = static_cast<int64_t>(r1 - r0) * (c1 - c0);
  double mx = 0.0, my = 0.0;
  for (int i = r0; i < r1; ++i)
    for (int j = c0; j < c1; ++j) {
      mx += pred.at(i, j);
      my += gt.at(i, j);
    }
  mx /= n;
  my /= n;
  double sx = 0.0, sy = 0.0, sxy = 0.0;
  for (int i = r0; i < r1; ++i)
    for (int j = c0; j < c1; ++j) {
      const double dx = pred.at(i, j) - mx, dy = gt.at(i, j) - my;
      sx += dx * dx;
      sy += dy * dy;
      sxy += dx * dy;
    }
  const double denom = static_cast<double>(n) - 1.0 + kEps;
  sx /= denom;
  sy /= denom;
  sxy /= denom;
  const double a = 4.0 * mx * my * sxy;
  const double b = (mx * mx + my * my) * (sx + sy);
  if (a != 0.0) return a / (b + kEps);
  return b == 0.0 ? 1.0 : 0.0;
}

inline double s_region(const Tensor<double>& pred, const Tensor<double>& gt) {
  const int h = gt.dim(0), w = gt.dim(1);
  // Foreground centroid with 1-indexed rounding, as in the reference code.
  double total = 0.0, sx = 0.0, sy = 0.0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      total += gt.at(i, j);
      sx += gt.at(i, j) * (j + 1);
      sy += gt.at(i, j) * (i + 1);
    }
  const int X = static_cast<int>(std::round(sx / total));
  const int Y = static_cast<int>(std::round(sy / total));
  const double area = static_cast<double>(h) * w;
  const double w1 = static_cast<double>(X) * Y / area;
  const double w2 = static_cast<double>(w - X) * Y / area;
  const double w3 = static_cast<double>(X) * (h - Y) / area;
  const double w4 = 1.0 - w1 - w2 - w3;
  double q = 0.0;
  if (X >= 1 && Y >= 1) q += w1 * region_ssim(pred, gt, 0, Y, 0, X);
  if (X < w && Y >= 1) q += w2 * region_ssim(pred, gt, 0, Y, X, w);
  if (X >= 1 && Y < h) q += w3 * region_ssim(pred, gt, Y, h, 0, X);
  if (X < w && Y < h) q += w4 * region_ssim(pred, gt, Y, h, X, w);
  return q;
}

}  // namespace detail

inline double s_measure(const Tensor<double>& pred, const Tensor<double>& gt) {
  check(pred.same_shape(gt), "s_measure: shape mismatch");
  check(is_binary(gt), "s_measure: reference must be binary");
  double y = 0.0;
  for (int64_t i = 0; i < gt.numel(); ++i) y += gt[i];
  y /= static_cast<double>(gt.numel());
  double mp = 0.0;
  for (int64_t i = 0; i < pred.numel(); ++i) mp += pred[i];
  mp /= static_cast<double>(pred.numel());
  if (y == 0.0) return 1.0 - mp;
  if (y == 1.0) return mp;
  const double s = 0.5 * detail::s_object(pred, gt) + 0.5 * detail::s_region(pred, gt);
  return std::max(s, 0.0);
}

// -- aggregation --------------------------------------------------------------

struct ImageMetrics {
  std::string id;
  double mae = 0.0;
  double f_beta_w = 0.0;
  double e_phi_m = 0.0;
  double s_alpha = 0.0;
  bool empty_gt = false;
};

/// Per-image records plus the dataset means. Images whose reference mask has
/// no foreground are listed but excluded from every mean.
struct MetricReport {
  double f_beta_w = 0.0;
  double e_phi_m = 0.0;
  double s_alpha = 0.0;
  double mae = 0.0;
  int evaluated = 0;
  int excluded_empty_gt = 0;
  std::vector<ImageMetrics> per_image;

  void add(const std::string& id, const Tensor<double>& pred, const Tensor<double>& gt) {
    ImageMetrics im;
    im.id = id;
    double fg = 0.0;
    for (double v : gt.d) fg += v;
    im.mae = mae_only(pred, gt);
    if (fg == 0.0) {
      im.empty_gt = true;
      ++excluded_empty_gt;
    } else {
      im.f_beta_w = weighted_fmeasure(pred, gt);
      im.e_phi_m = e_measure_max(pred, gt);
      im.s_alpha = s_measure(pred, gt);
      f_beta_w += im.f_beta_w;
      e_phi_m += im.e_phi_m;
      s_alpha += im.s_alpha;
      mae += im.mae;
      ++evaluated;
    }
    per_image.push_back(std::move(im));
  }

  void finalize() {
    if (evaluated == 0) return;
    f_beta_w /= evaluated;
    e_phi_m /= evaluated;
    s_alpha /= evaluated;
    mae /= evaluated;
  }

 private:
  static double mae_only(const Tensor<double>& p, const Tensor<double>& g) {
    return diffmss::metrics::mae(p, g);
  }
};

}  // namespace diffmss::metrics
