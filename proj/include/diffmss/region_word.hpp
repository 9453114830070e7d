// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "diffmss/image.hpp"
#include "diffmss/random.hpp"
#include "diffmss/tensor.hpp"

namespace diffmss {

// ---------------------------------------------------------------------------
// Region / word decomposition and the joint embedding used to score
// region-word similarity (training-time only).
// ---------------------------------------------------------------------------

struct Region {
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // bounding box, half-open
  Tensor<double> crop;                 // (3,bh,bw), pixels outside the component zeroed
  Tensor<double> mask;                 // (bh,bw) binary component mask
  int64_t area = 0;
  int image_h = 0, image_w = 0;
};

struct RegionSet {
  std::vector<Region> regions;
  int height = 0, width = 0;
  int count() const { return static_cast<int>(regions.size()); }
};

struct WordSet {
  std::vector<std::string> words;  // nouns, caption order
  std::vector<int> positions;      // token index in the original caption
  int count() const { return static_cast<int>(words.size()); }
  bool empty() const { return words.empty(); }
};

struct SegmenterParams {
  int max_regions = 8;
};

namespace detail {

inline const std::unordered_set<std::string>& stop_words() {
  static const std::unordered_set<std::string> kStop = {
      "a",     "an",      "the",   "and",   "or",      "of",    "on",    "in",
      "at",    "by",      "to",    "with",  "near",    "above", "below", "under",
      "over",  "beside",  "between", "behind", "before", "it",  "its",   "this",
      "that",  "these",   "those", "is",    "are",     "was",   "were",  "from",
      "as",    "into",    "through", "against", "along", "among", "around"};
  return kStop;
}

inline const std::vector<std::string>& noun_lexicon() {
  static const std::vector<std::string> kNouns = {
      "fish",    "coral",   "starfish", "jellyfish", "rock",     "kelp",   "turtle",
      "crab",    "urchin",  "anemone",  "stone",     "reef",     "seagrass", "sponge",
      "shell",   "ray",     "eel",      "shark",     "seahorse", "octopus", "boulder",
      "weed",    "sand",    "diver",    "wreck",     "plant",    "seabed",  "algae"};
  return kNouns;
}

inline int noun_index(const std::string& w) {
  const auto& lex = noun_lexicon();
  for (size_t i = 0; i < lex.size(); ++i)
    if (lex[i] == w) return static_cast<int>(i);
  return -1;
}

inline std::string normalize_token(const std::string& tok) {
  std::string out;
  for (char c : tok) {
    if (std::isalpha(static_cast<unsigned char>(c)))
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

/// Otsu threshold over a 256-bin histogram of values in [0,1].
inline double otsu_threshold(const std::vector<double>& values) {
  std::array<int64_t, 256> hist{};
  for (double v : values) {
    int b = static_cast<int>(v * 255.0);
    b = std::clamp(b, 0, 255);
    ++hist[static_cast<size_t>(b)];
  }
  const double total = static_cast<double>(values.size());
  double sum_all = 0.0;
  for (int i = 0; i < 256; ++i) sum_all += i * static_cast<double>(hist[static_cast<size_t>(i)]);
  double w0 = 0.0, sum0 = 0.0, best_var = -1.0;
  int best_bin = 127;
  for (int i = 0; i < 256; ++i) {
    w0 += static_cast<double>(hist[static_cast<size_t>(i)]);
    if (w0 == 0.0) continue;
    const double w1 = total - w0;
    if (w1 == 0.0) break;
    sum0 += i * static_cast<double>(hist[static_cast<size_t>(i)]);
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double var = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (var > best_var) {
      best_var = var;
      best_bin = i;
    }
  }
  return (best_bin + 0.5) / 255.0;
}

}  // namespace detail

/// Saliency-prior channel: luminance contrast plus warm-color excess,
/// min-max normalized. Returns an (H,W) map in [0,1].
inline Tensor<double> saliency_prior(const Tensor<double>& image) {
  const int h = image.dim(1), w = image.dim(2);
  Tensor<double> prior({h, w});
  double mean_lum = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      mean_lum += luminance(image.at(0, y, x), image.at(1, y, x), image.at(2, y, x));
  mean_lum /= static_cast<double>(h) * w;
  double lo = 1e30, hi = -1e30;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double r = image.at(0, y, x), g = image.at(1, y, x), b = image.at(2, y, x);
      const double lum = luminance(r, g, b);
      const double v = std::fabs(lum - mean_lum) + std::max(0.0, r - 0.5 * (g + b));
      prior.at(y, x) = v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (hi - lo < 1e-12) {
    prior.fill(0.0);
  } else {
    for (auto& v : prior.d) v = (v - lo) / (hi - lo);
  }
  return prior;
}

namespace detail {
inline Region make_region(const Tensor<double>& image, const Tensor<double>& comp_mask, int y0,
                          int x0, int y1, int x1, int64_t area) {
  Region r;
  r.y0 = y0;
  r.x0 = x0;
  r.y1 = y1;
  r.x1 = x1;
  r.area = area;
  r.image_h = image.dim(1);
  r.image_w = image.dim(2);
  const int bh = y1 - y0, bw = x1 - x0;
  r.crop = Tensor<double>({3, bh, bw});
  r.mask = Tensor<double>({bh, bw});
  for (int y = 0; y < bh; ++y)
    for (int x = 0; x < bw; ++x) {
      const double m = comp_mask.at(y0 + y, x0 + x);
      r.mask.at(y, x) = m;
      for (int c = 0; c < 3; ++c) r.crop.at(c, y, x) = m * image.at(c, y0 + y, x0 + x);
    }
  return r;
}
}  // namespace detail

/// Build a RegionSet from externally supplied binary masks (one per region).
inline RegionSet regions_from_masks(const Tensor<double>& image,
                                    const std::vector<Tensor<double>>& masks) {
  RegionSet rs;
  rs.height = image.dim(1);
  rs.width = image.dim(2);
  for (const auto& m : masks) {
    check(m.dim(0) == rs.height && m.dim(1) == rs.width, "regions_from_masks: size mismatch");
    int y0 = rs.height, x0 = rs.width, y1 = 0, x1 = 0;
    int64_t area = 0;
    for (int y = 0; y < rs.height; ++y)
      for (int x = 0; x < rs.width; ++x)
        if (m.at(y, x) > 0.0) {
          ++area;
          y0 = std::min(y0, y);
          x0 = std::min(x0, x);
          y1 = std::max(y1, y + 1);
          x1 = std::max(x1, x + 1);
        }
    if (area > 0) rs.regions.push_back(detail::make_region(image, m, y0, x0, y1, x1, area));
  }
  check(!rs.regions.empty(), "regions_from_masks: no non-empty masks");
  return rs;
}

/// Decompose an image into candidate regions: Otsu threshold on the saliency
/// prior, 4-connected components, largest `max_regions` kept. A degenerate
/// image yields one whole-image region.
inline RegionSet segment_image_regions(const Tensor<double>& image,
                                       const SegmenterParams& params = {}) {
  check(image.ndim() == 3 && image.dim(0) == 3, "segment_image_regions: expected (3,H,W)");
  const int h = image.dim(1), w = image.dim(2);
  check(h >= 16 && w >= 16, "segment_image_regions: image too small");
  RegionSet rs;
  rs.height = h;
  rs.width = w;

  const Tensor<double> prior = saliency_prior(image);
  double lo = 1e30, hi = -1e30;
  for (double v : prior.d) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  auto whole_image = [&]() {
    Tensor<double> all({h, w}, 1.0);
    rs.regions.push_back(detail::make_region(image, all, 0, 0, h, w, static_cast<int64_t>(h) * w));
    return rs;
  };
  if (hi - lo < 1e-12) return whole_image();

  const double thr = detail::otsu_threshold(prior.d);
  Tensor<int> label({h, w}, -1);
  struct Comp {
    int id;
    int64_t area;
    int y0, x0, y1, x1;
  };
  std::vector<Comp> comps;
  int next_id = 0;
  for (int sy = 0; sy < h; ++sy)
    for (int sx = 0; sx < w; ++sx) {
      if (prior.at(sy, sx) <= thr || label.at(sy, sx) >= 0) continue;
      Comp c{next_id, 0, sy, sx, sy + 1, sx + 1};
      std::deque<std::pair<int, int>> q{{sy, sx}};
      label.at(sy, sx) = next_id;
      while (!q.empty()) {
        auto [y, x] = q.front();
        q.pop_front();
        ++c.area;
        c.y0 = std::min(c.y0, y);
        c.x0 = std::min(c.x0, x);
        c.y1 = std::max(c.y1, y + 1);
        c.x1 = std::max(c.x1, x + 1);
        const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int ny = y + dy[k], nx = x + dx[k];
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          if (prior.at(ny, nx) > thr && label.at(ny, nx) < 0) {
            label.at(ny, nx) = next_id;
            q.emplace_back(ny, nx);
          }
        }
      }
      comps.push_back(c);
      ++next_id;
    }
  if (comps.empty()) return whole_image();

  std::stable_sort(comps.begin(), comps.end(),
                   [](const Comp& a, const Comp& b) { return a.area > b.area; });
  if (static_cast<int>(comps.size()) > params.max_regions)
    comps.resize(static_cast<size_t>(params.max_regions));
  for (const Comp& c : comps) {
    Tensor<double> m({h, w});
    for (int y = c.y0; y < c.y1; ++y)
      for (int x = c.x0; x < c.x1; ++x)
        if (label.at(y, x) == c.id) m.at(y, x) = 1.0;
    rs.regions.push_back(detail::make_region(image, m, c.y0, c.x0, c.y1, c.x1, c.area));
  }
  return rs;
}

/// Ordered noun extraction: stop words and non-noun tokens are dropped.
/// An empty result signals that the sample is skipped for distillation.
inline WordSet segment_text_words(const std::string& caption) {
  WordSet ws;
  std::string tok;
  int pos = 0;
  auto flush = [&]() {
    if (tok.empty()) return;
    const std::string norm = detail::normalize_token(tok);
    if (!norm.empty() && !detail::stop_words().count(norm) && detail::noun_index(norm) >= 0) {
      ws.words.push_back(norm);
      ws.positions.push_back(pos);
    }
    ++pos;
    tok.clear();
  };
  for (char c : caption) {
    if (std::isspace(static_cast<unsigned char>(c)))
      flush();
    else
      tok += c;
  }
  flush();
  return ws;
}

// ---------------------------------------------------------------------------
// Embedding backend
// ---------------------------------------------------------------------------

/// Joint-space encoder contract: both sides must produce vectors of the same
/// dimension and be deterministic for fixed inputs.
class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual int dim() const = 0;
  virtual Tensor<double> embed_region(const Region& r) const = 0;
  virtual Tensor<double> embed_word(const std::string& w) const = 0;
};

/// Deterministic training-free backend: pooled color/shape statistics for
/// regions and a hashed one-hot for words, each pushed through a fixed
/// seeded projection and L2-normalized.
class FeaturizedBackend final : public EmbeddingBackend {
 public:
  static constexpr int kRegionFeatures = 16;
  static constexpr int kHashBuckets = 64;

  explicit FeaturizedBackend(uint64_t seed = 1234, int d = 64) : d_(d) {
    RandomStream rng(seed);
    const int vocab = static_cast<int>(detail::noun_lexicon().size()) + kHashBuckets;
    proj_region_ = Tensor<double>({d, kRegionFeatures});
    rng.fill_normal(proj_region_, 0.0, 1.0 / std::sqrt(double(kRegionFeatures)));
    proj_word_ = Tensor<double>({d, vocab});
    rng.fill_normal(proj_word_, 0.0, 1.0);
  }

  int dim() const override { return d_; }

  Tensor<double> embed_region(const Region& r) const override {
    const auto f = region_features(r);
    Tensor<double> e({d_});
    for (int i = 0; i < d_; ++i) {
      double s = 0.0;
      for (int j = 0; j < kRegionFeatures; ++j) s += proj_region_.at(i, j) * f[static_cast<size_t>(j)];
      e[i] = s;
    }
    l2_normalize(e);
    return e;
  }

  Tensor<double> embed_word(const std::string& w) const override {
    const std::string norm = detail::normalize_token(w);
    int idx = detail::noun_index(norm);
    if (idx < 0)
      idx = static_cast<int>(detail::noun_lexicon().size()) +
            static_cast<int>(fnv1a(norm) % kHashBuckets);
    Tensor<double> e({d_});
    for (int i = 0; i < d_; ++i) e[i] = proj_word_.at(i, idx);
    l2_normalize(e);
    return e;
  }

  static std::vector<double> region_features(const Region& r) {
    std::vector<double> f(kRegionFeatures, 0.0);
    const int bh = r.mask.dim(0), bw = r.mask.dim(1);
    double n = 0.0;
    std::array<double, 3> mean{}, var{};
    double lum_mean = 0.0, lum_var = 0.0, cy = 0.0, cx = 0.0;
    int64_t boundary = 0;
    for (int y = 0; y < bh; ++y)
      for (int x = 0; x < bw; ++x) {
        if (r.mask.at(y, x) <= 0.0) continue;
        n += 1.0;
        cy += y;
        cx += x;
        for (int c = 0; c < 3; ++c) mean[static_cast<size_t>(c)] += r.crop.at(c, y, x);
        lum_mean += luminance(r.crop.at(0, y, x), r.crop.at(1, y, x), r.crop.at(2, y, x));
        const bool edge = y == 0 || x == 0 || y == bh - 1 || x == bw - 1 ||
                          r.mask.at(y - 1, x) <= 0.0 || r.mask.at(y + 1, x) <= 0.0 ||
                          r.mask.at(y, x - 1) <= 0.0 || r.mask.at(y, x + 1) <= 0.0;
        if (edge) ++boundary;
      }
    if (n == 0.0) return f;
    for (auto& m : mean) m /= n;
    lum_mean /= n;
    for (int y = 0; y < bh; ++y)
      for (int x = 0; x < bw; ++x) {
        if (r.mask.at(y, x) <= 0.0) continue;
        for (int c = 0; c < 3; ++c) {
          const double d = r.crop.at(c, y, x) - mean[static_cast<size_t>(c)];
          var[static_cast<size_t>(c)] += d * d;
        }
        const double dl =
            luminance(r.crop.at(0, y, x), r.crop.at(1, y, x), r.crop.at(2, y, x)) - lum_mean;
        lum_var += dl * dl;
      }
    f[0] = mean[0];
    f[1] = mean[1];
    f[2] = mean[2];
    f[3] = std::sqrt(var[0] / n);
    f[4] = std::sqrt(var[1] / n);
    f[5] = std::sqrt(var[2] / n);
    f[6] = lum_mean;
    f[7] = std::sqrt(lum_var / n);
    f[8] = n / (static_cast<double>(r.image_h) * r.image_w);
    f[9] = static_cast<double>(bh) / (bh + bw);
    f[10] = n / (static_cast<double>(bh) * bw);
    f[11] = (r.y0 + cy / n) / r.image_h;
    f[12] = (r.x0 + cx / n) / r.image_w;
    f[13] = static_cast<double>(boundary) / n;
    f[14] = static_cast<double>(bh) / r.image_h;
    f[15] = static_cast<double>(bw) / r.image_w;
    return f;
  }

 private:
  static void l2_normalize(Tensor<double>& v) {
    double s = 0.0;
    for (double x : v.d) s += x * x;
    s = std::sqrt(s);
    if (s > 1e-12)
      for (double& x : v.d) x /= s;
  }
  static uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    return h;
  }

  int d_;
  Tensor<double> proj_region_;
  Tensor<double> proj_word_;
};

// ---------------------------------------------------------------------------
// Region-word similarity and salient token selection
// ---------------------------------------------------------------------------

/// Per-word scores: softmax over words of each region's similarity row,
/// averaged over regions. The result is a probability vector over words.
inline std::vector<double> region_word_scores(const RegionSet& regions, const WordSet& words,
                                              const EmbeddingBackend& backend) {
  check(regions.count() >= 1 && words.count() >= 1, "region_word_scores: need M,N >= 1");
  const int m = regions.count(), n = words.count();
  std::vector<Tensor<double>> we(static_cast<size_t>(n));
  for (int j = 0; j < n; ++j) {
    we[static_cast<size_t>(j)] = backend.embed_word(words.words[static_cast<size_t>(j)]);
    check(we[static_cast<size_t>(j)].dim(0) == backend.dim(),
          "region_word_scores: embedding dimension mismatch");
  }
  std::vector<double> scores(static_cast<size_t>(n), 0.0);
  for (int i = 0; i < m; ++i) {
    const Tensor<double> re = backend.embed_region(regions.regions[static_cast<size_t>(i)]);
    check(re.dim(0) == backend.dim(), "region_word_scores: embedding dimension mismatch");
    std::vector<double> logits(static_cast<size_t>(n));
    double mx = -1e30;
    for (int j = 0; j < n; ++j) {
      double dot = 0.0;
      for (int k = 0; k < backend.dim(); ++k) dot += re[k] * we[static_cast<size_t>(j)][k];
      logits[static_cast<size_t>(j)] = dot;
      mx = std::max(mx, dot);
    }
    double z = 0.0;
    for (double& l : logits) {
      l = std::exp(l - mx);
      z += l;
    }
    for (int j = 0; j < n; ++j) scores[static_cast<size_t>(j)] += logits[static_cast<size_t>(j)] / z / m;
  }
  return scores;
}

struct TokenSelection {
  std::vector<double> scores;               // R, one per candidate word
  double mean_threshold = 0.0;              // m
  std::vector<int> selected;                // indices with R[k] >= m
  std::vector<Tensor<double>> selected_embeddings;
};

/// Threshold at the mean score; ties at the mean are included, so the
/// selection is never empty.
inline TokenSelection select_salient_tokens(const std::vector<double>& scores,
                                            const WordSet& words) {
  check(!scores.empty(), "select_salient_tokens: empty scores");
  check(scores.size() == static_cast<size_t>(words.count()),
        "select_salient_tokens: score/word count mismatch");
  TokenSelection sel;
  sel.scores = scores;
  double m = 0.0;
  for (double s : scores) m += s;
  m /= static_cast<double>(scores.size());
  sel.mean_threshold = m;
  for (size_t k = 0; k < scores.size(); ++k)
    if (scores[k] >= m) sel.selected.push_back(static_cast<int>(k));
  return sel;
}

inline TokenSelection select_salient_tokens(const std::vector<double>& scores,
                                            const WordSet& words,
                                            const EmbeddingBackend& backend) {
  TokenSelection sel = select_salient_tokens(scores, words);
  for (int k : sel.selected)
    sel.selected_embeddings.push_back(backend.embed_word(words.words[static_cast<size_t>(k)]));
  return sel;
}

}  // namespace diffmss
