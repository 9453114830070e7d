// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "diffmss/image.hpp"
#include "diffmss/random.hpp"

namespace diffmss {

// Seeded scene generator: 1-3 bright "organisms" over a textured deep-water
// background with dark distractors, then a degradation chain (blue-green
// cast, contrast loss, blur, particle speckle). The reference mask is the
// exact union of the salient shape rasterizations and is never degraded.

struct Scene {
  Tensor<double> image;  // (3,S,S) degraded
  Tensor<double> mask;   // (S,S) binary
  std::string caption;
  std::vector<std::string> salient_classes;
  std::vector<std::string> distractor_classes;
};

namespace synth {

struct Rgb {
  double r, g, b;
};

inline void paint_disc(Tensor<double>& img, Tensor<double>* mask, double cy, double cx, double ry,
                       double rx, double angle, const Rgb& col, RandomStream& rng) {
  const int h = img.dim(1), w = img.dim(2);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double rr = std::max(ry, rx) + 1.0;
  const int y0 = std::max(0, static_cast<int>(cy - rr)), y1 = std::min(h - 1, static_cast<int>(cy + rr));
  const int x0 = std::max(0, static_cast<int>(cx - rr)), x1 = std::min(w - 1, static_cast<int>(cx + rr));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dy = y - cy, dx = x - cx;
      const double u = (ca * dx + sa * dy) / rx;
      const double v = (-sa * dx + ca * dy) / ry;
      const double q = u * u + v * v;
      if (q > 1.0) continue;
      const double shade = 0.85 + 0.25 * (1.0 - q) + rng.uniform(-0.03, 0.03);
      img.at(0, y, x) = std::clamp(col.r * shade, 0.0, 1.0);
      img.at(1, y, x) = std::clamp(col.g * shade, 0.0, 1.0);
      img.at(2, y, x) = std::clamp(col.b * shade, 0.0, 1.0);
      if (mask) mask->at(y, x) = 1.0;
    }
}

inline void paint_star(Tensor<double>& img, Tensor<double>* mask, double cy, double cx, double r,
                       double phase, const Rgb& col, RandomStream& rng) {
  const int h = img.dim(1), w = img.dim(2);
  const int y0 = std::max(0, static_cast<int>(cy - r - 1)), y1 = std::min(h - 1, static_cast<int>(cy + r + 1));
  const int x0 = std::max(0, static_cast<int>(cx - r - 1)), x1 = std::min(w - 1, static_cast<int>(cx + r + 1));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dy = y - cy, dx = x - cx;
      const double dist = std::sqrt(dy * dy + dx * dx);
      const double theta = std::atan2(dy, dx);
      const double rmax = r * (0.45 + 0.55 * 0.5 * (1.0 + std::cos(5.0 * (theta - phase))));
      if (dist > rmax) continue;
      const double shade = 0.85 + 0.25 * (1.0 - dist / (rmax + 1e-9)) + rng.uniform(-0.03, 0.03);
      img.at(0, y, x) = std::clamp(col.r * shade, 0.0, 1.0);
      img.at(1, y, x) = std::clamp(col.g * shade, 0.0, 1.0);
      img.at(2, y, x) = std::clamp(col.b * shade, 0.0, 1.0);
      if (mask) mask->at(y, x) = 1.0;
    }
}

struct OrganismSpec {
  std::string cls;
  std::string adjective;
};

inline OrganismSpec paint_salient(Tensor<double>& img, Tensor<double>& mask, int size,
                                  RandomStream& rng) {
  static const char* kClasses[5] = {"fish", "starfish", "jellyfish", "crab", "turtle"};
  const int pick = static_cast<int>(rng.randint(0, 4));
  const double r = size * rng.uniform(0.10, 0.17);
  const double cy = rng.uniform(0.22, 0.78) * size;
  const double cx = rng.uniform(0.22, 0.78) * size;
  OrganismSpec spec;
  spec.cls = kClasses[pick];
  switch (pick) {
    case 0: {  // fish: body + tail
      static const Rgb kPal[3] = {{0.95, 0.55, 0.15}, {0.95, 0.80, 0.25}, {0.86, 0.88, 0.90}};
      static const char* kAdj[3] = {"bright", "golden", "silver"};
      const int p = static_cast<int>(rng.randint(0, 2));
      spec.adjective = kAdj[p];
      const double ang = rng.uniform(-0.4, 0.4);
      paint_disc(img, &mask, cy, cx, r * 0.55, r, ang, kPal[p], rng);
      const double tx = cx - std::cos(ang) * r * 1.05;
      const double ty = cy - std::sin(ang) * r * 1.05;
      paint_disc(img, &mask, ty, tx, r * 0.42, r * 0.38, ang + 0.6, kPal[p], rng);
      break;
    }
    case 1: {  // starfish
      static const Rgb kPal[2] = {{0.95, 0.45, 0.22}, {0.95, 0.58, 0.62}};
      static const char* kAdj[2] = {"bright", "pink"};
      const int p = static_cast<int>(rng.randint(0, 1));
      spec.adjective = kAdj[p];
      paint_star(img, &mask, cy, cx, r * 1.25, rng.uniform(0.0, 6.28), kPal[p], rng);
      break;
    }
    case 2: {  // jellyfish: dome + short tentacles
      static const Rgb kPal[2] = {{0.88, 0.78, 0.92}, {0.92, 0.86, 0.78}};
      static const char* kAdj[2] = {"pale", "glowing"};
      const int p = static_cast<int>(rng.randint(0, 1));
      spec.adjective = kAdj[p];
      paint_disc(img, &mask, cy, cx, r * 0.75, r, 0.0, kPal[p], rng);
      for (int k = -1; k <= 1; ++k)
        paint_disc(img, &mask, cy + r * 0.85, cx + k * r * 0.45, r * 0.5, r * 0.12, 0.0, kPal[p],
                   rng);
      break;
    }
    case 3: {  // crab: body + claws
      static const Rgb kPal[2] = {{0.92, 0.32, 0.20}, {0.95, 0.50, 0.28}};
      static const char* kAdj[2] = {"red", "spotted"};
      const int p = static_cast<int>(rng.randint(0, 1));
      spec.adjective = kAdj[p];
      paint_disc(img, &mask, cy, cx, r * 0.7, r, 0.0, kPal[p], rng);
      paint_disc(img, &mask, cy - r * 0.3, cx - r * 1.05, r * 0.38, r * 0.38, 0.0, kPal[p], rng);
      paint_disc(img, &mask, cy - r * 0.3, cx + r * 1.05, r * 0.38, r * 0.38, 0.0, kPal[p], rng);
      break;
    }
    default: {  // turtle: shell + flippers + head
      static const Rgb kPal[2] = {{0.82, 0.74, 0.45}, {0.70, 0.78, 0.50}};
      static const char* kAdj[2] = {"sandy", "bright"};
      const int p = static_cast<int>(rng.randint(0, 1));
      spec.adjective = kAdj[p];
      paint_disc(img, &mask, cy, cx, r * 0.72, r, 0.0, kPal[p], rng);
      paint_disc(img, &mask, cy, cx + r * 1.15, r * 0.3, r * 0.3, 0.0, kPal[p], rng);
      for (int sy = -1; sy <= 1; sy += 2)
        for (int sx = -1; sx <= 1; sx += 2)
          paint_disc(img, &mask, cy + sy * r * 0.55, cx + sx * r * 0.7, r * 0.26, r * 0.42, 0.6 * sy * sx,
                     kPal[p], rng);
      break;
    }
  }
  return spec;
}

inline std::string paint_distractor(Tensor<double>& img, int size, RandomStream& rng) {
  const int pick = static_cast<int>(rng.randint(0, 2));
  const double cy = rng.uniform(0.55, 0.95) * size;
  const double cx = rng.uniform(0.1, 0.9) * size;
  if (pick == 0) {  // coral: dark branching strokes
    const Rgb col{0.30, 0.09, 0.12};
    const int branches = static_cast<int>(rng.randint(3, 5));
    for (int b = 0; b < branches; ++b) {
      double y = cy, x = cx + rng.uniform(-3.0, 3.0);
      const double drift = rng.uniform(-0.8, 0.8);
      const int steps = static_cast<int>(rng.randint(4, 8));
      for (int s = 0; s < steps; ++s) {
        paint_disc(img, nullptr, y, x, size * 0.018, size * 0.018, 0.0, col, rng);
        y -= size * 0.022;
        x += drift + rng.uniform(-0.7, 0.7);
      }
    }
    return "coral";
  }
  if (pick == 1) {  // rock: dark blob
    const Rgb col{0.16, 0.19, 0.21};
    paint_disc(img, nullptr, cy, cx, size * rng.uniform(0.07, 0.13), size * rng.uniform(0.09, 0.16),
               rng.uniform(0.0, 3.14), col, rng);
    return "rock";
  }
  const Rgb col{0.05, 0.20, 0.11};  // kelp: wavy strands
  const int strands = static_cast<int>(rng.randint(2, 3));
  for (int s = 0; s < strands; ++s) {
    double x = cx + s * size * 0.03 + rng.uniform(-2.0, 2.0);
    const double amp = rng.uniform(1.0, 2.5);
    for (double y = cy; y > cy - size * 0.35; y -= size * 0.02)
      paint_disc(img, nullptr, y, x + amp * std::sin(y * 0.35), size * 0.014, size * 0.014, 0.0,
                 col, rng);
  }
  return "kelp";
}

inline void separable_blur(Tensor<double>& img, double sigma) {
  const int h = img.dim(1), w = img.dim(2);
  const int r = 2;
  double k[2 * r + 1];
  double s = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    s += k[i + r];
  }
  for (int i = 0; i <= 2 * r; ++i) k[i] /= s;
  Tensor<double> tmp = img;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += k[i + r] * img.at(c, y, std::clamp(x + i, 0, w - 1));
        tmp.at(c, y, x) = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += k[i + r] * tmp.at(c, std::clamp(y + i, 0, h - 1), x);
        img.at(c, y, x) = acc;
      }
  }
}

}  // namespace synth

inline Scene make_scene(int size, RandomStream& rng) {
  check(size >= 32 && size % 32 == 0, "make_scene: size must be a positive multiple of 32");
  Scene sc;
  sc.image = Tensor<double>({3, size, size});
  sc.mask = Tensor<double>({size, size});

  // Water background: vertical gradient + low-frequency value noise.
  const double base_r = rng.uniform(0.04, 0.09), base_g = rng.uniform(0.26, 0.36),
               base_b = rng.uniform(0.34, 0.46);
  const int grid = 8;
  std::vector<double> noise(static_cast<size_t>(grid + 1) * (grid + 1));
  for (auto& v : noise) v = rng.uniform(-1.0, 1.0);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double fy = static_cast<double>(y) * grid / size, fx = static_cast<double>(x) * grid / size;
      const int gy = static_cast<int>(fy), gx = static_cast<int>(fx);
      const double ty = fy - gy, tx = fx - gx;
      auto n = [&](int a, int b) { return noise[static_cast<size_t>(a) * (grid + 1) + b]; };
      const double nv = (1 - ty) * ((1 - tx) * n(gy, gx) + tx * n(gy, gx + 1)) +
                        ty * ((1 - tx) * n(gy + 1, gx) + tx * n(gy + 1, gx + 1));
      const double depth = 1.0 - 0.35 * y / size;
      sc.image.at(0, y, x) = std::clamp((base_r + 0.015 * nv) * depth, 0.0, 1.0);
      sc.image.at(1, y, x) = std::clamp((base_g + 0.04 * nv) * depth, 0.0, 1.0);
      sc.image.at(2, y, x) = std::clamp((base_b + 0.04 * nv) * depth, 0.0, 1.0);
    }

  const int n_distract = static_cast<int>(rng.randint(1, 2));
  for (int i = 0; i < n_distract; ++i) {
    const std::string cls = synth::paint_distractor(sc.image, size, rng);
    if (std::find(sc.distractor_classes.begin(), sc.distractor_classes.end(), cls) ==
        sc.distractor_classes.end())
      sc.distractor_classes.push_back(cls);
  }

  const double u = rng.uniform();
  const int n_salient = u < 0.5 ? 1 : (u < 0.85 ? 2 : 3);
  std::vector<synth::OrganismSpec> specs;
  for (int i = 0; i < n_salient; ++i)
    specs.push_back(synth::paint_salient(sc.image, sc.mask, size, rng));
  for (const auto& s : specs)
    if (std::find(sc.salient_classes.begin(), sc.salient_classes.end(), s.cls) ==
        sc.salient_classes.end())
      sc.salient_classes.push_back(s.cls);

  // Degradations (image only; the mask stays the exact rendered union).
  const double cast_r = rng.uniform(0.50, 0.65), cast_g = rng.uniform(0.85, 0.95),
               cast_b = rng.uniform(0.90, 1.00);
  const double contrast = rng.uniform(0.60, 0.75);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      sc.image.at(0, y, x) = 0.42 + (sc.image.at(0, y, x) * cast_r - 0.42 * cast_r) * contrast;
      sc.image.at(1, y, x) = 0.42 + (sc.image.at(1, y, x) * cast_g - 0.42 * cast_g) * contrast;
      sc.image.at(2, y, x) = 0.42 + (sc.image.at(2, y, x) * cast_b - 0.42 * cast_b) * contrast;
    }
  synth::separable_blur(sc.image, rng.uniform(0.6, 1.1));
  const int speckles = static_cast<int>(size * size * rng.uniform(0.002, 0.005));
  for (int i = 0; i < speckles; ++i) {
    const int y = static_cast<int>(rng.randint(0, size - 1));
    const int x = static_cast<int>(rng.randint(0, size - 1));
    const double gain = rng.uniform(0.25, 0.55);
    for (int c = 0; c < 3; ++c)
      sc.image.at(c, y, x) = std::clamp(sc.image.at(c, y, x) + gain, 0.0, 1.0);
  }
  for (auto& v : sc.image.d) v = std::clamp(v + 0.015 * (rng.uniform() * 2.0 - 1.0), 0.0, 1.0);

  // Caption names every salient organism and the distractors.
  std::string cap;
  for (size_t i = 0; i < specs.size(); ++i) {
    if (i > 0) cap += i + 1 == specs.size() ? " and " : ", ";
    cap += std::string("a ") + specs[i].adjective + " " + specs[i].cls;
  }
  static const char* kPreps[4] = {"near", "above", "beside", "under"};
  cap += std::string(" ") + kPreps[rng.randint(0, 3)] + " the";
  for (size_t i = 0; i < sc.distractor_classes.size(); ++i) {
    if (i > 0) cap += " and the";
    cap += " dark " + sc.distractor_classes[i];
  }
  sc.caption = cap;
  return sc;
}

/// Writes images/<id>.ppm, masks/<id>.pgm and captions.txt under out_dir.
inline void gen_synthetic(const std::string& out_dir, int count, int size, uint64_t seed) {
  check(count >= 1, "gen_synthetic: count must be >= 1");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "masks");
  std::ofstream captions((fs::path(out_dir) / "captions.txt").string());
  for (int i = 0; i < count; ++i) {
    RandomStream rng(RandomStream::splitmix(RandomStream::splitmix(seed) ^
                                            (static_cast<uint64_t>(i) + 1)));
    const Scene sc = make_scene(size, rng);
    char id[32];
    std::snprintf(id, sizeof id, "img_%05d", i);
    write_ppm((fs::path(out_dir) / "images" / (std::string(id) + ".ppm")).string(), sc.image);
    write_pgm((fs::path(out_dir) / "masks" / (std::string(id) + ".pgm")).string(), sc.mask);
    captions << id << "\t" << sc.caption << "\n";
  }
}

}  // namespace diffmss
