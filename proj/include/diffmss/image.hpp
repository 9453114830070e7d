// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "diffmss/tensor.hpp"

namespace diffmss {

// Images are (3,H,W) tensors in [0,1]; masks are (H,W) tensors.
// On-disk formats are binary netpbm: P6 for color, P5 for grayscale.

namespace detail {
inline int pnm_token(std::istream& in) {
  // Skips whitespace and '#' comment lines, returns next integer.
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      in.putback(c);
      int v;
      in >> v;
      return v;
    }
  }
  throw std::runtime_error("truncated pnm header");
}
}  // namespace detail

inline void write_ppm(const std::string& path, const Tensor<double>& img) {
  check(img.ndim() == 3 && img.dim(0) == 3, "write_ppm: expected (3,H,W)");
  const int h = img.dim(1), w = img.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        row[static_cast<size_t>(x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

inline Tensor<double> read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw std::runtime_error(path + ": not a P6 ppm");
  const int w = detail::pnm_token(in);
  const int h = detail::pnm_token(in);
  const int maxv = detail::pnm_token(in);
  in.get();  // single whitespace after maxval
  if (maxv != 255) throw std::runtime_error(path + ": unsupported maxval");
  Tensor<double> img({3, h, w});
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!in) throw std::runtime_error(path + ": truncated pixel data");
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = row[static_cast<size_t>(x) * 3 + c] / 255.0;
  }
  return img;
}

inline void write_pgm(const std::string& path, const Tensor<double>& gray) {
  check(gray.ndim() == 2, "write_pgm: expected (H,W)");
  const int h = gray.dim(0), w = gray.dim(1);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = std::clamp(gray.at(y, x), 0.0, 1.0);
      row[static_cast<size_t>(x)] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

inline Tensor<double> read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P5") throw std::runtime_error(path + ": not a P5 pgm");
  const int w = detail::pnm_token(in);
  const int h = detail::pnm_token(in);
  const int maxv = detail::pnm_token(in);
  in.get();
  if (maxv != 255) throw std::runtime_error(path + ": unsupported maxval");
  Tensor<double> gray({h, w});
  std::vector<unsigned char> row(static_cast<size_t>(w));
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!in) throw std::runtime_error(path + ": truncated pixel data");
    for (int x = 0; x < w; ++x) gray.at(y, x) = row[static_cast<size_t>(x)] / 255.0;
  }
  return gray;
}

/// Masks persist as 8-bit grayscale, foreground 255; loads binarize at 128.
inline Tensor<double> load_binary_mask(const std::string& path) {
  Tensor<double> g = read_pgm(path);
  for (auto& v : g.d) v = (v * 255.0 >= 128.0) ? 1.0 : 0.0;
  return g;
}

inline double luminance(double r, double g, double b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

/// Bilinear resize of an (H,W) map, half-pixel centers.
inline Tensor<double> resize_bilinear(const Tensor<double>& src, int ho, int wo) {
  check(src.ndim() == 2, "resize_bilinear: expected (H,W)");
  const int h = src.dim(0), w = src.dim(1);
  if (ho == h && wo == w) return src;
  Tensor<double> out({ho, wo});
  for (int oy = 0; oy < ho; ++oy) {
    double sy = (oy + 0.5) * h / ho - 0.5;
    sy = std::max(0.0, sy);
    const int y0 = std::min(static_cast<int>(sy), h - 1), y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int ox = 0; ox < wo; ++ox) {
      double sx = (ox + 0.5) * w / wo - 0.5;
      sx = std::max(0.0, sx);
      const int x0 = std::min(static_cast<int>(sx), w - 1), x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      out.at(oy, ox) = (1 - fy) * ((1 - fx) * src.at(y0, x0) + fx * src.at(y0, x1)) +
                       fy * ((1 - fx) * src.at(y1, x0) + fx * src.at(y1, x1));
    }
  }
  return out;
}

}  // namespace diffmss
