// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "diffmss/image.hpp"

namespace diffmss {

/// One training/eval record. Captions are optional; samples without one are
/// simply excluded from distillation.
struct Sample {
  std::string id;
  Tensor<double> image;  // (3,H,W) in [0,1]
  Tensor<double> mask;   // (H,W) strictly binary
  std::string caption;
  bool has_caption = false;
};

struct DatasetLayout {
  std::string images_subdir;
  std::string masks_subdir;
  std::string captions_file;  // empty = no captions
};

/// Directory adapters. External corpora are plain image/GT folder pairs; the
/// named presets just encode their folder names (files must be .ppm/.pgm).
inline DatasetLayout dataset_layout(const std::string& name) {
  if (name == "synthetic") return {"images", "masks", "captions.txt"};
  if (name == "folders") return {"images", "masks", ""};
  if (name == "usod10k") return {"RGB", "GT", ""};
  if (name == "suim") return {"images", "masks", ""};
  if (name == "ufo120") return {"lrd", "mask", ""};
  throw std::invalid_argument("unknown dataset layout: " + name);
}

inline std::vector<Sample> load_dataset(const std::string& dir,
                                        const std::string& layout_name = "synthetic",
                                        std::ostream* log = &std::cerr) {
  namespace fs = std::filesystem;
  const DatasetLayout layout = dataset_layout(layout_name);
  const fs::path root(dir);
  const fs::path img_dir = root / layout.images_subdir;
  const fs::path mask_dir = root / layout.masks_subdir;
  check(fs::is_directory(img_dir), "load_dataset: missing image directory " + img_dir.string());
  check(fs::is_directory(mask_dir), "load_dataset: missing mask directory " + mask_dir.string());

  std::map<std::string, std::string> captions;
  if (!layout.captions_file.empty()) {
    const fs::path cap = root / layout.captions_file;
    if (fs::exists(cap)) {
      std::ifstream in(cap.string());
      std::string line;
      while (std::getline(in, line)) {
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0) continue;
        captions[line.substr(0, tab)] = line.substr(tab + 1);
      }
    }
  }

  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(img_dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension().string();
    if (ext == ".ppm" || ext == ".pgm") stems.push_back(e.path().stem().string());
  }
  std::sort(stems.begin(), stems.end());
  check(!stems.empty(), "load_dataset: no images under " + img_dir.string());

  std::vector<std::string> missing;
  auto mask_path = [&](const std::string& stem) -> fs::path {
    const fs::path p = mask_dir / (stem + ".pgm");
    return p;
  };
  for (const auto& s : stems)
    if (!fs::exists(mask_path(s))) missing.push_back(s);
  if (!missing.empty()) {
    std::string ids;
    for (const auto& s : missing) ids += " " + s;
    throw std::invalid_argument("load_dataset: missing masks for:" + ids);
  }

  std::vector<Sample> samples;
  samples.reserve(stems.size());
  int no_caption = 0;
  for (const auto& stem : stems) {
    Sample s;
    s.id = stem;
    const fs::path ppm = img_dir / (stem + ".ppm");
    const fs::path pgm = img_dir / (stem + ".pgm");
    if (fs::exists(ppm)) {
      s.image = read_ppm(ppm.string());
    } else {
      // grayscale corpus: replicate to 3 channels
      const Tensor<double> g = read_pgm(pgm.string());
      s.image = Tensor<double>({3, g.dim(0), g.dim(1)});
      for (int c = 0; c < 3; ++c)
        for (int64_t i = 0; i < g.numel(); ++i)
          s.image[static_cast<int64_t>(c) * g.numel() + i] = g[i];
    }
    s.mask = load_binary_mask(mask_path(stem).string());
    check(s.mask.dim(0) == s.image.dim(1) && s.mask.dim(1) == s.image.dim(2),
          "load_dataset: image/mask size mismatch for " + stem);
    auto it = captions.find(stem);
    if (it != captions.end()) {
      s.caption = it->second;
      s.has_caption = true;
    } else {
      ++no_caption;
    }
    samples.push_back(std::move(s));
  }
  if (!layout.captions_file.empty() && no_caption > 0 && log)
    (*log) << "load_dataset: " << no_caption
           << " sample(s) without caption; distillation disabled for them\n";
  return samples;
}

}  // namespace diffmss
