// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "diffmss/sampler.hpp"

namespace diffmss {

/// One run's worth of knobs. Defaults mirror the reference training recipe
/// (T=1000, beta 1e-4..0.02, lambda 0.5, lr 1e-4 decaying x0.8 every 10
/// epochs, batch 32, 256px patches); toy_run_config() scales them down to a
/// CPU-sized configuration.
struct RunConfig {
  // diffusion
  int T = 1000;
  int S = 10;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  // loss
  double lambda = 0.5;
  double phi = 0.5;
  // model
  int image_size = 256;
  std::vector<int> widths = {32, 64, 128, 256};
  std::vector<int> denoiser_widths = {8, 16, 32};
  int heads = 2;
  int time_dim = 64;
  int embed_dim = 64;
  int latent_dim = 64;
  // training
  double lr = 1e-4;
  double lr_decay = 0.8;
  int decay_every = 10;
  int epochs = 150;
  int batch = 32;
  double grad_clip = 1.0;
  uint64_t seed = 42;
  int threads = 0;  // 0 = hardware concurrency
  bool deterministic = false;
  int max_regions = 8;
  // ablation axes
  bool skd = true;
  bool match_region_word = true;  // false = whole-caption (image-text) matching
  bool cds = true;
  int layers = 4;  // aggregate F1..F<layers> as conditions
  bool loss_consist = true;
  bool loss_bce = true;
  bool loss_iou = true;
  // conventions
  PosteriorMeanConvention mean_convention = PosteriorMeanConvention::kPaper;
  UpdateRule sampler_update = UpdateRule::kDdim;
  BinarizeMode binarize = BinarizeMode::kPerPredictionMean;

  bool skd_active() const { return skd && loss_consist; }
};

/// CPU-scale defaults: 64px, T=100 with the beta range scaled x10 so the
/// terminal signal-to-noise ratio matches the long schedule, 30 epochs.
inline RunConfig toy_run_config() {
  RunConfig c;
  c.T = 100;
  c.S = 10;
  c.beta_start = 1e-3;
  c.beta_end = 0.2;
  c.image_size = 64;
  c.epochs = 30;
  c.batch = 8;
  c.lr = 3e-4;
  return c;
}

namespace cfgio {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(trim(item)));
  return out;
}

inline bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw std::invalid_argument("config: bad boolean '" + v + "'");
}

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace cfgio

/// Apply one `key = value` setting; throws on unknown keys or bad values.
inline void apply_config_entry(RunConfig& c, const std::string& key, const std::string& value) {
  using cfgio::parse_bool;
  const std::string v = cfgio::trim(value);
  if (key == "t") c.T = std::stoi(v);
  else if (key == "s") c.S = std::stoi(v);
  else if (key == "beta_start") c.beta_start = std::stod(v);
  else if (key == "beta_end") c.beta_end = std::stod(v);
  else if (key == "lambda") c.lambda = std::stod(v);
  else if (key == "phi") c.phi = std::stod(v);
  else if (key == "image_size") c.image_size = std::stoi(v);
  else if (key == "widths") c.widths = cfgio::parse_int_list(v);
  else if (key == "denoiser_widths") c.denoiser_widths = cfgio::parse_int_list(v);
  else if (key == "heads") c.heads = std::stoi(v);
  else if (key == "time_dim") c.time_dim = std::stoi(v);
  else if (key == "embed_dim") c.embed_dim = std::stoi(v);
  else if (key == "latent_dim") c.latent_dim = std::stoi(v);
  else if (key == "lr") c.lr = std::stod(v);
  else if (key == "lr_decay") c.lr_decay = std::stod(v);
  else if (key == "decay_every") c.decay_every = std::stoi(v);
  else if (key == "epochs") c.epochs = std::stoi(v);
  else if (key == "batch") c.batch = std::stoi(v);
  else if (key == "grad_clip") c.grad_clip = std::stod(v);
  else if (key == "seed") c.seed = std::stoull(v);
  else if (key == "threads") c.threads = std::stoi(v);
  else if (key == "deterministic") c.deterministic = parse_bool(v);
  else if (key == "max_regions") c.max_regions = std::stoi(v);
  else if (key == "skd") c.skd = parse_bool(v);
  else if (key == "match") {
    if (v == "rw") c.match_region_word = true;
    else if (v == "it") c.match_region_word = false;
    else throw std::invalid_argument("config: match must be rw or it");
  } else if (key == "cds") c.cds = parse_bool(v);
  else if (key == "layers") {
    c.layers = std::stoi(v);
    if (c.layers < 1 || c.layers > 4) throw std::invalid_argument("config: layers in 1..4");
  } else if (key == "loss_terms") {
    c.loss_consist = v.find("consist") != std::string::npos;
    c.loss_bce = v.find("bce") != std::string::npos;
    c.loss_iou = v.find("iou") != std::string::npos;
    if (!c.loss_consist && !c.loss_bce && !c.loss_iou)
      throw std::invalid_argument("config: loss_terms selects nothing");
  } else if (key == "posterior_mean_convention") {
    if (v == "paper") c.mean_convention = PosteriorMeanConvention::kPaper;
    else if (v == "ddpm") c.mean_convention = PosteriorMeanConvention::kDdpm;
    else throw std::invalid_argument("config: posterior_mean_convention must be paper or ddpm");
  } else if (key == "sampler_update") {
    if (v == "ddim") c.sampler_update = UpdateRule::kDdim;
    else if (v == "posterior") c.sampler_update = UpdateRule::kPosterior;
    else throw std::invalid_argument("config: sampler_update must be ddim or posterior");
  } else if (key == "binarize") {
    if (v == "mean") c.binarize = BinarizeMode::kPerPredictionMean;
    else if (v == "half") c.binarize = BinarizeMode::kGlobalHalf;
    else if (v == "stack") c.binarize = BinarizeMode::kStackMean;
    else throw std::invalid_argument("config: binarize must be mean, half or stack");
  } else {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

/// Flat `key = value` file, '#' comments.
inline void load_config_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = cfgio::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: missing '=' at line " + std::to_string(lineno));
    apply_config_entry(c, cfgio::trim(line.substr(0, eq)), cfgio::trim(line.substr(eq + 1)));
  }
}

/// Full round-trippable key/value view (used for the checkpoint echo).
inline std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& c) {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("t", std::to_string(c.T));
  kv.emplace_back("s", std::to_string(c.S));
  kv.emplace_back("beta_start", std::to_string(c.beta_start));
  kv.emplace_back("beta_end", std::to_string(c.beta_end));
  kv.emplace_back("lambda", std::to_string(c.lambda));
  kv.emplace_back("phi", std::to_string(c.phi));
  kv.emplace_back("image_size", std::to_string(c.image_size));
  kv.emplace_back("widths", cfgio::join_ints(c.widths));
  kv.emplace_back("denoiser_widths", cfgio::join_ints(c.denoiser_widths));
  kv.emplace_back("heads", std::to_string(c.heads));
  kv.emplace_back("time_dim", std::to_string(c.time_dim));
  kv.emplace_back("embed_dim", std::to_string(c.embed_dim));
  kv.emplace_back("latent_dim", std::to_string(c.latent_dim));
  kv.emplace_back("lr", std::to_string(c.lr));
  kv.emplace_back("lr_decay", std::to_string(c.lr_decay));
  kv.emplace_back("decay_every", std::to_string(c.decay_every));
  kv.emplace_back("epochs", std::to_string(c.epochs));
  kv.emplace_back("batch", std::to_string(c.batch));
  kv.emplace_back("grad_clip", std::to_string(c.grad_clip));
  kv.emplace_back("seed", std::to_string(c.seed));
  kv.emplace_back("threads", std::to_string(c.threads));
  kv.emplace_back("deterministic", b(c.deterministic));
  kv.emplace_back("max_regions", std::to_string(c.max_regions));
  kv.emplace_back("skd", b(c.skd));
  kv.emplace_back("match", c.match_region_word ? "rw" : "it");
  kv.emplace_back("cds", b(c.cds));
  kv.emplace_back("layers", std::to_string(c.layers));
  std::string terms;
  if (c.loss_consist) terms += "consist";
  if (c.loss_bce) terms += std::string(terms.empty() ? "" : "+") + "bce";
  if (c.loss_iou) terms += std::string(terms.empty() ? "" : "+") + "iou";
  kv.emplace_back("loss_terms", terms);
  kv.emplace_back("posterior_mean_convention",
                  c.mean_convention == PosteriorMeanConvention::kPaper ? "paper" : "ddpm");
  kv.emplace_back("sampler_update", c.sampler_update == UpdateRule::kDdim ? "ddim" : "posterior");
  kv.emplace_back("binarize", c.binarize == BinarizeMode::kPerPredictionMean
                                  ? "mean"
                                  : (c.binarize == BinarizeMode::kGlobalHalf ? "half" : "stack"));
  return kv;
}

inline ModelConfig model_config_from(const RunConfig& c) {
  ModelConfig mc;
  mc.cfln.widths = c.widths;
  mc.cfln.heads = c.heads;
  mc.cfln.time_dim = c.time_dim;
  mc.cfln.agg_levels = c.layers;
  mc.denoiser.widths = c.denoiser_widths;
  mc.denoiser.time_dim = c.time_dim;
  mc.denoiser.cond_widths = c.widths;
  mc.embed_dim = c.embed_dim;
  mc.latent_dim = c.latent_dim;
  mc.init_seed = c.seed;
  return mc;
}

inline SamplerOptions sampler_options_from(const RunConfig& c, uint64_t seed) {
  SamplerOptions o;
  o.steps = c.S;
  o.phi = c.phi;
  o.use_cds = c.cds;
  o.binarize = c.binarize;
  o.update = c.sampler_update;
  o.mean_convention = c.mean_convention;
  o.seed = seed;
  return o;
}

}  // namespace diffmss
