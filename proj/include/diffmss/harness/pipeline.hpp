// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iomanip>
#include <thread>

#include "diffmss/harness/trainer.hpp"
#include "diffmss/metrics.hpp"
#include "diffmss/sampler.hpp"

namespace diffmss {

/// Per-image sampling seed: deterministic in (base seed, image index).
inline uint64_t per_image_seed(uint64_t base, int index) {
  return RandomStream::splitmix(RandomStream::splitmix(base) ^
                                (static_cast<uint64_t>(index) + 0x51ull));
}

template <class T>
Tensor<double> predict_one(const DiffmssModel<T>& model, const Tensor<double>& image,
                           const NoiseSchedule& sched, const SamplerOptions& opt) {
  return sample_mask(model, image.cast<T>(), sched, opt).fused;
}

/// Segment a whole sample list; images are independent so they run in
/// parallel, outputs keyed by position.
template <class T>
std::vector<Tensor<double>> predict_samples(const DiffmssModel<T>& model,
                                            const std::vector<Sample>& samples,
                                            const NoiseSchedule& sched, const RunConfig& cfg) {
  std::vector<Tensor<double>> preds(samples.size());
  const int hw = static_cast<int>(std::thread::hardware_concurrency());
  const int threads =
      cfg.deterministic ? 1 : std::max(1, cfg.threads > 0 ? cfg.threads : (hw > 0 ? hw : 1));
  auto worker = [&](int tid) {
    for (size_t i = static_cast<size_t>(tid); i < samples.size(); i += static_cast<size_t>(threads)) {
      SamplerOptions opt = sampler_options_from(cfg, per_image_seed(cfg.seed, static_cast<int>(i)));
      preds[i] = predict_one(model, samples[i].image, sched, opt);
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
    for (auto& th : pool) th.join();
  }
  return preds;
}

template <class T>
metrics::MetricReport evaluate_samples(const DiffmssModel<T>& model,
                                       const std::vector<Sample>& samples,
                                       const NoiseSchedule& sched, const RunConfig& cfg) {
  const auto preds = predict_samples(model, samples, sched, cfg);
  metrics::MetricReport report;
  for (size_t i = 0; i < samples.size(); ++i)
    report.add(samples[i].id, preds[i], samples[i].mask);
  report.finalize();
  return report;
}

/// Evaluate a directory of predicted masks against a directory of references,
/// matching file stems. Predictions are resized to the reference resolution
/// when they differ; references are never resized.
inline metrics::MetricReport eval_directories(const std::string& pred_dir,
                                              const std::string& gt_dir) {
  namespace fs = std::filesystem;
  check(fs::is_directory(pred_dir), "eval: missing prediction directory " + pred_dir);
  check(fs::is_directory(gt_dir), "eval: missing reference directory " + gt_dir);
  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(gt_dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm")
      stems.push_back(e.path().stem().string());
  std::sort(stems.begin(), stems.end());
  check(!stems.empty(), "eval: no .pgm references under " + gt_dir);
  metrics::MetricReport report;
  std::vector<std::string> missing;
  for (const auto& stem : stems) {
    const fs::path pp = fs::path(pred_dir) / (stem + ".pgm");
    if (!fs::exists(pp)) {
      missing.push_back(stem);
      continue;
    }
    Tensor<double> pred = read_pgm(pp.string());
    const Tensor<double> gt = load_binary_mask((fs::path(gt_dir) / (stem + ".pgm")).string());
    if (!pred.same_shape(gt)) pred = resize_bilinear(pred, gt.dim(0), gt.dim(1));
    report.add(stem, pred, gt);
  }
  if (!missing.empty()) {
    std::string ids;
    for (const auto& s : missing) ids += " " + s;
    throw std::invalid_argument("eval: missing predictions for:" + ids);
  }
  report.finalize();
  return report;
}

inline void write_metrics_csv(const metrics::MetricReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "image_id,mae,fw,em,s\n";
  out << std::setprecision(10);
  for (const auto& im : report.per_image) {
    out << im.id << "," << im.mae << ",";
    if (im.empty_gt)
      out << ",,";  // excluded from means; only MAE is defined
    else
      out << im.f_beta_w << "," << im.e_phi_m << "," << im.s_alpha;
    out << "\n";
  }
}

inline void print_metrics_table(const metrics::MetricReport& r, std::ostream& os,
                                const std::string& title = "") {
  if (!title.empty()) os << title << "\n";
  os << std::fixed << std::setprecision(4);
  os << "  images " << r.evaluated;
  if (r.excluded_empty_gt > 0) os << " (+" << r.excluded_empty_gt << " empty-reference excluded)";
  os << "\n  Fw " << r.f_beta_w << "   Em " << r.e_phi_m << "   S " << r.s_alpha << "   MAE "
     << r.mae << "\n";
  os.unsetf(std::ios::fixed);
}

}  // namespace diffmss
