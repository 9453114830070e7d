// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <sstream>

#include "diffmss/harness/pipeline.hpp"

namespace diffmss {

// Ablation driver: a grid spec names axes and values, e.g.
//   "skd=on,off"  "match=rw,it"  "layers=1,2,3,4"  "cds=on,off"
//   "loss=consist|bce+iou|consist+bce+iou"
// Axes are ';'-separated and cross-multiplied. Variants differing only in
// sampling-time settings share one trained model.

struct AblationVariant {
  std::string label;
  RunConfig cfg;
};

inline std::vector<AblationVariant> parse_ablation_grid(const std::string& spec,
                                                        const RunConfig& base) {
  struct Axis {
    std::string name;
    std::vector<std::string> values;
  };
  std::vector<Axis> axes;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ';')) {
    part = cfgio::trim(part);
    if (part.empty()) continue;
    const auto eq = part.find('=');
    check(eq != std::string::npos, "ablation grid: axis missing '=' in '" + part + "'");
    Axis ax;
    ax.name = cfgio::trim(part.substr(0, eq));
    const char sep = ax.name == "loss" ? '|' : ',';
    std::stringstream vs(part.substr(eq + 1));
    std::string v;
    while (std::getline(vs, v, sep)) {
      v = cfgio::trim(v);
      if (!v.empty()) ax.values.push_back(v);
    }
    check(!ax.values.empty(), "ablation grid: axis '" + ax.name + "' has no values");
    axes.push_back(std::move(ax));
  }
  check(!axes.empty(), "ablation grid: empty spec");

  std::vector<AblationVariant> variants{{"", base}};
  for (const Axis& ax : axes) {
    std::vector<AblationVariant> next;
    for (const AblationVariant& v : variants)
      for (const std::string& val : ax.values) {
        AblationVariant nv = v;
        nv.label += (nv.label.empty() ? "" : " ") + ax.name + "=" + val;
        if (ax.name == "skd") nv.cfg.skd = cfgio::parse_bool(val);
        else if (ax.name == "match") apply_config_entry(nv.cfg, "match", val);
        else if (ax.name == "cds") nv.cfg.cds = cfgio::parse_bool(val);
        else if (ax.name == "layers") apply_config_entry(nv.cfg, "layers", val);
        else if (ax.name == "loss") apply_config_entry(nv.cfg, "loss_terms", val);
        else throw std::invalid_argument("ablation grid: unknown axis '" + ax.name + "'");
        next.push_back(std::move(nv));
      }
    variants = std::move(next);
  }
  return variants;
}

/// Key over the training-relevant part of a config (sampling-only knobs
/// normalized away) so cds/phi variants reuse one trained model.
inline std::string training_signature(const RunConfig& cfg) {
  RunConfig c = cfg;
  c.cds = true;
  c.phi = 0.5;
  c.S = 10;
  c.binarize = BinarizeMode::kPerPredictionMean;
  c.sampler_update = UpdateRule::kDdim;
  c.threads = 0;
  std::string key;
  for (const auto& [k, v] : config_entries(c)) key += k + "=" + v + ";";
  return key;
}

struct AblationRow {
  std::string label;
  metrics::MetricReport report;
  int64_t param_count = 0;
};

/// Train/evaluate every variant; training failures are reported per row and
/// the grid continues.
template <class T>
std::vector<AblationRow> run_ablation(const RunConfig& base,
                                      const std::vector<Sample>& train_samples,
                                      const std::vector<Sample>& test_samples,
                                      const std::string& grid_spec, std::ostream* log = nullptr) {
  const auto variants = parse_ablation_grid(grid_spec, base);
  std::map<std::string, std::shared_ptr<DiffmssModel<T>>> cache;
  std::vector<AblationRow> rows;
  for (const AblationVariant& v : variants) {
    AblationRow row;
    row.label = v.label;
    try {
      const std::string sig = training_signature(v.cfg);
      auto it = cache.find(sig);
      std::shared_ptr<DiffmssModel<T>> model;
      if (it != cache.end()) {
        model = it->second;
      } else {
        if (log) (*log) << "[ablate] training variant: " << v.label << "\n";
        model = std::make_shared<DiffmssModel<T>>(model_config_from(v.cfg));
        const NoiseSchedule sched =
            make_linear_schedule(v.cfg.T, v.cfg.beta_start, v.cfg.beta_end);
        const TrainingSet<T> ts = prepare_training_set<T>(train_samples, v.cfg);
        train_model(*model, ts, sched, v.cfg, nullptr);
        cache[sig] = model;
      }
      const NoiseSchedule sched = make_linear_schedule(v.cfg.T, v.cfg.beta_start, v.cfg.beta_end);
      row.report = evaluate_samples(*model, test_samples, sched, v.cfg);
      row.param_count = model->params.param_count();
      if (log) {
        (*log) << "[ablate] " << v.label << ": ";
        print_metrics_table(row.report, *log);
      }
    } catch (const std::exception& e) {
      if (log) (*log) << "[ablate] " << v.label << " FAILED: " << e.what() << "\n";
      row.param_count = -1;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "variant,fw,em,s,mae,params\n";
  out << std::setprecision(10);
  for (const auto& r : rows) {
    if (r.param_count < 0) {
      out << r.label << ",failed,failed,failed,failed,\n";
      continue;
    }
    out << r.label << "," << r.report.f_beta_w << "," << r.report.e_phi_m << ","
        << r.report.s_alpha << "," << r.report.mae << "," << r.param_count << "\n";
  }
}

}  // namespace diffmss
