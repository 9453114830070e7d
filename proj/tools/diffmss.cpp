// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: corpus generation, training, sampling, evaluation
// and the ablation driver. Exit codes: 0 success, 2 validation failure,
// 3 numerical failure (NaN/Inf).

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "diffmss/harness/ablation.hpp"
#include "diffmss/harness/checkpoint.hpp"
#include "diffmss/harness/pipeline.hpp"
#include "diffmss/harness/synthetic.hpp"

namespace fs = std::filesystem;
using Real = float;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  bool deterministic = false;
};

diffmss::RunConfig resolve_config(const CommonOpts& c) {
  diffmss::RunConfig cfg = diffmss::toy_run_config();
  if (!c.config_path.empty()) diffmss::load_config_file(cfg, c.config_path);
  for (const std::string& kv : c.sets) {
    const auto eq = kv.find('=');
    diffmss::check(eq != std::string::npos, "--set expects key=value, got '" + kv + "'");
    diffmss::apply_config_entry(cfg, diffmss::cfgio::trim(kv.substr(0, eq)),
                                diffmss::cfgio::trim(kv.substr(eq + 1)));
  }
  if (c.deterministic) cfg.deterministic = true;
  return cfg;
}

int cmd_train(const std::string& data, const std::string& out, const CommonOpts& common,
              bool no_skd, const std::string& match) {
  diffmss::RunConfig cfg = resolve_config(common);
  if (no_skd) cfg.skd = false;
  if (!match.empty()) diffmss::apply_config_entry(cfg, "match", match);

  const auto samples = diffmss::load_dataset(data, "synthetic");
  diffmss::check(samples[0].image.dim(1) % 32 == 0 && samples[0].image.dim(2) % 32 == 0,
                 "train: image dims must be divisible by 32");
  const auto sched = diffmss::make_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
  diffmss::DiffmssModel<Real> model(diffmss::model_config_from(cfg));
  std::cerr << "training on " << samples.size() << " samples, " << model.params.param_count()
            << " parameters\n";
  const auto ts = diffmss::prepare_training_set<Real>(samples, cfg);
  const auto log = diffmss::train_model(model, ts, sched, cfg, &std::cerr);
  diffmss::save_checkpoint(out, model.params, cfg, log.steps);
  std::cerr << "saved checkpoint " << out << " after " << log.steps << " steps\n";
  return 0;
}

int cmd_sample(const std::string& ckpt, const std::string& image, const std::string& out,
               const CommonOpts& common, bool no_cds, const std::string& dump_steps,
               uint64_t seed, bool seed_given) {
  const diffmss::LoadedCheckpoint ck = diffmss::load_checkpoint(ckpt);
  diffmss::RunConfig cfg = ck.config();
  for (const std::string& kv : common.sets) {
    const auto eq = kv.find('=');
    diffmss::check(eq != std::string::npos, "--set expects key=value, got '" + kv + "'");
    diffmss::apply_config_entry(cfg, diffmss::cfgio::trim(kv.substr(0, eq)),
                                diffmss::cfgio::trim(kv.substr(eq + 1)));
  }
  if (common.deterministic) cfg.deterministic = true;
  if (no_cds) cfg.cds = false;
  if (seed_given) cfg.seed = seed;

  diffmss::DiffmssModel<Real> model(diffmss::model_config_from(cfg));
  ck.apply_to(model.params);
  const auto sched = diffmss::make_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end);

  auto run_one = [&](const std::string& img_path, const std::string& out_path, int index) {
    const diffmss::Tensor<double> img = diffmss::read_ppm(img_path);
    diffmss::SamplerOptions opt =
        diffmss::sampler_options_from(cfg, diffmss::per_image_seed(cfg.seed, index));
    const diffmss::EnsembleResult res =
        diffmss::sample_mask(model, img.cast<Real>(), sched, opt);
    diffmss::write_pgm(out_path, res.fused);
    if (!dump_steps.empty()) {
      fs::create_directories(dump_steps);
      const std::string stem = fs::path(img_path).stem().string();
      for (size_t k = 0; k < res.per_step_preds.size(); ++k)
        diffmss::write_pgm((fs::path(dump_steps) /
                            (stem + "_t" + std::to_string(res.step_indices[k]) + ".pgm"))
                               .string(),
                           res.per_step_preds[k]);
    }
  };

  if (fs::is_directory(image)) {
    fs::create_directories(out);
    std::vector<std::string> stems;
    for (const auto& e : fs::directory_iterator(image))
      if (e.is_regular_file() && e.path().extension() == ".ppm")
        stems.push_back(e.path().stem().string());
    std::sort(stems.begin(), stems.end());
    diffmss::check(!stems.empty(), "sample: no .ppm images under " + image);
    for (size_t i = 0; i < stems.size(); ++i)
      run_one((fs::path(image) / (stems[i] + ".ppm")).string(),
              (fs::path(out) / (stems[i] + ".pgm")).string(), static_cast<int>(i));
    std::cerr << "wrote " << stems.size() << " masks to " << out << "\n";
  } else {
    run_one(image, out, 0);
    std::cerr << "wrote " << out << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& pred, const std::string& gt, const std::string& csv) {
  const diffmss::metrics::MetricReport report = diffmss::eval_directories(pred, gt);
  diffmss::print_metrics_table(report, std::cout, "evaluation (" + pred + " vs " + gt + ")");
  diffmss::write_metrics_csv(report, csv);
  std::cout << "per-image csv: " << csv << "\n";
  return 0;
}

int cmd_ablate(const std::string& data, const std::string& grid, const std::string& out,
               const std::string& test_dir, const CommonOpts& common) {
  const diffmss::RunConfig cfg = resolve_config(common);
  auto samples = diffmss::load_dataset(data, "synthetic");
  std::vector<diffmss::Sample> train, test;
  if (!test_dir.empty()) {
    train = std::move(samples);
    test = diffmss::load_dataset(test_dir, "synthetic");
  } else {
    // Hold out the last 20% (by sorted id) for evaluation.
    const size_t cut = samples.size() - std::max<size_t>(1, samples.size() / 5);
    train.assign(samples.begin(), samples.begin() + static_cast<long>(cut));
    test.assign(samples.begin() + static_cast<long>(cut), samples.end());
  }
  std::cerr << "ablation: " << train.size() << " train / " << test.size() << " eval\n";
  const auto rows = diffmss::run_ablation<Real>(cfg, train, test, grid, &std::cerr);
  diffmss::write_ablation_csv(rows, out);
  std::cout << "ablation report: " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"object-focused conditional diffusion for marine saliency segmentation"};
  app.require_subcommand(1);

  CommonOpts common;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic degraded corpus");
  std::string gen_out;
  int gen_count = 100, gen_size = 64;
  uint64_t gen_seed = 7;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of samples")->required();
  gen->add_option("--size", gen_size, "image side in pixels (multiple of 32)");
  gen->add_option("--seed", gen_seed, "generator seed");

  // train
  auto* train = app.add_subcommand("train", "train a model on a corpus");
  std::string train_data, train_out, train_match;
  bool train_no_skd = false;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--config", common.config_path, "key=value config file");
  train->add_option("--out", train_out, "checkpoint output path")->required();
  train->add_flag("--no-skd", train_no_skd, "disable semantic distillation");
  train->add_option("--match", train_match, "rw (region-word) or it (whole caption)");
  train->add_option("--set", common.sets, "override config entries (key=value)");
  train->add_flag("--deterministic", common.deterministic,
                  "single-threaded, fixed-order execution");

  // sample
  auto* sample = app.add_subcommand("sample", "segment an image (or directory) with a checkpoint");
  std::string s_ckpt, s_image, s_out, s_dump;
  uint64_t s_seed = 0;
  bool s_no_cds = false;
  sample->add_option("--ckpt", s_ckpt, "checkpoint path")->required();
  sample->add_option("--image", s_image, "input .ppm image or directory")->required();
  sample->add_option("--out", s_out, "output mask path or directory")->required();
  sample->add_flag("--no-cds", s_no_cds, "emit the final-step prediction without consensus");
  sample->add_option("--dump-steps", s_dump, "directory for per-step prediction dumps");
  auto* seed_opt = sample->add_option("--seed", s_seed, "sampling seed");
  sample->add_option("--set", common.sets, "override config entries (key=value)");
  sample->add_flag("--deterministic", common.deterministic,
                   "single-threaded, fixed-order execution");

  // eval
  auto* eval = app.add_subcommand("eval", "score predictions against references");
  std::string e_pred, e_gt, e_csv;
  eval->add_option("--pred", e_pred, "directory of predicted masks (.pgm)")->required();
  eval->add_option("--gt", e_gt, "directory of reference masks (.pgm)")->required();
  eval->add_option("--csv", e_csv, "per-image csv output path")->required();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "train/evaluate a grid of variants");
  std::string a_data, a_grid, a_out, a_test;
  ablate->add_option("--data", a_data, "dataset directory")->required();
  ablate->add_option("--grid", a_grid, "grid spec, e.g. \"skd=on,off;cds=on,off\"")->required();
  ablate->add_option("--out", a_out, "report csv path")->required();
  ablate->add_option("--test", a_test, "held-out dataset directory (default: 20% split)");
  ablate->add_option("--config", common.config_path, "key=value config file");
  ablate->add_option("--set", common.sets, "override config entries (key=value)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      diffmss::gen_synthetic(gen_out, gen_count, gen_size, gen_seed);
      std::cerr << "wrote " << gen_count << " samples to " << gen_out << "\n";
      return 0;
    }
    if (train->parsed()) return cmd_train(train_data, train_out, common, train_no_skd, train_match);
    if (sample->parsed())
      return cmd_sample(s_ckpt, s_image, s_out, common, s_no_cds, s_dump, s_seed,
                        seed_opt->count() > 0);
    if (eval->parsed()) return cmd_eval(e_pred, e_gt, e_csv);
    if (ablate->parsed()) return cmd_ablate(a_data, a_grid, a_out, a_test, common);
  } catch (const diffmss::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
