// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iostream>
#include <thread>
#include <vector>

#include "diffmss/harness/config.hpp"
#include "diffmss/harness/dataset.hpp"
#include "diffmss/region_word.hpp"

namespace diffmss {

/// Fixed seed of the featurized embedding backend; independent of the run
/// seed so word/region embeddings are stable across runs and ablations.
inline constexpr uint64_t kEmbeddingSeed = 0x5eedfeed;

/// Dataset pre-pass: images cast to the training scalar type and the
/// distillation targets resolved once (token selection depends only on the
/// image/caption pair, not on model weights).
template <class T>
struct TrainingSet {
  std::vector<std::string> ids;
  std::vector<Tensor<T>> images;
  std::vector<Tensor<double>> masks;
  std::vector<std::vector<Tensor<T>>> tokens;  // empty vector = SKD skipped
};

template <class T>
TrainingSet<T> prepare_training_set(const std::vector<Sample>& samples, const RunConfig& cfg) {
  TrainingSet<T> ts;
  const FeaturizedBackend backend(kEmbeddingSeed, cfg.embed_dim);
  for (const Sample& s : samples) {
    ts.ids.push_back(s.id);
    ts.images.push_back(s.image.template cast<T>());
    ts.masks.push_back(s.mask);
    std::vector<Tensor<T>> toks;
    if (cfg.skd_active() && s.has_caption) {
      const WordSet words = segment_text_words(s.caption);
      if (!words.empty()) {
        if (cfg.match_region_word) {
          const RegionSet regions = segment_image_regions(s.image, {cfg.max_regions});
          const auto scores = region_word_scores(regions, words, backend);
          const TokenSelection sel = select_salient_tokens(scores, words, backend);
          for (const auto& e : sel.selected_embeddings) toks.push_back(e.template cast<T>());
        } else {
          // Whole-caption matching: one mean embedding over all nouns.
          Tensor<double> mean({backend.dim()});
          for (const auto& w : words.words) {
            const Tensor<double> e = backend.embed_word(w);
            for (int i = 0; i < backend.dim(); ++i) mean[i] += e[i] / words.count();
          }
          toks.push_back(mean.template cast<T>());
        }
      }
    }
    ts.tokens.push_back(std::move(toks));
  }
  return ts;
}

struct EpochStats {
  double l_total = 0.0;
  double l_mask = 0.0;
  double l_consist = 0.0;  // mean over non-skipped samples
  int skd_samples = 0;
  int samples = 0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  int64_t steps = 0;
};

/// Epoch/batch training loop. Per-sample randomness is drawn up front in
/// sample order and gradients reduce in sample order, so results are
/// bit-identical for any worker count.
template <class T>
TrainLog train_model(DiffmssModel<T>& model, const TrainingSet<T>& ts, const NoiseSchedule& sched,
                     const RunConfig& cfg, std::ostream* log = nullptr) {
  const int n = static_cast<int>(ts.images.size());
  check(n > 0, "train_model: empty training set");
  const int hw = static_cast<int>(std::thread::hardware_concurrency());
  const int threads =
      cfg.deterministic ? 1 : std::max(1, cfg.threads > 0 ? cfg.threads : (hw > 0 ? hw : 1));
  const LossFlags flags{cfg.loss_bce, cfg.loss_iou};

  RandomStream order_rng(RandomStream::splitmix(cfg.seed ^ 0x0edd7a1ull));
  RandomStream noise_rng(RandomStream::splitmix(cfg.seed ^ 0x90153ull));
  TrainLog tl;
  auto sink_total = model.params.make_grad_sink();
  std::vector<std::vector<Tensor<T>>> sinks;

  const int h = ts.masks[0].dim(0), w = ts.masks[0].dim(1);
  int64_t step_index = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    nn::AdamConfig adam;
    adam.lr = cfg.lr * std::pow(cfg.lr_decay, epoch / cfg.decay_every);
    adam.grad_clip = cfg.grad_clip;

    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i)
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(order_rng.randint(0, i))]);

    EpochStats es;
    for (int b0 = 0; b0 < n; b0 += cfg.batch) {
      const int bn = std::min(cfg.batch, n - b0);
      std::vector<StepInputs<T>> in(static_cast<size_t>(bn));
      for (int j = 0; j < bn; ++j) {
        const int si = idx[static_cast<size_t>(b0 + j)];
        in[static_cast<size_t>(j)].image = &ts.images[static_cast<size_t>(si)];
        in[static_cast<size_t>(j)].mask = &ts.masks[static_cast<size_t>(si)];
        in[static_cast<size_t>(j)].skd_tokens =
            cfg.skd_active() ? &ts.tokens[static_cast<size_t>(si)] : nullptr;
        in[static_cast<size_t>(j)].t = static_cast<int>(noise_rng.randint(1, sched.T));
        in[static_cast<size_t>(j)].eps = Tensor<T>({1, h, w});
        noise_rng.fill_normal(in[static_cast<size_t>(j)].eps);
      }
      sinks.assign(static_cast<size_t>(bn), {});
      std::vector<LossBundle> bundles(static_cast<size_t>(bn));
      auto worker = [&](int tid) {
        for (int j = tid; j < bn; j += threads) {
          sinks[static_cast<size_t>(j)] = model.params.make_grad_sink();
          nn::Tape<T> tp;
          const ForwardIds<T> ids =
              diffusion_forward(model, tp, in[static_cast<size_t>(j)], sched, cfg.lambda, flags);
          tp.backward(ids.l_total);
          tp.export_param_grads(sinks[static_cast<size_t>(j)]);
          bundles[static_cast<size_t>(j)] = ids.bundle;
        }
      };
      if (threads == 1) {
        worker(0);
      } else {
        std::vector<std::thread> pool;
        for (int tdx = 0; tdx < threads; ++tdx) pool.emplace_back(worker, tdx);
        for (auto& th : pool) th.join();
      }
      // Ordered reduction (sample order), then mean over the batch.
      const T inv_bn = static_cast<T>(1.0 / bn);
      for (int j = 0; j < bn; ++j)
        for (size_t pi = 0; pi < sink_total.size(); ++pi) {
          Tensor<T>& src = sinks[static_cast<size_t>(j)][pi];
          if (src.empty()) continue;
          Tensor<T>& dst = sink_total[pi];
          if (dst.empty()) dst = Tensor<T>(src.shape);
          for (int64_t q = 0; q < src.numel(); ++q) dst[q] += src[q];
        }
      for (auto& gtensor : sink_total)
        for (auto& v : gtensor.d) v *= inv_bn;
      nn::adam_step(model.params, sink_total, adam, ++step_index);

      for (int j = 0; j < bn; ++j) {
        const LossBundle& lb = bundles[static_cast<size_t>(j)];
        if (!std::isfinite(lb.l_total))
          throw NumericalError("train_model: non-finite loss at epoch " + std::to_string(epoch));
        es.l_total += lb.l_total;
        es.l_mask += lb.l_mask;
        if (!lb.skd_skipped) {
          es.l_consist += lb.l_consist;
          ++es.skd_samples;
        }
        ++es.samples;
      }
    }
    es.l_total /= es.samples;
    es.l_mask /= es.samples;
    if (es.skd_samples > 0) es.l_consist /= es.skd_samples;
    tl.epochs.push_back(es);
    tl.steps = step_index;
    if (log)
      (*log) << "epoch " << epoch + 1 << "/" << cfg.epochs << "  total " << es.l_total << "  mask "
             << es.l_mask << "  consist " << es.l_consist << "  lr " << adam.lr << "\n";
  }
  return tl;
}

}  // namespace diffmss
