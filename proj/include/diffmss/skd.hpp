// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "diffmss/nn/layers.hpp"

namespace diffmss {

/// Two learnable projections into a shared latent space: one for the pooled
/// visual condition vector, one for word-token embeddings. They only receive
/// gradients from the consistency loss and are inactive at inference.
template <class T>
struct ProjectorPair {
  nn::LinearLayer<T> proj_v;
  nn::LinearLayer<T> proj_t;
  int cond_dim = 0, word_dim = 0, latent_dim = 0;

  ProjectorPair() = default;
  ProjectorPair(nn::ParamStore<T>& ps, int cond_dim_, int word_dim_, int latent_dim_,
                RandomStream& rng)
      : proj_v(ps, "skd.proj_v", cond_dim_, latent_dim_, rng),
        proj_t(ps, "skd.proj_t", word_dim_, latent_dim_, rng),
        cond_dim(cond_dim_),
        word_dim(word_dim_),
        latent_dim(latent_dim_) {}
};

struct ConsistencyResult {
  int loss = -1;        // scalar Var; constant 0 when skipped
  bool skipped = false; // no usable tokens, excluded from the running average
};

/// Negative mean cosine between the projected pooled condition and each
/// projected token embedding; in [-1, 1]. An empty token set contributes 0
/// and raises the skip flag.
template <class T>
ConsistencyResult consistency_loss(nn::Tape<T>& tp, const nn::ParamStore<T>& ps, int pooled_condition,
                                   const std::vector<Tensor<T>>& tokens,
                                   const ProjectorPair<T>& projectors) {
  ConsistencyResult out;
  if (tokens.empty()) {
    out.loss = tp.constant(Tensor<T>({1}));
    out.skipped = true;
    return out;
  }
  check(tp.val(pooled_condition).numel() == projectors.cond_dim,
        "consistency_loss: condition width mismatch");
  const int cond_row = nn::reshape(tp, pooled_condition, {1, projectors.cond_dim});
  const int pv = nn::reshape(tp, projectors.proj_v.forward(tp, ps, cond_row),
                             {projectors.latent_dim});
  std::vector<int> cosines;
  cosines.reserve(tokens.size());
  for (const Tensor<T>& tok : tokens) {
    check(tok.numel() == projectors.word_dim, "consistency_loss: token width mismatch");
    Tensor<T> row = tok;
    row.shape = {1, projectors.word_dim};
    const int pt = nn::reshape(tp, projectors.proj_t.forward(tp, ps, tp.constant(std::move(row))),
                               {projectors.latent_dim});
    cosines.push_back(nn::cosine(tp, pv, pt));
  }
  const T coeff = static_cast<T>(-1.0 / static_cast<double>(tokens.size()));
  out.loss = nn::weighted_sum_scalars(tp, cosines, std::vector<T>(cosines.size(), coeff));
  return out;
}

}  // namespace diffmss
