// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "diffmss/tensor.hpp"

namespace diffmss::nn {

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order by construction, so backward() is a single reverse scan.
/// One tape per sample; not shared across threads.
template <class T>
class Tape {
 public:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;                // allocated on first contribution
    std::function<void()> back;    // empty for leaves
    int param_idx = -1;            // >= 0 for trainable leaves
    bool needs = false;            // participates in the gradient
  };

  /// When false, ops skip recording backward closures (inference mode).
  bool grad_enabled = true;

  int constant(Tensor<T> v) {
    nodes_.emplace_back(Node{std::move(v), {}, {}, -1, false});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int param(const Tensor<T>& v, int store_idx) {
    nodes_.emplace_back(Node{v, {}, {}, store_idx, grad_enabled});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int make(Tensor<T> v, bool needs, std::function<void()> back) {
    if (!grad_enabled) {
      needs = false;
      back = nullptr;
    }
    nodes_.emplace_back(Node{std::move(v), {}, std::move(back), -1, needs});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor<T>& val(int i) const { return nodes_[static_cast<size_t>(i)].val; }
  Tensor<T>& val(int i) { return nodes_[static_cast<size_t>(i)].val; }
  bool needs(int i) const { return nodes_[static_cast<size_t>(i)].needs; }

  /// Gradient buffer of node i, allocated (zeroed) on demand.
  Tensor<T>& grad(int i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.grad.empty()) n.grad = Tensor<T>(n.val.shape);
    return n.grad;
  }
  bool has_grad(int i) const { return !nodes_[static_cast<size_t>(i)].grad.empty(); }

  void backward(int loss) {
    Node& ln = nodes_[static_cast<size_t>(loss)];
    check(ln.val.numel() == 1, "backward: loss must be scalar");
    grad(loss)[0] = T(1);
    for (int i = loss; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.back && !n.grad.empty()) n.back();
    }
  }

  /// Accumulate parameter-leaf gradients into `sink` (indexed by store idx).
  void export_param_grads(std::vector<Tensor<T>>& sink) const {
    for (const Node& n : nodes_) {
      if (n.param_idx < 0 || n.grad.empty()) continue;
      Tensor<T>& dst = sink[static_cast<size_t>(n.param_idx)];
      if (dst.empty()) dst = Tensor<T>(n.val.shape);
      for (int64_t i = 0; i < n.grad.numel(); ++i) dst[i] += n.grad[i];
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

}  // namespace diffmss::nn
