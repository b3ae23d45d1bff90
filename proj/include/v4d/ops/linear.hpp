// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "v4d/ops/gemm.hpp"
#include "v4d/tensor.hpp"

namespace v4d::ops {

template <typename T>
struct LinearGrads {
  Tensor<T> input, weights, bias;
};

/// logits (N, K) = x (N, C) W^T + b, with W (K, C).
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.shape()[1] != w.shape()[1]) {
    throw ShapeError("fully_connected: input " + shape_string(x.shape()) + " incompatible with weights " +
                     shape_string(w.shape()));
  }
  const std::size_t n = x.shape()[0], k = w.shape()[0], c = w.shape()[1];
  if (!b.empty() && b.size() != k) throw ShapeError("fully_connected: bias size mismatch");
  Tensor<T> out({n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = b.empty() ? T{0} : b[j];
  gemm::nt(n, k, c, x.ptr(), w.ptr(), out.ptr());
  return out;
}

template <typename T>
LinearGrads<T> fully_connected_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                                        const Tensor<T>& grad_out) {
  const std::size_t n = x.shape()[0], k = w.shape()[0], c = w.shape()[1];
  if (grad_out.shape() != Shape{n, k}) throw ShapeError("fully_connected_backward: shape mismatch");
  LinearGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(w.shape()), {}};
  gemm::nn(n, c, k, grad_out.ptr(), w.ptr(), g.input.ptr());
  gemm::tn(k, c, n, grad_out.ptr(), x.ptr(), g.weights.ptr());
  if (!b.empty()) {
    g.bias = Tensor<T>(b.shape());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) g.bias[j] += grad_out[i * k + j];
  }
  return g;
}

/// Row-wise softmax of (N, K) logits.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax: logits must be (N, K)");
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  Tensor<T> p(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.ptr() + i * k;
    const T m = *std::max_element(row, row + k);
    T z{0};
    for (std::size_t j = 0; j < k; ++j) z += (p[i * k + j] = std::exp(row[j] - m));
    for (std::size_t j = 0; j < k; ++j) p[i * k + j] /= z;
  }
  return p;
}

template <typename T>
struct LossResult {
  T loss;
  Tensor<T> grad_logits;
};

/// Mean cross-entropy over the batch; grad_logits = (softmax - onehot) / N.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.shape()[0] != labels.size()) {
    throw ShapeError("softmax_cross_entropy: expected one label per logits row");
  }
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  LossResult<T> r{T{0}, softmax(logits)};
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                       std::to_string(k) + ")");
    }
    const T* row = logits.ptr() + i * k;
    const T m = *std::max_element(row, row + k);
    double z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j] - m));
    loss += std::log(z) - static_cast<double>(row[labels[i]] - m);
    r.grad_logits[i * k + static_cast<std::size_t>(labels[i])] -= T{1};
  }
  for (std::size_t q = 0; q < r.grad_logits.size(); ++q) r.grad_logits[q] /= static_cast<T>(n);
  r.loss = static_cast<T>(loss / static_cast<double>(n));
  return r;
}

}  // namespace v4d::ops
