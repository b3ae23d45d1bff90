// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "v4d/tensor.hpp"

namespace v4d::ops {

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) y[k] = x[k] > T{0} ? x[k] : T{0};
  return y;
}

/// Gradient of relu at input x. The derivative at exactly 0 is taken as 1,
/// the value central differences report at the kink; this keeps gradients
/// flowing through a residual 4D block whose conv output is identically 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  if (x.shape() != grad_out.shape()) throw ShapeError("relu_backward: shape mismatch");
  Tensor<T> g(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) g[k] = x[k] >= T{0} ? grad_out[k] : T{0};
  return g;
}

}  // namespace v4d::ops
