// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <limits>
#include <vector>

#include "v4d/ops/conv3d.hpp"
#include "v4d/tensor.hpp"

namespace v4d::ops {

struct PoolSpec {
  Triple kernel{1, 1, 1};
  Triple stride{1, 1, 1};
  Triple padding{0, 0, 0};
};

template <typename T>
struct MaxPoolResult {
  Tensor<T> output;
  std::vector<std::size_t> argmax;  // flat input offset per output element
};

inline Shape maxpool3d_output_shape(const Shape& x, const PoolSpec& spec) {
  if (x.size() != 5) throw ShapeError("maxpool3d: input must be rank 5, got " + shape_string(x));
  Shape out = x;
  for (int d = 0; d < 3; ++d) {
    if (spec.kernel[d] == 0 || spec.stride[d] == 0) throw ShapeError("maxpool3d: zero kernel or stride");
    if (spec.padding[d] > 0 && spec.padding[d] >= spec.kernel[d]) {
      throw ShapeError("maxpool3d: padding must be smaller than the kernel");
    }
    const std::size_t padded = x[2 + d] + 2 * spec.padding[d];
    if (spec.kernel[d] > padded) throw ShapeError("maxpool3d: kernel larger than padded input");
    out[2 + d] = (padded - spec.kernel[d]) / spec.stride[d] + 1;
  }
  return out;
}

/// Max over each window; padded positions never win.
template <typename T>
MaxPoolResult<T> maxpool3d_forward(const Tensor<T>& x, const PoolSpec& spec) {
  const Shape out_shape = maxpool3d_output_shape(x.shape(), spec);
  MaxPoolResult<T> r{Tensor<T>(out_shape), std::vector<std::size_t>(shape_volume(out_shape))};
  const Shape& s = x.shape();
  const std::size_t planes = s[0] * s[1];
  const std::size_t in_vol = s[2] * s[3] * s[4];
  std::size_t o = 0;
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t ot = 0; ot < out_shape[2]; ++ot)
      for (std::size_t oh = 0; oh < out_shape[3]; ++oh)
        for (std::size_t ow = 0; ow < out_shape[4]; ++ow, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_at = pl * in_vol;
          for (std::size_t p = 0; p < spec.kernel[0]; ++p) {
            const long it = static_cast<long>(ot * spec.stride[0] + p) - static_cast<long>(spec.padding[0]);
            if (it < 0 || it >= static_cast<long>(s[2])) continue;
            for (std::size_t q = 0; q < spec.kernel[1]; ++q) {
              const long ih = static_cast<long>(oh * spec.stride[1] + q) - static_cast<long>(spec.padding[1]);
              if (ih < 0 || ih >= static_cast<long>(s[3])) continue;
              for (std::size_t rr = 0; rr < spec.kernel[2]; ++rr) {
                const long iw = static_cast<long>(ow * spec.stride[2] + rr) - static_cast<long>(spec.padding[2]);
                if (iw < 0 || iw >= static_cast<long>(s[4])) continue;
                const std::size_t at = pl * in_vol + (static_cast<std::size_t>(it) * s[3] + static_cast<std::size_t>(ih)) * s[4] +
                                       static_cast<std::size_t>(iw);
                if (x[at] > best) {
                  best = x[at];
                  best_at = at;
                }
              }
            }
          }
          r.output[o] = best;
          r.argmax[o] = best_at;
        }
  return r;
}

template <typename T>
Tensor<T> maxpool3d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                             const Tensor<T>& grad_out) {
  if (grad_out.size() != argmax.size()) throw ShapeError("maxpool3d_backward: shape mismatch");
  Tensor<T> g(input_shape);
  for (std::size_t k = 0; k < argmax.size(); ++k) g[argmax[k]] += grad_out[k];
  return g;
}

/// Mean over every axis except batch (0) and channel (1): (N, C, ...) -> (N, C).
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() < 3) throw ShapeError("global_avg_pool: rank must be >= 3");
  const std::size_t rows = x.shape()[0] * x.shape()[1];
  const std::size_t inner = x.size() / rows;
  Tensor<T> out({x.shape()[0], x.shape()[1]});
  for (std::size_t r = 0; r < rows; ++r) {
    T acc{0};
    const T* p = x.ptr() + r * inner;
    for (std::size_t k = 0; k < inner; ++k) acc += p[k];
    out[r] = acc / static_cast<T>(inner);
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape, const Tensor<T>& grad_out) {
  const std::size_t rows = input_shape[0] * input_shape[1];
  if (grad_out.size() != rows) throw ShapeError("global_avg_pool_backward: shape mismatch");
  Tensor<T> g(input_shape);
  const std::size_t inner = g.size() / rows;
  for (std::size_t r = 0; r < rows; ++r) {
    const T v = grad_out[r] / static_cast<T>(inner);
    std::fill_n(g.ptr() + r * inner, inner, v);
  }
  return g;
}

}  // namespace v4d::ops
