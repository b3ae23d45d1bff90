// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// 4D convolution over (U, T, H, W) with channel mixing:
//
//   o[j,u,t,h,w] = b_j + sum_{c,s,p,q,r} W[j,c,s,p,q,r] * v[c, u+s, t+p, h+q, w+r]
//
// on the zero-padded input, stride 1 everywhere. Two implementations are
// kept: a direct loop nest, and the production path that decomposes the
// sum over s into S ordinary 3D convolutions on U-shifted unit batches.

#include <array>
#include <cstddef>

#include "v4d/ops/conv3d.hpp"
#include "v4d/tensor.hpp"

namespace v4d::ops {

using Quad = std::array<std::size_t, 4>;

/// Weights (C_out, C_in, S, P, Q, R); bias (C_out) or empty.
template <typename T>
struct Conv4DParams {
  Tensor<T> weights;
  Tensor<T> bias;
  Quad padding{0, 0, 0, 0};
};

template <typename T>
struct Conv4DGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

inline Quad same_padding(const Quad& kernel) {
  return {(kernel[0] - 1) / 2, (kernel[1] - 1) / 2, (kernel[2] - 1) / 2, (kernel[3] - 1) / 2};
}

namespace detail {

struct Conv4DGeometry {
  std::size_t batch, c_in, c_out;
  Quad in, kernel, out, pad;
  [[nodiscard]] std::size_t in_volume() const { return in[0] * in[1] * in[2] * in[3]; }
  [[nodiscard]] std::size_t out_volume() const { return out[0] * out[1] * out[2] * out[3]; }
};

inline Conv4DGeometry conv4d_geometry(const Shape& x, const Shape& w, const Quad& pad) {
  if (x.size() != 6) throw ShapeError("conv4d: input must be rank 6 (N,C,U,T,H,W), got " + shape_string(x));
  if (w.size() != 6) throw ShapeError("conv4d: weights must be rank 6, got " + shape_string(w));
  if (x[1] != w[1]) {
    throw ShapeError("conv4d: input channels " + std::to_string(x[1]) +
                     " do not match weight channels " + std::to_string(w[1]));
  }
  Conv4DGeometry g{x[0], x[1], w[0], {x[2], x[3], x[4], x[5]}, {w[2], w[3], w[4], w[5]}, {}, pad};
  for (int d = 0; d < 4; ++d) {
    const std::size_t padded = g.in[d] + 2 * pad[d];
    if (g.kernel[d] > padded) throw ShapeError("conv4d: kernel larger than padded input");
    g.out[d] = padded - g.kernel[d] + 1;
  }
  return g;
}

// Weight slice W[:, :, s] as a (C_out, C_in, P, Q, R) tensor.
template <typename T>
Tensor<T> weight_slice(const Tensor<T>& w, std::size_t s) {
  const Shape& ws = w.shape();
  const std::size_t inner = ws[3] * ws[4] * ws[5];
  Tensor<T> out({ws[0], ws[1], ws[3], ws[4], ws[5]});
  for (std::size_t jc = 0; jc < ws[0] * ws[1]; ++jc)
    std::copy_n(w.ptr() + (jc * ws[2] + s) * inner, inner, out.ptr() + jc * inner);
  return out;
}

// Batch of units aligned so that entry (n, u_out) holds input unit
// u_out + s - pad_u of item n, or zeros if that unit lies in the padding.
// `units` is the (N, U, C, T, H, W) layout.
template <typename T>
Tensor<T> shifted_units(const Tensor<T>& units, const Conv4DGeometry& g, std::size_t s) {
  const std::size_t unit_size = g.c_in * g.in[1] * g.in[2] * g.in[3];
  Tensor<T> out({g.batch * g.out[0], g.c_in, g.in[1], g.in[2], g.in[3]});
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t u = 0; u < g.out[0]; ++u) {
      const long src = static_cast<long>(u + s) - static_cast<long>(g.pad[0]);
      if (src < 0 || src >= static_cast<long>(g.in[0])) continue;
      std::copy_n(units.ptr() + (n * g.in[0] + static_cast<std::size_t>(src)) * unit_size, unit_size,
                  out.ptr() + (n * g.out[0] + u) * unit_size);
    }
  return out;
}

}  // namespace detail

inline Shape conv4d_output_shape(const Shape& input, const Shape& weights, const Quad& padding) {
  const auto g = detail::conv4d_geometry(input, weights, padding);
  return {g.batch, g.c_out, g.out[0], g.out[1], g.out[2], g.out[3]};
}

/// Direct evaluation of the 4D sum. Loops are ordered weight-outermost and
/// the valid output range for each tap is computed up front.
template <typename T>
Tensor<T> conv4d_forward_direct(const Tensor<T>& v, const Conv4DParams<T>& p) {
  const auto g = detail::conv4d_geometry(v.shape(), p.weights.shape(), p.padding);
  detail::check_bias(p.bias, g.c_out);
  Tensor<T> out({g.batch, g.c_out, g.out[0], g.out[1], g.out[2], g.out[3]});
  const Shape in_str = row_major_strides({g.in[0], g.in[1], g.in[2], g.in[3]});
  const Shape out_str = row_major_strides({g.out[0], g.out[1], g.out[2], g.out[3]});

  // For tap k along dim d, output index o reads input o + k - pad; the valid
  // o range is [lo, hi).
  auto range = [&](int d, std::size_t k, std::size_t& lo, std::size_t& hi) {
    const long shift = static_cast<long>(k) - static_cast<long>(g.pad[d]);
    lo = static_cast<std::size_t>(std::max<long>(0, -shift));
    hi = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(g.in[d]) - shift, 0,
                                                   static_cast<long>(g.out[d])));
    return shift;
  };

  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t j = 0; j < g.c_out; ++j) {
      T* o = out.ptr() + (n * g.c_out + j) * g.out_volume();
      if (!p.bias.empty()) std::fill_n(o, g.out_volume(), p.bias[j]);
      for (std::size_t c = 0; c < g.c_in; ++c) {
        const T* x = v.ptr() + (n * g.c_in + c) * g.in_volume();
        const T* w = p.weights.ptr() + (j * g.c_in + c) * g.kernel[0] * g.kernel[1] * g.kernel[2] * g.kernel[3];
        for (std::size_t s = 0; s < g.kernel[0]; ++s) {
          std::size_t u0, u1;
          const long du = range(0, s, u0, u1);
          for (std::size_t pp = 0; pp < g.kernel[1]; ++pp) {
            std::size_t t0, t1;
            const long dt = range(1, pp, t0, t1);
            for (std::size_t q = 0; q < g.kernel[2]; ++q) {
              std::size_t h0, h1;
              const long dh = range(2, q, h0, h1);
              for (std::size_t r = 0; r < g.kernel[3]; ++r, ++w) {
                std::size_t w0, w1;
                const long dw = range(3, r, w0, w1);
                const T weight = *w;
                for (std::size_t u = u0; u < u1; ++u)
                  for (std::size_t t = t0; t < t1; ++t)
                    for (std::size_t h = h0; h < h1; ++h) {
                      T* orow = o + u * out_str[0] + t * out_str[1] + h * out_str[2];
                      const T* irow = x + (u + du) * in_str[0] + (t + dt) * in_str[1] + (h + dh) * in_str[2] + dw;
                      for (std::size_t ww = w0; ww < w1; ++ww) orow[ww] += weight * irow[ww];
                    }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

/// Production path: sum over s of conv3d(shift_U(v, s), W[:, :, s]) + b.
template <typename T>
Tensor<T> conv4d_forward_decomposed(const Tensor<T>& v, const Conv4DParams<T>& p) {
  const auto g = detail::conv4d_geometry(v.shape(), p.weights.shape(), p.padding);
  detail::check_bias(p.bias, g.c_out);
  const Tensor<T> units = permute_axes(v, 1, 2);  // (N, U, C, T, H, W)

  Tensor<T> acc;
  for (std::size_t s = 0; s < g.kernel[0]; ++s) {
    Conv3DParams<T> slice{detail::weight_slice(p.weights, s), {}, {1, 1, 1},
                          {p.padding[1], p.padding[2], p.padding[3]}};
    Tensor<T> part = conv3d_forward(detail::shifted_units(units, g, s), slice);
    if (acc.empty()) {
      acc = std::move(part);
    } else {
      add_in_place(acc, part);
    }
  }
  // acc is (N*U_out, C_out, T', H', W')
  if (!p.bias.empty()) {
    const std::size_t vol = g.out[1] * g.out[2] * g.out[3];
    for (std::size_t b = 0; b < g.batch * g.out[0]; ++b)
      for (std::size_t j = 0; j < g.c_out; ++j) {
        T* o = acc.ptr() + (b * g.c_out + j) * vol;
        for (std::size_t k = 0; k < vol; ++k) o[k] += p.bias[j];
      }
  }
  acc = std::move(acc).reshaped({g.batch, g.out[0], g.c_out, g.out[1], g.out[2], g.out[3]});
  return permute_axes(acc, 1, 2);
}

/// Gradients of the 4D convolution via the same decomposition.
template <typename T>
Conv4DGrads<T> conv4d_backward(const Tensor<T>& v, const Conv4DParams<T>& p, const Tensor<T>& grad_out) {
  const auto g = detail::conv4d_geometry(v.shape(), p.weights.shape(), p.padding);
  detail::check_bias(p.bias, g.c_out);
  const Shape expected{g.batch, g.c_out, g.out[0], g.out[1], g.out[2], g.out[3]};
  if (grad_out.shape() != expected) {
    throw ShapeError("conv4d_backward: grad_out " + shape_string(grad_out.shape()) +
                     " does not match output " + shape_string(expected));
  }
  const Tensor<T> units = permute_axes(v, 1, 2);
  const Tensor<T> gout3 = merge_axis_into_batch(permute_axes(grad_out, 1, 2));

  Conv4DGrads<T> grads{Tensor<T>(units.shape()), Tensor<T>(p.weights.shape()), {}};
  const std::size_t unit_size = g.c_in * g.in[1] * g.in[2] * g.in[3];
  const Shape& ws = p.weights.shape();
  const std::size_t inner = ws[3] * ws[4] * ws[5];

  for (std::size_t s = 0; s < g.kernel[0]; ++s) {
    Conv3DParams<T> slice{detail::weight_slice(p.weights, s), {}, {1, 1, 1},
                          {p.padding[1], p.padding[2], p.padding[3]}};
    const auto part = conv3d_backward(detail::shifted_units(units, g, s), slice, gout3);
    for (std::size_t jc = 0; jc < ws[0] * ws[1]; ++jc)
      std::copy_n(part.weights.ptr() + jc * inner, inner, grads.weights.ptr() + (jc * ws[2] + s) * inner);
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t u = 0; u < g.out[0]; ++u) {
        const long src = static_cast<long>(u + s) - static_cast<long>(g.pad[0]);
        if (src < 0 || src >= static_cast<long>(g.in[0])) continue;
        T* dst = grads.input.ptr() + (n * g.in[0] + static_cast<std::size_t>(src)) * unit_size;
        const T* from = part.input.ptr() + (n * g.out[0] + u) * unit_size;
        for (std::size_t k = 0; k < unit_size; ++k) dst[k] += from[k];
      }
  }
  grads.input = permute_axes(grads.input, 1, 2);

  if (!p.bias.empty()) {
    grads.bias = Tensor<T>(p.bias.shape());
    const std::size_t vol = g.out_volume();
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t j = 0; j < g.c_out; ++j) {
        const T* go = grad_out.ptr() + (n * g.c_out + j) * vol;
        T a{0};
        for (std::size_t k = 0; k < vol; ++k) a += go[k];
        grads.bias[j] += a;
      }
  }
  return grads;
}

}  // namespace v4d::ops
