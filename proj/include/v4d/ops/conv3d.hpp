// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "v4d/ops/gemm.hpp"
#include "v4d/parallel.hpp"
#include "v4d/tensor.hpp"

namespace v4d::ops {

using Triple = std::array<std::size_t, 3>;

/// Weights (C_out, C_in, P, Q, R); bias (C_out) or empty for no bias.
template <typename T>
struct Conv3DParams {
  Tensor<T> weights;
  Tensor<T> bias;
  Triple stride{1, 1, 1};
  Triple padding{0, 0, 0};
};

template <typename T>
struct Conv3DGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;  // empty when the params carry no bias
};

/// Padding that keeps (T, H, W) unchanged at stride 1 for odd kernels.
inline Triple same_padding(const Triple& kernel) {
  return {(kernel[0] - 1) / 2, (kernel[1] - 1) / 2, (kernel[2] - 1) / 2};
}

namespace detail {

struct Conv3DGeometry {
  std::size_t batch, c_in, c_out;
  Triple in, kernel, out, stride, pad;
  [[nodiscard]] std::size_t in_volume() const { return in[0] * in[1] * in[2]; }
  [[nodiscard]] std::size_t out_volume() const { return out[0] * out[1] * out[2]; }
  [[nodiscard]] std::size_t kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
  [[nodiscard]] bool pointwise() const {
    return kernel_volume() == 1 && stride == Triple{1, 1, 1} && pad == Triple{0, 0, 0};
  }
};

inline Conv3DGeometry conv3d_geometry(const Shape& x, const Shape& w, const Triple& stride,
                                      const Triple& pad) {
  if (x.size() != 5) throw ShapeError("conv3d: input must be rank 5 (N,C,T,H,W), got " + shape_string(x));
  if (w.size() != 5) throw ShapeError("conv3d: weights must be rank 5, got " + shape_string(w));
  if (x[1] != w[1]) {
    throw ShapeError("conv3d: input channels " + std::to_string(x[1]) +
                     " do not match weight channels " + std::to_string(w[1]));
  }
  Conv3DGeometry g{x[0], x[1], w[0], {x[2], x[3], x[4]}, {w[2], w[3], w[4]}, {}, stride, pad};
  for (int d = 0; d < 3; ++d) {
    if (stride[d] == 0) throw ShapeError("conv3d: stride must be positive");
    const std::size_t padded = g.in[d] + 2 * pad[d];
    if (g.kernel[d] > padded) {
      throw ShapeError("conv3d: kernel " + shape_string({w[2], w[3], w[4]}) +
                       " larger than padded input " + shape_string(x));
    }
    g.out[d] = (padded - g.kernel[d]) / stride[d] + 1;
  }
  return g;
}

// col[(c, p, q, r), (t, h, w)] = x[c, t*st + p - pt, ...], zero outside.
template <typename T>
void im2col(const Conv3DGeometry& g, const T* x, T* col) {
  const std::size_t ov = g.out_volume();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.c_in; ++c) {
    const T* xc = x + c * g.in_volume();
    for (std::size_t p = 0; p < g.kernel[0]; ++p)
      for (std::size_t q = 0; q < g.kernel[1]; ++q)
        for (std::size_t r = 0; r < g.kernel[2]; ++r, ++row) {
          T* dst = col + row * ov;
          for (std::size_t ot = 0; ot < g.out[0]; ++ot) {
            const long it = static_cast<long>(ot * g.stride[0] + p) - static_cast<long>(g.pad[0]);
            for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
              const long ih = static_cast<long>(oh * g.stride[1] + q) - static_cast<long>(g.pad[1]);
              T* d = dst + (ot * g.out[1] + oh) * g.out[2];
              if (it < 0 || it >= static_cast<long>(g.in[0]) || ih < 0 ||
                  ih >= static_cast<long>(g.in[1])) {
                std::fill_n(d, g.out[2], T{0});
                continue;
              }
              const T* src = xc + (static_cast<std::size_t>(it) * g.in[1] + static_cast<std::size_t>(ih)) * g.in[2];
              for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
                const long iw = static_cast<long>(ow * g.stride[2] + r) - static_cast<long>(g.pad[2]);
                d[ow] = (iw < 0 || iw >= static_cast<long>(g.in[2])) ? T{0} : src[iw];
              }
            }
          }
        }
  }
}

// Adjoint of im2col: scatter-add columns back into dx.
template <typename T>
void col2im(const Conv3DGeometry& g, const T* col, T* dx) {
  const std::size_t ov = g.out_volume();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.c_in; ++c) {
    T* xc = dx + c * g.in_volume();
    for (std::size_t p = 0; p < g.kernel[0]; ++p)
      for (std::size_t q = 0; q < g.kernel[1]; ++q)
        for (std::size_t r = 0; r < g.kernel[2]; ++r, ++row) {
          const T* src = col + row * ov;
          for (std::size_t ot = 0; ot < g.out[0]; ++ot) {
            const long it = static_cast<long>(ot * g.stride[0] + p) - static_cast<long>(g.pad[0]);
            if (it < 0 || it >= static_cast<long>(g.in[0])) continue;
            for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
              const long ih = static_cast<long>(oh * g.stride[1] + q) - static_cast<long>(g.pad[1]);
              if (ih < 0 || ih >= static_cast<long>(g.in[1])) continue;
              const T* s = src + (ot * g.out[1] + oh) * g.out[2];
              T* d = xc + (static_cast<std::size_t>(it) * g.in[1] + static_cast<std::size_t>(ih)) * g.in[2];
              for (std::size_t ow = 0; ow < g.out[2]; ++ow) {
                const long iw = static_cast<long>(ow * g.stride[2] + r) - static_cast<long>(g.pad[2]);
                if (iw >= 0 && iw < static_cast<long>(g.in[2])) d[iw] += s[ow];
              }
            }
          }
        }
  }
}

template <typename T>
void check_bias(const Tensor<T>& bias, std::size_t c_out) {
  if (!bias.empty() && (bias.rank() != 1 || bias.size() != c_out)) {
    throw ShapeError("conv: bias must have C_out = " + std::to_string(c_out) + " elements");
  }
}

}  // namespace detail

inline Shape conv3d_output_shape(const Shape& input, const Shape& weights, const Triple& stride,
                                 const Triple& padding) {
  const auto g = detail::conv3d_geometry(input, weights, stride, padding);
  return {g.batch, g.c_out, g.out[0], g.out[1], g.out[2]};
}

/// o[n,j,t,h,w] = b_j + sum_{c,p,q,r} W[j,c,p,q,r] * x_pad[n,c,t*s_t+p,h*s_h+q,w*s_w+r]
template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Conv3DParams<T>& p) {
  const auto g = detail::conv3d_geometry(x.shape(), p.weights.shape(), p.stride, p.padding);
  detail::check_bias(p.bias, g.c_out);
  Tensor<T> out({g.batch, g.c_out, g.out[0], g.out[1], g.out[2]});
  const std::size_t ov = g.out_volume();
  const std::size_t k = g.c_in * g.kernel_volume();
  const std::size_t in_item = g.c_in * g.in_volume();
  const std::size_t out_item = g.c_out * ov;

  parallel_chunks(g.batch, [&](std::size_t, std::size_t begin, std::size_t end) {
    std::vector<T> col(g.pointwise() ? 0 : k * ov);
    for (std::size_t n = begin; n < end; ++n) {
      T* o = out.ptr() + n * out_item;
      if (!p.bias.empty()) {
        for (std::size_t j = 0; j < g.c_out; ++j) std::fill_n(o + j * ov, ov, p.bias[j]);
      }
      const T* src = x.ptr() + n * in_item;
      if (!g.pointwise()) {
        detail::im2col(g, src, col.data());
        src = col.data();
      }
      gemm::nn(g.c_out, ov, k, p.weights.ptr(), src, o);
    }
  });
  return out;
}

template <typename T>
Conv3DGrads<T> conv3d_backward(const Tensor<T>& x, const Conv3DParams<T>& p,
                               const Tensor<T>& grad_out) {
  const auto g = detail::conv3d_geometry(x.shape(), p.weights.shape(), p.stride, p.padding);
  detail::check_bias(p.bias, g.c_out);
  const Shape expected{g.batch, g.c_out, g.out[0], g.out[1], g.out[2]};
  if (grad_out.shape() != expected) {
    throw ShapeError("conv3d_backward: grad_out " + shape_string(grad_out.shape()) +
                     " does not match output " + shape_string(expected));
  }
  const std::size_t ov = g.out_volume();
  const std::size_t k = g.c_in * g.kernel_volume();
  const std::size_t in_item = g.c_in * g.in_volume();
  const std::size_t out_item = g.c_out * ov;

  Conv3DGrads<T> grads{Tensor<T>(x.shape()), Tensor<T>(p.weights.shape()), {}};
  if (!p.bias.empty()) {
    grads.bias = Tensor<T>(p.bias.shape());
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t j = 0; j < g.c_out; ++j) {
        const T* go = grad_out.ptr() + n * out_item + j * ov;
        T acc{0};
        for (std::size_t v = 0; v < ov; ++v) acc += go[v];
        grads.bias[j] += acc;
      }
  }

  std::vector<std::vector<T>> partial(std::min(g.batch, num_threads()));
  const std::size_t used = parallel_chunks(g.batch, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
    std::vector<T>& dw = partial[chunk];
    dw.assign(p.weights.size(), T{0});
    std::vector<T> col(g.pointwise() ? 0 : k * ov);
    std::vector<T> dcol(g.pointwise() ? 0 : k * ov);
    for (std::size_t n = begin; n < end; ++n) {
      const T* go = grad_out.ptr() + n * out_item;
      const T* src = x.ptr() + n * in_item;
      T* dx = grads.input.ptr() + n * in_item;
      if (g.pointwise()) {
        gemm::nt(g.c_out, k, ov, go, src, dw.data());
        gemm::tn(k, ov, g.c_out, p.weights.ptr(), go, dx);
      } else {
        detail::im2col(g, src, col.data());
        gemm::nt(g.c_out, k, ov, go, col.data(), dw.data());
        std::fill(dcol.begin(), dcol.end(), T{0});
        gemm::tn(k, ov, g.c_out, p.weights.ptr(), go, dcol.data());
        detail::col2im(g, dcol.data(), dx);
      }
    }
  });
  for (std::size_t c = 0; c < used; ++c)
    for (std::size_t i = 0; i < grads.weights.size(); ++i) grads.weights[i] += partial[c][i];
  return grads;
}

}  // namespace v4d::ops
