// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "v4d/tensor.hpp"

namespace v4d {

enum class Mode { train, eval };

}  // namespace v4d

namespace v4d::ops {

/// Per-channel batch normalization over every axis except axis 1.
/// Running statistics are empty until the first training-mode call or an
/// explicit initialization; eval mode refuses to run without them.
template <typename T>
struct BatchNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T epsilon = T(1e-5);
  T momentum = T(0.1);

  static BatchNormParams identity(std::size_t channels) {
    BatchNormParams p;
    p.gamma = Tensor<T>({channels}, T{1});
    p.beta = Tensor<T>({channels}, T{0});
    p.running_mean = Tensor<T>({channels}, T{0});
    p.running_var = Tensor<T>({channels}, T{1});
    return p;
  }
  [[nodiscard]] std::size_t channels() const { return gamma.size(); }
  [[nodiscard]] bool has_running_stats() const { return !running_mean.empty() && !running_var.empty(); }
};

template <typename T>
struct BatchNormCache {
  Mode mode = Mode::train;
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

template <typename T>
struct BatchNormGrads {
  Tensor<T> input, gamma, beta;
};

namespace detail {
struct ChannelLayout {
  std::size_t batch, channels, inner;
};
inline ChannelLayout channel_layout(const Shape& s, std::size_t channels) {
  if (s.size() < 2) throw ShapeError("batchnorm: input rank must be >= 2");
  if (s[1] != channels) {
    throw ShapeError("batchnorm: input has " + std::to_string(s[1]) + " channels, params have " +
                     std::to_string(channels));
  }
  std::size_t inner = 1;
  for (std::size_t k = 2; k < s.size(); ++k) inner *= s[k];
  return {s[0], s[1], inner};
}
}  // namespace detail

/// y = gamma * (x - mu) / sqrt(var + eps) + beta. Training mode uses batch
/// statistics and moves the running estimates by `momentum` (running
/// variance uses the unbiased batch variance).
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNormParams<T>& p, Mode mode,
                            BatchNormCache<T>* cache = nullptr) {
  const auto lay = detail::channel_layout(x.shape(), p.channels());
  const std::size_t count = lay.batch * lay.inner;
  std::vector<T> mean(lay.channels), inv_std(lay.channels);

  if (mode == Mode::train) {
    if (count < 2) throw ShapeError("batchnorm: training mode needs at least 2 values per channel");
    if (!p.has_running_stats()) {
      p.running_mean = Tensor<T>({lay.channels}, T{0});
      p.running_var = Tensor<T>({lay.channels}, T{1});
    }
    for (std::size_t c = 0; c < lay.channels; ++c) {
      double s = 0;
      for (std::size_t n = 0; n < lay.batch; ++n) {
        const T* row = x.ptr() + (n * lay.channels + c) * lay.inner;
        for (std::size_t k = 0; k < lay.inner; ++k) s += row[k];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0;
      for (std::size_t n = 0; n < lay.batch; ++n) {
        const T* row = x.ptr() + (n * lay.channels + c) * lay.inner;
        for (std::size_t k = 0; k < lay.inner; ++k) ss += (row[k] - mu) * (row[k] - mu);
      }
      const double var = ss / static_cast<double>(count);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(p.epsilon)));
      const double unbiased = ss / static_cast<double>(count - 1);
      p.running_mean[c] = static_cast<T>((1 - p.momentum) * p.running_mean[c] + p.momentum * mu);
      p.running_var[c] = static_cast<T>((1 - p.momentum) * p.running_var[c] + p.momentum * unbiased);
    }
  } else {
    if (!p.has_running_stats()) throw ShapeError("batchnorm: eval mode requires running statistics");
    for (std::size_t c = 0; c < lay.channels; ++c) {
      mean[c] = p.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(p.running_var[c] + p.epsilon);
    }
  }

  Tensor<T> y(x.shape());
  Tensor<T> xhat = cache ? Tensor<T>(x.shape()) : Tensor<T>();
  for (std::size_t n = 0; n < lay.batch; ++n)
    for (std::size_t c = 0; c < lay.channels; ++c) {
      const std::size_t off = (n * lay.channels + c) * lay.inner;
      const T g = p.gamma[c], b = p.beta[c], mu = mean[c], is = inv_std[c];
      for (std::size_t k = 0; k < lay.inner; ++k) {
        const T h = (x[off + k] - mu) * is;
        if (cache) xhat[off + k] = h;
        y[off + k] = g * h + b;
      }
    }
  if (cache) {
    cache->mode = mode;
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const BatchNormParams<T>& p,
                                     const BatchNormCache<T>& cache) {
  if (grad_out.shape() != cache.xhat.shape()) throw ShapeError("batchnorm_backward: shape mismatch");
  const auto lay = detail::channel_layout(grad_out.shape(), p.channels());
  const T count = static_cast<T>(lay.batch * lay.inner);
  BatchNormGrads<T> g{Tensor<T>(grad_out.shape()), Tensor<T>({lay.channels}), Tensor<T>({lay.channels})};
  for (std::size_t c = 0; c < lay.channels; ++c) {
    T sum_g{0}, sum_gx{0};
    for (std::size_t n = 0; n < lay.batch; ++n) {
      const std::size_t off = (n * lay.channels + c) * lay.inner;
      for (std::size_t k = 0; k < lay.inner; ++k) {
        sum_g += grad_out[off + k];
        sum_gx += grad_out[off + k] * cache.xhat[off + k];
      }
    }
    g.beta[c] = sum_g;
    g.gamma[c] = sum_gx;
    const T scale = p.gamma[c] * cache.inv_std[c];
    for (std::size_t n = 0; n < lay.batch; ++n) {
      const std::size_t off = (n * lay.channels + c) * lay.inner;
      for (std::size_t k = 0; k < lay.inner; ++k) {
        if (cache.mode == Mode::eval) {
          g.input[off + k] = scale * grad_out[off + k];
        } else {
          g.input[off + k] =
              scale * (grad_out[off + k] - sum_g / count - cache.xhat[off + k] * sum_gx / count);
        }
      }
    }
  }
  return g;
}

}  // namespace v4d::ops
