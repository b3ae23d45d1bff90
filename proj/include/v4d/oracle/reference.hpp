// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Brute-force reference implementations used as ground truth. Everything
// here is written directly against Tensor and runs in double precision; no
// code is shared with v4d/ops.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "v4d/tensor.hpp"

namespace v4d::oracle {

/// 3D convolution as a literal loop nest with optional temporal dilation.
/// x (N, C, T, H, W), w (J, C, P, Q, R), bias (J) or empty.
inline Tensor<double> conv3d_reference(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& bias,
                                       std::array<std::size_t, 3> stride, std::array<std::size_t, 3> pad,
                                       std::size_t temporal_dilation = 1) {
  if (x.rank() != 5 || w.rank() != 5 || x.shape()[1] != w.shape()[1]) {
    throw ShapeError("conv3d_reference: incompatible shapes " + shape_string(x.shape()) + " / " +
                     shape_string(w.shape()));
  }
  const std::size_t N = x.shape()[0], C = x.shape()[1], J = w.shape()[0];
  const std::array<long, 3> in{static_cast<long>(x.shape()[2]), static_cast<long>(x.shape()[3]),
                               static_cast<long>(x.shape()[4])};
  const std::array<std::size_t, 3> k{w.shape()[2], w.shape()[3], w.shape()[4]};
  const std::array<std::size_t, 3> dil{temporal_dilation, 1, 1};
  std::array<std::size_t, 3> out{};
  for (int d = 0; d < 3; ++d) {
    const long span = static_cast<long>(dil[d] * (k[d] - 1) + 1);
    const long padded = in[d] + 2 * static_cast<long>(pad[d]);
    if (span > padded) throw ShapeError("conv3d_reference: kernel larger than padded input");
    out[d] = static_cast<std::size_t>((padded - span) / static_cast<long>(stride[d]) + 1);
  }
  Tensor<double> o({N, J, out[0], out[1], out[2]});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t j = 0; j < J; ++j)
      for (std::size_t t = 0; t < out[0]; ++t)
        for (std::size_t h = 0; h < out[1]; ++h)
          for (std::size_t ww = 0; ww < out[2]; ++ww) {
            double acc = bias.empty() ? 0.0 : bias.at(j);
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t p = 0; p < k[0]; ++p)
                for (std::size_t q = 0; q < k[1]; ++q)
                  for (std::size_t r = 0; r < k[2]; ++r) {
                    const long it = static_cast<long>(t * stride[0] + p * dil[0]) - static_cast<long>(pad[0]);
                    const long ih = static_cast<long>(h * stride[1] + q) - static_cast<long>(pad[1]);
                    const long iw = static_cast<long>(ww * stride[2] + r) - static_cast<long>(pad[2]);
                    if (it < 0 || ih < 0 || iw < 0 || it >= in[0] || ih >= in[1] || iw >= in[2]) continue;
                    acc += w.at(j, c, p, q, r) * x.at(n, c, it, ih, iw);
                  }
            o.at(n, j, t, h, ww) = acc;
          }
  return o;
}

/// Literal 4D convolution: for every (j, u, t, h, w) sum over (c, s, p, q, r)
/// of W[j,c,s,p,q,r] * v[c, u+s-pad_u, t+p-pad_t, h+q-pad_h, w+r-pad_w],
/// out-of-range taps reading zero. v is (N, C, U, T, H, W).
inline Tensor<double> conv4d_reference(const Tensor<double>& v, const Tensor<double>& w, const Tensor<double>& bias,
                                       std::array<std::size_t, 4> pad) {
  if (v.rank() != 6 || w.rank() != 6 || v.shape()[1] != w.shape()[1]) {
    throw ShapeError("conv4d_reference: incompatible shapes " + shape_string(v.shape()) + " / " +
                     shape_string(w.shape()));
  }
  const std::size_t N = v.shape()[0], C = v.shape()[1], J = w.shape()[0];
  std::array<long, 4> in{}, k{}, out{}, pd{};
  for (int d = 0; d < 4; ++d) {
    in[d] = static_cast<long>(v.shape()[2 + d]);
    k[d] = static_cast<long>(w.shape()[2 + d]);
    pd[d] = static_cast<long>(pad[d]);
    out[d] = in[d] + 2 * pd[d] - k[d] + 1;
    if (out[d] < 1) throw ShapeError("conv4d_reference: kernel larger than padded input");
  }
  Tensor<double> o({N, J, static_cast<std::size_t>(out[0]), static_cast<std::size_t>(out[1]),
                    static_cast<std::size_t>(out[2]), static_cast<std::size_t>(out[3])});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t j = 0; j < J; ++j)
      for (long u = 0; u < out[0]; ++u)
        for (long t = 0; t < out[1]; ++t)
          for (long h = 0; h < out[2]; ++h)
            for (long x = 0; x < out[3]; ++x) {
              double acc = bias.empty() ? 0.0 : bias.at(j);
              for (std::size_t c = 0; c < C; ++c)
                for (long s = 0; s < k[0]; ++s)
                  for (long p = 0; p < k[1]; ++p)
                    for (long q = 0; q < k[2]; ++q)
                      for (long r = 0; r < k[3]; ++r) {
                        const long iu = u + s - pd[0], it = t + p - pd[1], ih = h + q - pd[2], iw = x + r - pd[3];
                        if (iu < 0 || it < 0 || ih < 0 || iw < 0 || iu >= in[0] || it >= in[1] || ih >= in[2] ||
                            iw >= in[3])
                          continue;
                        acc += w.at(j, c, s, p, q, r) * v.at(n, c, iu, it, ih, iw);
                      }
              o.at(n, j, u, t, h, x) = acc;
            }
  return o;
}

/// An S x 1 x 1 x 1 4D convolution evaluated as a temporally dilated 3D
/// convolution: units are concatenated along time into (C, U*T, H, W), a
/// (S x 1 x 1) kernel with dilation T and temporal zero padding T*(S-1)/2 is
/// applied, and the result is split back into (C_out, U, T, H, W).
/// v is (C, U, T, H, W); w is (J, C, S, 1, 1, 1).
inline Tensor<double> dilated_conv3d_reference(const Tensor<double>& v, const Tensor<double>& w,
                                               const Tensor<double>& bias) {
  if (v.rank() != 5) throw ShapeError("dilated_conv3d_reference: units must be (C, U, T, H, W)");
  if (w.rank() != 6 || w.shape()[3] != 1 || w.shape()[4] != 1 || w.shape()[5] != 1) {
    throw ShapeError("dilated_conv3d_reference: kernel must have the S x 1 x 1 x 1 form");
  }
  if (w.shape()[2] % 2 == 0) throw ShapeError("dilated_conv3d_reference: S must be odd");
  const std::size_t C = v.shape()[0], U = v.shape()[1], T = v.shape()[2], H = v.shape()[3], W = v.shape()[4];
  const std::size_t J = w.shape()[0], S = w.shape()[2];

  // (C, U, T, H, W) is already (C, U*T, H, W) in row-major order.
  const Tensor<double> seq = v.reshaped({1, C, U * T, H, W});
  const Tensor<double> k3 = w.reshaped({J, C, S, 1, 1});
  const Tensor<double> o = conv3d_reference(seq, k3, bias, {1, 1, 1}, {T * (S - 1) / 2, 0, 0}, T);
  return o.reshaped({J, U, T, H, W});
}

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element.
template <typename F>
Tensor<double> numerical_gradient(F&& f, const Tensor<double>& x, double h = 1e-5) {
  if (!(h > 0)) throw ShapeError("numerical_gradient: step must be positive");
  Tensor<double> g(x.shape());
  Tensor<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(static_cast<const Tensor<double>&>(probe));
    probe[i] = orig - h;
    const double fm = f(static_cast<const Tensor<double>&>(probe));
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw ShapeError("numerical_gradient: non-finite function value at element " + std::to_string(i));
    }
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

/// |a - b| / max(|a|, |b|, 1e-12)
inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0;
  std::size_t argmax = 0;
  double analytic = 0;
  double numeric = 0;
  double tolerance = 1e-4;
  [[nodiscard]] bool passed() const { return max_rel_error <= tolerance; }
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double step = 1e-5;
  std::string dtype = "f64";

  [[nodiscard]] double worst() const {
    double m = 0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
  [[nodiscard]] bool passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.passed(); });
  }
};

inline void to_json(nlohmann::json& j, const GradCheckEntry& e) {
  j = {{"name", e.name},         {"max_rel_error", e.max_rel_error}, {"argmax", e.argmax}, {"analytic", e.analytic},
       {"numeric", e.numeric},   {"tolerance", e.tolerance},         {"passed", e.passed()}};
}

inline void to_json(nlohmann::json& j, const GradCheckReport& r) {
  j = {{"schema", "v4d.gradcheck/1"}, {"step", r.step}, {"dtype", r.dtype}, {"entries", r.entries},
       {"passed", r.passed()}};
}

/// Compares an analytic gradient with numerical_gradient element by element.
/// Elements where both gradients are below `floor` in magnitude are treated
/// as agreeing, since the relative error is meaningless there.
inline GradCheckEntry compare_gradients(std::string name, const Tensor<double>& analytic, const Tensor<double>& numeric,
                                        double floor = 1e-7) {
  if (analytic.shape() != numeric.shape()) throw ShapeError("compare_gradients: shape mismatch for " + name);
  GradCheckEntry e{std::move(name)};
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (std::abs(analytic[i]) < floor && std::abs(numeric[i]) < floor) continue;
    const double r = relative_error(analytic[i], numeric[i]);
    if (r >= e.max_rel_error) {
      e.max_rel_error = r;
      e.argmax = i;
      e.analytic = analytic[i];
      e.numeric = numeric[i];
    }
  }
  return e;
}

/// Mean of per-unit clip logits: every unit of `video` (N, C, U, T, H, W)
/// is scored on its own by `clip_logits`, which maps an (N, C, 1, T, H, W)
/// clip to (N, K) logits.
template <typename ClipLogits>
Tensor<double> tsn_forward_reference(ClipLogits&& clip_logits, const Tensor<double>& video) {
  if (video.rank() != 6) throw ShapeError("tsn_forward_reference: video must be (N, C, U, T, H, W)");
  const Shape& s = video.shape();
  const std::size_t unit_inner = s[3] * s[4] * s[5];
  Tensor<double> mean;
  for (std::size_t u = 0; u < s[2]; ++u) {
    Tensor<double> clip({s[0], s[1], 1, s[3], s[4], s[5]});
    for (std::size_t n = 0; n < s[0]; ++n)
      for (std::size_t c = 0; c < s[1]; ++c)
        std::copy_n(video.ptr() + ((n * s[1] + c) * s[2] + u) * unit_inner, unit_inner,
                    clip.ptr() + (n * s[1] + c) * unit_inner);
    const Tensor<double> logits = clip_logits(clip);
    if (mean.empty()) {
      mean = Tensor<double>(logits.shape());
    }
    for (std::size_t k = 0; k < logits.size(); ++k) mean[k] += logits[k];
  }
  for (auto& x : mean.data()) x /= static_cast<double>(s[2]);
  return mean;
}

}  // namespace v4d::oracle
