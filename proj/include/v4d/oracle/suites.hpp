// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Randomized check suites shared by the gradcheck / equiv commands and the
// acceptance binary. Everything runs in double precision except the f32
// direct-vs-decomposed row.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "v4d/network.hpp"
#include "v4d/ops/activation.hpp"
#include "v4d/ops/batchnorm.hpp"
#include "v4d/ops/conv3d.hpp"
#include "v4d/ops/conv4d.hpp"
#include "v4d/ops/linear.hpp"
#include "v4d/ops/pooling.hpp"
#include "v4d/oracle/reference.hpp"

namespace v4d::oracle {

namespace detail {

template <typename T = double>
Tensor<T> uniform(const Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> d(-scale, scale);
  Tensor<T> t(shape);
  for (auto& e : t.data()) e = static_cast<T>(d(rng));
  return t;
}

inline std::size_t draw(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::string kernel_label(const ops::Quad& k) {
  return std::to_string(k[0]) + "x" + std::to_string(k[1]) + "x" + std::to_string(k[2]) + "x" + std::to_string(k[3]);
}

/// Odd kernel extents in one of the three forms: Sx1x1x1, SxPx1x1, SxPxQxR.
inline ops::Quad random_form(std::mt19937_64& rng, int form) {
  auto odd = [&] { return 2 * draw(rng, 0, 1) + 1; };
  ops::Quad k{odd(), 1, 1, 1};
  if (form >= 1) k[1] = odd();
  if (form == 2) k[2] = k[3] = odd();
  return k;
}

}  // namespace detail

// ---- gradient suite ----

struct GradCheckOptions {
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
  double end_to_end_tolerance = 1e-3;
};

namespace detail {

class GradSuite {
 public:
  GradSuite(GradCheckReport& rep, const GradCheckOptions& o) : rep_(rep), o_(o) {}

  template <typename F>
  void check(const std::string& name, const Tensor<double>& analytic, F&& f, const Tensor<double>& at,
             double floor = 1e-7, double tol = -1) {
    auto e = compare_gradients(name, analytic, numerical_gradient(f, at, o_.step), floor);
    e.tolerance = tol > 0 ? tol : o_.tolerance;
    rep_.entries.push_back(std::move(e));
  }

 private:
  GradCheckReport& rep_;
  const GradCheckOptions& o_;
};

}  // namespace detail

/// Analytic backward of every differentiable piece against central
/// differences of a random linear functional <f(x), r>.
inline GradCheckReport gradient_suite(const GradCheckOptions& o = {}) {
  using detail::dot;
  using detail::uniform;
  std::mt19937_64 rng(o.seed);
  GradCheckReport rep;
  rep.step = o.step;
  detail::GradSuite s(rep, o);

  {  // conv3d, strided and padded
    const auto x = uniform({2, 2, 3, 5, 4}, rng);
    ops::Conv3DParams<double> p{uniform({3, 2, 3, 3, 1}, rng), uniform({3}, rng), {1, 2, 2}, {1, 1, 0}};
    const auto r = uniform(ops::conv3d_forward(x, p).shape(), rng);
    const auto g = ops::conv3d_backward(x, p, r);
    s.check("conv3d.input", g.input, [&](const auto& t) { return dot(ops::conv3d_forward(t, p), r); }, x);
    s.check("conv3d.weight", g.weights, [&](const auto& t) {
      auto q = p;
      q.weights = t;
      return dot(ops::conv3d_forward(x, q), r);
    }, p.weights);
    s.check("conv3d.bias", g.bias, [&](const auto& t) {
      auto q = p;
      q.bias = t;
      return dot(ops::conv3d_forward(x, q), r);
    }, p.bias);
  }

  for (const ops::Quad k : {ops::Quad{3, 1, 1, 1}, ops::Quad{3, 3, 1, 1}, ops::Quad{3, 3, 3, 3}}) {
    const auto v = uniform({2, 2, 3, 2, 3, 3}, rng);
    ops::Conv4DParams<double> p{uniform({2, 2, k[0], k[1], k[2], k[3]}, rng), uniform({2}, rng), ops::same_padding(k)};
    const auto r = uniform(v.shape(), rng);
    const auto g = ops::conv4d_backward(v, p, r);
    const std::string tag = "conv4d[" + detail::kernel_label(k) + "].";
    s.check(tag + "input", g.input, [&](const auto& t) { return dot(ops::conv4d_forward_decomposed(t, p), r); }, v);
    s.check(tag + "weight", g.weights, [&](const auto& t) {
      auto q = p;
      q.weights = t;
      return dot(ops::conv4d_forward_decomposed(v, q), r);
    }, p.weights);
    s.check(tag + "bias", g.bias, [&](const auto& t) {
      auto q = p;
      q.bias = t;
      return dot(ops::conv4d_forward_decomposed(v, q), r);
    }, p.bias);
  }

  for (const Mode mode : {Mode::train, Mode::eval}) {
    auto p = ops::BatchNormParams<double>::identity(3);
    p.gamma = uniform({3}, rng);
    p.beta = uniform({3}, rng);
    p.running_mean = uniform({3}, rng);
    p.running_var = uniform({3}, rng, 0.5);
    for (auto& e : p.running_var.data()) e = std::abs(e) + 0.5;
    const auto x = uniform({3, 3, 2, 3}, rng);
    const auto r = uniform(x.shape(), rng);
    ops::BatchNormCache<double> cache;
    auto p0 = p;
    ops::batchnorm_forward(x, p0, mode, &cache);
    const auto g = ops::batchnorm_backward(r, p, cache);
    auto f = [&](const Tensor<double>& xx, const Tensor<double>& gm, const Tensor<double>& bt) {
      auto q = p;
      q.gamma = gm;
      q.beta = bt;
      return dot(ops::batchnorm_forward(xx, q, mode), r);
    };
    const std::string tag = mode == Mode::train ? "batchnorm[train]." : "batchnorm[eval].";
    s.check(tag + "input", g.input, [&](const auto& t) { return f(t, p.gamma, p.beta); }, x);
    s.check(tag + "gamma", g.gamma, [&](const auto& t) { return f(x, t, p.beta); }, p.gamma);
    s.check(tag + "beta", g.beta, [&](const auto& t) { return f(x, p.gamma, t); }, p.beta);
  }

  {  // relu away from the kink
    auto x = uniform({50}, rng);
    for (auto& e : x.data())
      if (std::abs(e) < 1e-3) e = 0.5;
    const auto r = uniform({50}, rng);
    s.check("relu.input", ops::relu_backward(x, r), [&](const auto& t) { return dot(ops::relu(t), r); }, x);
  }

  {
    const ops::PoolSpec spec{{1, 3, 3}, {1, 2, 2}, {0, 1, 1}};
    const auto x = uniform({2, 2, 2, 5, 6}, rng);
    const auto res = ops::maxpool3d_forward(x, spec);
    const auto r = uniform(res.output.shape(), rng);
    s.check("maxpool.input", ops::maxpool3d_backward(x.shape(), res.argmax, r),
            [&](const auto& t) { return dot(ops::maxpool3d_forward(t, spec).output, r); }, x);
  }

  {
    const auto x = uniform({2, 3, 2, 3}, rng);
    const auto r = uniform({2, 3}, rng);
    s.check("global_avg_pool.input", ops::global_avg_pool_backward(x.shape(), r),
            [&](const auto& t) { return dot(ops::global_avg_pool(t), r); }, x);
  }

  {
    const auto x = uniform({4, 5}, rng), w = uniform({3, 5}, rng), b = uniform({3}, rng);
    const auto r = uniform({4, 3}, rng);
    const auto g = ops::fully_connected_backward(x, w, b, r);
    s.check("fc.input", g.input, [&](const auto& t) { return dot(ops::fully_connected(t, w, b), r); }, x);
    s.check("fc.weight", g.weights, [&](const auto& t) { return dot(ops::fully_connected(x, t, b), r); }, w);
    s.check("fc.bias", g.bias, [&](const auto& t) { return dot(ops::fully_connected(x, w, t), r); }, b);
  }

  {
    const auto logits = uniform({3, 4}, rng, 5.0);
    const int labels[] = {1, 3, 0};
    s.check("softmax_cross_entropy.logits", ops::softmax_cross_entropy(logits, labels).grad_logits,
            [&](const auto& t) { return ops::softmax_cross_entropy(t, labels).loss; }, logits);
  }

  {
    Residual4DBlock<double> blk("fd", 2, {3, 3, 1, 1});
    blk.conv().weights = uniform(blk.conv().weights.shape(), rng);
    blk.conv().bias = uniform({2}, rng);
    ForwardContext ctx;
    ctx.mode = Mode::train;
    ctx.units = 3;
    const auto x = uniform({6, 2, 3, 2, 2}, rng);
    const auto r = uniform(x.shape(), rng);
    std::vector<ParamRef<double>> params;
    blk.collect_parameters(params);
    blk.forward(x, ctx);
    const auto gx = blk.backward(r);
    s.check("residual4d.input", gx, [&](const auto& t) { return dot(blk.forward(t, ctx), r); }, x);
    for (auto& p : params) {
      const Tensor<double> saved = *p.value;
      s.check("residual4d." + p.name.substr(p.name.find('.') + 1), *p.grad, [&](const auto& t) {
        *p.value = t;
        return dot(blk.forward(x, ctx), r);
      }, saved);
      *p.value = saved;
    }
  }

  {  // tiny end-to-end network, softmax cross-entropy loss
    NetworkSpec spec;
    spec.width = 2;
    spec.units = 2;
    spec.num_classes = 3;
    spec.blocks = {1, 1, 1, 1};
    spec.insertions = {{3, 0, {3, 3, 1, 1}}};
    Network<double> net(spec, o.seed + 1);
    for (auto* b : net.blocks_4d()) {
      b->conv().weights = uniform(b->conv().weights.shape(), rng, 0.3);
      b->conv().bias = uniform(b->conv().bias.shape(), rng, 0.3);
    }
    const auto x = uniform({2, 3, 2, 2, 8, 8}, rng);
    const int labels[] = {0, 2};
    auto loss = [&] { return ops::softmax_cross_entropy(net.forward(x, Mode::train), labels).loss; };
    net.zero_grad();
    net.backward(ops::softmax_cross_entropy(net.forward(x, Mode::train), labels).grad_logits);
    for (auto& p : net.parameters()) {
      const Tensor<double> saved = *p.value;
      s.check("network." + p.name, *p.grad, [&](const auto& t) {
        *p.value = t;
        return loss();
      }, saved, 1e-6, o.end_to_end_tolerance);
      *p.value = saved;
    }
  }
  return rep;
}

// ---- equivalence suite ----

struct EquivRow {
  std::string name;
  std::size_t cases = 0;
  double max_error = 0;
  double tolerance = 0;
  bool relative = false;  // max_error is relative to max |output|
  [[nodiscard]] bool passed() const { return max_error <= tolerance; }
};

inline void to_json(nlohmann::json& j, const EquivRow& r) {
  j = {{"name", r.name},         {"cases", r.cases},       {"max_error", r.max_error},
       {"tolerance", r.tolerance}, {"relative", r.relative}, {"passed", r.passed()}};
}

struct EquivOptions {
  std::uint64_t seed = 0;
  std::size_t conv_cases = 100;
  std::size_t dilated_cases = 20;
  std::size_t tsn_cases = 20;
};

/// Direct vs decomposed 4D convolution at f64 over the three kernel forms.
inline EquivRow direct_vs_decomposed_f64(std::mt19937_64& rng, std::size_t cases) {
  using detail::draw;
  EquivRow row{"conv4d direct vs decomposed (f64)", cases, 0, 1e-10, false};
  for (std::size_t trial = 0; trial < cases; ++trial) {
    const ops::Quad k = detail::random_form(rng, static_cast<int>(trial % 3));
    const auto v = detail::uniform({draw(rng, 1, 2), draw(rng, 1, 3), draw(rng, 1, 6), draw(rng, 1, 6), draw(rng, 1, 6),
                                    draw(rng, 1, 6)},
                                   rng);
    ops::Conv4DParams<double> p{detail::uniform({draw(rng, 1, 3), v.shape()[1], k[0], k[1], k[2], k[3]}, rng),
                                {}, ops::same_padding(k)};
    p.bias = detail::uniform({p.weights.shape()[0]}, rng);
    row.max_error = std::max(
        row.max_error, max_abs_diff(ops::conv4d_forward_direct(v, p), ops::conv4d_forward_decomposed(v, p)));
  }
  return row;
}

/// Same comparison at f32, reported relative to the output magnitude.
inline EquivRow direct_vs_decomposed_f32(std::mt19937_64& rng, std::size_t cases) {
  using detail::draw;
  EquivRow row{"conv4d direct vs decomposed (f32, relative)", cases, 0, 1e-4, true};
  for (std::size_t trial = 0; trial < cases; ++trial) {
    const ops::Quad k = detail::random_form(rng, static_cast<int>(trial % 3));
    const auto v = detail::uniform<float>({draw(rng, 1, 2), draw(rng, 1, 4), draw(rng, 1, 6), draw(rng, 1, 6),
                                           draw(rng, 1, 6), draw(rng, 1, 6)},
                                          rng);
    ops::Conv4DParams<float> p{detail::uniform<float>({draw(rng, 1, 4), v.shape()[1], k[0], k[1], k[2], k[3]}, rng),
                               {}, ops::same_padding(k)};
    p.bias = detail::uniform<float>({p.weights.shape()[0]}, rng);
    const auto a = ops::conv4d_forward_direct(v, p), b = ops::conv4d_forward_decomposed(v, p);
    const double scale = std::max<double>(max_abs(a), 1e-30);
    row.max_error = std::max(row.max_error, static_cast<double>(max_abs_diff(a, b)) / scale);
  }
  return row;
}

/// Literal loop-nest oracle against the decomposed kernel.
inline EquivRow reference_vs_decomposed(std::mt19937_64& rng, std::size_t cases) {
  using detail::draw;
  EquivRow row{"conv4d oracle vs decomposed (f64)", cases, 0, 1e-10, false};
  for (std::size_t trial = 0; trial < cases; ++trial) {
    const ops::Quad k = detail::random_form(rng, static_cast<int>(trial % 3));
    const auto v = detail::uniform({draw(rng, 1, 2), draw(rng, 1, 3), draw(rng, 1, 5), draw(rng, 1, 4), draw(rng, 1, 5),
                                    draw(rng, 1, 5)},
                                   rng);
    ops::Conv4DParams<double> p{detail::uniform({draw(rng, 1, 3), v.shape()[1], k[0], k[1], k[2], k[3]}, rng),
                                {}, ops::same_padding(k)};
    p.bias = detail::uniform({p.weights.shape()[0]}, rng);
    row.max_error = std::max(row.max_error, max_abs_diff(conv4d_reference(v, p.weights, p.bias, p.padding),
                                                         ops::conv4d_forward_decomposed(v, p)));
  }
  return row;
}

/// Sx1x1x1 4D convolution against a temporally dilated 3D convolution on
/// the concatenated units. Every case has U <= 2S so boundary units (whose
/// kernel taps fall into the padding) are always present.
inline EquivRow dilated_reduction(std::mt19937_64& rng, std::size_t cases) {
  using detail::draw;
  EquivRow row{"Sx1x1x1 conv4d vs dilated conv3d (f64)", cases, 0, 1e-10, false};
  for (std::size_t trial = 0; trial < cases; ++trial) {
    const std::size_t S = 2 * draw(rng, 0, 2) + 1;
    const std::size_t C = draw(rng, 1, 3), J = draw(rng, 1, 3), U = draw(rng, 1, 2 * S), T = draw(rng, 1, 4);
    const auto v = detail::uniform({1, C, U, T, draw(rng, 1, 4), draw(rng, 1, 4)}, rng);
    ops::Conv4DParams<double> p{detail::uniform({J, C, S, 1, 1, 1}, rng), detail::uniform({J}, rng),
                                ops::same_padding(ops::Quad{S, 1, 1, 1})};
    const auto y = ops::conv4d_forward_decomposed(v, p);
    const Shape& s = v.shape();
    const auto ref = dilated_conv3d_reference(v.reshaped({C, U, T, s[4], s[5]}), p.weights, p.bias);
    row.max_error = std::max(row.max_error, max_abs_diff(y.reshaped(ref.shape()), ref));
  }
  return row;
}

/// Zero 4D blocks: network logits against the mean of per-unit clip
/// logits, and against the same input with its units shuffled. Eval mode,
/// with BN running statistics moved off identity.
inline std::vector<EquivRow> tsn_reduction(std::mt19937_64& rng, std::size_t cases) {
  EquivRow mean{"zero-block net vs mean of unit clip logits", cases, 0, 1e-6, false};
  EquivRow perm{"zero-block net under unit permutation", cases, 0, 1e-6, false};
  NetworkSpec spec;
  spec.width = 4;
  spec.units = 4;
  spec.num_classes = 5;
  spec.blocks = {1, 1, 1, 1};
  spec.insertions = {{3, 0, {3, 3, 1, 1}}, {4, 0, {3, 3, 1, 1}}};
  Network<double> net(spec, rng());
  for (auto& b : net.buffers()) {
    for (auto& e : b.value->data()) e = b.name.ends_with("var") ? 0.5 + std::abs(detail::uniform({1}, rng)[0]) : 0.1;
  }
  auto clip = [&](const Tensor<double>& c) { return net.forward(c, Mode::eval); };
  std::vector<std::size_t> order(spec.units);
  for (std::size_t trial = 0; trial < cases; ++trial) {
    const auto x = detail::uniform({2, 3, spec.units, 2, 16, 16}, rng);
    const auto logits = net.forward(x, Mode::eval);
    mean.max_error = std::max(mean.max_error, max_abs_diff(logits, tsn_forward_reference(clip, x)));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Tensor<double>> parts;
    for (std::size_t u : order) parts.push_back(select(x, 2, u));
    const Tensor<double> shuffled =
        permute_axes(permute_axes(stack(std::span<const Tensor<double>>(parts)), 0, 1), 1, 2);
    perm.max_error = std::max(perm.max_error, max_abs_diff(net.forward(shuffled, Mode::eval), logits));
  }
  return {mean, perm};
}

inline std::vector<EquivRow> equivalence_suite(const EquivOptions& o = {}) {
  std::mt19937_64 rng(o.seed);
  std::vector<EquivRow> rows;
  rows.push_back(direct_vs_decomposed_f64(rng, o.conv_cases));
  rows.push_back(direct_vs_decomposed_f32(rng, o.conv_cases));
  rows.push_back(reference_vs_decomposed(rng, std::max<std::size_t>(1, o.conv_cases / 2)));
  rows.push_back(dilated_reduction(rng, o.dilated_cases));
  for (auto& r : tsn_reduction(rng, o.tsn_cases)) rows.push_back(std::move(r));
  return rows;
}

}  // namespace v4d::oracle
