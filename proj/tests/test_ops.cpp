// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "v4d/ops/activation.hpp"
#include "v4d/ops/batchnorm.hpp"
#include "v4d/ops/conv3d.hpp"
#include "v4d/ops/conv4d.hpp"
#include "v4d/ops/linear.hpp"
#include "v4d/ops/pooling.hpp"
#include "v4d/oracle/reference.hpp"

using v4d::Shape;
using v4d::Tensor;
using v4d::testing::pick;
using v4d::testing::random_tensor;
namespace ops = v4d::ops;
namespace oracle = v4d::oracle;

namespace {

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

constexpr double kGradTol = 1e-4;

}  // namespace

// ---- conv3d ----

TEST(Conv3d, PointwiseIdentity) {
  std::mt19937_64 rng(1);
  const auto x = random_tensor({2, 1, 3, 4, 5}, rng);
  ops::Conv3DParams<double> p{Tensor<double>({1, 1, 1, 1, 1}, 1.0), Tensor<double>({1})};
  EXPECT_EQ(ops::conv3d_forward(x, p), x);
}

TEST(Conv3d, ConstantInputCounting) {
  const Tensor<double> x({1, 1, 5, 5, 5}, 1.0);
  ops::Conv3DParams<double> p{Tensor<double>({1, 1, 3, 3, 3}, 1.0), {}, {1, 1, 1}, ops::same_padding(ops::Triple{3, 3, 3})};
  const auto y = ops::conv3d_forward(x, p);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_DOUBLE_EQ(y.at(0, 0, 2, 2, 2), 27.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 0, 0), 8.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 2, 2), 18.0);
}

TEST(Conv3d, MatchesReference) {
  std::mt19937_64 rng(2);
  const auto x = random_tensor({1, 2, 3, 4, 4}, rng);
  ops::Conv3DParams<double> p{random_tensor({2, 2, 3, 3, 3}, rng), random_tensor({2}, rng), {1, 1, 1}, {1, 1, 1}};
  const auto y = ops::conv3d_forward(x, p);
  const auto ref = oracle::conv3d_reference(x, p.weights, p.bias, {1, 1, 1}, {1, 1, 1});
  EXPECT_LE(v4d::max_abs_diff(y, ref), 1e-6 * v4d::max_abs(ref));
}

TEST(Conv3d, StridedAndAsymmetricMatchReference) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const v4d::ops::Triple k{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
    const v4d::ops::Triple s{pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 2)};
    const auto x = random_tensor({pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 3, 5), pick(rng, 3, 6), pick(rng, 3, 6)}, rng);
    ops::Conv3DParams<double> p{random_tensor({pick(rng, 1, 3), x.shape()[1], k[0], k[1], k[2]}, rng), {}, s,
                                ops::same_padding(k)};
    if (trial % 2) p.bias = random_tensor({p.weights.shape()[0]}, rng);
    const auto ref = oracle::conv3d_reference(x, p.weights, p.bias, s, p.padding);
    EXPECT_LE(v4d::max_abs_diff(ops::conv3d_forward(x, p), ref), 1e-12);
  }
}

TEST(Conv3d, Errors) {
  const Tensor<double> x({1, 2, 2, 2, 2});
  EXPECT_THROW(ops::conv3d_forward(x, {Tensor<double>({1, 3, 1, 1, 1}), {}}), v4d::ShapeError);
  EXPECT_THROW(ops::conv3d_forward(x, {Tensor<double>({1, 2, 3, 3, 3}), {}}), v4d::ShapeError);
  EXPECT_THROW(ops::conv3d_forward(x, {Tensor<double>({2, 2, 1, 1, 1}), Tensor<double>({3})}), v4d::ShapeError);
}

TEST(Conv3d, Linearity) {
  std::mt19937_64 rng(4);
  const auto a = random_tensor({2, 2, 3, 5, 5}, rng), b = random_tensor({2, 2, 3, 5, 5}, rng);
  ops::Conv3DParams<double> p{random_tensor({3, 2, 3, 3, 3}, rng), {}, {1, 2, 2}, {1, 1, 1}};
  Tensor<double> mix(a.shape());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 2.5 * a[i] - 0.5 * b[i];
  const auto ya = ops::conv3d_forward(a, p), yb = ops::conv3d_forward(b, p), ym = ops::conv3d_forward(mix, p);
  for (std::size_t i = 0; i < ym.size(); ++i) EXPECT_NEAR(ym[i], 2.5 * ya[i] - 0.5 * yb[i], 1e-12);
}

TEST(Conv3dBackward, ScalarCalculus) {
  const Tensor<double> x({1, 1, 1, 1, 1}, 3.0);
  ops::Conv3DParams<double> p{Tensor<double>({1, 1, 1, 1, 1}, -2.0), Tensor<double>({1}, 0.5)};
  const auto g = ops::conv3d_backward(x, p, Tensor<double>({1, 1, 1, 1, 1}, 1.0));
  EXPECT_DOUBLE_EQ(g.weights[0], 3.0);
  EXPECT_DOUBLE_EQ(g.input[0], -2.0);
  EXPECT_DOUBLE_EQ(g.bias[0], 1.0);
}

TEST(Conv3dBackward, ZeroGradOut) {
  std::mt19937_64 rng(5);
  const auto x = random_tensor({1, 2, 3, 4, 4}, rng);
  ops::Conv3DParams<double> p{random_tensor({2, 2, 3, 3, 3}, rng), random_tensor({2}, rng), {1, 1, 1}, {1, 1, 1}};
  const auto g = ops::conv3d_backward(x, p, Tensor<double>(ops::conv3d_forward(x, p).shape()));
  EXPECT_EQ(v4d::max_abs(g.input), 0.0);
  EXPECT_EQ(v4d::max_abs(g.weights), 0.0);
  EXPECT_EQ(v4d::max_abs(g.bias), 0.0);
}

TEST(Conv3dBackward, FiniteDifferences) {
  std::mt19937_64 rng(6);
  for (const v4d::ops::Triple stride : {v4d::ops::Triple{1, 1, 1}, v4d::ops::Triple{1, 2, 2}, v4d::ops::Triple{2, 1, 2}}) {
    const auto x = random_tensor({2, 2, 3, 5, 4}, rng);
    ops::Conv3DParams<double> p{random_tensor({3, 2, 3, 3, 1}, rng), random_tensor({3}, rng), stride, {1, 1, 0}};
    const auto r = random_tensor(ops::conv3d_forward(x, p).shape(), rng);
    const auto g = ops::conv3d_backward(x, p, r);
    auto with_x = [&](const Tensor<double>& xx) { return dot(ops::conv3d_forward(xx, p), r); };
    auto with_w = [&](const Tensor<double>& w) {
      auto q = p;
      q.weights = w;
      return dot(ops::conv3d_forward(x, q), r);
    };
    auto with_b = [&](const Tensor<double>& b) {
      auto q = p;
      q.bias = b;
      return dot(ops::conv3d_forward(x, q), r);
    };
    EXPECT_LE(oracle::compare_gradients("x", g.input, oracle::numerical_gradient(with_x, x)).max_rel_error, kGradTol);
    EXPECT_LE(oracle::compare_gradients("w", g.weights, oracle::numerical_gradient(with_w, p.weights)).max_rel_error,
              kGradTol);
    EXPECT_LE(oracle::compare_gradients("b", g.bias, oracle::numerical_gradient(with_b, p.bias)).max_rel_error,
              kGradTol);
  }
}

// ---- conv4d ----

TEST(Conv4d, PointwiseIdentity) {
  std::mt19937_64 rng(7);
  const auto v = random_tensor({2, 1, 3, 2, 3, 3}, rng);
  ops::Conv4DParams<double> p{Tensor<double>({1, 1, 1, 1, 1, 1}, 1.0), Tensor<double>({1})};
  EXPECT_EQ(ops::conv4d_forward_direct(v, p), v);
  EXPECT_EQ(ops::conv4d_forward_decomposed(v, p), v);
}

TEST(Conv4d, ConstantInputBoundaryEffect) {
  const Tensor<double> v({1, 1, 4, 2, 2, 2}, 1.0);
  ops::Conv4DParams<double> p{Tensor<double>({1, 1, 3, 1, 1, 1}, 1.0 / 3.0), {}, ops::same_padding(ops::Quad{3, 1, 1, 1})};
  for (const auto& y : {ops::conv4d_forward_direct(v, p), ops::conv4d_forward_decomposed(v, p)}) {
    for (std::size_t u = 0; u < 4; ++u) {
      const double expect = (u == 0 || u == 3) ? 2.0 / 3.0 : 1.0;
      EXPECT_NEAR(y.at(0, 0, u, 1, 1, 0), expect, 1e-15);
    }
  }
}

TEST(Conv4d, DirectMatchesReference) {
  std::mt19937_64 rng(8);
  const auto v = random_tensor({1, 2, 3, 2, 4, 4}, rng);
  ops::Conv4DParams<double> p{random_tensor({2, 2, 3, 3, 1, 1}, rng), random_tensor({2}, rng),
                              ops::same_padding(ops::Quad{3, 3, 1, 1})};
  const auto ref = oracle::conv4d_reference(v, p.weights, p.bias, p.padding);
  EXPECT_LE(v4d::max_abs_diff(ops::conv4d_forward_direct(v, p), ref), 1e-12);
}

TEST(Conv4d, SingleUnitKernelIsPerUnitConv3d) {
  std::mt19937_64 rng(9);
  const auto v = random_tensor({2, 2, 3, 3, 4, 4}, rng);
  ops::Conv4DParams<double> p{random_tensor({3, 2, 1, 3, 3, 3}, rng), random_tensor({3}, rng),
                              ops::same_padding(ops::Quad{1, 3, 3, 3})};
  const auto y = ops::conv4d_forward_decomposed(v, p);
  ops::Conv3DParams<double> p3{p.weights.reshaped({3, 2, 3, 3, 3}), p.bias, {1, 1, 1}, {1, 1, 1}};
  for (std::size_t u = 0; u < 3; ++u) {
    const auto slice = v4d::select(v, 2, u);
    const auto expect = ops::conv3d_forward(slice, p3);
    EXPECT_LE(v4d::max_abs_diff(v4d::select(y, 2, u), expect), 1e-12);
  }
}

TEST(Conv4d, DirectAndDecomposedAgreeOnRandomConfigs) {
  std::mt19937_64 rng(10);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t S = 2 * pick(rng, 0, 1) + 1;
    ops::Quad k{S, 1, 1, 1};
    if (trial % 3 >= 1) k[1] = 2 * pick(rng, 0, 1) + 1;
    if (trial % 3 == 2) k = {S, k[1], 2 * pick(rng, 0, 1) + 1, 2 * pick(rng, 0, 1) + 1};
    const auto v = random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 6), pick(rng, 1, 6), pick(rng, 1, 6),
                                  pick(rng, 1, 6)},
                                 rng);
    ops::Conv4DParams<double> p{random_tensor({pick(rng, 1, 3), v.shape()[1], k[0], k[1], k[2], k[3]}, rng),
                                {}, ops::same_padding(k)};
    p.bias = random_tensor({p.weights.shape()[0]}, rng);
    worst = std::max(worst, v4d::max_abs_diff(ops::conv4d_forward_direct(v, p), ops::conv4d_forward_decomposed(v, p)));
  }
  EXPECT_LE(worst, 1e-10);
}

TEST(Conv4d, F32AgreementIsRelative) {
  std::mt19937_64 rng(11);
  const auto v = random_tensor<float>({1, 4, 4, 3, 6, 6}, rng);
  ops::Conv4DParams<float> p{random_tensor<float>({4, 4, 3, 3, 3, 3}, rng), random_tensor<float>({4}, rng),
                             ops::same_padding(ops::Quad{3, 3, 3, 3})};
  const auto a = ops::conv4d_forward_direct(v, p), b = ops::conv4d_forward_decomposed(v, p);
  EXPECT_LE(v4d::max_abs_diff(a, b), 1e-5 * v4d::max_abs(a));
}

TEST(Conv4d, CrossUnitDependence) {
  std::mt19937_64 rng(12);
  const auto v = random_tensor({1, 1, 2, 3, 3, 3}, rng);
  ops::Conv4DParams<double> p{random_tensor({1, 1, 3, 3, 3, 3}, rng), {}, ops::same_padding(ops::Quad{3, 3, 3, 3})};
  const auto base = ops::conv4d_forward_decomposed(v, p);
  for (std::size_t src = 0; src < 2; ++src) {
    auto w = v;
    w.at(0, 0, src, 1, 1, 1) += 1.0;
    const auto d = ops::conv4d_forward_decomposed(w, p);
    for (std::size_t dst = 0; dst < 2; ++dst) {
      EXPECT_GT(v4d::max_abs_diff(v4d::select(d, 2, dst), v4d::select(base, 2, dst)), 1e-6)
          << "unit " << dst << " does not see unit " << src;
    }
  }
}

TEST(Conv4d, MatchesDilatedConv3d) {
  std::mt19937_64 rng(13);
  for (std::size_t S : {1u, 3u, 5u}) {
    const auto v = random_tensor({1, 3, 5, 2, 3, 4}, rng);
    ops::Conv4DParams<double> p{random_tensor({2, 3, S, 1, 1, 1}, rng), random_tensor({2}, rng),
                                ops::same_padding({S, 1, 1, 1})};
    const auto y = ops::conv4d_forward_decomposed(v, p);
    const auto ref = oracle::dilated_conv3d_reference(v.reshaped({3, 5, 2, 3, 4}), p.weights, p.bias);
    EXPECT_LE(v4d::max_abs_diff(y.reshaped(ref.shape()), ref), 1e-12);
  }
}

TEST(Conv4d, Errors) {
  const Tensor<double> v({1, 2, 2, 2, 2, 2});
  EXPECT_THROW(ops::conv4d_forward_decomposed(v, {Tensor<double>({1, 3, 1, 1, 1, 1}), {}}), v4d::ShapeError);
  EXPECT_THROW(ops::conv4d_forward_direct(Tensor<double>({1, 2, 2, 2, 2}), {Tensor<double>({1, 2, 1, 1, 1, 1}), {}}),
               v4d::ShapeError);
}

TEST(Conv4dBackward, ZeroGradOut) {
  std::mt19937_64 rng(14);
  const auto v = random_tensor({1, 2, 3, 2, 3, 3}, rng);
  ops::Conv4DParams<double> p{random_tensor({2, 2, 3, 3, 1, 1}, rng), random_tensor({2}, rng),
                              ops::same_padding(ops::Quad{3, 3, 1, 1})};
  const auto g = ops::conv4d_backward(v, p, Tensor<double>({1, 2, 3, 2, 3, 3}));
  EXPECT_EQ(v4d::max_abs(g.input) + v4d::max_abs(g.weights) + v4d::max_abs(g.bias), 0.0);
}

TEST(Conv4dBackward, FiniteDifferences) {
  std::mt19937_64 rng(15);
  for (const ops::Quad k : {ops::Quad{3, 1, 1, 1}, ops::Quad{3, 3, 1, 1}, ops::Quad{3, 3, 3, 3}}) {
    const auto v = random_tensor({2, 2, 3, 2, 3, 3}, rng);
    ops::Conv4DParams<double> p{random_tensor({2, 2, k[0], k[1], k[2], k[3]}, rng), random_tensor({2}, rng),
                                ops::same_padding(k)};
    const auto r = random_tensor({2, 2, 3, 2, 3, 3}, rng);
    const auto g = ops::conv4d_backward(v, p, r);
    auto with_v = [&](const Tensor<double>& x) { return dot(ops::conv4d_forward_decomposed(x, p), r); };
    auto with_w = [&](const Tensor<double>& w) {
      auto q = p;
      q.weights = w;
      return dot(ops::conv4d_forward_decomposed(v, q), r);
    };
    auto with_b = [&](const Tensor<double>& b) {
      auto q = p;
      q.bias = b;
      return dot(ops::conv4d_forward_decomposed(v, q), r);
    };
    EXPECT_LE(oracle::compare_gradients("v", g.input, oracle::numerical_gradient(with_v, v)).max_rel_error, kGradTol);
    EXPECT_LE(oracle::compare_gradients("w", g.weights, oracle::numerical_gradient(with_w, p.weights)).max_rel_error,
              kGradTol);
    EXPECT_LE(oracle::compare_gradients("b", g.bias, oracle::numerical_gradient(with_b, p.bias)).max_rel_error,
              kGradTol);
  }
}

// ---- batch norm ----

TEST(BatchNorm, TrainModeStandardizes) {
  std::mt19937_64 rng(16);
  auto x = random_tensor({4, 3, 2, 5, 5}, rng, 3.0);
  for (auto& e : x.data()) e += 7.0;
  auto p = ops::BatchNormParams<double>::identity(3);
  const auto y = ops::batchnorm_forward(x, p, v4d::Mode::train);
  const std::size_t inner = 2 * 5 * 5;
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, m2 = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < inner; ++i) {
        const double e = y[(n * 3 + c) * inner + i];
        m += e;
        m2 += e * e;
      }
    const double count = 4.0 * inner;
    m /= count;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(m2 / count - m * m, 1.0, 1e-5);
  }
}

TEST(BatchNorm, AffineAndZeroInput) {
  std::mt19937_64 rng(17);
  auto p = ops::BatchNormParams<double>::identity(2);
  p.gamma.fill(2.0);
  p.beta.fill(3.0);
  const auto x = random_tensor({8, 2, 10}, rng);
  const auto y = ops::batchnorm_forward(x, p, v4d::Mode::train);
  double m = 0, m2 = 0;
  for (std::size_t n = 0; n < 8; ++n)
    for (std::size_t i = 0; i < 10; ++i) {
      const double e = y.at(n, 0, i);
      m += e;
      m2 += e * e;
    }
  m /= 80;
  EXPECT_NEAR(m, 3.0, 1e-12);
  EXPECT_NEAR(std::sqrt(m2 / 80 - m * m), 2.0, 1e-4);

  auto q = ops::BatchNormParams<double>::identity(2);
  const auto z = ops::batchnorm_forward(Tensor<double>({3, 2, 4}), q, v4d::Mode::train);
  EXPECT_EQ(v4d::max_abs(z), 0.0);
  EXPECT_EQ(v4d::max_abs(ops::batchnorm_forward(Tensor<double>({3, 2, 4}), q, v4d::Mode::eval)), 0.0);
}

TEST(BatchNorm, RunningStatistics) {
  auto p = ops::BatchNormParams<double>::identity(1);
  const Tensor<double> x({4, 1}, {1, 2, 3, 4});
  ops::batchnorm_forward(x, p, v4d::Mode::train);
  // mean 2.5, unbiased variance 5/3
  EXPECT_NEAR(p.running_mean[0], 0.25, 1e-15);
  EXPECT_NEAR(p.running_var[0], 0.9 + 0.1 * 5.0 / 3.0, 1e-15);
  const auto y = ops::batchnorm_forward(x, p, v4d::Mode::eval);
  EXPECT_NEAR(y[0], (1 - 0.25) / std::sqrt(p.running_var[0] + 1e-5), 1e-12);
}

TEST(BatchNorm, EvalWithoutStatsThrows) {
  ops::BatchNormParams<double> p;
  p.gamma = Tensor<double>({1}, 1.0);
  p.beta = Tensor<double>({1});
  EXPECT_THROW(ops::batchnorm_forward(Tensor<double>({2, 1}), p, v4d::Mode::eval), v4d::Error);
}

TEST(BatchNormBackward, FiniteDifferences) {
  std::mt19937_64 rng(18);
  for (const auto mode : {v4d::Mode::train, v4d::Mode::eval}) {
    auto p = ops::BatchNormParams<double>::identity(3);
    p.gamma = random_tensor({3}, rng);
    p.beta = random_tensor({3}, rng);
    p.running_mean = random_tensor({3}, rng);
    p.running_var = random_tensor({3}, rng, 0.5);
    for (auto& e : p.running_var.data()) e = std::abs(e) + 0.5;
    const auto x = random_tensor({3, 3, 2, 3}, rng);
    const auto r = random_tensor(x.shape(), rng);
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
    EXPECT_LE(oracle::compare_gradients(
                  "x", g.input, oracle::numerical_gradient([&](const auto& t) { return f(t, p.gamma, p.beta); }, x))
                  .max_rel_error,
              kGradTol);
    EXPECT_LE(oracle::compare_gradients(
                  "gamma", g.gamma,
                  oracle::numerical_gradient([&](const auto& t) { return f(x, t, p.beta); }, p.gamma))
                  .max_rel_error,
              kGradTol);
    EXPECT_LE(oracle::compare_gradients(
                  "beta", g.beta, oracle::numerical_gradient([&](const auto& t) { return f(x, p.gamma, t); }, p.beta))
                  .max_rel_error,
              kGradTol);
  }
}

// ---- relu, pooling, fc, loss ----

TEST(Relu, Forward) {
  const Tensor<double> x({3}, {-1, 0, 2});
  EXPECT_EQ(ops::relu(x).buffer(), (std::vector<double>{0, 0, 2}));
}

TEST(Relu, BackwardPassesAtZero) {
  const Tensor<double> x({3}, {-1, 0, 2});
  const Tensor<double> g({3}, {5, 6, 7});
  EXPECT_EQ(ops::relu_backward(x, g).buffer(), (std::vector<double>{0, 6, 7}));
}

TEST(Relu, BackwardFiniteDifferencesAwayFromKink) {
  std::mt19937_64 rng(19);
  auto x = random_tensor({50}, rng);
  for (auto& e : x.data())
    if (std::abs(e) < 1e-3) e = 0.5;
  const auto r = random_tensor({50}, rng);
  const auto g = ops::relu_backward(x, r);
  const auto n = oracle::numerical_gradient([&](const auto& t) { return dot(ops::relu(t), r); }, x);
  EXPECT_LE(oracle::compare_gradients("x", g, n).max_rel_error, kGradTol);
}

TEST(MaxPool, StemGeometry) {
  const ops::PoolSpec spec{{1, 3, 3}, {1, 2, 2}, {0, 1, 1}};
  EXPECT_EQ(ops::maxpool3d_output_shape({2, 64, 4, 112, 112}, spec), (Shape{2, 64, 4, 56, 56}));
  ops::PoolSpec bad = spec;
  bad.padding = {0, 3, 3};
  EXPECT_THROW(ops::maxpool3d_output_shape({1, 1, 1, 8, 8}, bad), v4d::ShapeError);
}

TEST(MaxPool, ForwardAndBackward) {
  std::mt19937_64 rng(20);
  const ops::PoolSpec spec{{1, 3, 3}, {1, 2, 2}, {0, 1, 1}};
  const auto x = random_tensor({2, 2, 2, 5, 6}, rng);
  const auto res = ops::maxpool3d_forward(x, spec);
  // brute force check
  for (std::size_t flat = 0; flat < res.output.size(); ++flat) {
    const Shape o = res.output.unravel(flat);
    double best = -1e300;
    for (long q = 0; q < 3; ++q)
      for (long r = 0; r < 3; ++r) {
        const long h = static_cast<long>(o[3] * 2 + q) - 1, w = static_cast<long>(o[4] * 2 + r) - 1;
        if (h < 0 || w < 0 || h >= 5 || w >= 6) continue;
        best = std::max(best, x.at(o[0], o[1], o[2], static_cast<std::size_t>(h), static_cast<std::size_t>(w)));
      }
    ASSERT_EQ(res.output[flat], best);
  }
  const auto r = random_tensor(res.output.shape(), rng);
  const auto g = ops::maxpool3d_backward(x.shape(), res.argmax, r);
  const auto n = oracle::numerical_gradient(
      [&](const auto& t) { return dot(ops::maxpool3d_forward(t, spec).output, r); }, x);
  EXPECT_LE(oracle::compare_gradients("x", g, n).max_rel_error, kGradTol);
}

TEST(GlobalAvgPool, ConstantAndGradient) {
  const Tensor<double> c({2, 3, 2, 2, 4}, 1.5);
  const auto y = ops::global_avg_pool(c);
  EXPECT_EQ(y.shape(), (Shape{2, 3}));
  for (double e : y.data()) EXPECT_DOUBLE_EQ(e, 1.5);
  std::mt19937_64 rng(21);
  const auto x = random_tensor({2, 3, 2, 3}, rng);
  const auto r = random_tensor({2, 3}, rng);
  const auto g = ops::global_avg_pool_backward(x.shape(), r);
  const auto n = oracle::numerical_gradient([&](const auto& t) { return dot(ops::global_avg_pool(t), r); }, x);
  EXPECT_LE(oracle::compare_gradients("x", g, n).max_rel_error, kGradTol);
}

TEST(FullyConnected, ScalarAndFiniteDifferences) {
  const auto g1 = ops::fully_connected_backward(Tensor<double>({1, 1}, 3.0), Tensor<double>({1, 1}, -2.0),
                                                Tensor<double>({1}, 1.0), Tensor<double>({1, 1}, 1.0));
  EXPECT_DOUBLE_EQ(g1.weights[0], 3.0);
  EXPECT_DOUBLE_EQ(g1.input[0], -2.0);
  EXPECT_DOUBLE_EQ(g1.bias[0], 1.0);

  std::mt19937_64 rng(22);
  const auto x = random_tensor({4, 5}, rng), w = random_tensor({3, 5}, rng), b = random_tensor({3}, rng);
  const auto r = random_tensor({4, 3}, rng);
  const auto g = ops::fully_connected_backward(x, w, b, r);
  EXPECT_LE(oracle::compare_gradients(
                "x", g.input,
                oracle::numerical_gradient([&](const auto& t) { return dot(ops::fully_connected(t, w, b), r); }, x))
                .max_rel_error,
            kGradTol);
  EXPECT_LE(oracle::compare_gradients(
                "w", g.weights,
                oracle::numerical_gradient([&](const auto& t) { return dot(ops::fully_connected(x, t, b), r); }, w))
                .max_rel_error,
            kGradTol);
  EXPECT_LE(oracle::compare_gradients(
                "b", g.bias,
                oracle::numerical_gradient([&](const auto& t) { return dot(ops::fully_connected(x, w, t), r); }, b))
                .max_rel_error,
            kGradTol);
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
  const Tensor<double> logits({2, 7}, 0.3);
  const int labels[] = {0, 6};
  const auto res = ops::softmax_cross_entropy(logits, labels);
  EXPECT_NEAR(res.loss, std::log(7.0), 1e-14);
}

TEST(SoftmaxCrossEntropy, GradientAndErrors) {
  std::mt19937_64 rng(23);
  const auto logits = random_tensor({3, 4}, rng, 5.0);
  const int labels[] = {1, 3, 0};
  const auto res = ops::softmax_cross_entropy(logits, labels);
  const auto n = oracle::numerical_gradient(
      [&](const auto& t) { return ops::softmax_cross_entropy(t, labels).loss; }, logits);
  EXPECT_LE(oracle::compare_gradients("logits", res.grad_logits, n).max_rel_error, kGradTol);
  const int bad[] = {1, 4, 0};
  EXPECT_THROW(ops::softmax_cross_entropy(logits, bad), v4d::ShapeError);
  const int neg[] = {-1, 0, 0};
  EXPECT_THROW(ops::softmax_cross_entropy(logits, neg), v4d::ShapeError);
}

TEST(Softmax, LargeLogitsStable) {
  const Tensor<double> logits({1, 3}, {1000, 1000, -1000});
  const auto p = ops::softmax(logits);
  EXPECT_NEAR(p[0], 0.5, 1e-15);
  EXPECT_NEAR(p[2], 0.0, 1e-15);
}
