// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "v4d/ops/activation.hpp"
#include "v4d/ops/batchnorm.hpp"
#include "v4d/ops/conv3d.hpp"
#include "v4d/ops/conv4d.hpp"
#include "v4d/ops/linear.hpp"
#include "v4d/ops/pooling.hpp"
#include "v4d/tensor.hpp"

namespace v4d {

/// Per-call execution state threaded through the layer graph. `units` is the
/// number of action units merged into the batch axis; `bypass_4d` turns
/// every residual 4D block into the identity.
struct ForwardContext {
  Mode mode = Mode::eval;
  std::size_t units = 1;
  bool bypass_4d = false;
  bool record = false;  // keep activations for backward() in eval mode

  [[nodiscard]] bool records() const { return mode == Mode::train || record; }
};

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
  bool decay;   // false for biases and BN affine terms
  bool is_4d;   // belongs to a residual 4D block
};

template <typename T>
struct BufferRef {
  std::string name;
  Tensor<T>* value;
};

/// One row of the parameter / MAC breakdown.
struct LayerStats {
  std::string name;
  std::string kind;
  Shape output;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

template <typename T>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  [[nodiscard]] const std::string& name() const { return name_; }
  [[nodiscard]] virtual std::string_view kind() const = 0;

  virtual Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx) = 0;
  /// Accumulates parameter gradients and returns the input gradient. Must
  /// follow the matching forward().
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;

  virtual void collect_parameters(std::vector<ParamRef<T>>&) {}
  virtual void collect_buffers(std::vector<BufferRef<T>>&) {}

  [[nodiscard]] virtual Shape output_shape(const Shape& in, std::size_t units) const = 0;
  virtual void describe(const Shape& in, std::size_t units, std::vector<LayerStats>& rows) const {
    rows.push_back({name_, std::string(kind()), output_shape(in, units), 0, 0});
  }

 protected:
  std::string name_;
};

namespace detail {

template <typename T>
std::uint64_t param_count(const Tensor<T>& t) {
  return t.empty() ? 0 : t.size();
}

template <typename T>
Tensor<T> fan_out_normal(const Shape& shape, std::mt19937_64& rng) {
  std::size_t fan_out = shape[0];
  for (std::size_t k = 2; k < shape.size(); ++k) fan_out *= shape[k];
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_out)));
  Tensor<T> w(shape);
  for (auto& v : w.data()) v = static_cast<T>(dist(rng));
  return w;
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& g) {
  if (dst.empty()) {
    dst = g;
  } else {
    add_in_place(dst, g);
  }
}

}  // namespace detail

template <typename T>
class Conv3dLayer final : public Layer<T> {
 public:
  Conv3dLayer(std::string name, ops::Conv3DParams<T> params) : Layer<T>(std::move(name)), p_(std::move(params)) {}

  static std::unique_ptr<Conv3dLayer> create(std::string name, std::size_t c_in, std::size_t c_out,
                                             ops::Triple kernel, ops::Triple stride, std::mt19937_64& rng) {
    ops::Conv3DParams<T> p;
    p.weights = detail::fan_out_normal<T>({c_out, c_in, kernel[0], kernel[1], kernel[2]}, rng);
    p.stride = stride;
    p.padding = ops::same_padding(kernel);
    return std::make_unique<Conv3dLayer>(std::move(name), std::move(p));
  }

  [[nodiscard]] std::string_view kind() const override { return "conv3d"; }
  ops::Conv3DParams<T>& params() { return p_; }
  const ops::Conv3DParams<T>& params() const { return p_; }

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx) override {
    if (ctx.records()) input_ = x;
    try {
      return ops::conv3d_forward(x, p_);
    } catch (const ShapeError& e) {
      throw ShapeError(this->name_ + ": " + e.what());
    }
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    auto g = ops::conv3d_backward(input_, p_, grad_out);
    detail::accumulate(grad_w_, g.weights);
    if (!p_.bias.empty()) detail::accumulate(grad_b_, g.bias);
    return std::move(g.input);
  }

  void collect_parameters(std::vector<ParamRef<T>>& out) override {
    ensure_grads();
    out.push_back({this->name_ + ".weight", &p_.weights, &grad_w_, true, false});
    if (!p_.bias.empty()) out.push_back({this->name_ + ".bias", &p_.bias, &grad_b_, false, false});
  }

  [[nodiscard]] Shape output_shape(const Shape& in, std::size_t) const override {
    return ops::conv3d_output_shape(in, p_.weights.shape(), p_.stride, p_.padding);
  }

  void describe(const Shape& in, std::size_t units, std::vector<LayerStats>& rows) const override {
    const Shape out = output_shape(in, units);
    const Shape& w = p_.weights.shape();
    const std::uint64_t per_position = w[0] * w[1] * w[2] * w[3] * w[4];
    rows.push_back({this->name_, "conv3d", out, detail::param_count(p_.weights) + detail::param_count(p_.bias),
                    per_position * out[0] * out[2] * out[3] * out[4]});
  }

 private:
  void ensure_grads() {
    if (grad_w_.empty()) grad_w_ = Tensor<T>(p_.weights.shape());
    if (!p_.bias.empty() && grad_b_.empty()) grad_b_ = Tensor<T>(p_.bias.shape());
  }

  ops::Conv3DParams<T> p_;
  Tensor<T> grad_w_, grad_b_, input_;
};

template <typename T>
class BatchNormLayer final : public Layer<T> {
 public:
  BatchNormLayer(std::string name, std::size_t channels)
      : Layer<T>(std::move(name)), p_(ops::BatchNormParams<T>::identity(channels)) {}

  [[nodiscard]] std::string_view kind() const override { return "batchnorm"; }
  ops::BatchNormParams<T>& params() { return p_; }

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx) override {
    try {
      return ops::batchnorm_forward(x, p_, ctx.mode, ctx.records() ? &cache_ : nullptr);
    } catch (const ShapeError& e) {
      throw ShapeError(this->name_ + ": " + e.what());
    }
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    auto g = ops::batchnorm_backward(grad_out, p_, cache_);
    detail::accumulate(grad_gamma_, g.gamma);
    detail::accumulate(grad_beta_, g.beta);
    return std::move(g.input);
  }

  void collect_parameters(std::vector<ParamRef<T>>& out) override {
    if (grad_gamma_.empty()) grad_gamma_ = Tensor<T>(p_.gamma.shape());
    if (grad_beta_.empty()) grad_beta_ = Tensor<T>(p_.beta.shape());
    out.push_back({this->name_ + ".gamma", &p_.gamma, &grad_gamma_, false, false});
    out.push_back({this->name_ + ".beta", &p_.beta, &grad_beta_, false, false});
  }

  void collect_buffers(std::vector<BufferRef<T>>& out) override {
    out.push_back({this->name_ + ".running_mean", &p_.running_mean});
    out.push_back({this->name_ + ".running_var", &p_.running_var});
  }

  [[nodiscard]] Shape output_shape(const Shape& in, std::size_t) const override {
    if (in.size() < 2 || in[1] != p_.channels()) throw ShapeError(this->name_ + ": channel mismatch");
    return in;
  }

  void describe(const Shape& in, std::size_t units, std::vector<LayerStats>& rows) const override {
    rows.push_back({this->name_, "batchnorm", output_shape(in, units), 2 * p_.channels(), 0});
  }

 private:
  ops::BatchNormParams<T> p_;
  ops::BatchNormCache<T> cache_;
  Tensor<T> grad_gamma_, grad_beta_;
};

template <typename T>
class ReluLayer final : public Layer<T> {
 public:
  using Layer<T>::Layer;
  [[nodiscard]] std::string_view kind() const override { return "relu"; }
  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx) override {
    if (ctx.records()) input_ = x;
    return ops::relu(x);
  }
  Tensor<T> backward(const Tensor<T>& grad_out) override { return ops::relu_backward(input_, grad_out); }
  [[nodiscard]] Shape output_shape(const Shape& in, std::size_t) const override { return in; }

 private:
  Tensor<T> input_;
};

template <typename T>
class MaxPoolLayer final : public Layer<T> {
 public:
  MaxPoolLayer(std::string name, ops::PoolSpec spec) : Layer<T>(std::move(name)), spec_(spec) {}
  [[nodiscard]] std::string_view kind() const override { return "maxpool3d"; }
  Tensor<T> forward(const Tensor<T>& x, const ForwardContext&) override {
    auto r = ops::maxpool3d_forward(x, spec_);
    input_shape_ = x.shape();
    argmax_ = std::move(r.argmax);
    return std::move(r.output);
  }
  Tensor<T> backward(const Tensor<T>& grad_out) override {
    return ops::maxpool3d_backward(input_shape_, argmax_, grad_out);
  }
  [[nodiscard]] Shape output_shape(const Shape& in, std::size_t) const override {
    return ops::maxpool3d_output_shape(in, spec_);
  }

 private:
  ops::PoolSpec spec_;
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

enum class BlockKind { basic2d, basic3d, bottleneck2d, bottleneck3d, single3d, residual4d };

inline std::string_view to_string(BlockKind k) {
  switch (k) {
    case BlockKind::basic2d: return "basic2d";
    case BlockKind::basic3d: return "basic3d";
    case BlockKind::bottleneck2d: return "bottleneck2d";
    case BlockKind::bottleneck3d: return "bottleneck3d";
    case BlockKind::single3d: return "single3d";
    case BlockKind::residual4d: return "residual4d";
  }
  return "?";
}

/// Standard residual block: (conv -> BN -> ReLU)* -> conv -> BN, plus
/// shortcut, then ReLU. The shortcut is the identity when channels and
/// resolution are preserved, else a strided 1x1x1 conv + BN.
template <typename T>
class ResidualBlock final : public Layer<T> {
 public:
  struct ConvSpec {
    std::size_t c_out;
    ops::Triple kernel;
  };

  ResidualBlock(std::string name, BlockKind kind, std::size_t c_in, const std::vector<ConvSpec>& convs,
                std::size_t spatial_stride, std::mt19937_64& rng)
      : Layer<T>(std::move(name)), kind_(kind) {
    std::size_t c = c_in;
    for (std::size_t i = 0; i < convs.size(); ++i) {
      const ops::Triple stride = i == 0 ? ops::Triple{1, spatial_stride, spatial_stride} : ops::Triple{1, 1, 1};
      const std::string idx = std::to_string(i + 1);
      convs_.push_back(Conv3dLayer<T>::create(this->name_ + ".conv" + idx, c, convs[i].c_out, convs[i].kernel, stride, rng));
      bns_.push_back(std::make_unique<BatchNormLayer<T>>(this->name_ + ".bn" + idx, convs[i].c_out));
      c = convs[i].c_out;
    }
    if (c != c_in || spatial_stride != 1) {
      shortcut_conv_ = Conv3dLayer<T>::create(this->name_ + ".shortcut.conv", c_in, c, {1, 1, 1},
                                              {1, spatial_stride, spatial_stride}, rng);
      shortcut_bn_ = std::make_unique<BatchNormLayer<T>>(this->name_ + ".shortcut.bn", c);
    }
  }

  [[nodiscard]] std::string_view kind() const override { return to_string(kind_); }
  [[nodiscard]] BlockKind block_kind() const { return kind_; }

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx) override {
    Tensor<T> h = x;
    pre_relu_.resize(convs_.size());
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = bns_[i]->forward(convs_[i]->forward(h, ctx), ctx);
      if (i + 1 < convs_.size()) {
        if (ctx.records()) pre_relu_[i] = h;
        h = ops::relu(h);
      }
    }
    if (shortcut_conv_) {
      add_in_place(h, shortcut_bn_->forward(shortcut_conv_->forward(x, ctx), ctx));
    } else {
      add_in_place(h, x);
    }
    if (ctx.records()) pre_relu_.back() = h;
    return ops::relu(h);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    const Tensor<T> g = ops::relu_backward(pre_relu_.back(), grad_out);
    Tensor<T> gh = g;
    for (std::size_t i = convs_.size(); i-- > 0;) {
      if (i + 1 < convs_.size()) gh = ops::relu_backward(pre_relu_[i], gh);
      gh = convs_[i]->backward(bns_[i]->backward(gh));
    }
    if (shortcut_conv_) {
      add_in_place(gh, shortcut_conv_->backward(shortcut_bn_->backward(g)));
    } else {
      add_in_place(gh, g);
    }
    return gh;
  }

  void collect_parameters(std::vector<ParamRef<T>>& out) override {
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      convs_[i]->collect_parameters(out);
      bns_[i]->collect_parameters(out);
    }
    if (shortcut_conv_) {
      shortcut_conv_->collect_parameters(out);
      shortcut_bn_->collect_parameters(out);
    }
  }

  void collect_buffers(std::vector<BufferRef<T>>& out) override {
    for (auto& bn : bns_) bn->collect_buffers(out);
    if (shortcut_bn_) shortcut_bn_->collect_buffers(out);
  }

  [[nodiscard]] Shape output_shape(const Shape& in, std::size_t units) const override {
    Shape s = in;
    for (const auto& c : convs_) s = c->output_shape(s, units);
    return s;
  }

  void describe(const Shape& in, std::size_t units, std::vector<LayerStats>& rows) const override {
    Shape s = in;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      convs_[i]->describe(s, units, rows);
      s = convs_[i]->output_shape(s, units);
      bns_[i]->describe(s, units, rows);
    }
    if (shortcut_conv_) {
      shortcut_conv_->describe(in, units, rows);
      shortcut_bn_->describe(s, units, rows);
    }
  }

 private:
  BlockKind kind_;
  std::vector<std::unique_ptr<Conv3dLayer<T>>> convs_;
  std::vector<std::unique_ptr<BatchNormLayer<T>>> bns_;
  std::unique_ptr<Conv3dLayer<T>> shortcut_conv_;
  std::unique_ptr<BatchNormLayer<T>> shortcut_bn_;
  std::vector<Tensor<T>> pre_relu_;
};

/// Residual 4D block on (N*U, C, T, H, W):
///   y = x + phi_(U,C)(ReLU(BN(F_4D(phi_(C,U)(x)))))
/// with BN over the permuted-back (N*U, C, T, H, W) form. All-zero conv
/// weights and bias with BN beta = 0 make the block the identity.
template <typename T>
class Residual4DBlock final : public Layer<T> {
 public:
  Residual4DBlock(std::string name, std::size_t channels, ops::Quad kernel)
      : Layer<T>(std::move(name)), bn_(this->name_ + ".bn", channels) {
    conv_.weights = Tensor<T>({channels, channels, kernel[0], kernel[1], kernel[2], kernel[3]});
    conv_.bias = Tensor<T>({channels});
    conv_.padding = ops::same_padding(kernel);
  }

  [[nodiscard]] std::string_view kind() const override { return "residual4d"; }
  ops::Conv4DParams<T>& conv() { return conv_; }
  const ops::Conv4DParams<T>& conv() const { return conv_; }
  BatchNormLayer<T>& bn() { return bn_; }

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx) override {
    bypassed_ = ctx.bypass_4d;
    if (bypassed_) return x;
    if (x.rank() != 5) throw ShapeError(this->name_ + ": expected (N*U, C, T, H, W), got " + shape_string(x.shape()));
    if (x.shape()[1] != conv_.weights.shape()[1]) {
      throw ShapeError(this->name_ + ": input has " + std::to_string(x.shape()[1]) + " channels, 4D conv expects " +
                       std::to_string(conv_.weights.shape()[1]));
    }
    if (ctx.units == 0 || x.shape()[0] % ctx.units != 0) {
      throw ShapeError(this->name_ + ": batch " + std::to_string(x.shape()[0]) + " not divisible by U = " +
                       std::to_string(ctx.units));
    }
    units_ = ctx.units;
    Tensor<T> v = permute_axes(split_batch_axis(x, units_), 1, 2);  // (N, C, U, T, H, W)
    Tensor<T> f = ops::conv4d_forward_decomposed(v, conv_);
    if (ctx.records()) conv_input_ = std::move(v);
    Tensor<T> z = merge_axis_into_batch(permute_axes(f, 1, 2));
    z = bn_.forward(z, ctx);
    if (ctx.records()) pre_relu_ = z;
    Tensor<T> y = ops::relu(z);
    add_in_place(y, x);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    if (bypassed_) return grad_out;
    Tensor<T> g = bn_.backward(ops::relu_backward(pre_relu_, grad_out));
    g = permute_axes(split_batch_axis(std::move(g), units_), 1, 2);
    auto cg = ops::conv4d_backward(conv_input_, conv_, g);
    detail::accumulate(grad_w_, cg.weights);
    detail::accumulate(grad_b_, cg.bias);
    Tensor<T> gx = merge_axis_into_batch(permute_axes(cg.input, 1, 2));
    add_in_place(gx, grad_out);
    return gx;
  }

  void collect_parameters(std::vector<ParamRef<T>>& out) override {
    if (grad_w_.empty()) grad_w_ = Tensor<T>(conv_.weights.shape());
    if (grad_b_.empty()) grad_b_ = Tensor<T>(conv_.bias.shape());
    out.push_back({this->name_ + ".conv.weight", &conv_.weights, &grad_w_, true, true});
    out.push_back({this->name_ + ".conv.bias", &conv_.bias, &grad_b_, false, true});
    const std::size_t first = out.size();
    bn_.collect_parameters(out);
    for (std::size_t k = first; k < out.size(); ++k) out[k].is_4d = true;
  }

  void collect_buffers(std::vector<BufferRef<T>>& out) override { bn_.collect_buffers(out); }

  [[nodiscard]] Shape output_shape(const Shape& in, std::size_t units) const override {
    if (in.size() != 5 || in[1] != conv_.weights.shape()[1] || units == 0 || in[0] % units) {
      throw ShapeError(this->name_ + ": incompatible input " + shape_string(in));
    }
    return in;
  }

  void describe(const Shape& in, std::size_t units, std::vector<LayerStats>& rows) const override {
    const Shape out = output_shape(in, units);
    const Shape& w = conv_.weights.shape();
    std::uint64_t per_position = 1;
    for (std::size_t e : w) per_position *= e;
    const std::uint64_t positions = in[0] * in[2] * in[3] * in[4];  // (N*U) x T x H x W
    rows.push_back({this->name_ + ".conv", "conv4d", out,
                    detail::param_count(conv_.weights) + detail::param_count(conv_.bias), per_position * positions});
    bn_.describe(out, units, rows);
  }

 private:
  ops::Conv4DParams<T> conv_;
  BatchNormLayer<T> bn_;
  Tensor<T> grad_w_, grad_b_, conv_input_, pre_relu_;
  std::size_t units_ = 1;
  bool bypassed_ = false;
};

/// Global average pool over (U, T, H, W) jointly, then the classifier.
template <typename T>
class ClassifierHead final : public Layer<T> {
 public:
  ClassifierHead(std::string name, std::size_t channels, std::size_t classes, std::mt19937_64& rng)
      : Layer<T>(std::move(name)) {
    weights_ = Tensor<T>({classes, channels});
    std::normal_distribution<double> dist(0.0, 0.01);
    for (auto& v : weights_.data()) v = static_cast<T>(dist(rng));
    bias_ = Tensor<T>({classes});
  }

  [[nodiscard]] std::string_view kind() const override { return "head"; }
  Tensor<T>& weights() { return weights_; }
  const Tensor<T>& weights() const { return weights_; }
  Tensor<T>& bias() { return bias_; }

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx) override {
    if (x.rank() != 5 || x.shape()[1] != weights_.shape()[1]) {
      throw ShapeError(this->name_ + ": expected (N*U, " + std::to_string(weights_.shape()[1]) +
                       ", T, H, W), got " + shape_string(x.shape()));
    }
    units_ = ctx.units;
    features_ = x;
    const Tensor<T> v = permute_axes(split_batch_axis(x, units_), 1, 2);
    pooled_ = ops::global_avg_pool(v);
    return ops::fully_connected(pooled_, weights_, bias_);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    auto g = ops::fully_connected_backward(pooled_, weights_, bias_, grad_out);
    detail::accumulate(grad_w_, g.weights);
    detail::accumulate(grad_b_, g.bias);
    const Shape& s = features_.shape();
    const Shape pooled_in{s[0] / units_, s[1], units_, s[2], s[3], s[4]};
    const Tensor<T> gv = ops::global_avg_pool_backward(pooled_in, g.input);
    return merge_axis_into_batch(permute_axes(gv, 1, 2));
  }

  void collect_parameters(std::vector<ParamRef<T>>& out) override {
    if (grad_w_.empty()) grad_w_ = Tensor<T>(weights_.shape());
    if (grad_b_.empty()) grad_b_ = Tensor<T>(bias_.shape());
    out.push_back({this->name_ + ".weight", &weights_, &grad_w_, true, false});
    out.push_back({this->name_ + ".bias", &bias_, &grad_b_, false, false});
  }

  /// Pre-pool activations of the last forward, (N*U, C, T, H, W).
  [[nodiscard]] const Tensor<T>& features() const { return features_; }
  [[nodiscard]] const Tensor<T>& pooled() const { return pooled_; }

  [[nodiscard]] Shape output_shape(const Shape& in, std::size_t units) const override {
    if (in.size() != 5 || in[1] != weights_.shape()[1] || units == 0 || in[0] % units) {
      throw ShapeError(this->name_ + ": incompatible input " + shape_string(in));
    }
    return {in[0] / units, weights_.shape()[0]};
  }

  void describe(const Shape& in, std::size_t units, std::vector<LayerStats>& rows) const override {
    const Shape out = output_shape(in, units);
    rows.push_back({this->name_ + ".fc", "fc", out, weights_.size() + bias_.size(), out[0] * weights_.size()});
  }

 private:
  Tensor<T> weights_, bias_, grad_w_, grad_b_, features_, pooled_;
  std::size_t units_ = 1;
};

}  // namespace v4d
