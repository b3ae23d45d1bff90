// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "v4d/layers.hpp"

namespace v4d {

/// A residual 4D block placed after block `after_block` (0-based) of
/// stage `stage` (2..5).
struct Insertion {
  int stage = 3;
  std::size_t after_block = 0;
  ops::Quad kernel{3, 3, 1, 1};

  friend bool operator==(const Insertion&, const Insertion&) = default;
};

/// One entry of the compiled block plan.
struct BlockSpec {
  BlockKind kind;
  std::string name;
  std::size_t in_channels;
  std::size_t mid_channels;
  std::size_t out_channels;
  std::size_t spatial_stride;
  ops::Quad kernel4d{1, 1, 1, 1};  // residual4d only
};

/// Declarative I3D-S backbone description plus inserted 4D blocks.
///
/// Depth 18 uses basic blocks (two 1x3x3 convs in res2/res3, two 3x3x3
/// convs in res4/res5); depth 50 uses bottlenecks (1x1x1, 1x3x3, 1x1x1 in
/// res2/res3 and 3x1x1, 1x3x3, 1x1x1 in res4/res5). The stem is a 1x7x7
/// conv with stride (1,2,2) followed by a 1x3x3 max pool with stride
/// (1,2,2). `width` scales every channel count (64 reproduces the
/// published tables); `blocks` overrides per-stage block counts, where a
/// trailing zero drops that stage.
struct NetworkSpec {
  int depth = 18;
  std::size_t num_classes = 200;
  std::size_t units = 4;
  std::size_t width = 64;
  std::size_t in_channels = 3;
  std::array<std::size_t, 4> blocks{0, 0, 0, 0};
  std::vector<Insertion> insertions;
  bool plus_plus = false;  // extra single-conv 3x3x3 residual block at the end of res4

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;

  [[nodiscard]] std::array<std::size_t, 4> stage_blocks() const {
    if (blocks != std::array<std::size_t, 4>{0, 0, 0, 0}) return blocks;
    if (depth == 18) return {2, 2, 2, 2};
    return {3, 4, 6, 3};
  }

  /// Validates the spec and lists blocks in execution order.
  [[nodiscard]] std::vector<BlockSpec> plan() const {
    if (depth != 18 && depth != 50) throw ConfigError("network depth must be 18 or 50");
    if (num_classes < 1 || units < 1 || width < 1 || in_channels < 1) {
      throw ConfigError("num_classes, units, width and in_channels must be positive");
    }
    const auto counts = stage_blocks();
    if (counts[0] == 0) throw ConfigError("res2 must contain at least one block");
    for (std::size_t s = 1; s < 4; ++s) {
      if (counts[s] > 0 && counts[s - 1] == 0) throw ConfigError("only trailing stages may be dropped");
    }
    for (const auto& ins : insertions) {
      if (ins.stage < 2 || ins.stage > 5) throw ConfigError("insertion stage must be in 2..5");
      if (ins.after_block >= counts[static_cast<std::size_t>(ins.stage - 2)]) {
        throw ConfigError("insertion after block " + std::to_string(ins.after_block) + " of res" +
                          std::to_string(ins.stage) + " references a missing block");
      }
      for (std::size_t k : ins.kernel) {
        if (k == 0 || k % 2 == 0) throw ConfigError("4D kernel extents must be odd");
      }
    }
    if (plus_plus && counts[2] == 0) throw ConfigError("the ++ variant needs res4");

    std::vector<BlockSpec> out;
    std::size_t c = width;
    for (std::size_t s = 0; s < 4; ++s) {
      if (counts[s] == 0) break;
      const int stage = static_cast<int>(s) + 2;
      const bool temporal = s >= 2;
      const std::size_t mid = width << s;
      const std::size_t out_c = depth == 18 ? mid : 4 * mid;
      const BlockKind kind = depth == 18 ? (temporal ? BlockKind::basic3d : BlockKind::basic2d)
                                         : (temporal ? BlockKind::bottleneck3d : BlockKind::bottleneck2d);
      for (std::size_t b = 0; b < counts[s]; ++b) {
        const std::string name = "res" + std::to_string(stage) + "." + std::to_string(b);
        out.push_back({kind, name, c, mid, out_c, (b == 0 && s > 0) ? 2u : 1u, {}});
        c = out_c;
        for (const auto& ins : insertions) {
          if (ins.stage == stage && ins.after_block == b) {
            out.push_back({BlockKind::residual4d, "res" + std::to_string(stage) + ".fd" + std::to_string(b), c, c, c, 1,
                           ins.kernel});
          }
        }
      }
      if (plus_plus && stage == 4) {
        out.push_back({BlockKind::single3d, "res4.extra", c, c, c, 1, {}});
      }
    }
    return out;
  }

  [[nodiscard]] std::size_t feature_channels() const { return plan().back().out_channels; }
  [[nodiscard]] bool has_4d() const { return !insertions.empty(); }

  /// Named configurations: i3d-s-r18, v4d-r18, i3d-s-r18pp, i3d-s-r50, v4d-r50.
  static NetworkSpec preset(std::string_view name, std::size_t num_classes = 200, std::size_t units = 4) {
    NetworkSpec s;
    s.num_classes = num_classes;
    s.units = units;
    if (name == "i3d-s-r18") {
      s.units = 1;
    } else if (name == "i3d-s-r18pp") {
      s.units = 1;
      s.plus_plus = true;
    } else if (name == "v4d-r18") {
      s.insertions = {{3, 1, {3, 3, 1, 1}}, {4, 1, {3, 3, 1, 1}}};
    } else if (name == "i3d-s-r50") {
      s.depth = 50;
      s.units = 1;
    } else if (name == "v4d-r50") {
      s.depth = 50;
      for (std::size_t b = 1; b < 4; b += 2) s.insertions.push_back({3, b, {3, 3, 1, 1}});
      for (std::size_t b = 1; b < 6; b += 2) s.insertions.push_back({4, b, {3, 3, 1, 1}});
    } else {
      throw ConfigError("unknown network preset '" + std::string(name) + "'");
    }
    return s;
  }

  /// The V4D network with the same backbone but without 4D blocks.
  [[nodiscard]] NetworkSpec backbone() const {
    NetworkSpec s = *this;
    s.insertions.clear();
    return s;
  }
};

inline void to_json(nlohmann::json& j, const Insertion& ins) {
  j = {{"stage", ins.stage}, {"after_block", ins.after_block}, {"kernel", ins.kernel}};
}

inline void from_json(const nlohmann::json& j, Insertion& ins) {
  ins.stage = j.at("stage").get<int>();
  ins.after_block = j.at("after_block").get<std::size_t>();
  ins.kernel = j.value("kernel", ops::Quad{3, 3, 1, 1});
}

inline void to_json(nlohmann::json& j, const NetworkSpec& s) {
  j = {{"depth", s.depth},   {"num_classes", s.num_classes}, {"units", s.units},          {"width", s.width},
       {"in_channels", s.in_channels}, {"blocks", s.blocks}, {"insertions", s.insertions}, {"plus_plus", s.plus_plus}};
}

/// Accepts either a full document or {"preset": name, ...overrides}.
inline void from_json(const nlohmann::json& j, NetworkSpec& s) {
  try {
    if (j.contains("preset")) {
      s = NetworkSpec::preset(j.at("preset").get<std::string>(), j.value("num_classes", std::size_t{200}),
                              j.value("units", std::size_t{4}));
    } else {
      s = NetworkSpec{};
    }
    s.depth = j.value("depth", s.depth);
    s.num_classes = j.value("num_classes", s.num_classes);
    s.units = j.value("units", s.units);
    s.width = j.value("width", s.width);
    s.in_channels = j.value("in_channels", s.in_channels);
    s.blocks = j.value("blocks", s.blocks);
    if (j.contains("insertions")) s.insertions = j.at("insertions").get<std::vector<Insertion>>();
    s.plus_plus = j.value("plus_plus", s.plus_plus);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("network spec: ") + e.what());
  }
}

/// Executable layer graph compiled from a NetworkSpec. Video inputs are
/// (N, C, U, T, H, W); internally the units are merged into the batch so
/// every 3D layer sees (N*U, C, T, H, W).
template <typename T>
class Network {
 public:
  using Hook = std::function<void(const Layer<T>&, const Tensor<T>&)>;

  explicit Network(NetworkSpec spec, std::uint64_t seed = 0) : spec_(std::move(spec)) {
    std::mt19937_64 rng(seed);
    const std::size_t w = spec_.width;
    layers_.push_back(Conv3dLayer<T>::create("conv1", spec_.in_channels, w, {1, 7, 7}, {1, 2, 2}, rng));
    layers_.push_back(std::make_unique<BatchNormLayer<T>>("bn1", w));
    layers_.push_back(std::make_unique<ReluLayer<T>>("relu1"));
    layers_.push_back(std::make_unique<MaxPoolLayer<T>>("pool1", ops::PoolSpec{{1, 3, 3}, {1, 2, 2}, {0, 1, 1}}));
    for (const BlockSpec& b : spec_.plan()) {
      using Conv = typename ResidualBlock<T>::ConvSpec;
      std::vector<Conv> convs;
      switch (b.kind) {
        case BlockKind::basic2d:
          convs = {{b.out_channels, {1, 3, 3}}, {b.out_channels, {1, 3, 3}}};
          break;
        case BlockKind::basic3d:
          convs = {{b.out_channels, {3, 3, 3}}, {b.out_channels, {3, 3, 3}}};
          break;
        case BlockKind::bottleneck2d:
          convs = {{b.mid_channels, {1, 1, 1}}, {b.mid_channels, {1, 3, 3}}, {b.out_channels, {1, 1, 1}}};
          break;
        case BlockKind::bottleneck3d:
          convs = {{b.mid_channels, {3, 1, 1}}, {b.mid_channels, {1, 3, 3}}, {b.out_channels, {1, 1, 1}}};
          break;
        case BlockKind::single3d:
          convs = {{b.out_channels, {3, 3, 3}}};
          break;
        case BlockKind::residual4d:
          layers_.push_back(std::make_unique<Residual4DBlock<T>>(b.name, b.out_channels, b.kernel4d));
          continue;
      }
      layers_.push_back(
          std::make_unique<ResidualBlock<T>>(b.name, b.kind, b.in_channels, convs, b.spatial_stride, rng));
    }
    layers_.push_back(std::make_unique<ClassifierHead<T>>("fc", spec_.feature_channels(), spec_.num_classes, rng));
  }

  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  [[nodiscard]] const NetworkSpec& spec() const { return spec_; }
  [[nodiscard]] std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }
  [[nodiscard]] std::size_t head_index() const { return layers_.size() - 1; }
  ClassifierHead<T>& head() { return static_cast<ClassifierHead<T>&>(*layers_.back()); }

  [[nodiscard]] std::optional<std::size_t> first_4d_index() const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (dynamic_cast<const Residual4DBlock<T>*>(layers_[i].get())) return i;
    return std::nullopt;
  }

  std::vector<Residual4DBlock<T>*> blocks_4d() {
    std::vector<Residual4DBlock<T>*> out;
    for (auto& l : layers_)
      if (auto* b = dynamic_cast<Residual4DBlock<T>*>(l.get())) out.push_back(b);
    return out;
  }

  /// (N, C, U, T, H, W) -> (N*U, C, T, H, W)
  static Tensor<T> units_to_batch(const Tensor<T>& video) {
    if (video.rank() != 6) throw ShapeError("network input must be (N, C, U, T, H, W), got " + shape_string(video.shape()));
    return merge_axis_into_batch(permute_axes(video, 1, 2));
  }

  /// Runs layers [begin, end) on unit-batched activations.
  Tensor<T> forward_range(Tensor<T> x, const ForwardContext& ctx, std::size_t begin, std::size_t end,
                          const Hook& hook = {}) {
    ctx_ = ctx;
    for (std::size_t i = begin; i < end; ++i) {
      x = layers_[i]->forward(x, ctx);
      if (hook) hook(*layers_[i], x);
    }
    return x;
  }

  /// (N, C, U, T, H, W) -> logits (N, num_classes).
  Tensor<T> forward(const Tensor<T>& video, Mode mode, const Hook& hook = {}) {
    ForwardContext ctx;
    ctx.mode = mode;
    return forward(video, ctx, hook);
  }

  Tensor<T> forward(const Tensor<T>& video, ForwardContext ctx, const Hook& hook = {}) {
    if (video.rank() != 6) throw ShapeError("network input must be (N, C, U, T, H, W), got " + shape_string(video.shape()));
    if (video.shape()[1] != spec_.in_channels) {
      throw ShapeError("network input has " + std::to_string(video.shape()[1]) + " channels, expected " +
                       std::to_string(spec_.in_channels));
    }
    ctx.units = video.shape()[2];
    input_shape_ = video.shape();
    return forward_range(units_to_batch(video), ctx, 0, layers_.size(), hook);
  }

  /// Back-propagates d(loss)/d(logits) through the whole graph, accumulating
  /// parameter gradients. Returns d(loss)/d(input) in (N, C, U, T, H, W).
  Tensor<T> backward(const Tensor<T>& grad_logits) {
    Tensor<T> g = grad_logits;
    for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g);
    return permute_axes(split_batch_axis(std::move(g), input_shape_[2]), 1, 2);
  }

  std::vector<ParamRef<T>> parameters() {
    std::vector<ParamRef<T>> out;
    for (auto& l : layers_) l->collect_parameters(out);
    return out;
  }

  std::vector<BufferRef<T>> buffers() {
    std::vector<BufferRef<T>> out;
    for (auto& l : layers_) l->collect_buffers(out);
    return out;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.grad->fill(T{0});
  }

  /// Every parameter and buffer by name (copies).
  std::map<std::string, Tensor<T>> state() {
    std::map<std::string, Tensor<T>> out;
    for (auto& p : parameters()) out.emplace(p.name, *p.value);
    for (auto& b : buffers()) out.emplace(b.name, *b.value);
    return out;
  }

  /// Copies matching entries from `state`. With `strict`, every entry of the
  /// network must be present. Returns the number of tensors loaded.
  std::size_t load_state(const std::map<std::string, Tensor<T>>& state, bool strict) {
    std::size_t loaded = 0;
    auto load = [&](const std::string& name, Tensor<T>* dst) {
      auto it = state.find(name);
      if (it == state.end()) {
        if (strict) throw ModelError("checkpoint is missing '" + name + "'");
        return;
      }
      if (it->second.shape() != dst->shape()) {
        throw ModelError("checkpoint entry '" + name + "' has shape " + shape_string(it->second.shape()) +
                         ", network expects " + shape_string(dst->shape()));
      }
      *dst = it->second;
      ++loaded;
    };
    for (auto& p : parameters()) load(p.name, p.value);
    for (auto& b : buffers()) load(b.name, b.value);
    return loaded;
  }

 private:
  NetworkSpec spec_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  ForwardContext ctx_;
  Shape input_shape_;
};

}  // namespace v4d
