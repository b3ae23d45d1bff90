// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Video-level inference. The network is cut in front of its first residual
// 4D block: the head part (n3d) is per-unit and runs once per sampled unit,
// the tail (n4d) is evaluated on every combination that picks one unit from
// each of U_train contiguous groups.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "v4d/image_io.hpp"
#include "v4d/network.hpp"
#include "v4d/ops/linear.hpp"

namespace v4d {

struct InferencePlan {
  std::size_t u_infer = 0;
  std::size_t u_train = 0;
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::vector<std::size_t>> combinations;
};

/// Partitions 0..u_infer-1 into u_train contiguous groups whose sizes differ
/// by at most one (larger groups first) and lists the cartesian product in
/// lexicographic order.
inline InferencePlan enumerate_combinations(std::size_t u_infer, std::size_t u_train) {
  if (u_train < 1) throw ConfigError("enumerate_combinations: U_train must be >= 1");
  if (u_infer < u_train) {
    throw ConfigError("enumerate_combinations: U_infer (" + std::to_string(u_infer) + ") < U_train (" +
                      std::to_string(u_train) + ")");
  }
  InferencePlan plan{u_infer, u_train, {}, {}};
  std::size_t at = 0;
  for (std::size_t g = 0; g < u_train; ++g) {
    const std::size_t n = u_infer / u_train + (g < u_infer % u_train ? 1 : 0);
    std::vector<std::size_t> group(n);
    std::iota(group.begin(), group.end(), at);
    at += n;
    plan.groups.push_back(std::move(group));
  }
  std::vector<std::size_t> pos(u_train, 0);
  while (true) {
    std::vector<std::size_t> combo(u_train);
    for (std::size_t g = 0; g < u_train; ++g) combo[g] = plan.groups[g][pos[g]];
    plan.combinations.push_back(std::move(combo));
    std::size_t g = u_train;
    while (g > 0 && ++pos[g - 1] == plan.groups[g - 1].size()) pos[--g] = 0;
    if (g == 0) break;
  }
  return plan;
}

/// View of a network as n3d = layers [0, split) and n4d = [split, end).
template <typename T>
class SplitNetwork {
 public:
  SplitNetwork(Network<T>& net, std::size_t split) : net_(&net), split_(split) {}

  [[nodiscard]] std::size_t split_index() const { return split_; }
  Network<T>& network() { return *net_; }

  /// (N, C, U, T, H, W) -> per-unit features (N*U, C', T, H', W').
  Tensor<T> run_n3d(const Tensor<T>& video) {
    ForwardContext ctx;
    ctx.units = video.shape().at(2);
    return net_->forward_range(Network<T>::units_to_batch(video), ctx, 0, split_);
  }

  /// Features of `units` consecutive units per video, (N*units, ...) -> logits.
  Tensor<T> run_n4d(const Tensor<T>& features, std::size_t units) {
    ForwardContext ctx;
    ctx.units = units;
    return net_->forward_range(features, ctx, split_, net_->size());
  }

 private:
  Network<T>* net_;
  std::size_t split_;
};

template <typename T>
SplitNetwork<T> split_at_first_4d(Network<T>& net) {
  const auto idx = net.first_4d_index();
  if (!idx) throw ModelError("network has no 4D block to split at; use TSN-style averaging");
  return SplitNetwork<T>(net, *idx);
}

enum class ScoreAveraging { logits, probabilities };

NLOHMANN_JSON_SERIALIZE_ENUM(ScoreAveraging,
                             {{ScoreAveraging::logits, "logits"}, {ScoreAveraging::probabilities, "probabilities"}})

struct InferenceOptions {
  std::size_t u_train = 4;
  ScoreAveraging averaging = ScoreAveraging::logits;
  std::size_t combo_batch = 8;  // combinations scored per n4d call
};

struct InferenceResult {
  std::vector<double> probs;
  std::vector<double> mean_scores;  // averaged logits, or averaged probabilities
  std::size_t combinations_used = 0;
  std::size_t crops_used = 0;
};

namespace detail {

inline std::vector<double> softmax_row(const std::vector<double>& logits) {
  const Tensor<double> p = ops::softmax(Tensor<double>({1, logits.size()}, logits));
  return p.buffer();
}

/// Accumulates per-row scores in call order and finalizes the mean.
class ScoreAccumulator {
 public:
  ScoreAccumulator(std::size_t classes, ScoreAveraging mode) : sum_(classes, 0.0), mode_(mode) {}

  template <typename T>
  void add_rows(const Tensor<T>& logits) {
    const std::size_t k = logits.shape()[1];
    if (k != sum_.size()) throw ShapeError("inference: classifier width changed between calls");
    for (std::size_t r = 0; r < logits.shape()[0]; ++r) {
      std::vector<double> row(k);
      for (std::size_t j = 0; j < k; ++j) row[j] = static_cast<double>(logits[r * k + j]);
      if (mode_ == ScoreAveraging::probabilities) row = softmax_row(row);
      for (std::size_t j = 0; j < k; ++j) sum_[j] += row[j];
      ++count_;
    }
  }

  [[nodiscard]] InferenceResult finish() const {
    if (count_ == 0) throw ModelError("inference: no scores were produced");
    InferenceResult r;
    r.mean_scores = sum_;
    for (auto& v : r.mean_scores) v /= static_cast<double>(count_);
    if (mode_ == ScoreAveraging::logits) {
      r.probs = softmax_row(r.mean_scores);
    } else {
      r.probs = r.mean_scores;
    }
    return r;
  }

 private:
  std::vector<double> sum_;
  ScoreAveraging mode_;
  std::size_t count_ = 0;
};

/// Rows [combo[0], combo[1], ...] of a (U_infer, ...) feature tensor.
template <typename T>
void append_units(const Tensor<T>& feats, const std::vector<std::size_t>& combo, std::vector<T>& out) {
  const std::size_t per_unit = feats.size() / feats.shape()[0];
  for (std::size_t u : combo) out.insert(out.end(), feats.ptr() + u * per_unit, feats.ptr() + (u + 1) * per_unit);
}

}  // namespace detail

/// Scores a sampled video given as (crops, C, U_infer, T, H, W).
///
/// Networks without 4D blocks fall back to per-unit scoring (tsn_infer).
template <typename T>
InferenceResult v4d_infer(Network<T>& net, const Tensor<T>& crops, const InferenceOptions& opts);

/// Every unit scored on its own with 4D blocks bypassed; the per-unit scores
/// are averaged over units and crops.
template <typename T>
InferenceResult tsn_infer(Network<T>& net, const Tensor<T>& crops, ScoreAveraging averaging = ScoreAveraging::logits) {
  if (crops.rank() != 6) throw ShapeError("tsn_infer: expected (crops, C, U, T, H, W), got " + shape_string(crops.shape()));
  const Shape& s = crops.shape();
  detail::ScoreAccumulator acc(net.spec().num_classes, averaging);
  ForwardContext ctx;
  ctx.bypass_4d = true;
  for (std::size_t k = 0; k < s[0]; ++k) {
    // (C, U, T, H, W) -> (U, C, 1, T, H, W): each unit is its own clip.
    Tensor<T> clips = permute_axes(select(crops, 0, k), 0, 1).reshaped({s[2], s[1], 1, s[3], s[4], s[5]});
    acc.add_rows(net.forward(clips, ctx));
  }
  InferenceResult r = acc.finish();
  r.combinations_used = s[2];
  r.crops_used = s[0];
  return r;
}

template <typename T>
InferenceResult v4d_infer(Network<T>& net, const Tensor<T>& crops, const InferenceOptions& opts) {
  if (crops.rank() != 6) throw ShapeError("v4d_infer: expected (crops, C, U, T, H, W), got " + shape_string(crops.shape()));
  if (!net.first_4d_index()) return tsn_infer(net, crops, opts.averaging);
  const InferencePlan plan = enumerate_combinations(crops.shape()[2], opts.u_train);
  if (plan.combinations.empty()) throw ModelError("v4d_infer: empty combination list");
  SplitNetwork<T> split = split_at_first_4d(net);
  detail::ScoreAccumulator acc(net.spec().num_classes, opts.averaging);
  const std::size_t batch = std::max<std::size_t>(1, opts.combo_batch);
  for (std::size_t k = 0; k < crops.shape()[0]; ++k) {
    const Shape one{1, crops.shape()[1], crops.shape()[2], crops.shape()[3], crops.shape()[4], crops.shape()[5]};
    const Tensor<T> feats = split.run_n3d(select(crops, 0, k).reshaped(one));  // (U_infer, C', T, H', W')
    Shape fs = feats.shape();
    for (std::size_t c0 = 0; c0 < plan.combinations.size(); c0 += batch) {
      const std::size_t c1 = std::min(plan.combinations.size(), c0 + batch);
      std::vector<T> buf;
      buf.reserve((c1 - c0) * opts.u_train * (feats.size() / fs[0]));
      for (std::size_t c = c0; c < c1; ++c) detail::append_units(feats, plan.combinations[c], buf);
      fs[0] = (c1 - c0) * opts.u_train;
      acc.add_rows(split.run_n4d(Tensor<T>(fs, std::move(buf)), opts.u_train));
    }
  }
  InferenceResult r = acc.finish();
  r.combinations_used = plan.combinations.size();
  r.crops_used = crops.shape()[0];
  return r;
}

/// Indices of the `k` largest entries, ties broken by lower index.
inline std::vector<std::size_t> top_k(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  idx.resize(k);
  return idx;
}

// ---- 3D class activation maps ----

/// heatmap[u, t, h, w] = sum_c fc[class_id, c] * features[c, u, t, h, w].
template <typename T>
Tensor<T> compute_cam3d(const Tensor<T>& features, const Tensor<T>& fc_weights, std::size_t class_id) {
  if (features.rank() != 5 || fc_weights.rank() != 2 || fc_weights.shape()[1] != features.shape()[0]) {
    throw ShapeError("compute_cam3d: features " + shape_string(features.shape()) + " do not match fc " +
                     shape_string(fc_weights.shape()));
  }
  if (class_id >= fc_weights.shape()[0]) {
    throw ShapeError("compute_cam3d: class " + std::to_string(class_id) + " out of range");
  }
  const Shape& s = features.shape();
  const std::size_t inner = s[1] * s[2] * s[3] * s[4];
  Tensor<T> cam({s[1], s[2], s[3], s[4]});
  for (std::size_t c = 0; c < s[0]; ++c) {
    const T w = fc_weights.at(class_id, c);
    const T* f = features.ptr() + c * inner;
    T* o = cam.ptr();
    for (std::size_t i = 0; i < inner; ++i) o[i] += w * f[i];
  }
  return cam;
}

/// Maps values to [0, 1]; a constant map becomes all zeros.
template <typename T>
Tensor<T> min_max_normalize(const Tensor<T>& x) {
  if (x.empty()) return x;
  const auto [lo, hi] = std::minmax_element(x.data().begin(), x.data().end());
  const T a = *lo, range = *hi - *lo;
  Tensor<T> out(x.shape());
  if (range > T{0})
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - a) / range;
  return out;
}

/// Final-stage features of the last forward for video 0, as (C, U, T, H, W).
template <typename T>
Tensor<T> cam_features(Network<T>& net, std::size_t units) {
  const Tensor<T>& f = net.head().features();  // (N*U, C, T, H, W)
  if (f.empty()) throw ModelError("cam_features: run a forward pass first");
  const Shape& s = f.shape();
  Tensor<T> first({units, s[1], s[2], s[3], s[4]});
  std::copy_n(f.ptr(), first.size(), first.ptr());
  return permute_axes(first, 0, 1);
}

/// One CSV per unit (rows t, columns h*W + w) for the raw and normalized
/// maps, plus an optional grayscale PNG per (u, t) slice of the normalized
/// map. Returns the written paths.
template <typename T>
std::vector<std::filesystem::path> export_cam(const std::filesystem::path& dir, const Tensor<T>& cam, bool png) {
  if (cam.rank() != 4) throw ShapeError("export_cam: expected (U, T, H, W)");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const Shape& s = cam.shape();
  const Tensor<T> norm = min_max_normalize(cam);
  std::vector<std::filesystem::path> written;
  auto write_csv = [&](const Tensor<T>& m, const std::string& tag, std::size_t u) {
    const auto path = dir / ("cam_" + tag + "_u" + std::to_string(u) + ".csv");
    std::ofstream out(path);
    if (!out) throw IoError("cannot create " + path.string());
    out << "# v4d.cam/1 " << tag << " u=" << u << " T=" << s[1] << " H=" << s[2] << " W=" << s[3] << "\n";
    out.precision(9);
    for (std::size_t t = 0; t < s[1]; ++t) {
      for (std::size_t i = 0; i < s[2] * s[3]; ++i) {
        if (i) out << ',';
        out << static_cast<double>(m[((u * s[1] + t) * s[2] * s[3]) + i]);
      }
      out << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
    written.push_back(path);
  };
  for (std::size_t u = 0; u < s[0]; ++u) {
    write_csv(cam, "raw", u);
    write_csv(norm, "norm", u);
    if (!png) continue;
    for (std::size_t t = 0; t < s[1]; ++t) {
      Tensor<float> img({s[2], s[3]});
      for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(norm[(u * s[1] + t) * img.size() + i]);
      const auto path = dir / ("cam_u" + std::to_string(u) + "_t" + std::to_string(t) + ".png");
      write_png_gray(path.string(), img);
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace v4d
