// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Synthetic unit-order task. Each sample draws U distinct motifs from a
// library of M; unit u shows the u-th motif of the chosen arrangement. The
// label says whether the arrangement is ascending (0) or descending (1) in
// motif index, so the unordered set of units carries no information and
// reversing the units flips the label.
//
// Motif k is a square blob of intensity (k + 1) / M drifting one pixel per
// frame from a random start position and direction, on a zero background
// with Gaussian pixel noise.

#include <algorithm>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "v4d/training.hpp"

namespace v4d {

struct OrderTaskSpec {
  std::size_t units = 4;
  std::size_t channels = 1;
  std::size_t frames = 4;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t motifs = 8;
  std::size_t blob = 4;
  double noise = 0.1;
  std::size_t train_size = 2000;
  std::size_t test_size = 500;
  std::uint64_t seed = 0;

  void validate() const {
    if (units < 2) throw ConfigError("order task: units must be >= 2");
    if (motifs < units) throw ConfigError("order task: motif library must be at least as large as U");
    if (channels < 1 || frames < 1 || blob < 1 || blob > height || blob > width) {
      throw ConfigError("order task: invalid unit geometry");
    }
    if (!(noise >= 0)) throw ConfigError("order task: noise must be non-negative");
  }

  friend bool operator==(const OrderTaskSpec&, const OrderTaskSpec&) = default;
};

inline void to_json(nlohmann::json& j, const OrderTaskSpec& s) {
  j = {{"units", s.units},   {"channels", s.channels},     {"frames", s.frames},         {"height", s.height},
       {"width", s.width},   {"motifs", s.motifs},         {"blob", s.blob},             {"noise", s.noise},
       {"train_size", s.train_size}, {"test_size", s.test_size}, {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, OrderTaskSpec& s) {
  try {
    s = OrderTaskSpec{};
    s.units = j.value("units", s.units);
    s.channels = j.value("channels", s.channels);
    s.frames = j.value("frames", s.frames);
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.motifs = j.value("motifs", s.motifs);
    s.blob = j.value("blob", s.blob);
    s.noise = j.value("noise", s.noise);
    s.train_size = j.value("train_size", s.train_size);
    s.test_size = j.value("test_size", s.test_size);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("order task: ") + e.what());
  }
  s.validate();
}

template <typename T>
struct OrderTask {
  Dataset<T> train;
  Dataset<T> test;
};

namespace detail {

template <typename T>
void draw_order_samples(const OrderTaskSpec& s, std::size_t count, std::mt19937_64& rng, Dataset<T>& out) {
  out.inputs = Tensor<T>({count, s.channels, s.units, s.frames, s.height, s.width});
  out.labels.assign(count, 0);
  std::normal_distribution<double> noise(0.0, s.noise);
  std::vector<std::size_t> library(s.motifs);
  const std::size_t frame = s.height * s.width;
  for (std::size_t n = 0; n < count; ++n) {
    const int label = static_cast<int>(n % 2);
    out.labels[n] = label;
    std::iota(library.begin(), library.end(), 0);
    std::shuffle(library.begin(), library.end(), rng);
    std::vector<std::size_t> chosen(library.begin(), library.begin() + static_cast<std::ptrdiff_t>(s.units));
    std::sort(chosen.begin(), chosen.end());
    if (label == 1) std::reverse(chosen.begin(), chosen.end());
    for (std::size_t u = 0; u < s.units; ++u) {
      const double level = static_cast<double>(chosen[u] + 1) / static_cast<double>(s.motifs);
      const auto y0 = std::uniform_int_distribution<std::size_t>(0, s.height - s.blob)(rng);
      const auto x0 = std::uniform_int_distribution<std::size_t>(0, s.width - s.blob)(rng);
      const int dy = std::uniform_int_distribution<int>(-1, 1)(rng);
      const int dx = std::uniform_int_distribution<int>(-1, 1)(rng);
      for (std::size_t c = 0; c < s.channels; ++c)
        for (std::size_t t = 0; t < s.frames; ++t) {
          T* f = &out.inputs.at(n, c, u, t, 0, 0);
          const auto shift = [&](std::size_t p0, int d, std::size_t limit) {
            const long p = static_cast<long>(p0) + d * static_cast<long>(t);
            return static_cast<std::size_t>(std::clamp<long>(p, 0, static_cast<long>(limit)));
          };
          const std::size_t y = shift(y0, dy, s.height - s.blob), x = shift(x0, dx, s.width - s.blob);
          for (std::size_t i = 0; i < frame; ++i) f[i] = static_cast<T>(noise(rng));
          for (std::size_t by = 0; by < s.blob; ++by)
            for (std::size_t bx = 0; bx < s.blob; ++bx) f[(y + by) * s.width + x + bx] += static_cast<T>(level);
        }
    }
  }
}

}  // namespace detail

/// Seeded train/test split; labels alternate so both classes are balanced.
template <typename T>
OrderTask<T> make_order_task(const OrderTaskSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  OrderTask<T> task;
  detail::draw_order_samples(spec, spec.train_size, rng, task.train);
  detail::draw_order_samples(spec, spec.test_size, rng, task.test);
  return task;
}

/// Truncated V4D network used on the order task: res2..res4 with one block
/// each, a 3x3x1x1 4D block after res3, width 8.
inline NetworkSpec order_task_network(const OrderTaskSpec& task, std::size_t width = 8) {
  NetworkSpec s;
  s.depth = 18;
  s.num_classes = 2;
  s.units = task.units;
  s.width = width;
  s.in_channels = task.channels;
  s.blocks = {1, 1, 1, 0};
  s.insertions = {{3, 0, {3, 3, 1, 1}}};
  return s;
}

}  // namespace v4d
