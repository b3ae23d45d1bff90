// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Parameter and multiply-accumulate accounting by shape propagation; no
// tensor arithmetic is performed, so full-size networks are cheap to count.
//
// MACs of a convolution = C_out * C_in * prod(kernel) * prod(output
// positions); padded taps are counted. FLOPs are reported as 2 * MACs.

#include <cstdint>
#include <vector>

#include "v4d/network.hpp"

namespace v4d {

struct CostReport {
  std::vector<LayerStats> layers;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::uint64_t macs_4d = 0;
  [[nodiscard]] std::uint64_t flops() const { return 2 * macs; }
};

/// Weights, biases and BN affine terms; running statistics excluded.
template <typename T>
std::uint64_t count_params(Network<T>& net) {
  std::uint64_t n = 0;
  for (const auto& p : net.parameters()) n += p.value->size();
  return n;
}

/// Per-layer breakdown for a video input of shape (N, C, U, T, H, W).
template <typename T>
CostReport count_flops(const Network<T>& net, const Shape& input) {
  if (input.size() != 6) throw ShapeError("count_flops: input must be (N, C, U, T, H, W)");
  const std::size_t units = input[2];
  Shape s{input[0] * input[2], input[1], input[3], input[4], input[5]};
  CostReport r;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const std::size_t first = r.layers.size();
    net.layer(i).describe(s, units, r.layers);
    for (std::size_t k = first; k < r.layers.size(); ++k) {
      r.params += r.layers[k].params;
      r.macs += r.layers[k].macs;
      if (r.layers[k].kind == "conv4d") r.macs_4d += r.layers[k].macs;
    }
    s = net.layer(i).output_shape(s, units);
  }
  return r;
}

}  // namespace v4d
