// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace v4d {

namespace detail {
inline std::atomic<std::size_t>& thread_setting() {
  static std::atomic<std::size_t> value{0};
  return value;
}
inline std::atomic<bool>& thread_pinned() {
  static std::atomic<bool> value{false};
  return value;
}
}  // namespace detail

/// Worker count used by batch-parallel kernels. 0 means "available cores";
/// V4D_THREADS in the environment overrides whatever was set.
inline void set_num_threads(std::size_t n) { detail::thread_setting() = n; }

/// Like set_num_threads but ignores V4D_THREADS; used for --deterministic.
inline void pin_num_threads(std::size_t n) {
  detail::thread_setting() = n;
  detail::thread_pinned() = true;
}

inline std::size_t num_threads() {
  if (detail::thread_pinned() && detail::thread_setting() > 0) return detail::thread_setting();
  if (const char* env = std::getenv("V4D_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (...) {
    }
  }
  const std::size_t n = detail::thread_setting();
  if (n > 0) return n;
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Splits [0, n) into at most num_threads() contiguous chunks and runs
/// fn(chunk_index, begin, end) for each. Chunk boundaries depend only on n
/// and the thread count, so per-chunk partial results reduced in chunk order
/// are reproducible for a fixed thread count.
template <typename Fn>
std::size_t parallel_chunks(std::size_t n, Fn&& fn) {
  const std::size_t chunks = std::min(n, num_threads());
  if (chunks <= 1) {
    if (n) fn(std::size_t{0}, std::size_t{0}, n);
    return n ? 1 : 0;
  }
  std::vector<std::thread> workers;
  workers.reserve(chunks - 1);
  for (std::size_t c = 1; c < chunks; ++c) {
    workers.emplace_back([&, c] { fn(c, c * n / chunks, (c + 1) * n / chunks); });
  }
  fn(std::size_t{0}, std::size_t{0}, n / chunks);
  for (auto& w : workers) w.join();
  return chunks;
}

}  // namespace v4d
