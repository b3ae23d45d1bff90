// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "v4d/error.hpp"

namespace v4d {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

/// Row-major strides, in elements.
inline Shape row_major_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "tensors hold float or double");
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

/// Dense row-major N-dimensional array. A default-constructed tensor is
/// empty (rank 0, no elements) and stands for "absent", e.g. a conv
/// without bias. Every constructed tensor has extents >= 1.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_volume(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_volume(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T{0}); }

  [[nodiscard]] bool empty() const { return data_.empty(); }
  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t rank() const { return shape_.size(); }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] std::size_t extent(std::size_t axis) const {
    if (axis >= shape_.size()) {
      throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                       shape_string(shape_));
    }
    return shape_[axis];
  }
  [[nodiscard]] Shape strides() const { return row_major_strides(shape_); }

  [[nodiscard]] std::span<T> data() { return data_; }
  [[nodiscard]] std::span<const T> data() const { return data_; }
  [[nodiscard]] T* ptr() { return data_.data(); }
  [[nodiscard]] const T* ptr() const { return data_.data(); }
  [[nodiscard]] const std::vector<T>& buffer() const { return data_; }

  T& operator[](std::size_t flat) { return data_[flat]; }
  const T& operator[](std::size_t flat) const { return data_[flat]; }

  [[nodiscard]] std::size_t offset(std::span<const std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw ShapeError("index rank " + std::to_string(index.size()) +
                       " does not match tensor rank " + std::to_string(shape_.size()));
    }
    std::size_t off = 0;
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= shape_[i]) throw ShapeError("index out of range");
      off = off * shape_[i] + index[i];
    }
    return off;
  }

  /// Inverse of offset().
  [[nodiscard]] Shape unravel(std::size_t flat) const {
    Shape index(shape_.size());
    for (std::size_t i = shape_.size(); i-- > 0;) {
      index[i] = flat % shape_[i];
      flat /= shape_[i];
    }
    return index;
  }

  template <typename... Idx>
  T& at(Idx... idx) {
    const std::size_t index[] = {static_cast<std::size_t>(idx)...};
    return data_[offset(index)];
  }
  template <typename... Idx>
  const T& at(Idx... idx) const {
    const std::size_t index[] = {static_cast<std::size_t>(idx)...};
    return data_[offset(index)];
  }

  /// Same buffer under a new shape of equal volume.
  [[nodiscard]] Tensor reshaped(Shape shape) const& {
    Tensor out = *this;
    out.reshape_in_place(std::move(shape));
    return out;
  }
  [[nodiscard]] Tensor reshaped(Shape shape) && {
    reshape_in_place(std::move(shape));
    return std::move(*this);
  }

  template <typename U>
  [[nodiscard]] Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void validate_shape() const {
    for (std::size_t e : shape_) {
      if (e == 0) throw ShapeError("tensor extents must be >= 1, got " + shape_string(shape_));
    }
  }

  void reshape_in_place(Shape shape) {
    if (shape_volume(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
    validate_shape();
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Swaps axes i and j (the permutation phi_(d_i, d_j)) and materializes a
/// contiguous row-major result.
template <typename T>
Tensor<T> permute_axes(const Tensor<T>& t, std::size_t i, std::size_t j) {
  const std::size_t rank = t.rank();
  if (i >= rank || j >= rank) {
    throw ShapeError("permute_axes: axis out of range for shape " + shape_string(t.shape()));
  }
  if (i == j) throw ShapeError("permute_axes: axes must differ");
  if (i > j) std::swap(i, j);

  Shape out_shape = t.shape();
  std::swap(out_shape[i], out_shape[j]);
  Tensor<T> out(out_shape);

  // View the source as (outer, A, mid, B, inner) where A, B are the swapped
  // axes; the destination is (outer, B, mid, A, inner).
  const Shape& s = t.shape();
  std::size_t outer = 1, mid = 1, inner = 1;
  for (std::size_t k = 0; k < i; ++k) outer *= s[k];
  for (std::size_t k = i + 1; k < j; ++k) mid *= s[k];
  for (std::size_t k = j + 1; k < rank; ++k) inner *= s[k];
  const std::size_t a = s[i], b = s[j];

  const T* src = t.ptr();
  T* dst = out.ptr();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t ia = 0; ia < a; ++ia) {
      for (std::size_t m = 0; m < mid; ++m) {
        for (std::size_t ib = 0; ib < b; ++ib) {
          const std::size_t src_off = (((o * a + ia) * mid + m) * b + ib) * inner;
          const std::size_t dst_off = (((o * b + ib) * mid + m) * a + ia) * inner;
          std::copy_n(src + src_off, inner, dst + dst_off);
        }
      }
    }
  }
  return out;
}

/// (N, U, ...) -> (N*U, ...). Pure reshape.
template <typename T>
Tensor<T> merge_axis_into_batch(Tensor<T> t) {
  if (t.rank() < 2) throw ShapeError("merge_axis_into_batch: rank must be >= 2");
  Shape shape(t.shape().begin() + 1, t.shape().end());
  shape[0] *= t.shape()[0];
  return std::move(t).reshaped(std::move(shape));
}

/// (N*U, ...) -> (N, U, ...). Pure reshape.
template <typename T>
Tensor<T> split_batch_axis(Tensor<T> t, std::size_t units) {
  if (t.rank() < 1 || units == 0 || t.shape()[0] % units != 0) {
    throw ShapeError("split_batch_axis: batch extent of " + shape_string(t.shape()) +
                     " is not divisible by " + std::to_string(units));
  }
  Shape shape;
  shape.reserve(t.rank() + 1);
  shape.push_back(t.shape()[0] / units);
  shape.push_back(units);
  shape.insert(shape.end(), t.shape().begin() + 1, t.shape().end());
  return std::move(t).reshaped(std::move(shape));
}

/// Symmetric zero padding, `pads[k]` on both sides of axis k.
template <typename T>
Tensor<T> zero_pad(const Tensor<T>& t, std::span<const std::size_t> pads) {
  if (pads.size() != t.rank()) throw ShapeError("zero_pad: one pad amount per axis required");
  Shape out_shape = t.shape();
  for (std::size_t k = 0; k < pads.size(); ++k) out_shape[k] += 2 * pads[k];
  Tensor<T> out(out_shape);
  if (t.empty()) return out;

  const std::size_t rank = t.rank();
  const Shape in_strides = t.strides();
  const Shape out_strides = out.strides();
  const std::size_t row = t.shape()[rank - 1];
  const std::size_t rows = t.size() / row;
  Shape index(rank, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t rem = r, out_off = pads[rank - 1];
    for (std::size_t k = rank - 1; k-- > 0;) {
      index[k] = rem % t.shape()[k];
      rem /= t.shape()[k];
      out_off += (index[k] + pads[k]) * out_strides[k];
    }
    std::copy_n(t.ptr() + r * row, row, out.ptr() + out_off);
  }
  return out;
}

template <typename T>
Tensor<T> zero_pad(const Tensor<T>& t, std::initializer_list<std::size_t> pads) {
  const std::vector<std::size_t> v(pads);
  return zero_pad(t, std::span<const std::size_t>(v));
}

/// Selects index `i` along `axis`, dropping that axis.
template <typename T>
Tensor<T> select(const Tensor<T>& t, std::size_t axis, std::size_t i) {
  if (axis >= t.rank() || i >= t.shape()[axis]) throw ShapeError("select: out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= t.shape()[k];
  for (std::size_t k = axis + 1; k < t.rank(); ++k) inner *= t.shape()[k];
  Shape shape;
  for (std::size_t k = 0; k < t.rank(); ++k)
    if (k != axis) shape.push_back(t.shape()[k]);
  if (shape.empty()) shape.push_back(1);
  Tensor<T> out(shape);
  const std::size_t n = t.shape()[axis];
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(t.ptr() + (o * n + i) * inner, inner, out.ptr() + o * inner);
  return out;
}

/// Stacks equally shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("stack: nothing to stack");
  Shape shape = parts.front().shape();
  shape.insert(shape.begin(), parts.size());
  Tensor<T> out(shape);
  const std::size_t n = parts.front().size();
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (parts[k].shape() != parts.front().shape()) throw ShapeError("stack: shape mismatch");
    std::copy_n(parts[k].ptr(), n, out.ptr() + k * n);
  }
  return out;
}

template <typename T>
void add_in_place(Tensor<T>& dst, const Tensor<T>& src) {
  if (dst.shape() != src.shape()) {
    throw ShapeError("add: shape mismatch " + shape_string(dst.shape()) + " vs " +
                     shape_string(src.shape()));
  }
  T* d = dst.ptr();
  const T* s = src.ptr();
  for (std::size_t k = 0; k < dst.size(); ++k) d[k] += s[k];
}

template <typename T>
Tensor<T> add(Tensor<T> a, const Tensor<T>& b) {
  add_in_place(a, b);
  return a;
}

template <typename T>
T sum(const Tensor<T>& t) {
  return std::accumulate(t.data().begin(), t.data().end(), T{0});
}

template <typename T>
T max_abs(const Tensor<T>& t) {
  T m{0};
  for (T v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  T m{0};
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

}  // namespace v4d
