// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// VT01 binary tensor files:
//   "VT01" | u8 rank | u8 dtype (0 = f32, 1 = f64) | rank x u32 LE extents |
//   raw little-endian elements, row-major.

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <variant>

#include "v4d/tensor.hpp"

namespace v4d {

namespace detail {

template <typename U>
U byteswap_if_big_endian(U value) {
  if constexpr (std::endian::native == std::endian::little) {
    return value;
  } else {
    std::array<unsigned char, sizeof(U)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(U));
    std::reverse(bytes.begin(), bytes.end());
    std::memcpy(&value, bytes.data(), sizeof(U));
    return value;
  }
}

template <typename U>
void write_le(std::ostream& os, U value) {
  value = byteswap_if_big_endian(value);
  os.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U read_le(std::istream& is) {
  U value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(U));
  if (!is) throw IoError("VT01: truncated stream");
  return byteswap_if_big_endian(value);
}

}  // namespace detail

inline constexpr std::array<char, 4> kVt01Magic = {'V', 'T', '0', '1'};

struct Vt01Header {
  DType dtype = DType::f32;
  Shape shape;
};

template <typename T>
void write_vt01(std::ostream& os, const Tensor<T>& t) {
  if (t.rank() > 255) throw ShapeError("VT01: rank exceeds 255");
  os.write(kVt01Magic.data(), 4);
  detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<T>()));
  for (std::size_t e : t.shape()) {
    if (e > 0xffffffffu) throw ShapeError("VT01: extent exceeds u32");
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
  }
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.ptr()),
             static_cast<std::streamsize>(t.size() * sizeof(T)));
  } else {
    for (T v : t.data()) detail::write_le<T>(os, v);
  }
  if (!os) throw IoError("VT01: write failed");
}

inline Vt01Header read_vt01_header(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  if (!is || magic != kVt01Magic) throw IoError("VT01: bad magic");
  Vt01Header h;
  const auto rank = detail::read_le<std::uint8_t>(is);
  const auto code = detail::read_le<std::uint8_t>(is);
  if (code > 1) throw IoError("VT01: unknown dtype code " + std::to_string(code));
  h.dtype = static_cast<DType>(code);
  for (std::uint8_t k = 0; k < rank; ++k) {
    const auto e = detail::read_le<std::uint32_t>(is);
    if (e == 0) throw IoError("VT01: zero extent");
    h.shape.push_back(e);
  }
  return h;
}

/// Reads a VT01 stream, converting to T when the stored dtype differs.
template <typename T>
Tensor<T> read_vt01(std::istream& is) {
  const Vt01Header h = read_vt01_header(is);
  const std::size_t n = shape_volume(h.shape);
  auto read_as = [&]<typename S>() {
    std::vector<S> raw(n);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(S)));
    if (!is) throw IoError("VT01: truncated element data");
    if constexpr (std::endian::native != std::endian::little) {
      for (S& v : raw) v = detail::byteswap_if_big_endian(v);
    }
    if constexpr (std::is_same_v<S, T>) {
      return Tensor<T>(h.shape, std::move(raw));
    } else {
      return Tensor<T>(h.shape, std::vector<T>(raw.begin(), raw.end()));
    }
  };
  return h.dtype == DType::f32 ? read_as.template operator()<float>()
                               : read_as.template operator()<double>();
}

template <typename T>
void save_vt01(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_vt01(os, t);
}

template <typename T>
Tensor<T> load_vt01(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return read_vt01<T>(is);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace v4d
