// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Frame decoding (PNG via libpng, binary PGM/PPM by hand) and grayscale PNG
// export. Decoded images are (C, H, W) float tensors scaled to [0, 1].

#include <png.h>

#include <cctype>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "v4d/error.hpp"
#include "v4d/tensor.hpp"

namespace v4d {

namespace detail {

inline Tensor<float> interleaved_to_chw(const std::vector<std::uint8_t>& px, std::size_t c, std::size_t h,
                                        std::size_t w, float scale) {
  Tensor<float> t({c, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) t.at(k, y, x) = static_cast<float>(px[(y * w + x) * c + k]) * scale;
  return t;
}

inline std::size_t pnm_read_int(std::istream& in, const std::string& path) {
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (!std::isspace(ch)) {
      break;
    }
    ch = in.get();
  }
  if (ch == EOF || !std::isdigit(ch)) throw IoError("malformed PNM header in " + path);
  std::size_t v = 0;
  while (ch != EOF && std::isdigit(ch)) {
    v = v * 10 + static_cast<std::size_t>(ch - '0');
    ch = in.get();
  }
  return v;  // the single whitespace after the token has been consumed
}

}  // namespace detail

/// Binary PGM (P5) or PPM (P6), 8 or 16 bits per sample.
inline Tensor<float> read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[2] = {};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    throw IoError(path + ": only binary PGM (P5) and PPM (P6) are supported");
  }
  const std::size_t c = magic[1] == '6' ? 3 : 1;
  const std::size_t w = detail::pnm_read_int(in, path);
  const std::size_t h = detail::pnm_read_int(in, path);
  const std::size_t maxval = detail::pnm_read_int(in, path);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw IoError(path + ": invalid PNM dimensions");
  const std::size_t bytes = maxval > 255 ? 2 : 1;
  std::vector<std::uint8_t> raw(w * h * c * bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw IoError(path + ": truncated pixel data");
  const float scale = 1.0f / static_cast<float>(maxval);
  if (bytes == 1) return detail::interleaved_to_chw(raw, c, h, w, scale);
  Tensor<float> t({c, h, w});
  for (std::size_t i = 0; i < w * h * c; ++i) {
    const std::size_t y = i / (w * c), x = (i / c) % w, k = i % c;
    t.at(k, y, x) = static_cast<float>((raw[2 * i] << 8) | raw[2 * i + 1]) * scale;
  }
  return t;
}

/// Gray and gray+alpha decode to one channel, everything else to RGB.
inline Tensor<float> read_png(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError(path + ": " + img.message);
  }
  const bool gray = (img.format & PNG_FORMAT_FLAG_COLOR) == 0;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, px.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError(path + ": " + msg);
  }
  return detail::interleaved_to_chw(px, gray ? 1 : 3, img.height, img.width, 1.0f / 255.0f);
}

/// Dispatches on the extension (.png, .ppm, .pgm).
inline Tensor<float> read_image(const std::string& path) {
  auto ends = [&](std::string_view s) { return path.size() >= s.size() && path.ends_with(s); };
  if (ends(".png") || ends(".PNG")) return read_png(path);
  if (ends(".ppm") || ends(".pgm") || ends(".PPM") || ends(".PGM")) return read_pnm(path);
  throw IoError("unsupported image format: " + path);
}

/// Writes an (H, W) tensor with values in [0, 1] as 8-bit grayscale PNG.
inline void write_png_gray(const std::string& path, const Tensor<float>& img) {
  if (img.rank() != 2) throw ShapeError("write_png_gray: expected (H, W)");
  const std::size_t h = img.shape()[0], w = img.shape()[1];
  std::vector<std::uint8_t> px(h * w);
  for (std::size_t i = 0; i < px.size(); ++i) {
    const float v = std::min(1.0f, std::max(0.0f, img[i]));
    px[i] = static_cast<std::uint8_t>(v * 255.0f + 0.5f);
  }
  png_image out{};
  out.version = PNG_IMAGE_VERSION;
  out.width = static_cast<png_uint_32>(w);
  out.height = static_cast<png_uint_32>(h);
  out.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&out, path.c_str(), 0, px.data(), 0, nullptr)) {
    throw IoError(path + ": " + out.message);
  }
}

/// Writes a (C, H, W) tensor with values in [0, 1] as binary PGM/PPM.
inline void write_pnm(const std::string& path, const Tensor<float>& img) {
  if (img.rank() != 3 || (img.shape()[0] != 1 && img.shape()[0] != 3)) {
    throw ShapeError("write_pnm: expected (1|3, H, W)");
  }
  const std::size_t c = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot create " + path);
  out << (c == 3 ? "P6" : "P5") << "\n" << w << " " << h << "\n255\n";
  std::vector<std::uint8_t> px(h * w * c);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) {
        const float v = std::min(1.0f, std::max(0.0f, img.at(k, y, x)));
        px[(y * w + x) * c + k] = static_cast<std::uint8_t>(v * 255.0f + 0.5f);
      }
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace v4d
