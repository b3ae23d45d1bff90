// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Holistic video sampling: the video is split into U near-equal sections and
// one short clip (action unit) of T frames is drawn from each.

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "v4d/error.hpp"
#include "v4d/image_io.hpp"
#include "v4d/tensor.hpp"
#include "v4d/tensor_io.hpp"

namespace v4d {

enum class SampleMode { train, test };

NLOHMANN_JSON_SERIALIZE_ENUM(SampleMode, {{SampleMode::train, "train"}, {SampleMode::test, "test"}})

struct SamplingConfig {
  std::size_t units = 4;
  std::size_t clip_len = 32;
  std::size_t frames_per_unit = 4;
  std::size_t frame_stride = 8;
  SampleMode mode = SampleMode::test;
  std::uint64_t seed = 0;
  std::size_t crop_size = 0;  // 0: 256 in test mode, 224 in train mode

  void validate() const {
    if (units < 1) throw ConfigError("sampling: units must be >= 1");
    if (frames_per_unit < 1 || frame_stride < 1 || clip_len < 1) {
      throw ConfigError("sampling: clip_len, frames_per_unit and frame_stride must be positive");
    }
    if ((frames_per_unit - 1) * frame_stride >= clip_len) {
      throw ConfigError("sampling: (frames_per_unit - 1) * frame_stride must be < clip_len");
    }
  }
  [[nodiscard]] std::size_t effective_crop() const {
    if (crop_size) return crop_size;
    return mode == SampleMode::test ? 256 : 224;
  }

  friend bool operator==(const SamplingConfig&, const SamplingConfig&) = default;
};

/// Half-open frame range [begin, end).
struct Section {
  std::size_t begin = 0;
  std::size_t end = 0;
  [[nodiscard]] std::size_t size() const { return end - begin; }
  friend bool operator==(const Section&, const Section&) = default;
};

struct CropWindow {
  std::size_t y = 0;
  std::size_t x = 0;
  std::size_t size = 0;
  friend bool operator==(const CropWindow&, const CropWindow&) = default;
};

struct SamplingPlan {
  SampleMode mode = SampleMode::test;
  std::size_t video_length = 0;
  std::vector<Section> sections;
  std::vector<std::vector<std::size_t>> units;  // U lists of T absolute frame indices
  std::vector<CropWindow> crops;

  friend bool operator==(const SamplingPlan&, const SamplingPlan&) = default;
};

/// Splits [0, length) into `units` contiguous sections whose sizes differ by
/// at most one; the first length % units sections get the extra frame.
inline std::vector<Section> split_sections(std::size_t length, std::size_t units) {
  if (units < 1) throw ConfigError("split_sections: units must be >= 1");
  std::vector<Section> out;
  const std::size_t base = length / units, extra = length % units;
  std::size_t at = 0;
  for (std::size_t i = 0; i < units; ++i) {
    const std::size_t n = base + (i < extra ? 1 : 0);
    out.push_back({at, at + n});
    at += n;
  }
  return out;
}

/// Frame indices for every unit. Test mode centers the clip in its section;
/// train mode draws the clip start uniformly so the clip stays inside the
/// section where possible. Frames sit at offsets 0, s, 2s, ... from the clip
/// start and are clamped to the section (an empty section, which only occurs
/// when length < units, reuses the nearest valid frame).
inline SamplingPlan plan_units(std::size_t video_length, const SamplingConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  if (video_length < 1) throw ConfigError("plan_units: video_length must be >= 1");
  SamplingPlan plan;
  plan.mode = cfg.mode;
  plan.video_length = video_length;
  plan.sections = split_sections(video_length, cfg.units);
  for (const Section& sec : plan.sections) {
    std::vector<std::size_t> frames(cfg.frames_per_unit);
    if (sec.size() == 0) {
      std::fill(frames.begin(), frames.end(), std::min(sec.begin, video_length - 1));
      plan.units.push_back(std::move(frames));
      continue;
    }
    const std::size_t slack = sec.size() > cfg.clip_len ? sec.size() - cfg.clip_len : 0;
    std::size_t start = sec.begin;
    if (cfg.mode == SampleMode::test) {
      start += slack / 2;
    } else {
      start += std::uniform_int_distribution<std::size_t>(0, slack)(rng);
    }
    for (std::size_t k = 0; k < cfg.frames_per_unit; ++k) {
      frames[k] = std::min(start + k * cfg.frame_stride, sec.end - 1);
    }
    plan.units.push_back(std::move(frames));
  }
  return plan;
}

inline SamplingPlan plan_units(std::size_t video_length, const SamplingConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  return plan_units(video_length, cfg, rng);
}

/// Test mode: three `crop` squares spread evenly along the long side
/// (offsets 0, (L - crop) / 2, L - crop). Train mode: one random square.
inline std::vector<CropWindow> spatial_crops(std::size_t height, std::size_t width, SampleMode mode, std::size_t crop,
                                             std::mt19937_64& rng) {
  if (crop < 1) throw ConfigError("spatial_crops: crop size must be positive");
  if (height < crop || width < crop) {
    throw ShapeError("spatial_crops: frame " + std::to_string(height) + "x" + std::to_string(width) +
                     " is smaller than the " + std::to_string(crop) + " crop");
  }
  if (mode == SampleMode::train) {
    const std::size_t y = std::uniform_int_distribution<std::size_t>(0, height - crop)(rng);
    const std::size_t x = std::uniform_int_distribution<std::size_t>(0, width - crop)(rng);
    return {{y, x, crop}};
  }
  std::vector<CropWindow> out;
  const bool portrait = height > width;
  const std::size_t span = (portrait ? height : width) - crop;
  const std::size_t cross = ((portrait ? width : height) - crop) / 2;
  for (std::size_t off : {std::size_t{0}, span / 2, span}) {
    out.push_back(portrait ? CropWindow{off, cross, crop} : CropWindow{cross, off, crop});
  }
  return out;
}

/// Frame and crop plan from a single seeded generator.
inline SamplingPlan make_plan(std::size_t video_length, std::size_t height, std::size_t width,
                              const SamplingConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  SamplingPlan plan = plan_units(video_length, cfg, rng);
  plan.crops = spatial_crops(height, width, cfg.mode, cfg.effective_crop(), rng);
  return plan;
}

// ---- frame sources ----

/// Random-access video with frames as (C, H, W) floats in [0, 1].
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  [[nodiscard]] virtual std::size_t length() const = 0;
  [[nodiscard]] virtual std::size_t channels() const = 0;
  [[nodiscard]] virtual std::size_t height() const = 0;
  [[nodiscard]] virtual std::size_t width() const = 0;
  [[nodiscard]] virtual Tensor<float> frame(std::size_t i) const = 0;
};

/// A (C, L, H, W) tensor held in memory.
class TensorFrameSource final : public FrameSource {
 public:
  explicit TensorFrameSource(Tensor<float> video) : video_(std::move(video)) {
    if (video_.rank() != 4) throw ShapeError("video tensor must be (C, L, H, W), got " + shape_string(video_.shape()));
  }
  static TensorFrameSource load(const std::string& path) { return TensorFrameSource(load_vt01<float>(path)); }

  [[nodiscard]] std::size_t length() const override { return video_.shape()[1]; }
  [[nodiscard]] std::size_t channels() const override { return video_.shape()[0]; }
  [[nodiscard]] std::size_t height() const override { return video_.shape()[2]; }
  [[nodiscard]] std::size_t width() const override { return video_.shape()[3]; }
  [[nodiscard]] Tensor<float> frame(std::size_t i) const override {
    if (i >= length()) throw IoError("frame " + std::to_string(i) + " out of range");
    return select(video_, 1, i);
  }

 private:
  Tensor<float> video_;
};

/// Numbered image files (PNG, PPM, PGM) in lexicographic order.
class ImageDirSource final : public FrameSource {
 public:
  explicit ImageDirSource(const std::filesystem::path& dir) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) throw IoError("not a frame directory: " + dir.string());
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      std::string ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (e.is_regular_file() && (ext == ".png" || ext == ".ppm" || ext == ".pgm")) files_.push_back(e.path());
    }
    std::sort(files_.begin(), files_.end());
    if (files_.empty()) throw IoError("no PNG/PPM/PGM frames in " + dir.string());
    const Tensor<float> first = read_image(files_.front().string());
    shape_ = first.shape();
  }

  [[nodiscard]] std::size_t length() const override { return files_.size(); }
  [[nodiscard]] std::size_t channels() const override { return shape_[0]; }
  [[nodiscard]] std::size_t height() const override { return shape_[1]; }
  [[nodiscard]] std::size_t width() const override { return shape_[2]; }
  [[nodiscard]] Tensor<float> frame(std::size_t i) const override {
    if (i >= files_.size()) throw IoError("frame " + std::to_string(i) + " out of range");
    Tensor<float> f = read_image(files_[i].string());
    if (f.shape() != shape_) {
      throw IoError(files_[i].string() + " has shape " + shape_string(f.shape()) + ", expected " +
                    shape_string(shape_));
    }
    return f;
  }

 private:
  std::vector<std::filesystem::path> files_;
  Shape shape_;
};

/// A VT01 file or a directory of frames.
inline std::unique_ptr<FrameSource> open_video(const std::filesystem::path& path) {
  std::error_code ec;
  if (std::filesystem::is_directory(path, ec)) return std::make_unique<ImageDirSource>(path);
  return std::make_unique<TensorFrameSource>(TensorFrameSource::load(path.string()));
}

// ---- gathering ----

/// Per-channel (x - mean) / std; a single entry applies to every channel.
struct Normalization {
  std::vector<float> mean{0.485f, 0.456f, 0.406f};
  std::vector<float> std{0.229f, 0.224f, 0.225f};

  static Normalization identity() { return {{0.0f}, {1.0f}}; }

  void check(std::size_t channels) const {
    auto ok = [&](const std::vector<float>& v) { return v.size() == 1 || v.size() == channels; };
    if (!ok(mean) || !ok(std)) {
      throw ConfigError("normalization has " + std::to_string(mean.size()) + "/" + std::to_string(std.size()) +
                        " entries for " + std::to_string(channels) + " channels");
    }
    for (float s : std)
      if (!(s > 0)) throw ConfigError("normalization std must be positive");
  }
  [[nodiscard]] float mean_of(std::size_t c) const { return mean.size() == 1 ? mean[0] : mean[c]; }
  [[nodiscard]] float std_of(std::size_t c) const { return std.size() == 1 ? std[0] : std[c]; }

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

struct GatherOptions {
  Normalization norm;
  std::size_t short_side = 0;  // resize each frame so min(H, W) equals this; 0 keeps it
  std::size_t out_size = 0;    // resize each crop to out_size^2; 0 keeps the crop size
};

/// Bilinear resize of (C, H, W) with half-pixel centers.
inline Tensor<float> resize_bilinear(const Tensor<float>& img, std::size_t out_h, std::size_t out_w) {
  if (img.rank() != 3) throw ShapeError("resize_bilinear: expected (C, H, W)");
  const std::size_t c = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
  if (out_h == h && out_w == w) return img;
  Tensor<float> out({c, out_h, out_w});
  auto taps = [](std::size_t o, std::size_t in_n, std::size_t out_n) {
    const double src = (static_cast<double>(o) + 0.5) * static_cast<double>(in_n) / static_cast<double>(out_n) - 0.5;
    const double clamped = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
    const auto i0 = static_cast<std::size_t>(clamped);
    const std::size_t i1 = std::min(i0 + 1, in_n - 1);
    return std::tuple{i0, i1, static_cast<float>(clamped - static_cast<double>(i0))};
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto [y0, y1, fy] = taps(y, h, out_h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto [x0, x1, fx] = taps(x, w, out_w);
      for (std::size_t k = 0; k < c; ++k) {
        const float top = img.at(k, y0, x0) * (1 - fx) + img.at(k, y0, x1) * fx;
        const float bot = img.at(k, y1, x0) * (1 - fx) + img.at(k, y1, x1) * fx;
        out.at(k, y, x) = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

/// Frame extents after the short-side resize.
inline std::pair<std::size_t, std::size_t> resized_dims(std::size_t h, std::size_t w, std::size_t short_side) {
  if (short_side == 0) return {h, w};
  const double scale = static_cast<double>(short_side) / static_cast<double>(std::min(h, w));
  auto r = [&](std::size_t e) {
    return std::max<std::size_t>(short_side, static_cast<std::size_t>(std::lround(static_cast<double>(e) * scale)));
  };
  return h <= w ? std::pair{short_side, r(w)} : std::pair{r(h), short_side};
}

/// Reads the planned frames for one crop window: (C, U, T, S, S).
inline Tensor<float> gather_units(const FrameSource& src, const SamplingPlan& plan, const CropWindow& crop,
                                  const GatherOptions& opts = {}) {
  if (plan.units.empty()) throw ConfigError("gather_units: empty plan");
  const std::size_t C = src.channels(), U = plan.units.size(), T = plan.units.front().size();
  opts.norm.check(C);
  const auto [fh, fw] = resized_dims(src.height(), src.width(), opts.short_side);
  if (crop.size == 0 || crop.y + crop.size > fh || crop.x + crop.size > fw) {
    throw ShapeError("gather_units: crop window outside the " + std::to_string(fh) + "x" + std::to_string(fw) +
                     " frame");
  }
  const std::size_t S = opts.out_size ? opts.out_size : crop.size;
  Tensor<float> out({C, U, T, S, S});
  std::map<std::size_t, Tensor<float>> cache;
  for (std::size_t u = 0; u < U; ++u) {
    if (plan.units[u].size() != T) throw ConfigError("gather_units: ragged plan");
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t idx = plan.units[u][t];
      auto it = cache.find(idx);
      if (it == cache.end()) {
        if (idx >= src.length()) {
          throw IoError("gather_units: frame " + std::to_string(idx) + " beyond video length " +
                        std::to_string(src.length()));
        }
        Tensor<float> f = resize_bilinear(src.frame(idx), fh, fw);
        Tensor<float> win({C, crop.size, crop.size});
        for (std::size_t k = 0; k < C; ++k)
          for (std::size_t y = 0; y < crop.size; ++y)
            for (std::size_t x = 0; x < crop.size; ++x) win.at(k, y, x) = f.at(k, crop.y + y, crop.x + x);
        win = resize_bilinear(win, S, S);
        for (std::size_t k = 0; k < C; ++k) {
          const float m = opts.norm.mean_of(k), s = opts.norm.std_of(k);
          for (std::size_t i = 0; i < S * S; ++i) win[k * S * S + i] = (win[k * S * S + i] - m) / s;
        }
        it = cache.emplace(idx, std::move(win)).first;
      }
      for (std::size_t k = 0; k < C; ++k)
        std::copy_n(it->second.ptr() + k * S * S, S * S, &out.at(k, u, t, 0, 0));
    }
  }
  return out;
}

/// All crops of a plan stacked as a batch: (crops, C, U, T, S, S).
inline Tensor<float> gather_video(const FrameSource& src, const SamplingPlan& plan, const GatherOptions& opts = {}) {
  if (plan.crops.empty()) throw ConfigError("gather_video: plan has no crop windows");
  std::vector<Tensor<float>> parts;
  for (const auto& c : plan.crops) parts.push_back(gather_units(src, plan, c, opts));
  return stack(std::span<const Tensor<float>>(parts));
}

// ---- JSON ----

inline void to_json(nlohmann::json& j, const SamplingConfig& c) {
  j = {{"units", c.units},          {"clip_len", c.clip_len}, {"frames_per_unit", c.frames_per_unit},
       {"frame_stride", c.frame_stride}, {"mode", c.mode},    {"seed", c.seed},
       {"crop_size", c.crop_size}};
}

inline void from_json(const nlohmann::json& j, SamplingConfig& c) {
  try {
    c = SamplingConfig{};
    c.units = j.value("units", c.units);
    c.clip_len = j.value("clip_len", c.clip_len);
    c.frames_per_unit = j.value("frames_per_unit", c.frames_per_unit);
    c.frame_stride = j.value("frame_stride", c.frame_stride);
    c.mode = j.value("mode", c.mode);
    c.seed = j.value("seed", c.seed);
    c.crop_size = j.value("crop_size", c.crop_size);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sampling config: ") + e.what());
  }
  c.validate();
}

inline void to_json(nlohmann::json& j, const Normalization& n) { j = {{"mean", n.mean}, {"std", n.std}}; }

inline void from_json(const nlohmann::json& j, Normalization& n) {
  try {
    n = Normalization{};
    n.mean = j.value("mean", n.mean);
    n.std = j.value("std", n.std);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("normalization: ") + e.what());
  }
}

inline void to_json(nlohmann::json& j, const SamplingPlan& p) {
  j = nlohmann::json{{"schema", "v4d.sampling_plan/1"}, {"mode", p.mode}, {"video_length", p.video_length}};
  for (const auto& s : p.sections) j["sections"].push_back({s.begin, s.end});
  j["units"] = p.units;
  j["crops"] = nlohmann::json::array();
  for (const auto& c : p.crops) j["crops"].push_back({{"y", c.y}, {"x", c.x}, {"size", c.size}});
}

inline void from_json(const nlohmann::json& j, SamplingPlan& p) {
  try {
    p = SamplingPlan{};
    p.mode = j.at("mode").get<SampleMode>();
    p.video_length = j.at("video_length").get<std::size_t>();
    for (const auto& s : j.at("sections")) p.sections.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
    p.units = j.at("units").get<std::vector<std::vector<std::size_t>>>();
    for (const auto& c : j.at("crops")) {
      p.crops.push_back({c.at("y").get<std::size_t>(), c.at("x").get<std::size_t>(), c.at("size").get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sampling plan: ") + e.what());
  }
}

}  // namespace v4d
