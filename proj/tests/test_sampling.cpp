// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>

#include "test_util.hpp"
#include "v4d/sampling.hpp"

using v4d::SampleMode;
using v4d::SamplingConfig;
using v4d::Shape;
using v4d::Tensor;

namespace {

SamplingConfig cfg(std::size_t units, SampleMode mode, std::uint64_t seed = 0) {
  SamplingConfig c;
  c.units = units;
  c.mode = mode;
  c.seed = seed;
  return c;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("v4d_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(Sections, NearEqualPartition) {
  for (std::size_t L : {1u, 4u, 7u, 100u, 301u})
    for (std::size_t U : {1u, 2u, 3u, 4u, 10u}) {
      const auto secs = v4d::split_sections(L, U);
      ASSERT_EQ(secs.size(), U);
      EXPECT_EQ(secs.front().begin, 0u);
      EXPECT_EQ(secs.back().end, L);
      std::size_t lo = L, hi = 0;
      for (std::size_t i = 0; i < U; ++i) {
        if (i) {
          EXPECT_EQ(secs[i].begin, secs[i - 1].end);
        }
        lo = std::min(lo, secs[i].size());
        hi = std::max(hi, secs[i].size());
      }
      EXPECT_LE(hi - lo, 1u);
    }
  const auto s = v4d::split_sections(10, 4);
  EXPECT_EQ(s[0], (v4d::Section{0, 3}));
  EXPECT_EQ(s[1], (v4d::Section{3, 6}));
  EXPECT_EQ(s[2], (v4d::Section{6, 8}));
}

TEST(PlanUnits, TestModeCentersClip) {
  const auto plan = v4d::plan_units(300, cfg(4, SampleMode::test));
  ASSERT_EQ(plan.units.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(plan.sections[i], (v4d::Section{75 * i, 75 * (i + 1)}));
    EXPECT_EQ(plan.units[i], (std::vector<std::size_t>{75 * i + 21, 75 * i + 29, 75 * i + 37, 75 * i + 45}));
  }
}

TEST(PlanUnits, ShortVideoClamps) {
  const auto plan = v4d::plan_units(4, cfg(1, SampleMode::test));
  EXPECT_EQ(plan.units[0], (std::vector<std::size_t>{0, 3, 3, 3}));
  const auto tiny = v4d::plan_units(2, cfg(4, SampleMode::test));
  for (const auto& u : tiny.units)
    for (std::size_t f : u) EXPECT_LT(f, 2u);
}

TEST(PlanUnits, SingleUnitCoversVideo) {
  const auto plan = v4d::plan_units(500, cfg(1, SampleMode::test));
  EXPECT_EQ(plan.sections[0], (v4d::Section{0, 500}));
}

TEST(PlanUnits, TrainModeStaysInSection) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const std::size_t L = 20 + seed * 7 % 400;
    const auto plan = v4d::plan_units(L, cfg(4, SampleMode::train, seed));
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& sec = plan.sections[i];
      const auto& u = plan.units[i];
      for (std::size_t k = 0; k < u.size(); ++k) {
        EXPECT_GE(u[k], sec.begin);
        EXPECT_LT(u[k], sec.end);
        if (k) {
          EXPECT_GE(u[k], u[k - 1]);
        }
      }
    }
  }
}

TEST(PlanUnits, SeededDeterminism) {
  EXPECT_EQ(v4d::plan_units(1000, cfg(8, SampleMode::train, 7)), v4d::plan_units(1000, cfg(8, SampleMode::train, 7)));
  EXPECT_NE(v4d::plan_units(1000, cfg(8, SampleMode::train, 7)), v4d::plan_units(1000, cfg(8, SampleMode::train, 8)));
}

TEST(PlanUnits, Errors) {
  EXPECT_THROW(v4d::plan_units(0, cfg(4, SampleMode::test)), v4d::ConfigError);
  EXPECT_THROW(v4d::plan_units(10, cfg(0, SampleMode::test)), v4d::ConfigError);
  SamplingConfig c = cfg(2, SampleMode::test);
  c.clip_len = 24;  // (4 - 1) * 8 = 24 does not fit
  EXPECT_THROW(c.validate(), v4d::ConfigError);
}

TEST(SpatialCrops, TestModeThreeCrops) {
  std::mt19937_64 rng(0);
  const auto c = v4d::spatial_crops(256, 454, SampleMode::test, 256, rng);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[0], (v4d::CropWindow{0, 0, 256}));
  EXPECT_EQ(c[1], (v4d::CropWindow{0, 99, 256}));
  EXPECT_EQ(c[2], (v4d::CropWindow{0, 198, 256}));
  const auto sq = v4d::spatial_crops(256, 256, SampleMode::test, 256, rng);
  EXPECT_EQ(sq[0], sq[1]);
  EXPECT_EQ(sq[1], sq[2]);
  const auto portrait = v4d::spatial_crops(454, 256, SampleMode::test, 256, rng);
  EXPECT_EQ(portrait[2], (v4d::CropWindow{198, 0, 256}));
  EXPECT_THROW(v4d::spatial_crops(200, 454, SampleMode::test, 256, rng), v4d::ShapeError);
}

TEST(SpatialCrops, TrainCropsInsideFrame) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10000; ++i) {
    const auto c = v4d::spatial_crops(256, 320, SampleMode::train, 224, rng);
    ASSERT_EQ(c.size(), 1u);
    ASSERT_LE(c[0].y + 224, 256u);
    ASSERT_LE(c[0].x + 224, 320u);
  }
}

TEST(Gather, IdentityPlanOnOnePixelVideo) {
  Tensor<float> video({3, 5, 1, 1});
  for (std::size_t i = 0; i < video.size(); ++i) video[i] = 0.1f * static_cast<float>(i);
  v4d::TensorFrameSource src(video);
  v4d::SamplingPlan plan;
  plan.units = {{0, 1}, {2, 3}};
  v4d::GatherOptions opts;
  const auto out = v4d::gather_units(src, plan, {0, 0, 1}, opts);
  EXPECT_EQ(out.shape(), (Shape{3, 2, 2, 1, 1}));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t u = 0; u < 2; ++u)
      for (std::size_t t = 0; t < 2; ++t) {
        const float raw = video.at(c, 2 * u + t, 0, 0);
        EXPECT_FLOAT_EQ(out.at(c, u, t, 0, 0), (raw - opts.norm.mean[c]) / opts.norm.std[c]);
      }
  EXPECT_EQ(v4d::gather_units(src, plan, {0, 0, 1}, opts), out);
}

TEST(Gather, CropAndResize) {
  Tensor<float> video({1, 2, 4, 6});
  for (std::size_t i = 0; i < video.size(); ++i) video[i] = static_cast<float>(i % 24);
  v4d::TensorFrameSource src(video);
  v4d::SamplingPlan plan;
  plan.units = {{1}};
  v4d::GatherOptions opts;
  opts.norm = v4d::Normalization::identity();
  const auto out = v4d::gather_units(src, plan, {1, 2, 2}, opts);
  EXPECT_EQ(out.at(0, 0, 0, 0, 0), video.at(0, 1, 1, 2));
  EXPECT_EQ(out.at(0, 0, 0, 1, 1), video.at(0, 1, 2, 3));
  opts.out_size = 4;
  const auto up = v4d::gather_units(src, plan, {0, 0, 4}, opts);
  EXPECT_EQ(up.shape(), (Shape{1, 1, 1, 4, 4}));
  EXPECT_THROW(v4d::gather_units(src, plan, {1, 3, 4}, opts), v4d::ShapeError);
  plan.units = {{9}};
  EXPECT_THROW(v4d::gather_units(src, plan, {0, 0, 2}, opts), v4d::IoError);
}

TEST(Resize, ConstantStaysConstantAndDims) {
  const Tensor<float> img({2, 5, 7}, 0.25f);
  const auto r = v4d::resize_bilinear(img, 9, 3);
  for (float v : r.data()) EXPECT_FLOAT_EQ(v, 0.25f);
  EXPECT_EQ(v4d::resized_dims(240, 320, 256), (std::pair<std::size_t, std::size_t>{256, 341}));
  EXPECT_EQ(v4d::resized_dims(320, 240, 256), (std::pair<std::size_t, std::size_t>{341, 256}));
}

TEST(ImageDir, ReadsPnmAndPngFramesInOrder) {
  const auto dir = scratch_dir("frames");
  for (int i = 0; i < 3; ++i) {
    Tensor<float> f({3, 4, 5}, static_cast<float>(i) / 4.0f);
    v4d::write_pnm((dir / ("frame_" + std::to_string(i) + ".ppm")).string(), f);
  }
  v4d::ImageDirSource src(dir);
  EXPECT_EQ(src.length(), 3u);
  EXPECT_EQ(src.channels(), 3u);
  EXPECT_EQ(src.height(), 4u);
  EXPECT_NEAR(src.frame(2).at(1, 3, 4), 0.5f, 1.0 / 255);

  const auto gdir = scratch_dir("png");
  Tensor<float> g({3, 2});
  g.at(1, 1) = 1.0f;
  v4d::write_png_gray((gdir / "a.png").string(), g);
  const auto back = v4d::read_png((gdir / "a.png").string());
  EXPECT_EQ(back.shape(), (Shape{1, 3, 2}));
  EXPECT_EQ(back.at(0, 1, 1), 1.0f);
  EXPECT_EQ(back.at(0, 0, 0), 0.0f);
  EXPECT_THROW(v4d::ImageDirSource(scratch_dir("empty")), v4d::IoError);
  EXPECT_THROW(v4d::read_image((gdir / "missing.png").string()), v4d::IoError);
}

TEST(PlanJson, RoundTrip) {
  auto c = cfg(4, SampleMode::train, 3);
  const auto plan = v4d::make_plan(300, 256, 320, c);
  EXPECT_EQ(plan.crops.size(), 1u);
  const nlohmann::json j = plan;
  EXPECT_EQ(j.get<v4d::SamplingPlan>(), plan);
  const nlohmann::json jc = c;
  EXPECT_EQ(jc.get<SamplingConfig>(), c);
  EXPECT_THROW(nlohmann::json::parse(R"({"units": 0})").get<SamplingConfig>(), v4d::ConfigError);
}
