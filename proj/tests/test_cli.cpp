// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// Runs the v4d binary end to end; V4D_CLI is its path.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_util.hpp"
#include "v4d/checkpoint.hpp"
#include "v4d/inference.hpp"
#include "v4d/sampling.hpp"
#include "v4d/tensor_io.hpp"
#include "v4d/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using v4d::Tensor;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("v4d_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }

  // Exit status of `v4d <args>`, run inside the scratch directory.
  int run(const std::string& args) const {
    const std::string cmd = "cd '" + dir_.string() + "' && '" V4D_CLI "' " + args + " > log.txt 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  }

  std::string read(const std::string& rel) const {
    std::ifstream in(dir_ / rel, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }

  json read_json(const std::string& rel) const { return json::parse(read(rel)); }

  // A (C, L, H, W) random video on disk.
  void write_video(const std::string& rel, std::size_t c, std::size_t l, std::size_t h, std::size_t w) const {
    std::mt19937_64 rng(3);
    v4d::save_vt01((dir_ / rel).string(), v4d::testing::random_tensor<float>({c, l, h, w}, rng, 0.5));
  }

  // Small order-task-shaped V4D checkpoint (1 channel, 4 units).
  v4d::Network<float> write_checkpoint(const std::string& rel, bool zero_blocks) const {
    v4d::NetworkSpec s;
    s.width = 4;
    s.units = 4;
    s.in_channels = 1;
    s.num_classes = 3;
    s.blocks = {1, 1, 1, 0};
    s.insertions = {{3, 0, {3, 3, 1, 1}}};
    v4d::Network<float> net(s, 5);
    std::mt19937_64 rng(4);
    if (!zero_blocks) {
      for (auto* b : net.blocks_4d()) b->conv().weights = v4d::testing::random_tensor<float>(b->conv().weights.shape(), rng, 0.2);
    }
    v4d::save_checkpoint(dir_ / rel, net);
    return net;
  }

  fs::path dir_;
};

constexpr const char* kSmallInfer = "--video vid.vt01 --normalization identity --crop-size 16";

}  // namespace

TEST_F(Cli, ReportMatchesPublishedParameterCount) {
  ASSERT_EQ(run("report --network v4d-r18 --out r.json"), 0);
  const auto r = read_json("r.json");
  EXPECT_EQ(r["schema"], "v4d.report/1");
  EXPECT_NEAR(r["params"].get<double>() / 33.1e6, 1.0, 0.03);
  EXPECT_EQ(r["flops"].get<std::uint64_t>(), 2 * r["macs"].get<std::uint64_t>());
}

TEST_F(Cli, EquivPassesAndWritesTable) {
  ASSERT_EQ(run("equiv --cases 30 --out e.json"), 0);
  const auto e = read_json("e.json");
  EXPECT_TRUE(e["passed"].get<bool>());
  EXPECT_LT(e["rows"][0]["max_error"].get<double>(), 1e-10);
  EXPECT_NE(read("log.txt").find("conv4d direct vs decomposed (f64)"), std::string::npos);
}

TEST_F(Cli, InferCombinationsAndProbabilities) {
  write_checkpoint("ck", false);
  write_video("vid.vt01", 1, 80, 18, 24);
  ASSERT_EQ(run(std::string("--deterministic infer --checkpoint ck --units-infer 8 ") + kSmallInfer + " --out a"), 0);
  const auto p = read_json("a/prediction.json");
  EXPECT_EQ(p["schema"], "v4d.prediction/1");
  EXPECT_EQ(p["combinations_used"], 16);
  EXPECT_EQ(p["crops_used"], 3);
  EXPECT_TRUE(p["timing"].is_null());
  double sum = 0;
  for (double v : p["class_probs"]) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-6);
  EXPECT_EQ(p["top5"].size(), 3u);

  // bit-for-bit under --deterministic, both direct and from the written config
  ASSERT_EQ(run(std::string("--deterministic infer --checkpoint ck --units-infer 8 ") + kSmallInfer + " --out b"), 0);
  EXPECT_EQ(read("a/prediction.json"), read("b/prediction.json"));
  ASSERT_EQ(run("--deterministic infer --config a/run_config.json --out c"), 0);
  EXPECT_EQ(read("a/prediction.json"), read("c/prediction.json"));

  ASSERT_EQ(run(std::string("infer --checkpoint ck --units-infer 8 --crops 1 ") + kSmallInfer + " --out d"), 0);
  EXPECT_EQ(read_json("d/prediction.json")["crops_used"], 1);
  EXPECT_TRUE(read_json("d/prediction.json")["timing"].contains("seconds"));
}

TEST_F(Cli, ZeroBlockCheckpointMatchesTsnBaseline) {
  write_checkpoint("ck", true);
  write_video("vid.vt01", 1, 80, 18, 24);
  ASSERT_EQ(run(std::string("--deterministic infer --checkpoint ck --units-infer 8 ") + kSmallInfer + " --out v"), 0);
  ASSERT_EQ(run(std::string("--deterministic infer --checkpoint ck --units-infer 8 --tsn-baseline ") + kSmallInfer +
                " --out t"),
            0);
  const auto v = read_json("v/prediction.json")["class_probs"], t = read_json("t/prediction.json")["class_probs"];
  ASSERT_EQ(v.size(), t.size());
  for (std::size_t k = 0; k < v.size(); ++k) EXPECT_NEAR(v[k].get<double>(), t[k].get<double>(), 1e-6);
}

TEST_F(Cli, CamWithOneHotClassifierEqualsChannel) {
  auto net = write_checkpoint("ck", false);
  // one-hot classifier row for class 1 on channel 2
  auto ck = v4d::load_checkpoint<float>(dir_ / "ck");
  for (auto& [name, t] : ck.state) {
    if (name.starts_with("fc.") && t.rank() == 2) {
      t.fill(0.0f);
      t.at(1, 2) = 1.0f;
    }
  }
  ASSERT_EQ(net.load_state(ck.state, true), ck.state.size());
  v4d::save_checkpoint(dir_ / "ck", net);
  write_video("vid.vt01", 1, 40, 16, 16);
  ASSERT_EQ(run(std::string("cam --checkpoint ck --class 1 --png ") + kSmallInfer + " --out cam"), 0) << read("log.txt");
  const auto meta = read_json("cam/cam.json");
  EXPECT_EQ(meta["schema"], "v4d.cam_run/1");
  EXPECT_EQ(meta["class"], 1);
  EXPECT_TRUE(fs::exists(dir_ / "cam" / "cam_u3_t3.png"));

  // Same sampling in-process: crop (0, 0, 16) of a 16x16 video.
  v4d::SamplingConfig cfg;
  cfg.units = 4;
  cfg.mode = v4d::SampleMode::test;
  cfg.crop_size = 16;
  const v4d::TensorFrameSource src(v4d::load_vt01<float>((dir_ / "vid.vt01").string()));
  auto plan = v4d::make_plan(src.length(), 16, 16, cfg);
  v4d::GatherOptions g;
  g.norm = v4d::Normalization::identity();
  const auto x = v4d::gather_units(src, plan, plan.crops[1], g);
  net.forward(x.reshaped({1, 1, 4, 4, 16, 16}), v4d::Mode::eval);
  const auto channel = v4d::select(v4d::cam_features(net, 4), 0, 2);  // (U, T, H, W)

  std::istringstream csv(read("cam/cam_raw_u0.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line.rfind("# v4d.cam/1 raw u=0", 0), 0u);
  const std::size_t hw = channel.shape()[2] * channel.shape()[3];
  for (std::size_t t = 0; t < channel.shape()[1]; ++t) {
    ASSERT_TRUE(std::getline(csv, line));
    std::istringstream row(line);
    std::string cell;
    for (std::size_t i = 0; i < hw; ++i) {
      ASSERT_TRUE(std::getline(row, cell, ','));
      EXPECT_NEAR(std::stod(cell), channel[t * hw + i], 1e-6);
    }
  }
}

TEST_F(Cli, TrainIsByteDeterministicAndLrZeroIsFlat) {
  const std::string args = "--deterministic train --task order --preset desk --epochs 2 --train-size 48 --test-size 16";
  ASSERT_EQ(run(args + " --out a"), 0);
  ASSERT_EQ(run(args + " --out b"), 0);
  EXPECT_EQ(read("a/metrics.jsonl"), read("b/metrics.jsonl"));
  ASSERT_EQ(run("--deterministic train --config a/run_config.json --out c"), 0);
  EXPECT_EQ(read("a/metrics.jsonl"), read("c/metrics.jsonl"));
  EXPECT_TRUE(fs::exists(dir_ / "a" / "checkpoint" / "manifest.json"));

  ASSERT_EQ(run("train --task order --lr 0 --epochs 3 --train-size 32 --test-size 8 --batch-size 32 --out z"), 0);
  std::istringstream lines(read("z/metrics.jsonl"));
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(json::parse(line)["schema"], "v4d.metrics/1");
  std::vector<double> losses;
  while (std::getline(lines, line)) losses.push_back(json::parse(line)["train_loss"].get<double>());
  ASSERT_EQ(losses.size(), 3u);
  EXPECT_NEAR(losses[0], losses[2], 1e-6);
}

TEST_F(Cli, StagedTrainOnOrderTaskWritesAccuracy) {
  ASSERT_EQ(run("stagedtrain --task order --preset desk --epochs 1 --train-size 48 --test-size 16 --out s"), 0);
  const auto s = read_json("s/summary.json");
  EXPECT_TRUE(s.contains("final_eval_acc"));
  EXPECT_TRUE(s.contains("stage2_eval_acc"));
  for (const char* st : {"stage1", "stage2", "stage3"}) EXPECT_TRUE(fs::exists(dir_ / "s" / st / "manifest.json"));
  EXPECT_EQ(read_json("s/run_config.json")["command"], "stagedtrain");
}

TEST_F(Cli, MakeOrderTaskRoundTrips) {
  ASSERT_EQ(run("make-order-task --train-size 10 --test-size 4 --seed 2 --out t"), 0);
  const auto d = v4d::load_dataset<float>(dir_ / "t" / "train");
  EXPECT_EQ(d.size(), 10u);
  EXPECT_EQ(d.inputs.shape(), (v4d::Shape{10, 1, 4, 4, 16, 16}));
  ASSERT_EQ(run("train --task data --train-data t/train --eval-data t/test --network ck.json --out x"), 4);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("no-such-command"), 2);
  EXPECT_EQ(run("report --network v4d-r99"), 2);
  EXPECT_EQ(run("train --lr -1"), 2);
  EXPECT_EQ(run("infer --checkpoint missing --video v.vt01"), 4);
  write_checkpoint("ck", true);
  write_video("vid.vt01", 3, 40, 16, 16);
  EXPECT_EQ(run(std::string("infer --checkpoint ck ") + kSmallInfer), 3);  // 3-channel video, 1-channel net
  EXPECT_EQ(run("train --config missing.json"), 4);
  std::ofstream(dir_ / "bad.json") << "{";
  EXPECT_EQ(run("train --config bad.json"), 2);
  EXPECT_EQ(run("train --task order --lr 1e30 --epochs 1 --train-size 16 --test-size 4 --out n"), 5);
}
