// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// SGD with momentum, step learning-rate schedule, the training loop and the
// three-stage protocol (backbone, frozen-zero 4D blocks, everything).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "v4d/checkpoint.hpp"
#include "v4d/network.hpp"
#include "v4d/ops/linear.hpp"

namespace v4d {

template <typename T>
struct OptimizerState {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  std::map<std::string, Tensor<T>> velocity;
};

/// v = momentum * v + grad + weight_decay * param; param -= lr * v.
/// Parameters without `decay` skip the decay term; `freeze_4d` withholds
/// updates (and velocity changes) from 4D-block parameters.
template <typename T>
void sgd_step(const std::vector<ParamRef<T>>& params, OptimizerState<T>& st, bool freeze_4d = false) {
  if (!(st.lr >= 0) || !(st.momentum >= 0)) throw ConfigError("sgd: lr and momentum must be non-negative");
  for (const auto& p : params) {
    if (p.grad->shape() != p.value->shape()) throw ShapeError("sgd: gradient shape mismatch for " + p.name);
    for (T g : p.grad->data()) {
      if (!std::isfinite(static_cast<double>(g))) throw TrainingError("non-finite gradient in " + p.name);
    }
  }
  for (const auto& p : params) {
    if (freeze_4d && p.is_4d) continue;
    auto [it, fresh] = st.velocity.try_emplace(p.name);
    if (fresh) it->second = Tensor<T>(p.value->shape());
    Tensor<T>& v = it->second;
    if (v.shape() != p.value->shape()) throw ShapeError("sgd: velocity shape mismatch for " + p.name);
    const T m = static_cast<T>(st.momentum), lr = static_cast<T>(st.lr);
    const T wd = p.decay ? static_cast<T>(st.weight_decay) : T{0};
    T* w = p.value->ptr();
    const T* g = p.grad->ptr();
    T* vel = v.ptr();
    for (std::size_t i = 0; i < v.size(); ++i) {
      vel[i] = m * vel[i] + g[i] + wd * w[i];
      w[i] -= lr * vel[i];
    }
  }
}

template <typename T>
void save_optimizer(const std::filesystem::path& dir, const OptimizerState<T>& st) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [name, v] : st.velocity) detail::write_tensor_dir(dir, "velocity", list, name, v);
  write_json_file(dir / "optimizer.json", {{"schema", "v4d.optimizer/1"},
                                          {"lr", st.lr},
                                          {"momentum", st.momentum},
                                          {"weight_decay", st.weight_decay},
                                          {"velocity", list}});
}

template <typename T>
OptimizerState<T> load_optimizer(const std::filesystem::path& dir) {
  const nlohmann::json j = read_json_file(dir / "optimizer.json");
  OptimizerState<T> st;
  try {
    st.lr = j.at("lr").get<double>();
    st.momentum = j.at("momentum").get<double>();
    st.weight_decay = j.at("weight_decay").get<double>();
    for (const auto& e : j.at("velocity")) {
      st.velocity.emplace(e.at("name").get<std::string>(), load_vt01<T>(dir / e.at("file").get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(dir.string() + "/optimizer.json: " + e.what());
  }
  return st;
}

struct TrainSchedule {
  std::size_t total_epochs = 60;
  std::vector<std::size_t> lr_drop_epochs{30, 45};
  double drop_factor = 0.1;

  void validate() const {
    if (total_epochs < 1) throw ConfigError("schedule: total_epochs must be >= 1");
    for (std::size_t i = 0; i < lr_drop_epochs.size(); ++i) {
      if (lr_drop_epochs[i] >= total_epochs || (i && lr_drop_epochs[i] <= lr_drop_epochs[i - 1])) {
        throw ConfigError("schedule: drop epochs must be strictly increasing and < total_epochs");
      }
    }
    if (!(drop_factor > 0)) throw ConfigError("schedule: drop_factor must be positive");
  }

  /// Learning rate for 0-based `epoch`.
  [[nodiscard]] double lr_at(double base_lr, std::size_t epoch) const {
    double lr = base_lr;
    for (std::size_t d : lr_drop_epochs)
      if (epoch >= d) lr *= drop_factor;
    return lr;
  }

  static TrainSchedule paper() { return {100, {35, 60, 80}, 0.1}; }
  static TrainSchedule desk() { return {60, {30, 45}, 0.1}; }

  friend bool operator==(const TrainSchedule&, const TrainSchedule&) = default;
};

inline void to_json(nlohmann::json& j, const TrainSchedule& s) {
  j = {{"total_epochs", s.total_epochs}, {"lr_drop_epochs", s.lr_drop_epochs}, {"drop_factor", s.drop_factor}};
}

inline void from_json(const nlohmann::json& j, TrainSchedule& s) {
  try {
    if (j.is_string()) {
      const auto name = j.get<std::string>();
      if (name == "paper") {
        s = TrainSchedule::paper();
      } else if (name == "desk") {
        s = TrainSchedule::desk();
      } else {
        throw ConfigError("unknown schedule '" + name + "'");
      }
      return;
    }
    s = TrainSchedule{};
    s.total_epochs = j.value("total_epochs", s.total_epochs);
    s.lr_drop_epochs = j.value("lr_drop_epochs", s.lr_drop_epochs);
    s.drop_factor = j.value("drop_factor", s.drop_factor);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
  s.validate();
}

/// Samples stored contiguously as (S, C, U, T, H, W) with integer labels.
template <typename T>
struct Dataset {
  Tensor<T> inputs;
  std::vector<int> labels;

  [[nodiscard]] std::size_t size() const { return labels.size(); }

  void check() const {
    if (inputs.rank() != 6 || inputs.shape()[0] != labels.size()) {
      throw ShapeError("dataset: inputs " + shape_string(inputs.shape()) + " do not match " +
                       std::to_string(labels.size()) + " labels");
    }
  }

  [[nodiscard]] Tensor<T> batch(std::span<const std::size_t> idx) const {
    Shape s = inputs.shape();
    const std::size_t per = inputs.size() / s[0];
    s[0] = idx.size();
    Tensor<T> out(s);
    for (std::size_t k = 0; k < idx.size(); ++k) std::copy_n(inputs.ptr() + idx[k] * per, per, out.ptr() + k * per);
    return out;
  }
};

/// Dataset directory: inputs.vt01 plus labels.json.
template <typename T>
void save_dataset(const std::filesystem::path& dir, const Dataset<T>& d) {
  d.check();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  save_vt01(dir / "inputs.vt01", d.inputs);
  write_json_file(dir / "labels.json", {{"schema", "v4d.labels/1"}, {"labels", d.labels}});
}

template <typename T>
Dataset<T> load_dataset(const std::filesystem::path& dir) {
  Dataset<T> d;
  d.inputs = load_vt01<T>(dir / "inputs.vt01");
  const nlohmann::json j = read_json_file(dir / "labels.json");
  try {
    d.labels = j.at("labels").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError((dir / "labels.json").string() + ": " + e.what());
  }
  d.check();
  return d;
}

/// Reverses the unit axis of (N, C, U, T, H, W).
template <typename T>
Tensor<T> reverse_units(const Tensor<T>& x) {
  if (x.rank() != 6) throw ShapeError("reverse_units: expected (N, C, U, T, H, W)");
  const Shape& s = x.shape();
  const std::size_t inner = s[3] * s[4] * s[5];
  Tensor<T> out(s);
  for (std::size_t nc = 0; nc < s[0] * s[1]; ++nc)
    for (std::size_t u = 0; u < s[2]; ++u)
      std::copy_n(x.ptr() + (nc * s[2] + u) * inner, inner, out.ptr() + (nc * s[2] + (s[2] - 1 - u)) * inner);
  return out;
}

/// Every unit of every video as its own single-unit clip with the video label.
template <typename T>
Dataset<T> unit_clips(const Dataset<T>& d) {
  d.check();
  const Shape& s = d.inputs.shape();
  Dataset<T> out;
  out.inputs = Tensor<T>({s[0] * s[2], s[1], 1, s[3], s[4], s[5]});
  const std::size_t inner = s[3] * s[4] * s[5];
  for (std::size_t n = 0; n < s[0]; ++n)
    for (std::size_t u = 0; u < s[2]; ++u) {
      for (std::size_t c = 0; c < s[1]; ++c) {
        std::copy_n(d.inputs.ptr() + ((n * s[1] + c) * s[2] + u) * inner, inner,
                    out.inputs.ptr() + ((n * s[2] + u) * s[1] + c) * inner);
      }
      out.labels.push_back(d.labels[n]);
    }
  return out;
}

struct TrainConfig {
  TrainSchedule schedule = TrainSchedule::desk();
  std::size_t batch_size = 8;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  std::uint64_t seed = 0;
  bool freeze_4d = false;
  std::string stage = "train";

  void validate() const {
    schedule.validate();
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(lr >= 0) || !(momentum >= 0) || !(weight_decay >= 0)) {
      throw ConfigError("train: lr, momentum and weight_decay must be non-negative");
    }
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"schedule", c.schedule}, {"batch_size", c.batch_size}, {"lr", c.lr},         {"momentum", c.momentum},
       {"weight_decay", c.weight_decay}, {"seed", c.seed},     {"freeze_4d", c.freeze_4d}, {"stage", c.stage}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  try {
    c = TrainConfig{};
    if (j.contains("schedule")) c.schedule = j.at("schedule").get<TrainSchedule>();
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    c.freeze_4d = j.value("freeze_4d", c.freeze_4d);
    c.stage = j.value("stage", c.stage);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
}

struct EpochMetrics {
  std::string stage;
  std::size_t epoch = 0;  // 1-based
  double lr = 0;
  double train_loss = 0;
  double train_acc = 0;
  std::optional<double> eval_acc;
};

inline nlohmann::json to_json_line(const EpochMetrics& m) {
  nlohmann::json j = {{"stage", m.stage},           {"epoch", m.epoch},         {"lr", m.lr},
                      {"train_loss", m.train_loss}, {"train_acc", m.train_acc}};
  if (m.eval_acc) j["eval_acc"] = *m.eval_acc;
  return j;
}

/// Fraction of correct argmax predictions in eval mode.
template <typename T>
double evaluate(Network<T>& net, const Dataset<T>& data, std::size_t batch_size = 32, bool reversed = false) {
  data.check();
  if (data.size() == 0) throw ConfigError("evaluate: empty dataset");
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t b0 = 0; b0 < data.size(); b0 += batch_size) {
    idx.resize(std::min(batch_size, data.size() - b0));
    std::iota(idx.begin(), idx.end(), b0);
    Tensor<T> x = data.batch(idx);
    if (reversed) x = reverse_units(x);
    const Tensor<T> logits = net.forward(x, Mode::eval);
    const std::size_t k = logits.shape()[1];
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const T* row = logits.ptr() + r * k;
      const auto pred = static_cast<int>(std::max_element(row, row + k) - row);
      correct += pred == data.labels[idx[r]] ? 1 : 0;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

struct TrainIo {
  std::ostream* metrics = nullptr;          // JSON lines, one per epoch
  std::filesystem::path checkpoint_dir;     // rewritten after every good epoch when set
};

/// Mini-batch SGD over `cfg.schedule.total_epochs` epochs with a seeded
/// per-epoch shuffle. A non-finite loss or gradient restores the parameters
/// of the last completed epoch and throws TrainingError.
template <typename T>
std::vector<EpochMetrics> train_loop(Network<T>& net, const Dataset<T>& train,
                                     const std::type_identity_t<Dataset<T>>* eval,
                                     const TrainConfig& cfg, OptimizerState<T>& opt, const TrainIo& io = {}) {
  cfg.validate();
  train.check();
  if (train.size() == 0) throw ConfigError("train: empty dataset");
  if (train.inputs.shape()[1] != net.spec().in_channels) {
    throw ShapeError("train: dataset has " + std::to_string(train.inputs.shape()[1]) + " channels, network expects " +
                     std::to_string(net.spec().in_channels));
  }
  opt.momentum = cfg.momentum;
  opt.weight_decay = cfg.weight_decay;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochMetrics> history;
  const auto params = net.parameters();

  for (std::size_t epoch = 0; epoch < cfg.schedule.total_epochs; ++epoch) {
    const auto good_state = net.state();
    const auto good_velocity = opt.velocity;
    opt.lr = cfg.schedule.lr_at(cfg.lr, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t correct = 0;
    try {
      for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
        const std::span<const std::size_t> idx(order.data() + b0, std::min(cfg.batch_size, order.size() - b0));
        std::vector<int> labels(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) labels[k] = train.labels[idx[k]];
        net.zero_grad();
        const Tensor<T> logits = net.forward(train.batch(idx), Mode::train);
        const auto res = ops::softmax_cross_entropy(logits, labels);
        if (!std::isfinite(static_cast<double>(res.loss))) {
          throw TrainingError("loss became non-finite at epoch " + std::to_string(epoch + 1));
        }
        net.backward(res.grad_logits);
        sgd_step(params, opt, cfg.freeze_4d);
        loss_sum += static_cast<double>(res.loss) * static_cast<double>(idx.size());
        const std::size_t k = logits.shape()[1];
        for (std::size_t r = 0; r < idx.size(); ++r) {
          const T* row = logits.ptr() + r * k;
          correct += (std::max_element(row, row + k) - row) == labels[r] ? 1 : 0;
        }
      }
    } catch (const TrainingError&) {
      net.load_state(good_state, true);
      opt.velocity = good_velocity;
      throw;
    }
    EpochMetrics m{cfg.stage, epoch + 1, opt.lr, loss_sum / static_cast<double>(train.size()),
                   static_cast<double>(correct) / static_cast<double>(train.size()), std::nullopt};
    if (eval) m.eval_acc = evaluate(net, *eval);
    if (io.metrics) {
      *io.metrics << to_json_line(m).dump() << "\n";
      io.metrics->flush();
    }
    if (!io.checkpoint_dir.empty()) {
      save_checkpoint(io.checkpoint_dir, net, {{"stage", cfg.stage}, {"epoch", epoch + 1}});
      save_optimizer(io.checkpoint_dir, opt);
    }
    history.push_back(std::move(m));
  }
  return history;
}

// ---- staged training ----

struct StagedConfig {
  TrainConfig stage1, stage2, stage3;
  bool run_stage1 = true;
};

struct StagedResult {
  std::vector<EpochMetrics> history;
  double stage2_eval_acc = 0;
  double stage3_eval_acc = 0;
};

/// Stage 1 trains the backbone on single-unit clips, stage 2 copies it into
/// the V4D network and trains with the 4D blocks held at zero, stage 3
/// trains everything. Each stage boundary is checkpointed under
/// `root/stage{1,2,3}` when `root` is non-empty.
template <typename T>
StagedResult staged_train(Network<T>& v4d_net, const Dataset<T>& train, const std::type_identity_t<Dataset<T>>* eval,
                          StagedConfig cfg,
                          std::ostream* metrics = nullptr, const std::filesystem::path& root = {},
                          std::uint64_t init_seed = 0) {
  if (!v4d_net.spec().has_4d()) throw ConfigError("staged training needs a network with 4D blocks");
  StagedResult out;
  auto stage_io = [&](const char* name) {
    TrainIo io{metrics, {}};
    if (!root.empty()) io.checkpoint_dir = root / name;
    return io;
  };
  auto append = [&](std::vector<EpochMetrics> h) { out.history.insert(out.history.end(), h.begin(), h.end()); };

  if (cfg.run_stage1) {
    NetworkSpec bspec = v4d_net.spec().backbone();
    bspec.units = 1;
    Network<T> backbone(bspec, init_seed);
    const Dataset<T> clips = unit_clips(train);
    std::optional<Dataset<T>> eval_clips;
    if (eval) eval_clips = unit_clips(*eval);
    OptimizerState<T> opt;
    cfg.stage1.stage = "stage1";
    append(train_loop(backbone, clips, eval_clips ? &*eval_clips : nullptr, cfg.stage1, opt, stage_io("stage1")));
    const auto st = backbone.state();
    const std::size_t loaded = v4d_net.load_state(st, false);
    if (loaded != st.size()) throw ModelError("stage 1 -> 2: backbone weights do not map onto the V4D network");
  }

  for (auto* b : v4d_net.blocks_4d()) {
    b->conv().weights.fill(T{0});
    b->conv().bias.fill(T{0});
  }
  OptimizerState<T> opt;
  cfg.stage2.stage = "stage2";
  cfg.stage2.freeze_4d = true;
  append(train_loop(v4d_net, train, eval, cfg.stage2, opt, stage_io("stage2")));
  if (eval) out.stage2_eval_acc = evaluate(v4d_net, *eval);

  cfg.stage3.stage = "stage3";
  cfg.stage3.freeze_4d = false;
  opt.velocity.clear();
  append(train_loop(v4d_net, train, eval, cfg.stage3, opt, stage_io("stage3")));
  if (eval) out.stage3_eval_acc = evaluate(v4d_net, *eval);
  return out;
}

}  // namespace v4d
