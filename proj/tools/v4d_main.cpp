// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

// v4d command-line tool. Every command resolves its configuration from
// defaults, an optional --config JSON document and explicit flags (in that
// order of precedence), and writes the resolved document next to its
// outputs so a run can be repeated with `--config <out>/run_config.json`.
//
// Exit codes: 0 ok, 1 check failed (gradcheck / equiv), 2 configuration,
// 3 shape or checkpoint mismatch, 4 I/O, 5 training.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "v4d/checkpoint.hpp"
#include "v4d/counting.hpp"
#include "v4d/inference.hpp"
#include "v4d/order_task.hpp"
#include "v4d/oracle/suites.hpp"
#include "v4d/parallel.hpp"
#include "v4d/sampling.hpp"
#include "v4d/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kRunSchema = "v4d.run_config/1";

struct Globals {
  int threads = 0;
  bool deterministic = false;
};

/// Defaults, then the config file; callers apply explicit flags last.
class Resolver {
 public:
  explicit Resolver(json defaults) : doc_(std::move(defaults)) {}

  void merge_file(const std::string& path) {
    if (path.empty()) return;
    json file = v4d::read_json_file(path);
    if (!file.is_object()) throw v4d::ConfigError(path + ": expected a JSON object");
    file.erase("schema");
    file.erase("command");
    merge(doc_, file);
  }

  json& doc() { return doc_; }

 private:
  // Unlike merge_patch, null values are kept (they mean "use the default").
  static void merge(json& dst, const json& src) {
    for (const auto& [k, v] : src.items()) {
      if (v.is_object() && dst.contains(k) && dst[k].is_object()) {
        merge(dst[k], v);
      } else {
        dst[k] = v;
      }
    }
  }

  json doc_;
};

template <typename V>
V get(const json& j, const std::string& pointer) {
  try {
    return j.at(json::json_pointer(pointer)).get<V>();
  } catch (const json::exception& e) {
    throw v4d::ConfigError("config " + pointer + ": " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw v4d::IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_run_config(const fs::path& dir, const std::string& command, json doc) {
  doc["schema"] = kRunSchema;
  doc["command"] = command;
  v4d::write_json_file(dir / "run_config.json", doc);
}

v4d::NetworkSpec network_from(const json& j) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name.ends_with(".json")) return v4d::read_json_file(name).get<v4d::NetworkSpec>();
    return json{{"preset", name}}.get<v4d::NetworkSpec>();
  }
  return j.get<v4d::NetworkSpec>();
}

/// Keeps the drop epochs at the same fraction of the run.
v4d::TrainSchedule rescale(const v4d::TrainSchedule& s, std::size_t epochs) {
  v4d::TrainSchedule out{epochs, {}, s.drop_factor};
  for (std::size_t d : s.lr_drop_epochs) {
    const std::size_t e = d * epochs / s.total_epochs;
    if (e > 0 && e < epochs && (out.lr_drop_epochs.empty() || e > out.lr_drop_epochs.back())) {
      out.lr_drop_epochs.push_back(e);
    }
  }
  return out;
}

std::string fixed(double v, int prec) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

/// Aligned text table; the first row is the header.
void print_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> w;
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (w.size() <= i) w.push_back(0);
      w[i] = std::max(w[i], r[i].size());
    }
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (std::size_t i = 0; i < rows[k].size(); ++i) {
      std::cout << (i ? "  " : "") << std::left << std::setw(static_cast<int>(w[i])) << rows[k][i];
    }
    std::cout << "\n";
    if (k == 0) {
      std::size_t total = 0;
      for (std::size_t x : w) total += x + 2;
      std::cout << std::string(total - 2, '-') << "\n";
    }
  }
}

void write_output(const std::string& path, const json& j) {
  if (!path.empty()) v4d::write_json_file(path, j);
}

// ---- report ----

struct ReportArgs {
  std::string network = "v4d-r18";
  std::size_t classes = 200, units = 4, frames = 4, size = 224;
  bool layers = false;
  std::string out;
};

int cmd_report(const ReportArgs& a) {
  v4d::NetworkSpec spec = network_from(json(a.network));
  if (a.network.find(".json") == std::string::npos) {
    spec.num_classes = a.classes;
    spec.units = a.units;
  }
  v4d::Network<float> net(spec);
  const v4d::Shape input{1, spec.in_channels, a.units, a.frames, a.size, a.size};
  const auto rep = v4d::count_flops(net, input);
  json layers = json::array();
  for (const auto& l : rep.layers) {
    layers.push_back({{"name", l.name}, {"kind", l.kind}, {"output", l.output}, {"params", l.params}, {"macs", l.macs}});
  }
  const json doc = {{"schema", "v4d.report/1"}, {"network", spec},    {"input", input},
                    {"params", rep.params},      {"macs", rep.macs},   {"flops", rep.flops()},
                    {"macs_4d", rep.macs_4d},    {"layers", layers}};
  std::vector<std::vector<std::string>> rows{{"layer", "kind", "output", "params", "MACs"}};
  if (a.layers) {
    for (const auto& l : rep.layers) {
      rows.push_back({l.name, l.kind, v4d::shape_string(l.output), std::to_string(l.params), std::to_string(l.macs)});
    }
  }
  rows.push_back({"total", "", v4d::shape_string(input), fixed(static_cast<double>(rep.params) / 1e6, 2) + "M",
                  fixed(static_cast<double>(rep.macs) / 1e9, 2) + "G"});
  rows.push_back({"4d blocks", "", "", "", fixed(static_cast<double>(rep.macs_4d) / 1e9, 2) + "G"});
  print_table(rows);
  write_output(a.out, doc);
  return 0;
}

// ---- gradcheck / equiv ----

int cmd_gradcheck(const v4d::oracle::GradCheckOptions& o, const std::string& out) {
  const auto rep = v4d::oracle::gradient_suite(o);
  std::vector<std::vector<std::string>> rows{{"gradient", "max rel err", "numeric", "analytic", "tol", "ok"}};
  for (const auto& e : rep.entries) {
    rows.push_back({e.name, sci(e.max_rel_error), sci(e.numeric), sci(e.analytic), sci(e.tolerance),
                    e.passed() ? "yes" : "NO"});
  }
  print_table(rows);
  write_output(out, rep);
  return rep.passed() ? 0 : 1;
}

int cmd_equiv(const v4d::oracle::EquivOptions& o, const std::string& out) {
  const auto rows_in = v4d::oracle::equivalence_suite(o);
  std::vector<std::vector<std::string>> rows{{"check", "cases", "max error", "tol", "ok"}};
  bool ok = true;
  for (const auto& r : rows_in) {
    rows.push_back({r.name, std::to_string(r.cases), sci(r.max_error) + (r.relative ? " (rel)" : ""), sci(r.tolerance),
                    r.passed() ? "yes" : "NO"});
    ok = ok && r.passed();
  }
  print_table(rows);
  write_output(out, {{"schema", "v4d.equiv/1"}, {"seed", o.seed}, {"rows", rows_in}, {"passed", ok}});
  return ok ? 0 : 1;
}

// ---- sampling shared by infer / cam ----

json sampling_defaults() {
  return {{"units", 8},
          {"clip_len", 32},
          {"frames_per_unit", 4},
          {"frame_stride", 8},
          {"crop_size", 0},
          {"crops", 3},
          {"short_side", 0},
          {"out_size", 0},
          {"normalization", "imagenet"}};
}

void add_sampling_flags(CLI::App* sub) {
  sub->add_option("--units-infer", "units sampled from the video (U_infer)");
  sub->add_option("--clip-len", "frames per short-term clip");
  sub->add_option("--frames-per-unit", "frames per action unit (T)");
  sub->add_option("--frame-stride", "stride between unit frames");
  sub->add_option("--crop-size", "square crop side; 0 uses the 256 test crop");
  sub->add_option("--crops", "3 (left/center/right) or 1 (center)");
  sub->add_option("--short-side", "resize frames so the short side equals this; 0 keeps it");
  sub->add_option("--out-size", "resize crops to this side; 0 keeps the crop size");
  sub->add_option("--normalization", "imagenet or identity");
}

void resolve_sampling_flags(CLI::App* sub, Resolver& r) {
  auto num = [&](const char* flag, const char* key) {
    if (sub->count(flag)) r.doc()["sampling"][key] = sub->get_option(flag)->as<std::size_t>();
  };
  num("--units-infer", "units");
  num("--clip-len", "clip_len");
  num("--frames-per-unit", "frames_per_unit");
  num("--frame-stride", "frame_stride");
  num("--crop-size", "crop_size");
  num("--crops", "crops");
  num("--short-side", "short_side");
  num("--out-size", "out_size");
  if (sub->count("--normalization")) {
    r.doc()["sampling"]["normalization"] = sub->get_option("--normalization")->as<std::string>();
  }
}

/// Test-mode units and crops of a video: (crops, C, U, T, S, S).
v4d::Tensor<float> sample_video(const json& s, const fs::path& video, std::size_t units) {
  auto src = v4d::open_video(video);
  v4d::SamplingConfig cfg;
  cfg.units = units;
  cfg.clip_len = get<std::size_t>(s, "/clip_len");
  cfg.frames_per_unit = get<std::size_t>(s, "/frames_per_unit");
  cfg.frame_stride = get<std::size_t>(s, "/frame_stride");
  cfg.crop_size = get<std::size_t>(s, "/crop_size");
  cfg.mode = v4d::SampleMode::test;
  cfg.validate();
  v4d::GatherOptions g;
  g.short_side = get<std::size_t>(s, "/short_side");
  g.out_size = get<std::size_t>(s, "/out_size");
  const json& norm = s.at("normalization");
  if (norm.is_string()) {
    const auto n = norm.get<std::string>();
    if (n == "identity") {
      g.norm = v4d::Normalization::identity();
    } else if (n != "imagenet") {
      throw v4d::ConfigError("normalization must be imagenet, identity or {mean, std}");
    }
  } else {
    g.norm = norm.get<v4d::Normalization>();
  }
  const auto [h, w] = v4d::resized_dims(src->height(), src->width(), g.short_side);
  v4d::SamplingPlan plan = v4d::make_plan(src->length(), h, w, cfg);
  const auto crops = get<std::size_t>(s, "/crops");
  if (crops == 1) {
    plan.crops = {plan.crops[plan.crops.size() / 2]};
  } else if (crops != 3) {
    throw v4d::ConfigError("crops must be 1 or 3");
  }
  return v4d::gather_video(*src, plan, g);
}

// ---- infer ----

int cmd_infer(const json& c, const Globals& g) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path out = get<std::string>(c, "/out");
  auto net = v4d::network_from_checkpoint<float>(get<std::string>(c, "/checkpoint"));
  const json& s = c.at("sampling");
  const bool tsn = get<bool>(c, "/tsn_baseline");
  const auto video = sample_video(s, get<std::string>(c, "/video"), get<std::size_t>(s, "/units"));
  const auto averaging = get<v4d::ScoreAveraging>(c, "/averaging");
  v4d::InferenceResult res;
  if (tsn) {
    res = v4d::tsn_infer(net, video, averaging);
  } else {
    v4d::InferenceOptions o;
    o.u_train = c.at("u_train").is_null() ? net.spec().units : get<std::size_t>(c, "/u_train");
    o.averaging = averaging;
    o.combo_batch = get<std::size_t>(c, "/combo_batch");
    res = v4d::v4d_infer(net, video, o);
  }
  json top = json::array();
  for (std::size_t k : v4d::top_k(res.probs, std::min<std::size_t>(5, res.probs.size()))) {
    top.push_back({{"class", k}, {"prob", res.probs[k]}});
  }
  json timing = nullptr;
  if (!g.deterministic) {
    timing = {{"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()},
              {"threads", v4d::num_threads()}};
  }
  ensure_dir(out);
  v4d::write_json_file(out / "prediction.json", {{"schema", "v4d.prediction/1"},
                                                 {"mode", tsn ? "tsn" : "v4d"},
                                                 {"class_probs", res.probs},
                                                 {"top5", top},
                                                 {"combinations_used", res.combinations_used},
                                                 {"crops_used", res.crops_used},
                                                 {"timing", timing}});
  write_run_config(out, "infer", c);
  std::cout << "top-1 class " << top[0]["class"] << " p=" << fixed(top[0]["prob"].get<double>(), 4) << " ("
            << res.combinations_used << " combinations x " << res.crops_used << " crops)\n";
  return 0;
}

// ---- cam ----

int cmd_cam(const json& c) {
  const fs::path out = get<std::string>(c, "/out");
  auto net = v4d::network_from_checkpoint<float>(get<std::string>(c, "/checkpoint"));
  json s = c.at("sampling");
  s["crops"] = 1;
  const std::size_t units = net.spec().units;
  const auto video = sample_video(s, get<std::string>(c, "/video"), units);
  const auto logits = net.forward(video, v4d::Mode::eval);
  const auto probs = v4d::ops::softmax(logits);
  std::vector<double> p(probs.data().begin(), probs.data().end());
  const long requested = get<long>(c, "/class");
  const std::size_t cls = requested < 0 ? v4d::top_k(p, 1).front() : static_cast<std::size_t>(requested);
  const auto cam = v4d::compute_cam3d(v4d::cam_features(net, units), net.head().weights(), cls);
  const auto files = v4d::export_cam(out, cam, get<bool>(c, "/png"));
  json names = json::array();
  for (const auto& f : files) names.push_back(f.filename().string());
  v4d::write_json_file(out / "cam.json", {{"schema", "v4d.cam_run/1"},
                                          {"class", cls},
                                          {"class_prob", p[cls]},
                                          {"shape", cam.shape()},
                                          {"files", names}});
  write_run_config(out, "cam", c);
  std::cout << "class " << cls << ": " << files.size() << " files in " << out.string() << "\n";
  return 0;
}

// ---- make-order-task ----

int cmd_make_order_task(const json& c) {
  const fs::path out = get<std::string>(c, "/out");
  const auto spec = c.at("order_task").get<v4d::OrderTaskSpec>();
  const auto task = v4d::make_order_task<float>(spec);
  v4d::save_dataset(out / "train", task.train);
  v4d::save_dataset(out / "test", task.test);
  v4d::write_json_file(out / "task.json", {{"schema", "v4d.order_task/1"}, {"spec", spec}});
  write_run_config(out, "make-order-task", c);
  std::cout << spec.train_size << " train / " << spec.test_size << " test samples in " << out.string() << "\n";
  return 0;
}

// ---- train / stagedtrain ----

struct TrainData {
  v4d::Dataset<float> train;
  std::optional<v4d::Dataset<float>> eval;
  v4d::NetworkSpec spec;
  bool order = false;
};

TrainData load_train_data(const json& c) {
  TrainData d;
  const auto task = get<std::string>(c, "/task");
  if (task == "order") {
    const auto ts = c.at("order_task").get<v4d::OrderTaskSpec>();
    auto t = v4d::make_order_task<float>(ts);
    d.train = std::move(t.train);
    d.eval = std::move(t.test);
    d.order = true;
    d.spec = c.at("network").is_null() ? v4d::order_task_network(ts, get<std::size_t>(c, "/width"))
                                       : network_from(c.at("network"));
  } else if (task == "data") {
    d.train = v4d::load_dataset<float>(get<std::string>(c, "/train_data"));
    const auto eval = c.value("eval_data", json(nullptr));
    if (!eval.is_null()) d.eval = v4d::load_dataset<float>(eval.get<std::string>());
    if (c.at("network").is_null()) throw v4d::ConfigError("task data needs a network");
    d.spec = network_from(c.at("network"));
  } else {
    throw v4d::ConfigError("task must be order or data, got " + task);
  }
  if (d.train.inputs.shape()[2] != d.spec.units) {
    throw v4d::ShapeError("training data has " + std::to_string(d.train.inputs.shape()[2]) +
                          " units, network expects " + std::to_string(d.spec.units));
  }
  return d;
}

json train_defaults() {
  return {{"task", "order"},       {"order_task", v4d::OrderTaskSpec{}}, {"network", nullptr}, {"width", 8},
          {"train_data", nullptr}, {"eval_data", nullptr},               {"init_seed", 0},     {"out", "run"}};
}

void add_train_flags(CLI::App* sub) {
  sub->add_option("--task", "order (synthetic) or data (--train-data / --eval-data)");
  sub->add_option("--network", "preset name or spec JSON file (default: order-task network)");
  sub->add_option("--width", "base width of the order-task network");
  sub->add_option("--train-data", "dataset directory (inputs.vt01 + labels.json)");
  sub->add_option("--eval-data", "dataset directory used for eval accuracy");
  sub->add_option("--preset", "schedule preset: desk or paper");
  sub->add_option("--epochs", "override epochs per stage; drop epochs scale along");
  sub->add_option("--lr", "base learning rate");
  sub->add_option("--batch-size", "mini-batch size");
  sub->add_option("--seed", "shuffle and initialization seed");
  sub->add_option("--train-size", "order task: training samples");
  sub->add_option("--test-size", "order task: test samples");
  sub->add_option("--task-seed", "order task: generation seed");
}

/// Applies flags shared by train and stagedtrain to each stage key.
void resolve_train_flags(CLI::App* sub, Resolver& r, const std::vector<std::string>& stages) {
  auto str = [&](const char* f) { return sub->get_option(f)->as<std::string>(); };
  if (sub->count("--task")) r.doc()["task"] = str("--task");
  if (sub->count("--network")) r.doc()["network"] = str("--network");
  if (sub->count("--width")) r.doc()["width"] = sub->get_option("--width")->as<std::size_t>();
  if (sub->count("--train-data")) r.doc()["train_data"] = str("--train-data");
  if (sub->count("--eval-data")) r.doc()["eval_data"] = str("--eval-data");
  if (sub->count("--train-size")) r.doc()["order_task"]["train_size"] = sub->get_option("--train-size")->as<std::size_t>();
  if (sub->count("--test-size")) r.doc()["order_task"]["test_size"] = sub->get_option("--test-size")->as<std::size_t>();
  if (sub->count("--task-seed")) r.doc()["order_task"]["seed"] = sub->get_option("--task-seed")->as<std::uint64_t>();
  if (sub->count("--seed")) r.doc()["init_seed"] = sub->get_option("--seed")->as<std::uint64_t>();
  for (const auto& st : stages) {
    json& t = r.doc()[st];
    if (sub->count("--preset")) t["schedule"] = str("--preset");
    if (sub->count("--lr")) t["lr"] = sub->get_option("--lr")->as<double>();
    if (sub->count("--batch-size")) t["batch_size"] = sub->get_option("--batch-size")->as<std::size_t>();
    if (sub->count("--seed")) t["seed"] = sub->get_option("--seed")->as<std::uint64_t>();
    if (sub->count("--epochs")) {
      const auto sched = t.at("schedule").get<v4d::TrainSchedule>();
      t["schedule"] = rescale(sched, sub->get_option("--epochs")->as<std::size_t>());
    } else {
      t["schedule"] = t.at("schedule").get<v4d::TrainSchedule>();
    }
  }
}

std::ofstream open_metrics(const fs::path& out) {
  ensure_dir(out);
  std::ofstream m(out / "metrics.jsonl");
  if (!m) throw v4d::IoError("cannot create " + (out / "metrics.jsonl").string());
  m << json{{"schema", "v4d.metrics/1"}}.dump() << "\n";
  return m;
}

int cmd_train(json c) {
  c["train"] = c.at("train").get<v4d::TrainConfig>();
  const fs::path out = get<std::string>(c, "/out");
  const TrainData d = load_train_data(c);
  v4d::Network<float> net(d.spec, get<std::uint64_t>(c, "/init_seed"));
  auto metrics = open_metrics(out);
  write_run_config(out, "train", c);
  v4d::OptimizerState<float> opt;
  const auto cfg = c.at("train").get<v4d::TrainConfig>();
  const auto hist = v4d::train_loop(net, d.train, d.eval ? &*d.eval : nullptr, cfg, opt, {&metrics, out / "checkpoint"});
  json summary = {{"schema", "v4d.train_summary/1"}, {"epochs", hist.size()}};
  if (!hist.empty()) {
    summary["final_train_loss"] = hist.back().train_loss;
    summary["final_train_acc"] = hist.back().train_acc;
  }
  if (d.eval) {
    summary["final_eval_acc"] = v4d::evaluate(net, *d.eval);
    if (d.order) summary["reversed_eval_acc"] = v4d::evaluate(net, *d.eval, 32, true);
  }
  v4d::write_json_file(out / "summary.json", summary);
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_stagedtrain(json c) {
  for (const char* st : {"stage1", "stage2", "stage3"}) c[st] = c.at(st).get<v4d::TrainConfig>();
  const fs::path out = get<std::string>(c, "/out");
  const TrainData d = load_train_data(c);
  if (!d.spec.has_4d()) throw v4d::ConfigError("stagedtrain needs a network with 4D blocks");
  const auto init_seed = get<std::uint64_t>(c, "/init_seed");
  v4d::Network<float> net(d.spec, init_seed);
  auto metrics = open_metrics(out);
  write_run_config(out, "stagedtrain", c);
  v4d::StagedConfig sc;
  sc.stage1 = c.at("stage1").get<v4d::TrainConfig>();
  sc.stage2 = c.at("stage2").get<v4d::TrainConfig>();
  sc.stage3 = c.at("stage3").get<v4d::TrainConfig>();
  sc.run_stage1 = get<bool>(c, "/run_stage1");
  const auto res = v4d::staged_train(net, d.train, d.eval ? &*d.eval : nullptr, sc, &metrics, out, init_seed);
  json summary = {{"schema", "v4d.train_summary/1"}, {"epochs", res.history.size()}};
  if (!res.history.empty()) summary["final_train_loss"] = res.history.back().train_loss;
  if (d.eval) {
    summary["stage2_eval_acc"] = res.stage2_eval_acc;
    summary["final_eval_acc"] = res.stage3_eval_acc;
    if (d.order) summary["reversed_eval_acc"] = v4d::evaluate(net, *d.eval, 32, true);
  }
  v4d::write_json_file(out / "summary.json", summary);
  std::cout << summary.dump() << "\n";
  return 0;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const v4d::ConfigError*>(&e)) return 2;
  if (dynamic_cast<const v4d::ShapeError*>(&e) || dynamic_cast<const v4d::ModelError*>(&e)) return 3;
  if (dynamic_cast<const v4d::IoError*>(&e)) return 4;
  if (dynamic_cast<const v4d::TrainingError*>(&e)) return 5;
  if (dynamic_cast<const json::exception*>(&e)) return 2;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Video-level 4D CNN toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--threads", g.threads, "worker threads (default: V4D_THREADS, else all cores)");
  app.add_flag("--deterministic", g.deterministic, "single thread and no timing fields");

  // report
  ReportArgs ra;
  auto* report = app.add_subcommand("report", "parameter and MAC counts of a network");
  report->add_option("--network", ra.network, "preset name or spec JSON file")->capture_default_str();
  report->add_option("--classes", ra.classes)->capture_default_str();
  report->add_option("--units", ra.units)->capture_default_str();
  report->add_option("--frames", ra.frames, "frames per unit")->capture_default_str();
  report->add_option("--size", ra.size, "input height and width")->capture_default_str();
  report->add_flag("--layers", ra.layers, "print every layer");
  report->add_option("--out", ra.out, "write the JSON report here");

  // gradcheck
  v4d::oracle::GradCheckOptions go;
  std::string gout;
  auto* gradcheck = app.add_subcommand("gradcheck", "analytic gradients against central differences");
  gradcheck->add_option("--seed", go.seed)->capture_default_str();
  gradcheck->add_option("--step", go.step)->capture_default_str();
  gradcheck->add_option("--out", gout, "write the JSON report here");

  // equiv
  v4d::oracle::EquivOptions eo;
  std::string eout;
  auto* equiv = app.add_subcommand("equiv", "4D convolution and reduction checks against the oracles");
  equiv->add_option("--seed", eo.seed)->capture_default_str();
  equiv->add_option("--cases", eo.conv_cases, "random convolution configurations")->capture_default_str();
  equiv->add_option("--out", eout, "write the JSON report here");

  // infer
  std::string config;
  auto* infer = app.add_subcommand("infer", "video-level prediction from a checkpoint");
  infer->add_option("--config", config, "run config JSON");
  infer->add_option("--checkpoint", "checkpoint directory");
  infer->add_option("--video", "VT01 (C, L, H, W) tensor or directory of frames");
  infer->add_option("--u-train", "units per combination (default: checkpoint units)");
  infer->add_option("--average", "logits or probabilities");
  infer->add_option("--combo-batch", "combinations per 4D pass");
  infer->add_flag("--tsn-baseline", "score each unit alone and average (no 4D blocks)");
  infer->add_option("--out", "output directory");
  add_sampling_flags(infer);

  // cam
  auto* cam = app.add_subcommand("cam", "3D class activation maps");
  cam->add_option("--config", config, "run config JSON");
  cam->add_option("--checkpoint", "checkpoint directory");
  cam->add_option("--video", "VT01 (C, L, H, W) tensor or directory of frames");
  cam->add_option("--class", "class index; -1 uses the top prediction");
  cam->add_flag("--png", "also write one PNG per (unit, frame)");
  cam->add_option("--out", "output directory");
  add_sampling_flags(cam);

  // make-order-task
  auto* mot = app.add_subcommand("make-order-task", "write the synthetic unit-order dataset");
  mot->add_option("--config", config, "run config JSON");
  for (const char* f : {"--units", "--frames", "--height", "--width", "--motifs", "--blob", "--train-size",
                        "--test-size", "--seed"}) {
    mot->add_option(f);
  }
  mot->add_option("--noise", "pixel noise standard deviation");
  mot->add_option("--out", "output directory");

  // train / stagedtrain
  auto* train = app.add_subcommand("train", "SGD training of one network");
  train->add_option("--config", config, "run config JSON");
  train->add_option("--out", "output directory");
  add_train_flags(train);
  auto* staged = app.add_subcommand("stagedtrain", "backbone, zero-block and full training stages");
  staged->add_option("--config", config, "run config JSON");
  staged->add_option("--out", "output directory");
  staged->add_flag("--skip-stage1", "start from the network initialization instead of a trained backbone");
  for (const char* f : {"--stage1-epochs", "--stage2-epochs", "--stage3-epochs"}) staged->add_option(f);
  add_train_flags(staged);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (g.deterministic) {
      v4d::pin_num_threads(1);
    } else if (g.threads > 0) {
      v4d::pin_num_threads(static_cast<std::size_t>(g.threads));
    }
    auto out_flag = [](CLI::App* sub, Resolver& r) {
      if (sub->count("--out")) r.doc()["out"] = sub->get_option("--out")->as<std::string>();
    };

    if (*report) return cmd_report(ra);
    if (*gradcheck) return cmd_gradcheck(go, gout);
    if (*equiv) return cmd_equiv(eo, eout);

    if (*infer) {
      Resolver r({{"checkpoint", nullptr},
                         {"video", nullptr},
                         {"u_train", nullptr},
                         {"averaging", "logits"},
                         {"combo_batch", 8},
                         {"tsn_baseline", false},
                         {"sampling", sampling_defaults()},
                         {"out", "infer_out"}});
      r.merge_file(config);
      if (infer->count("--checkpoint")) r.doc()["checkpoint"] = infer->get_option("--checkpoint")->as<std::string>();
      if (infer->count("--video")) r.doc()["video"] = infer->get_option("--video")->as<std::string>();
      if (infer->count("--u-train")) r.doc()["u_train"] = infer->get_option("--u-train")->as<std::size_t>();
      if (infer->count("--average")) r.doc()["averaging"] = infer->get_option("--average")->as<std::string>();
      if (infer->count("--combo-batch")) r.doc()["combo_batch"] = infer->get_option("--combo-batch")->as<std::size_t>();
      if (infer->count("--tsn-baseline")) r.doc()["tsn_baseline"] = true;
      out_flag(infer, r);
      resolve_sampling_flags(infer, r);
      return cmd_infer(r.doc(), g);
    }
    if (*cam) {
      json d = {{"checkpoint", nullptr}, {"video", nullptr}, {"class", -1},
                {"png", false},          {"sampling", sampling_defaults()}, {"out", "cam_out"}};
      Resolver r(d);
      r.merge_file(config);
      if (cam->count("--checkpoint")) r.doc()["checkpoint"] = cam->get_option("--checkpoint")->as<std::string>();
      if (cam->count("--video")) r.doc()["video"] = cam->get_option("--video")->as<std::string>();
      if (cam->count("--class")) r.doc()["class"] = cam->get_option("--class")->as<long>();
      if (cam->count("--png")) r.doc()["png"] = true;
      out_flag(cam, r);
      resolve_sampling_flags(cam, r);
      return cmd_cam(r.doc());
    }
    if (*mot) {
      Resolver r({{"order_task", v4d::OrderTaskSpec{}}, {"out", "order_task"}});
      r.merge_file(config);
      for (const char* f : {"--units", "--frames", "--height", "--width", "--motifs", "--blob", "--train-size",
                            "--test-size", "--seed"}) {
        std::string key = std::string(f).substr(2);
        std::replace(key.begin(), key.end(), '-', '_');
        if (mot->count(f)) r.doc()["order_task"][key] = mot->get_option(f)->as<std::uint64_t>();
      }
      if (mot->count("--noise")) r.doc()["order_task"]["noise"] = mot->get_option("--noise")->as<double>();
      out_flag(mot, r);
      return cmd_make_order_task(r.doc());
    }
    if (*train) {
      json d = train_defaults();
      d["train"] = v4d::TrainConfig{};
      Resolver r(d);
      r.merge_file(config);
      out_flag(train, r);
      resolve_train_flags(train, r, {"train"});
      return cmd_train(r.doc());
    }
    if (*staged) {
      json d = train_defaults();
      d["run_stage1"] = true;
      for (const char* st : {"stage1", "stage2", "stage3"}) {
        v4d::TrainConfig tc;
        tc.stage = st;
        d[st] = tc;
      }
      Resolver r(d);
      r.merge_file(config);
      out_flag(staged, r);
      if (staged->count("--skip-stage1")) r.doc()["run_stage1"] = false;
      resolve_train_flags(staged, r, {"stage1", "stage2", "stage3"});
      for (int k = 1; k <= 3; ++k) {
        const std::string f = "--stage" + std::to_string(k) + "-epochs", key = "stage" + std::to_string(k);
        if (staged->count(f)) {
          json& t = r.doc()[key];
          t["schedule"] = rescale(t.at("schedule").get<v4d::TrainSchedule>(), staged->get_option(f)->as<std::size_t>());
        }
      }
      return cmd_stagedtrain(r.doc());
    }
  } catch (const std::exception& e) {
    std::cerr << "v4d: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return 0;
}
