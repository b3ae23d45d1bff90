// Copyright 2026 The V4D Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Checkpoint directory layout:
//   manifest.json          network spec, dtype and the tensor list
//   tensors/<name>.vt01    one file per parameter / running statistic
//   optimizer.json         optional SGD hyperparameters and velocity list
//   velocity/<name>.vt01

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "v4d/network.hpp"
#include "v4d/tensor_io.hpp"

namespace v4d {

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot create " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

template <typename T>
struct Checkpoint {
  NetworkSpec spec;
  std::map<std::string, Tensor<T>> state;
  nlohmann::json meta = nlohmann::json::object();
};

namespace detail {

inline void write_tensor_dir(const std::filesystem::path& dir, const std::string& sub, nlohmann::json& list,
                             const std::string& name, const auto& tensor) {
  const std::string file = sub + "/" + name + ".vt01";
  std::error_code ec;
  std::filesystem::create_directories(dir / sub, ec);
  if (ec) throw IoError("cannot create " + (dir / sub).string() + ": " + ec.message());
  save_vt01(dir / file, tensor);
  list.push_back({{"name", name}, {"file", file}, {"shape", tensor.shape()}});
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, Network<T>& net, const nlohmann::json& meta = {}) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& [name, t] : net.state()) detail::write_tensor_dir(dir, "tensors", list, name, t);
  write_json_file(dir / "manifest.json", {{"schema", "v4d.checkpoint/1"},
                                         {"dtype", dtype_of<T>() == DType::f32 ? "f32" : "f64"},
                                         {"network", net.spec()},
                                         {"tensors", list},
                                         {"meta", meta.is_null() ? nlohmann::json::object() : meta}});
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& dir) {
  const nlohmann::json m = read_json_file(dir / "manifest.json");
  if (m.value("schema", "") != "v4d.checkpoint/1") throw ModelError(dir.string() + ": not a v4d checkpoint");
  Checkpoint<T> ck;
  try {
    ck.spec = m.at("network").get<NetworkSpec>();
    ck.meta = m.value("meta", nlohmann::json::object());
    for (const auto& e : m.at("tensors")) {
      Tensor<T> t = load_vt01<T>(dir / e.at("file").get<std::string>());
      if (t.shape() != e.at("shape").get<Shape>()) {
        throw ModelError("checkpoint tensor " + e.at("name").get<std::string>() + " disagrees with the manifest");
      }
      ck.state.emplace(e.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(dir.string() + "/manifest.json: " + e.what());
  }
  return ck;
}

/// Builds the checkpointed network and loads every tensor (strict).
template <typename T>
Network<T> network_from_checkpoint(const std::filesystem::path& dir) {
  Checkpoint<T> ck = load_checkpoint<T>(dir);
  Network<T> net(ck.spec);
  net.load_state(ck.state, true);
  return net;
}

}  // namespace v4d
