/*
 * Copyright 2026 The gridgnn Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Checkpoint file: configs, normalizer, graph scaling, training progress,
// loss history, and every tensor needed to resume bit-exactly (parameters,
// batch-norm running statistics, Adam moments).

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridgnn/train.hpp"

namespace gridgnn {

inline constexpr const char* kCheckpointMagic = "GGNNCKPT";

struct Checkpoint {
  ModelConfig model_config;
  TrainConfig train_config;
  Normalizer normalizer;
  std::vector<std::size_t> normalizer_source;
  double scaling_k = 1.0;
  double dt = 1e-3;
  std::string grid_hash;
  std::string dataset_hash;
  std::string manifest;
  TrainState state;
};

inline std::string checkpoint_bytes(const Checkpoint& c) {
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<double> payload;
  auto put = [&](const std::string& kind, const std::string& name, const Tensor& t) {
    tensors.push_back({{"kind", kind}, {"name", name}, {"shape", t.shape()}, {"offset", payload.size()}});
    payload.insert(payload.end(), t.values().begin(), t.values().end());
  };
  for (const auto& p : c.state.model.params().items()) put("param", p.name, p.value);
  for (const auto& [name, bn] : c.state.model.bn_states()) {
    put("bn_mean", name, bn.running_mean);
    put("bn_var", name, bn.running_var);
  }
  for (const auto& [name, m] : c.state.adam.first()) put("adam_m", name, m);
  for (const auto& [name, v] : c.state.adam.second()) put("adam_v", name, v);
  nlohmann::json history = nlohmann::json::array();
  for (const auto& r : c.state.history) history.push_back({r.epoch, r.loss.l1, r.loss.l2, r.loss.total, r.lr});
  const nlohmann::json header = {{"format", "gridgnn-checkpoint"},
                                 {"version", kVersion},
                                 {"model_config", c.model_config},
                                 {"train_config", c.train_config},
                                 {"normalizer", c.normalizer},
                                 {"normalizer_source", c.normalizer_source},
                                 {"normalizer_split_hash", split_hash(c.normalizer_source)},
                                 {"scaling_k", c.scaling_k},
                                 {"dt", c.dt},
                                 {"grid_hash", c.grid_hash},
                                 {"dataset_hash", c.dataset_hash},
                                 {"manifest", c.manifest},
                                 {"next_epoch", c.state.next_epoch},
                                 {"adam_steps", c.state.adam.steps()},
                                 {"parameter_count", c.state.model.parameter_count()},
                                 {"history", history},
                                 {"tensors", tensors}};
  return container::pack(kCheckpointMagic, header.dump(), payload);
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) { write_file(path, checkpoint_bytes(c)); }

/// Header only, for summaries.
inline nlohmann::json checkpoint_header(const std::string& path) {
  const auto u = container::unpack(read_file(path), kCheckpointMagic, "checkpoint " + path);
  try {
    return nlohmann::json::parse(u.header);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + path + ": malformed header: " + e.what());
  }
}

inline Checkpoint load_checkpoint(const std::string& path) {
  const auto u = container::unpack(read_file(path), kCheckpointMagic, "checkpoint " + path);
  Checkpoint c;
  try {
    const auto h = nlohmann::json::parse(u.header);
    c.model_config = h.at("model_config").get<ModelConfig>();
    c.train_config = h.at("train_config").get<TrainConfig>();
    c.normalizer = h.at("normalizer").get<Normalizer>();
    c.normalizer_source = h.at("normalizer_source").get<std::vector<std::size_t>>();
    if (h.at("normalizer_split_hash").get<std::string>() != split_hash(c.normalizer_source))
      throw IoError("checkpoint " + path + ": normalizer split hash mismatch");
    c.scaling_k = h.at("scaling_k").get<double>();
    c.dt = h.at("dt").get<double>();
    c.grid_hash = h.at("grid_hash").get<std::string>();
    c.dataset_hash = h.at("dataset_hash").get<std::string>();
    c.manifest = h.at("manifest").get<std::string>();
    c.state.model = Model(c.model_config);
    c.state.adam = Adam(c.state.model.params());
    c.state.next_epoch = h.at("next_epoch").get<int>();
    c.state.adam.set_steps(h.at("adam_steps").get<long>());
    for (const auto& r : h.at("history")) {
      EpochRecord e;
      e.epoch = r.at(0).get<int>();
      e.loss = {r.at(1).get<double>(), r.at(2).get<double>(), c.train_config.nu, r.at(3).get<double>()};
      e.lr = r.at(4).get<double>();
      c.state.history.push_back(e);
    }
    std::size_t params_seen = 0;
    for (const auto& t : h.at("tensors")) {
      const std::string kind = t.at("kind").get<std::string>(), name = t.at("name").get<std::string>();
      const Shape shape = t.at("shape").get<Shape>();
      const auto offset = t.at("offset").get<std::size_t>();
      const std::size_t len = shape_size(shape);
      if (offset + len > u.payload.size()) throw IoError("checkpoint " + path + ": payload truncated");
      Tensor value(shape, std::vector<double>(u.payload.begin() + static_cast<std::ptrdiff_t>(offset),
                                              u.payload.begin() + static_cast<std::ptrdiff_t>(offset + len)));
      auto expect_shape = [&](const Tensor& target) {
        if (target.shape() != shape) throw IoError("checkpoint " + path + ": shape mismatch for " + kind + " " + name);
      };
      if (kind == "param") {
        Parameter& p = c.state.model.params().at(name);
        expect_shape(p.value);
        p.value = std::move(value);
        ++params_seen;
      } else if (kind == "bn_mean" || kind == "bn_var") {
        auto it = c.state.model.bn_states().find(name);
        if (it == c.state.model.bn_states().end()) throw IoError("checkpoint " + path + ": unknown layer " + name);
        Tensor& target = kind == "bn_mean" ? it->second.running_mean : it->second.running_var;
        expect_shape(target);
        target = std::move(value);
      } else if (kind == "adam_m" || kind == "adam_v") {
        auto& store = kind == "adam_m" ? c.state.adam.first() : c.state.adam.second();
        auto it = store.find(name);
        if (it == store.end()) throw IoError("checkpoint " + path + ": unknown moment " + name);
        expect_shape(it->second);
        it->second = std::move(value);
      } else {
        throw IoError("checkpoint " + path + ": unknown tensor kind " + kind);
      }
    }
    if (params_seen != c.state.model.params().items().size())
      throw IoError("checkpoint " + path + ": missing parameters");
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + path + ": malformed header: " + e.what());
  } catch (const ArgumentError& e) {
    throw IoError("checkpoint " + path + ": " + e.what());
  }
  return c;
}

}  // namespace gridgnn
