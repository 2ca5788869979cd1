#pragma once

#include <cstdio>
#include <filesystem>
#include <string>

#include "mcegnn/container.hpp"
#include "mcegnn/egnn.hpp"

namespace mcegnn {

// Checkpoints are containers whose meta carries the full model config; the
// parameter arrays are stored in the model's canonical parameter order.
inline void save_checkpoint(const std::filesystem::path& path, const MultiChannelEgnn& model) {
  ArrayStore store;
  store.meta = {{"kind", "checkpoint"},
                {"config", to_json(model.config())},
                {"seed", model.seed()}};
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "param_%04zu", i);
    store.arrays.push_back({name, params[i].shape(), params[i].data()});
  }
  save_container(path, store);
}

inline MultiChannelEgnn load_checkpoint(const std::filesystem::path& path) {
  const ArrayStore store = load_container(path);
  if (store.meta.value("kind", "") != "checkpoint") {
    throw ContainerError(ContainerError::Kind::kLayout, "container is not a checkpoint");
  }
  const EgnnConfig config = egnn_config_from_json(store.meta.at("config"));
  MultiChannelEgnn model(config, store.meta.at("seed").get<std::uint64_t>());
  auto params = model.parameters();
  if (store.arrays.size() != params.size()) {
    throw ContainerError(ContainerError::Kind::kLayout,
                         "checkpoint parameter count does not match its config");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "param_%04zu", i);
    const NamedArray& a = store.at(name);
    if (a.shape != params[i].shape()) {
      throw ContainerError(ContainerError::Kind::kLayout,
                           "checkpoint parameter shape mismatch at " + std::string(name));
    }
    params[i].data() = a.values;
  }
  return model;
}

}  // namespace mcegnn
