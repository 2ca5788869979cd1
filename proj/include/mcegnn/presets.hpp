#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "mcegnn/egnn.hpp"
#include "mcegnn/sim.hpp"
#include "mcegnn/train.hpp"

namespace mcegnn {

// Desk-scale experiment presets. Dataset generation and training defaults are
// bundled so the CLI and the acceptance suite run the exact same recipes.
struct ExperimentPreset {
  std::string task;  // "charged" | "orbital"
  std::int64_t systems = 0;
  std::int64_t n_particles = 5;  // charged task
  OrbitalConfig orbital;         // orbital task
  std::int64_t n_steps = 0;
  std::int64_t burn_in = 0;
  double dt = 0.0;
  double softening = 0.0;
  std::int64_t horizon = 0;
  std::int64_t stride = 1;
  std::array<double, 3> split_fracs{0.8, 0.1, 0.1};
  EgnnConfig model;
  TrainConfig train;
};

// Charged 5-particle systems, one sample per system; 625 systems split
// 500/63/62. Scaled-down version of the usual 3000-sample benchmark.
inline ExperimentPreset nbody_small_preset() {
  ExperimentPreset p;
  p.task = "charged";
  p.systems = 625;
  p.n_particles = 5;
  p.n_steps = 1000;
  p.burn_in = 0;
  p.dt = 1e-3;
  p.softening = 0.1;
  p.horizon = 1000;
  p.stride = 1;

  p.model.n_layers = 4;
  p.model.hidden_width = 32;
  p.model.message_width = 32;
  p.model.channels = 1;
  p.model.feature_width = 1;
  p.model.edge_attr_width = 1;
  p.model.velocity_mode = true;

  p.train.epochs = 1000;
  p.train.batch_size = 100;
  p.train.learning_rate = 5e-4;
  p.train.patience = 50;
  p.train.loss = LossKind::kMse;
  return p;
}

// Hierarchical orbital systems (sun, 3 planets, 2 moons each): moons orbit
// their planet while the planet orbits the central body.
inline ExperimentPreset orbital_small_preset() {
  ExperimentPreset p;
  p.task = "orbital";
  p.systems = 100;
  p.orbital = OrbitalConfig{};
  p.n_steps = 1000;
  p.burn_in = 0;
  p.dt = 1e-2;
  p.softening = 1e-3;
  p.horizon = 100;
  p.stride = 300;

  p.model.n_layers = 5;
  p.model.hidden_width = 64;
  p.model.message_width = 64;
  p.model.channels = 1;
  p.model.feature_width = 1;
  p.model.edge_attr_width = 0;
  p.model.velocity_mode = true;

  p.train.epochs = 300;
  p.train.batch_size = 100;
  p.train.learning_rate = 5e-4;
  p.train.patience = 50;
  p.train.loss = LossKind::kNormalizedMse;
  return p;
}

}  // namespace mcegnn
