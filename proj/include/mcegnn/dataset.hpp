#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mcegnn/container.hpp"
#include "mcegnn/graph.hpp"
#include "mcegnn/sim.hpp"

namespace mcegnn {

enum class NodeFeatureKind { kCharge, kLogMass };
enum class Split { kTrain, kVal, kTest };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

// (state at step s, positions at step s + horizon) pairs over fully connected
// graphs. All samples in a dataset share the body count, feature kind and
// horizon.
struct TrajectoryDataset {
  std::int64_t n_bodies = 0;
  std::int64_t n_samples = 0;
  std::int64_t horizon = 0;
  std::int64_t stride = 1;
  double dt = 0.0;
  NodeFeatureKind feature_kind = NodeFeatureKind::kCharge;
  std::int64_t edge_attr_width = 0;

  // Per sample, flattened: [n_samples, n_bodies, 3] / [n_samples, n_bodies].
  std::vector<double> input_positions;
  std::vector<double> input_velocities;
  std::vector<double> target_positions;
  std::vector<double> node_features;                  // [n_samples, n_bodies]
  std::vector<double> edge_attrs;                     // [n_samples, e, edge_attr_width]
  std::vector<Split> split_tags;                      // [n_samples]

  std::int64_t n_edges_per_sample() const { return n_bodies * (n_bodies - 1); }

  std::vector<std::int64_t> indices_of(Split s) const {
    std::vector<std::int64_t> out;
    for (std::int64_t i = 0; i < n_samples; ++i) {
      if (split_tags[static_cast<std::size_t>(i)] == s) out.push_back(i);
    }
    return out;
  }
};

namespace detail {

inline void check_split_fractions(const std::array<double, 3>& f) {
  double sum = 0.0;
  for (double x : f) {
    if (x < 0.0) throw std::invalid_argument("split fractions must be non-negative");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split fractions must sum to 1");
}

// Contiguous block split: the first ceil(f_train * n) indices are train, the
// next block val, the remainder test.
inline std::vector<Split> block_split(std::int64_t n, const std::array<double, 3>& fracs) {
  const std::int64_t n_train = static_cast<std::int64_t>(
      std::ceil(fracs[0] * static_cast<double>(n)));
  const std::int64_t n_val = static_cast<std::int64_t>(
      std::ceil(fracs[1] * static_cast<double>(n)));
  std::vector<Split> tags(static_cast<std::size_t>(n), Split::kTest);
  for (std::int64_t i = 0; i < n; ++i) {
    if (i < n_train) {
      tags[static_cast<std::size_t>(i)] = Split::kTrain;
    } else if (i < n_train + n_val) {
      tags[static_cast<std::size_t>(i)] = Split::kVal;
    }
  }
  return tags;
}

inline void append_sample(TrajectoryDataset& ds, const Trajectory& traj, std::int64_t s,
                          std::int64_t horizon) {
  const std::int64_t n = traj.n_bodies;
  const double* p0 = traj.frame_positions(s);
  const double* v0 = traj.frame_velocities(s);
  const double* pt = traj.frame_positions(s + horizon);
  ds.input_positions.insert(ds.input_positions.end(), p0, p0 + n * 3);
  ds.input_velocities.insert(ds.input_velocities.end(), v0, v0 + n * 3);
  ds.target_positions.insert(ds.target_positions.end(), pt, pt + n * 3);
  for (std::int64_t i = 0; i < n; ++i) {
    const double a = traj.body_attrs[static_cast<std::size_t>(i)];
    ds.node_features.push_back(ds.feature_kind == NodeFeatureKind::kLogMass ? std::log(a) : a);
  }
  if (ds.edge_attr_width == 1) {
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < n; ++j) {
        if (i == j) continue;
        ds.edge_attrs.push_back(traj.body_attrs[static_cast<std::size_t>(i)] *
                                traj.body_attrs[static_cast<std::size_t>(j)]);
      }
    }
  }
  ++ds.n_samples;
}

inline void validate_dataset_args(const Trajectory& traj, std::int64_t horizon,
                                  std::int64_t stride) {
  if (horizon < 0 || horizon >= traj.n_frames) {
    throw std::invalid_argument("horizon must satisfy 0 <= horizon < trajectory frames");
  }
  if (stride < 1) throw std::invalid_argument("stride must be >= 1");
}

}  // namespace detail

// Single-trajectory dataset; samples are cut into contiguous time blocks per
// split so no trajectory segment leaks across splits. Charged systems emit
// edge attributes a_ij = q_i * q_j; log-mass features use the natural log.
inline TrajectoryDataset make_dataset(const Trajectory& traj, std::int64_t horizon,
                                      std::int64_t stride, NodeFeatureKind features,
                                      const std::array<double, 3>& split_fracs) {
  detail::validate_dataset_args(traj, horizon, stride);
  detail::check_split_fractions(split_fracs);
  TrajectoryDataset ds;
  ds.n_bodies = traj.n_bodies;
  ds.horizon = horizon;
  ds.stride = stride;
  ds.dt = traj.dt;
  ds.feature_kind = features;
  ds.edge_attr_width = (features == NodeFeatureKind::kCharge) ? 1 : 0;
  std::vector<std::int64_t> starts;
  for (std::int64_t s = 0; s + horizon < traj.n_frames; s += stride) starts.push_back(s);
  for (auto s : starts) detail::append_sample(ds, traj, s, horizon);
  ds.split_tags = detail::block_split(ds.n_samples, split_fracs);
  return ds;
}

// Multi-system dataset: one or more samples per trajectory, split along
// whole trajectories so no system appears in two splits.
inline TrajectoryDataset make_dataset(const std::vector<Trajectory>& trajectories,
                                      std::int64_t horizon, std::int64_t stride,
                                      NodeFeatureKind features,
                                      const std::array<double, 3>& split_fracs) {
  if (trajectories.empty()) throw std::invalid_argument("make_dataset: no trajectories");
  detail::check_split_fractions(split_fracs);
  TrajectoryDataset ds;
  ds.n_bodies = trajectories[0].n_bodies;
  ds.horizon = horizon;
  ds.stride = stride;
  ds.dt = trajectories[0].dt;
  ds.feature_kind = features;
  ds.edge_attr_width = (features == NodeFeatureKind::kCharge) ? 1 : 0;

  const auto system_tags = detail::block_split(
      static_cast<std::int64_t>(trajectories.size()), split_fracs);
  for (std::size_t t = 0; t < trajectories.size(); ++t) {
    const Trajectory& traj = trajectories[t];
    if (traj.n_bodies != ds.n_bodies) {
      throw std::invalid_argument("make_dataset: trajectories disagree on body count");
    }
    detail::validate_dataset_args(traj, horizon, stride);
    for (std::int64_t s = 0; s + horizon < traj.n_frames; s += stride) {
      detail::append_sample(ds, traj, s, horizon);
      ds.split_tags.push_back(system_tags[t]);
    }
  }
  return ds;
}

inline void save_dataset(const std::filesystem::path& path, const TrajectoryDataset& ds) {
  ArrayStore store;
  store.meta = {{"kind", "dataset"},
                {"n_bodies", ds.n_bodies},
                {"n_samples", ds.n_samples},
                {"horizon", ds.horizon},
                {"stride", ds.stride},
                {"dt", ds.dt},
                {"feature_kind",
                 ds.feature_kind == NodeFeatureKind::kCharge ? "charge" : "log_mass"},
                {"edge_attr_width", ds.edge_attr_width}};
  const std::int64_t s = ds.n_samples, n = ds.n_bodies;
  store.arrays.push_back({"input_positions", {s, n, 3}, ds.input_positions});
  store.arrays.push_back({"input_velocities", {s, n, 3}, ds.input_velocities});
  store.arrays.push_back({"target_positions", {s, n, 3}, ds.target_positions});
  store.arrays.push_back({"node_features", {s, n}, ds.node_features});
  if (ds.edge_attr_width > 0) {
    store.arrays.push_back(
        {"edge_attrs", {s, ds.n_edges_per_sample(), ds.edge_attr_width}, ds.edge_attrs});
  }
  std::vector<double> tags(static_cast<std::size_t>(s));
  for (std::int64_t i = 0; i < s; ++i) {
    tags[static_cast<std::size_t>(i)] =
        static_cast<double>(static_cast<int>(ds.split_tags[static_cast<std::size_t>(i)]));
  }
  store.arrays.push_back({"split_tags", {s}, std::move(tags)});
  save_container(path, store);
}

inline TrajectoryDataset load_dataset(const std::filesystem::path& path) {
  const ArrayStore store = load_container(path);
  if (store.meta.value("kind", "") != "dataset") {
    throw ContainerError(ContainerError::Kind::kLayout, "container is not a dataset");
  }
  TrajectoryDataset ds;
  ds.n_bodies = store.meta.at("n_bodies").get<std::int64_t>();
  ds.n_samples = store.meta.at("n_samples").get<std::int64_t>();
  ds.horizon = store.meta.at("horizon").get<std::int64_t>();
  ds.stride = store.meta.at("stride").get<std::int64_t>();
  ds.dt = store.meta.at("dt").get<double>();
  const std::string kind = store.meta.at("feature_kind").get<std::string>();
  ds.feature_kind = (kind == "charge") ? NodeFeatureKind::kCharge : NodeFeatureKind::kLogMass;
  ds.edge_attr_width = store.meta.at("edge_attr_width").get<std::int64_t>();
  ds.input_positions = store.at("input_positions").values;
  ds.input_velocities = store.at("input_velocities").values;
  ds.target_positions = store.at("target_positions").values;
  ds.node_features = store.at("node_features").values;
  if (ds.edge_attr_width > 0) ds.edge_attrs = store.at("edge_attrs").values;
  for (double t : store.at("split_tags").values) {
    ds.split_tags.push_back(static_cast<Split>(static_cast<int>(t)));
  }
  if (static_cast<std::int64_t>(ds.split_tags.size()) != ds.n_samples) {
    throw ContainerError(ContainerError::Kind::kLayout, "split tag count mismatch");
  }
  return ds;
}

// A model-ready batch: the disjoint union of the selected samples plus the
// stacked prediction targets.
struct BatchData {
  GraphBatch graph;
  std::vector<double> targets;  // [total_nodes, 3]
};

inline BatchData make_batch(const TrajectoryDataset& ds,
                            const std::vector<std::int64_t>& sample_indices) {
  if (sample_indices.empty()) throw std::invalid_argument("make_batch: empty index list");
  const std::int64_t n = ds.n_bodies;
  const std::int64_t e = ds.n_edges_per_sample();
  BatchData out;
  GraphBatch& g = out.graph;
  g.feature_width = 1;
  g.edge_attr_width = ds.edge_attr_width;
  g.has_velocities = true;
  g.n_graphs = static_cast<std::int64_t>(sample_indices.size());
  const auto proto_edges = fully_connected_edges(n);
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < sample_indices.size(); ++k) {
    const std::int64_t s = sample_indices[k];
    if (s < 0 || s >= ds.n_samples) throw std::invalid_argument("make_batch: index out of range");
    const double* p = ds.input_positions.data() + s * n * 3;
    const double* v = ds.input_velocities.data() + s * n * 3;
    const double* t = ds.target_positions.data() + s * n * 3;
    const double* f = ds.node_features.data() + s * n;
    g.coords.insert(g.coords.end(), p, p + n * 3);
    g.velocities.insert(g.velocities.end(), v, v + n * 3);
    g.features.insert(g.features.end(), f, f + n);
    out.targets.insert(out.targets.end(), t, t + n * 3);
    if (ds.edge_attr_width > 0) {
      const double* a = ds.edge_attrs.data() + s * e * ds.edge_attr_width;
      g.edge_attrs.insert(g.edge_attrs.end(), a, a + e * ds.edge_attr_width);
    }
    for (const auto& [dst, src] : proto_edges) g.edges.emplace_back(dst + offset, src + offset);
    for (std::int64_t i = 0; i < n; ++i) g.graph_ids.push_back(static_cast<std::int64_t>(k));
    offset += n;
  }
  g.n_nodes = offset;
  g.canonicalize();
  return out;
}

}  // namespace mcegnn
