#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mcegnn/graph.hpp"
#include "mcegnn/nn.hpp"
#include "mcegnn/tensor.hpp"

namespace mcegnn {

enum class Readout { kPositions, kInvariantScalar };
enum class CoordAggregation { kMean, kSum };

// Init gain for the channel-mixing head. A near-zero initial mixing keeps
// fresh stacks from amplifying coordinates layer over layer, which both the
// symmetry tolerances and early training depend on.
inline constexpr double kMixingHeadGain = 1e-3;

// Test hook for the property harness: kAbsoluteCoords feeds the edge MLP raw
// coordinate components instead of invariant squared norms, which must break
// the symmetry checks.
enum class SymmetryBreak { kNone, kAbsoluteCoords };

struct EgnnConfig {
  std::int64_t n_layers = 4;
  std::int64_t hidden_width = 64;   // node feature width d_h
  std::int64_t message_width = 64;  // edge message width d
  std::int64_t channels = 1;        // vector channels m in interior layers
  std::int64_t feature_width = 1;   // raw node feature width
  std::int64_t edge_attr_width = 0;
  bool velocity_mode = false;
  bool residual_positions = true;
  std::optional<double> clip_norm;
  Readout readout = Readout::kPositions;
  CoordAggregation coord_aggregation = CoordAggregation::kMean;

  void validate() const {
    if (n_layers < 1) throw std::invalid_argument("config: n_layers must be >= 1");
    if (hidden_width < 1 || message_width < 1 || feature_width < 1) {
      throw std::invalid_argument("config: widths must be >= 1");
    }
    if (channels < 1) throw std::invalid_argument("config: channels must be >= 1");
    if (edge_attr_width < 0) throw std::invalid_argument("config: edge_attr_width must be >= 0");
    if (clip_norm && !(*clip_norm > 0.0)) {
      throw std::invalid_argument("config: clip_norm must be > 0");
    }
  }
};

inline nlohmann::json to_json(const EgnnConfig& c) {
  return nlohmann::json{
      {"n_layers", c.n_layers},
      {"hidden_width", c.hidden_width},
      {"message_width", c.message_width},
      {"channels", c.channels},
      {"feature_width", c.feature_width},
      {"edge_attr_width", c.edge_attr_width},
      {"velocity_mode", c.velocity_mode},
      {"residual_positions", c.residual_positions},
      {"clip_norm", c.clip_norm ? nlohmann::json(*c.clip_norm) : nlohmann::json(nullptr)},
      {"readout", c.readout == Readout::kPositions ? "positions" : "invariant_scalar"},
      {"coord_aggregation",
       c.coord_aggregation == CoordAggregation::kMean ? "mean" : "sum"},
  };
}

namespace detail {

inline void require_keys(const nlohmann::json& j, const std::vector<std::string>& keys,
                         const std::string& what) {
  if (!j.is_object()) throw std::invalid_argument(what + ": expected a JSON object");
  for (const auto& k : keys) {
    if (!j.contains(k)) throw std::invalid_argument(what + ": missing key '" + k + "'");
  }
  for (const auto& [k, v] : j.items()) {
    (void)v;
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw std::invalid_argument(what + ": unknown key '" + k + "'");
    }
  }
}

}  // namespace detail

inline EgnnConfig egnn_config_from_json(const nlohmann::json& j) {
  detail::require_keys(j,
                       {"n_layers", "hidden_width", "message_width", "channels",
                        "feature_width", "edge_attr_width", "velocity_mode",
                        "residual_positions", "clip_norm", "readout", "coord_aggregation"},
                       "model config");
  EgnnConfig c;
  c.n_layers = j.at("n_layers").get<std::int64_t>();
  c.hidden_width = j.at("hidden_width").get<std::int64_t>();
  c.message_width = j.at("message_width").get<std::int64_t>();
  c.channels = j.at("channels").get<std::int64_t>();
  c.feature_width = j.at("feature_width").get<std::int64_t>();
  c.edge_attr_width = j.at("edge_attr_width").get<std::int64_t>();
  c.velocity_mode = j.at("velocity_mode").get<bool>();
  c.residual_positions = j.at("residual_positions").get<bool>();
  if (!j.at("clip_norm").is_null()) c.clip_norm = j.at("clip_norm").get<double>();
  const std::string readout = j.at("readout").get<std::string>();
  if (readout == "positions") {
    c.readout = Readout::kPositions;
  } else if (readout == "invariant_scalar") {
    c.readout = Readout::kInvariantScalar;
  } else {
    throw std::invalid_argument("model config: bad readout '" + readout + "'");
  }
  const std::string agg = j.at("coord_aggregation").get<std::string>();
  if (agg == "mean") {
    c.coord_aggregation = CoordAggregation::kMean;
  } else if (agg == "sum") {
    c.coord_aggregation = CoordAggregation::kSum;
  } else {
    throw std::invalid_argument("model config: bad coord_aggregation '" + agg + "'");
  }
  c.validate();
  return c;
}

// Per-layer channel schedule: the first layer lifts 1 -> m, interior layers
// stay at m, the last layer projects m -> 1, so the network consumes and
// produces a single vector per node.
inline std::vector<std::pair<std::int64_t, std::int64_t>> channel_schedule(
    std::int64_t n_layers, std::int64_t m) {
  std::vector<std::pair<std::int64_t, std::int64_t>> s;
  for (std::int64_t l = 0; l < n_layers; ++l) {
    const std::int64_t m_in = (l == 0) ? 1 : m;
    const std::int64_t m_out = (l == n_layers - 1) ? 1 : m;
    s.emplace_back(m_in, m_out);
  }
  return s;
}

namespace detail {

struct EdgeIndex {
  std::vector<std::int64_t> dst, src;
  std::vector<double> mean_weights;  // 1/max(1, in-degree) per node
};

inline EdgeIndex build_edge_index(const GraphBatch& b) {
  if (!std::is_sorted(b.edges.begin(), b.edges.end())) {
    throw std::invalid_argument("GraphBatch edges must be canonicalized (sorted by dst, src)");
  }
  EdgeIndex idx;
  idx.dst.reserve(b.edges.size());
  idx.src.reserve(b.edges.size());
  std::vector<std::int64_t> degree(static_cast<std::size_t>(b.n_nodes), 0);
  for (const auto& [dst, src] : b.edges) {
    idx.dst.push_back(dst);
    idx.src.push_back(src);
    ++degree[static_cast<std::size_t>(dst)];
  }
  idx.mean_weights.resize(static_cast<std::size_t>(b.n_nodes));
  for (std::int64_t i = 0; i < b.n_nodes; ++i) {
    idx.mean_weights[static_cast<std::size_t>(i)] =
        1.0 / static_cast<double>(std::max<std::int64_t>(1, degree[static_cast<std::size_t>(i)]));
  }
  return idx;
}

// Residual combination across a channel transition: identity at equal widths,
// broadcast on lift, channel 0 on projection.
inline Tensor position_residual(const Tensor& x, std::int64_t m_in, std::int64_t m_out) {
  if (m_in == m_out) return x;
  if (m_in == 1 && m_out > 1) {
    return concat(std::vector<Tensor>(static_cast<std::size_t>(m_out), x), 2);
  }
  if (m_out == 1) return slice(x, 2, 0, 1);
  throw std::logic_error("unsupported channel transition in residual");
}

}  // namespace detail

// Multi-channel E(n)-equivariant message-passing network. Each node carries a
// 3 x m matrix of equivariant vectors (channel 0 is the physical position)
// plus invariant scalar features; layers exchange messages built from
// channel-wise squared norms and mix channels through a learned m x m' matrix
// per edge.
class MultiChannelEgnn {
 public:
  MultiChannelEgnn(EgnnConfig config, std::uint64_t seed)
      : config_(std::move(config)), seed_(seed), tape_(std::make_unique<Tape>()) {
    config_.validate();
    Rng rng(seed, rng_streams::kParamInit);
    const auto dh = config_.hidden_width;
    const auto d = config_.message_width;
    const auto de = config_.edge_attr_width;
    embed_ = Mlp(*tape_, {config_.feature_width, dh}, Activation::kIdentity, rng);
    for (const auto& [m_in, m_out] : channel_schedule(config_.n_layers, config_.channels)) {
      Layer layer;
      layer.m_in = m_in;
      layer.m_out = m_out;
      layer.phi_e = Mlp(*tape_, {dh + dh + m_in + de, d, d}, Activation::kSilu, rng);
      layer.phi_x = Mlp(*tape_, {d, d, m_in * m_out}, Activation::kIdentity, rng,
                        kMixingHeadGain);
      layer.phi_h = Mlp(*tape_, {dh + d, dh, dh}, Activation::kIdentity, rng);
      if (config_.velocity_mode) {
        layer.phi_v = Mlp(*tape_, {dh, d, m_out}, Activation::kIdentity, rng);
      }
      layers_.push_back(std::move(layer));
    }
    if (config_.readout == Readout::kInvariantScalar) {
      readout_mlp_ = Mlp(*tape_, {dh, dh, 1}, Activation::kIdentity, rng);
    }
  }

  // Runs the layer stack. Returns [n,3] predicted positions (channel 0 of the
  // final coordinates) or [n_graphs] pooled invariant scalars, per config.
  Tensor forward(const GraphBatch& batch, SymmetryBreak symmetry_break = SymmetryBreak::kNone) const {
    check_batch(batch);
    const auto idx = detail::build_edge_index(batch);
    const std::int64_t n = batch.n_nodes;

    Tensor h = embed_.forward(
        Tensor::constant({n, config_.feature_width}, batch.features));
    Tensor x = Tensor::constant({n, 3, 1}, batch.coords);
    Tensor v0;
    if (config_.velocity_mode) v0 = Tensor::constant({n, 3}, batch.velocities);
    Tensor attrs;
    if (config_.edge_attr_width > 0) {
      attrs = Tensor::constant({batch.n_edges(), config_.edge_attr_width}, batch.edge_attrs);
    }

    for (const auto& layer : layers_) {
      Tensor diffs = sub(gather_rows(x, idx.dst), gather_rows(x, idx.src));  // [e,3,m_in]

      Tensor invariants;
      if (symmetry_break == SymmetryBreak::kAbsoluteCoords) {
        // Deliberately wrong: x-components of the destination node's channels.
        invariants = gather_rows(reshape(slice(x, 1, 0, 1), {n, layer.m_in}), idx.dst);
      } else {
        invariants = channel_sqnorms(diffs);  // [e,m_in]
      }

      std::vector<Tensor> parts{gather_rows(h, idx.dst), gather_rows(h, idx.src), invariants};
      if (config_.edge_attr_width > 0) parts.push_back(attrs);
      Tensor messages = layer.phi_e.forward(concat(parts, 1));  // [e,d]

      Tensor mix = reshape(layer.phi_x.forward(messages),
                           {batch.n_edges(), layer.m_in, layer.m_out});
      Tensor agg = scatter_sum_rows(bmm(diffs, mix), idx.dst, n);  // [n,3,m_out]
      if (config_.coord_aggregation == CoordAggregation::kMean) {
        agg = row_scale(agg, idx.mean_weights);
      }

      Tensor update = agg;
      if (config_.velocity_mode) {
        update = add(outer_rows(v0, layer.phi_v->forward(h)), agg);
      }
      if (config_.residual_positions) {
        x = add(detail::position_residual(x, layer.m_in, layer.m_out), update);
      } else {
        x = update;
      }

      Tensor msum = scatter_sum_rows(messages, idx.dst, n);  // [n,d]
      h = add(h, layer.phi_h.forward(concat({h, msum}, 1)));
    }

    if (config_.readout == Readout::kInvariantScalar) {
      Tensor pooled = scatter_sum_rows(h, batch.graph_ids, batch.n_graphs);
      return reshape(readout_mlp_->forward(pooled), {batch.n_graphs});
    }
    return reshape(slice(x, 2, 0, 1), {n, 3});
  }

  const EgnnConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  Tape& tape() { return *tape_; }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> ps = embed_.parameters();
    for (const auto& layer : layers_) {
      for (const auto& p : layer.phi_e.parameters()) ps.push_back(p);
      for (const auto& p : layer.phi_x.parameters()) ps.push_back(p);
      for (const auto& p : layer.phi_h.parameters()) ps.push_back(p);
      if (layer.phi_v) {
        for (const auto& p : layer.phi_v->parameters()) ps.push_back(p);
      }
    }
    if (readout_mlp_) {
      for (const auto& p : readout_mlp_->parameters()) ps.push_back(p);
    }
    return ps;
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& p : parameters()) n += p.size();
    return n;
  }

  void freeze() {
    embed_.freeze();
    for (auto& layer : layers_) {
      layer.phi_e.freeze();
      layer.phi_x.freeze();
      layer.phi_h.freeze();
      if (layer.phi_v) layer.phi_v->freeze();
    }
    if (readout_mlp_) readout_mlp_->freeze();
  }

 private:
  struct Layer {
    Mlp phi_e, phi_x, phi_h;
    std::optional<Mlp> phi_v;
    std::int64_t m_in = 1, m_out = 1;
  };

  void check_batch(const GraphBatch& b) const {
    b.validate_sizes();
    if (b.feature_width != config_.feature_width) {
      throw std::invalid_argument("batch feature width does not match model config");
    }
    if (b.edge_attr_width != config_.edge_attr_width) {
      throw std::invalid_argument("batch edge attribute width does not match model config");
    }
    if (config_.velocity_mode && !b.has_velocities) {
      throw std::invalid_argument("velocity mode requires batch velocities");
    }
  }

  EgnnConfig config_;
  std::uint64_t seed_ = 0;
  std::unique_ptr<Tape> tape_;
  Mlp embed_;
  std::vector<Layer> layers_;
  std::optional<Mlp> readout_mlp_;
};

// Reference single-channel network: one position vector per node, the edge
// MLP sees one squared distance, and the coordinate update scales the raw
// difference vector by a learned scalar per edge. Parameter layout matches
// MultiChannelEgnn at channels == 1, so identical seeds give identical
// initializations.
class SingleChannelEgnn {
 public:
  SingleChannelEgnn(EgnnConfig config, std::uint64_t seed)
      : config_(std::move(config)), tape_(std::make_unique<Tape>()) {
    config_.validate();
    if (config_.channels != 1) {
      throw std::invalid_argument("SingleChannelEgnn requires channels == 1");
    }
    if (config_.readout != Readout::kPositions) {
      throw std::invalid_argument("SingleChannelEgnn supports the positions readout only");
    }
    Rng rng(seed, rng_streams::kParamInit);
    const auto dh = config_.hidden_width;
    const auto d = config_.message_width;
    const auto de = config_.edge_attr_width;
    embed_ = Mlp(*tape_, {config_.feature_width, dh}, Activation::kIdentity, rng);
    for (std::int64_t l = 0; l < config_.n_layers; ++l) {
      Layer layer;
      layer.phi_e = Mlp(*tape_, {dh + dh + 1 + de, d, d}, Activation::kSilu, rng);
      layer.phi_x = Mlp(*tape_, {d, d, 1}, Activation::kIdentity, rng, kMixingHeadGain);
      layer.phi_h = Mlp(*tape_, {dh + d, dh, dh}, Activation::kIdentity, rng);
      if (config_.velocity_mode) {
        layer.phi_v = Mlp(*tape_, {dh, d, 1}, Activation::kIdentity, rng);
      }
      layers_.push_back(std::move(layer));
    }
  }

  Tensor forward(const GraphBatch& batch) const {
    batch.validate_sizes();
    if (config_.velocity_mode && !batch.has_velocities) {
      throw std::invalid_argument("velocity mode requires batch velocities");
    }
    const auto idx = detail::build_edge_index(batch);
    const std::int64_t n = batch.n_nodes;
    const std::int64_t e = batch.n_edges();

    Tensor h = embed_.forward(
        Tensor::constant({n, config_.feature_width}, batch.features));
    Tensor x = Tensor::constant({n, 3}, batch.coords);
    Tensor v0;
    if (config_.velocity_mode) v0 = Tensor::constant({n, 3}, batch.velocities);
    Tensor attrs;
    if (config_.edge_attr_width > 0) {
      attrs = Tensor::constant({e, config_.edge_attr_width}, batch.edge_attrs);
    }

    for (const auto& layer : layers_) {
      Tensor diffs = sub(gather_rows(x, idx.dst), gather_rows(x, idx.src));  // [e,3]
      Tensor sqdist = channel_sqnorms(reshape(diffs, {e, 3, 1}));            // [e,1]

      std::vector<Tensor> parts{gather_rows(h, idx.dst), gather_rows(h, idx.src), sqdist};
      if (config_.edge_attr_width > 0) parts.push_back(attrs);
      Tensor messages = layer.phi_e.forward(concat(parts, 1));

      Tensor weight = reshape(layer.phi_x.forward(messages), {e, 1, 1});
      Tensor upd = reshape(bmm(reshape(diffs, {e, 3, 1}), weight), {e, 3});
      Tensor agg = scatter_sum_rows(upd, idx.dst, n);
      if (config_.coord_aggregation == CoordAggregation::kMean) {
        agg = row_scale(agg, idx.mean_weights);
      }

      Tensor update = agg;
      if (config_.velocity_mode) {
        Tensor vterm = reshape(outer_rows(v0, layer.phi_v->forward(h)), {n, 3});
        update = add(vterm, agg);
      }
      x = config_.residual_positions ? add(x, update) : update;

      Tensor msum = scatter_sum_rows(messages, idx.dst, n);
      h = add(h, layer.phi_h.forward(concat({h, msum}, 1)));
    }
    return x;
  }

  const EgnnConfig& config() const { return config_; }
  Tape& tape() { return *tape_; }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> ps = embed_.parameters();
    for (const auto& layer : layers_) {
      for (const auto& p : layer.phi_e.parameters()) ps.push_back(p);
      for (const auto& p : layer.phi_x.parameters()) ps.push_back(p);
      for (const auto& p : layer.phi_h.parameters()) ps.push_back(p);
      if (layer.phi_v) {
        for (const auto& p : layer.phi_v->parameters()) ps.push_back(p);
      }
    }
    return ps;
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& p : parameters()) n += p.size();
    return n;
  }

 private:
  struct Layer {
    Mlp phi_e, phi_x, phi_h;
    std::optional<Mlp> phi_v;
  };

  EgnnConfig config_;
  std::unique_ptr<Tape> tape_;
  Mlp embed_;
  std::vector<Layer> layers_;
};

}  // namespace mcegnn
