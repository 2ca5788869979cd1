#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

namespace mcegnn {

// A batch of geometric graphs, stored as one disjoint union. Edges are
// directed (dst, src): the message for edge (i, j) flows into node i. After
// canonicalize() the edge list is sorted by (dst, src), which fixes the
// aggregation order bit-for-bit.
struct GraphBatch {
  std::int64_t n_nodes = 0;
  std::int64_t feature_width = 0;
  std::int64_t edge_attr_width = 0;
  bool has_velocities = false;

  std::vector<double> coords;      // [n, 3], physical positions
  std::vector<double> features;    // [n, feature_width]
  std::vector<double> velocities;  // [n, 3] when has_velocities
  std::vector<std::pair<std::int64_t, std::int64_t>> edges;  // (dst, src)
  std::vector<double> edge_attrs;  // [n_edges, edge_attr_width]
  std::vector<std::int64_t> graph_ids;  // node -> graph index
  std::int64_t n_graphs = 1;

  std::int64_t n_edges() const { return static_cast<std::int64_t>(edges.size()); }

  // Sorts edges (carrying attribute rows along) and validates the structural
  // invariants.
  void canonicalize() {
    validate_sizes();
    std::vector<std::int64_t> order(edges.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = static_cast<std::int64_t>(k);
    std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
      return edges[static_cast<std::size_t>(a)] < edges[static_cast<std::size_t>(b)];
    });
    std::vector<std::pair<std::int64_t, std::int64_t>> sorted_edges(edges.size());
    std::vector<double> sorted_attrs(edge_attrs.size());
    for (std::size_t k = 0; k < order.size(); ++k) {
      sorted_edges[k] = edges[static_cast<std::size_t>(order[k])];
      if (edge_attr_width > 0) {
        std::copy(edge_attrs.begin() + order[k] * edge_attr_width,
                  edge_attrs.begin() + (order[k] + 1) * edge_attr_width,
                  sorted_attrs.begin() + static_cast<std::int64_t>(k) * edge_attr_width);
      }
    }
    edges = std::move(sorted_edges);
    edge_attrs = std::move(sorted_attrs);
  }

  void validate_sizes() const {
    if (static_cast<std::int64_t>(coords.size()) != n_nodes * 3) {
      throw std::invalid_argument("GraphBatch: coords size mismatch");
    }
    if (static_cast<std::int64_t>(features.size()) != n_nodes * feature_width) {
      throw std::invalid_argument("GraphBatch: features size mismatch");
    }
    if (has_velocities && static_cast<std::int64_t>(velocities.size()) != n_nodes * 3) {
      throw std::invalid_argument("GraphBatch: velocities size mismatch");
    }
    if (static_cast<std::int64_t>(edge_attrs.size()) != n_edges() * edge_attr_width) {
      throw std::invalid_argument("GraphBatch: edge attribute size mismatch");
    }
    if (static_cast<std::int64_t>(graph_ids.size()) != n_nodes) {
      throw std::invalid_argument("GraphBatch: graph_ids size mismatch");
    }
    for (const auto& [dst, src] : edges) {
      if (dst < 0 || dst >= n_nodes || src < 0 || src >= n_nodes) {
        throw std::invalid_argument("GraphBatch: edge endpoint out of range");
      }
      if (dst == src) throw std::invalid_argument("GraphBatch: self-edge");
      if (graph_ids[static_cast<std::size_t>(dst)] != graph_ids[static_cast<std::size_t>(src)]) {
        throw std::invalid_argument("GraphBatch: edge crosses graph boundary");
      }
    }
    for (auto g : graph_ids) {
      if (g < 0 || g >= n_graphs) throw std::invalid_argument("GraphBatch: graph id out of range");
    }
  }

  // Disjoint union with node indices offset per graph.
  static GraphBatch merge(const std::vector<GraphBatch>& parts) {
    if (parts.empty()) throw std::invalid_argument("GraphBatch::merge: no parts");
    GraphBatch out;
    out.feature_width = parts[0].feature_width;
    out.edge_attr_width = parts[0].edge_attr_width;
    out.has_velocities = parts[0].has_velocities;
    std::int64_t node_offset = 0;
    std::int64_t graph_offset = 0;
    for (const auto& p : parts) {
      if (p.feature_width != out.feature_width || p.edge_attr_width != out.edge_attr_width ||
          p.has_velocities != out.has_velocities) {
        throw std::invalid_argument("GraphBatch::merge: incompatible parts");
      }
      out.coords.insert(out.coords.end(), p.coords.begin(), p.coords.end());
      out.features.insert(out.features.end(), p.features.begin(), p.features.end());
      out.velocities.insert(out.velocities.end(), p.velocities.begin(), p.velocities.end());
      out.edge_attrs.insert(out.edge_attrs.end(), p.edge_attrs.begin(), p.edge_attrs.end());
      for (const auto& [dst, src] : p.edges) {
        out.edges.emplace_back(dst + node_offset, src + node_offset);
      }
      for (auto g : p.graph_ids) out.graph_ids.push_back(g + graph_offset);
      node_offset += p.n_nodes;
      graph_offset += p.n_graphs;
    }
    out.n_nodes = node_offset;
    out.n_graphs = graph_offset;
    out.canonicalize();
    return out;
  }
};

// Fully connected directed edge list over n nodes, already in (dst, src)
// sorted order.
inline std::vector<std::pair<std::int64_t, std::int64_t>> fully_connected_edges(std::int64_t n) {
  std::vector<std::pair<std::int64_t, std::int64_t>> edges;
  edges.reserve(static_cast<std::size_t>(n * (n - 1)));
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      if (i != j) edges.emplace_back(i, j);
    }
  }
  return edges;
}

}  // namespace mcegnn
