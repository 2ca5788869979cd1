#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mcegnn/egnn.hpp"
#include "mcegnn/graph.hpp"
#include "mcegnn/nn.hpp"
#include "mcegnn/rng.hpp"
#include "mcegnn/tensor.hpp"
#include "mcegnn/train.hpp"

namespace mcegnn {

// dim x dim orthogonal matrix (row-major) from QR of a Gaussian matrix via
// modified Gram-Schmidt, with the R diagonal sign-fixed so the distribution
// is Haar. det_sign: +1 or -1 forces the determinant by flipping the last
// column; 0 leaves it as drawn.
inline std::vector<double> random_orthogonal(std::int64_t dim, std::uint64_t seed,
                                             int det_sign = 0) {
  if (dim < 1) throw std::invalid_argument("random_orthogonal: dim must be >= 1");
  Rng rng(seed, rng_streams::kHarness);
  // Columns of G orthonormalized in place.
  std::vector<double> q(static_cast<std::size_t>(dim * dim));
  for (auto& x : q) x = rng.normal();
  for (std::int64_t c = 0; c < dim; ++c) {
    for (std::int64_t p = 0; p < c; ++p) {
      double dot = 0.0;
      for (std::int64_t r = 0; r < dim; ++r) dot += q[r * dim + c] * q[r * dim + p];
      for (std::int64_t r = 0; r < dim; ++r) q[r * dim + c] -= dot * q[r * dim + p];
    }
    double norm = 0.0;
    for (std::int64_t r = 0; r < dim; ++r) norm += q[r * dim + c] * q[r * dim + c];
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw std::runtime_error("random_orthogonal: degenerate draw");
    // Sign-fix: make the "R" diagonal entry positive.
    const double sign = q[c * dim + c] < 0.0 ? -1.0 : 1.0;
    for (std::int64_t r = 0; r < dim; ++r) q[r * dim + c] *= sign / norm;
  }
  if (det_sign != 0) {
    // Determinant via Gaussian elimination on a copy.
    std::vector<double> a = q;
    double det = 1.0;
    for (std::int64_t c = 0; c < dim; ++c) {
      std::int64_t pivot = c;
      for (std::int64_t r = c + 1; r < dim; ++r) {
        if (std::abs(a[r * dim + c]) > std::abs(a[pivot * dim + c])) pivot = r;
      }
      if (pivot != c) {
        for (std::int64_t k = 0; k < dim; ++k) std::swap(a[c * dim + k], a[pivot * dim + k]);
        det = -det;
      }
      det *= a[c * dim + c];
      for (std::int64_t r = c + 1; r < dim; ++r) {
        const double f = a[r * dim + c] / a[c * dim + c];
        for (std::int64_t k = c; k < dim; ++k) a[r * dim + k] -= f * a[c * dim + k];
      }
    }
    if ((det > 0.0 && det_sign < 0) || (det < 0.0 && det_sign > 0)) {
      for (std::int64_t r = 0; r < dim; ++r) q[r * dim + dim - 1] = -q[r * dim + dim - 1];
    }
  }
  return q;
}

enum class GroupElement { kRotation, kReflection, kTranslation, kRotationTranslation, kPermutation };

inline const char* group_element_name(GroupElement g) {
  switch (g) {
    case GroupElement::kRotation: return "rotation";
    case GroupElement::kReflection: return "reflection";
    case GroupElement::kTranslation: return "translation";
    case GroupElement::kRotationTranslation: return "rotation_translation";
    case GroupElement::kPermutation: return "permutation";
  }
  return "?";
}

struct PropertyRecord {
  std::string property;
  std::int64_t trials = 0;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"property", property},   {"trials", trials},
                          {"max_deviation", max_deviation}, {"tolerance", tolerance},
                          {"pass", pass},           {"seed", seed}};
  }
};

struct EquivarianceReport {
  std::vector<PropertyRecord> records;

  bool all_pass() const {
    for (const auto& r : records) {
      if (!r.pass) return false;
    }
    return true;
  }

  nlohmann::json to_json() const {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : records) rs.push_back(r.to_json());
    return nlohmann::json{{"records", rs}, {"all_pass", all_pass()}};
  }
};

// ---- group actions on batches ----------------------------------------------

inline void rotate_inplace(std::vector<double>& rows, const std::vector<double>& r3x3) {
  for (std::size_t i = 0; i + 2 < rows.size(); i += 3) {
    const double x = rows[i], y = rows[i + 1], z = rows[i + 2];
    rows[i] = r3x3[0] * x + r3x3[1] * y + r3x3[2] * z;
    rows[i + 1] = r3x3[3] * x + r3x3[4] * y + r3x3[5] * z;
    rows[i + 2] = r3x3[6] * x + r3x3[7] * y + r3x3[8] * z;
  }
}

// Rotation/reflection acts on every spatial quantity (positions, velocities).
inline GraphBatch apply_rotation(GraphBatch b, const std::vector<double>& r3x3) {
  rotate_inplace(b.coords, r3x3);
  if (b.has_velocities) rotate_inplace(b.velocities, r3x3);
  return b;
}

// Translation acts on positions only.
inline GraphBatch apply_translation(GraphBatch b, const double t[3]) {
  for (std::size_t i = 0; i + 2 < b.coords.size(); i += 3) {
    b.coords[i] += t[0];
    b.coords[i + 1] += t[1];
    b.coords[i + 2] += t[2];
  }
  return b;
}

// Node relabeling: perm[i] is the new index of old node i. Edge attribute
// rows follow their edges; canonicalize() restores sorted order.
inline GraphBatch apply_permutation(const GraphBatch& b, const std::vector<std::int64_t>& perm) {
  if (static_cast<std::int64_t>(perm.size()) != b.n_nodes) {
    throw std::invalid_argument("apply_permutation: size mismatch");
  }
  GraphBatch out = b;
  for (std::int64_t i = 0; i < b.n_nodes; ++i) {
    const std::int64_t ni = perm[static_cast<std::size_t>(i)];
    for (int d = 0; d < 3; ++d) {
      out.coords[ni * 3 + d] = b.coords[i * 3 + d];
      if (b.has_velocities) out.velocities[ni * 3 + d] = b.velocities[i * 3 + d];
    }
    for (std::int64_t f = 0; f < b.feature_width; ++f) {
      out.features[ni * b.feature_width + f] = b.features[i * b.feature_width + f];
    }
    out.graph_ids[static_cast<std::size_t>(ni)] = b.graph_ids[static_cast<std::size_t>(i)];
  }
  for (std::size_t k = 0; k < b.edges.size(); ++k) {
    out.edges[k] = {perm[static_cast<std::size_t>(b.edges[k].first)],
                    perm[static_cast<std::size_t>(b.edges[k].second)]};
  }
  out.canonicalize();
  return out;
}

namespace detail {

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::logic_error("max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline std::vector<double> forward_values(MultiChannelEgnn& model, const GraphBatch& batch,
                                          SymmetryBreak symmetry_break = SymmetryBreak::kNone) {
  const std::size_t mark = model.tape().size();
  std::vector<double> out = model.forward(batch, symmetry_break).data();
  model.tape().truncate(mark);
  return out;
}

}  // namespace detail

// Applies the group element to the inputs, runs the model, applies it to the
// reference output and records the worst deviation over `trials` random draws.
inline PropertyRecord check_equivariance(MultiChannelEgnn& model, const GraphBatch& batch,
                                         GroupElement element, std::int64_t trials, double tol,
                                         std::uint64_t seed,
                                         SymmetryBreak symmetry_break = SymmetryBreak::kNone) {
  PropertyRecord rec;
  rec.property = group_element_name(element);
  rec.trials = trials;
  rec.tolerance = tol;
  rec.seed = seed;

  const bool invariant_out = model.config().readout == Readout::kInvariantScalar;
  const std::vector<double> reference = detail::forward_values(model, batch, symmetry_break);
  Rng rng(seed, rng_streams::kHarness);

  for (std::int64_t t = 0; t < trials; ++t) {
    const std::uint64_t trial_seed = rng.next_u64();
    GraphBatch transformed = batch;
    std::vector<double> expected = reference;

    switch (element) {
      case GroupElement::kRotation:
      case GroupElement::kReflection: {
        const auto r = random_orthogonal(3, trial_seed, element == GroupElement::kRotation ? 1 : -1);
        transformed = apply_rotation(batch, r);
        if (!invariant_out) rotate_inplace(expected, r);
        break;
      }
      case GroupElement::kTranslation: {
        Rng trng(trial_seed, rng_streams::kHarness);
        double shift[3] = {trng.normal(), trng.normal(), trng.normal()};
        transformed = apply_translation(batch, shift);
        if (!invariant_out && model.config().residual_positions) {
          for (std::size_t i = 0; i + 2 < expected.size(); i += 3) {
            expected[i] += shift[0];
            expected[i + 1] += shift[1];
            expected[i + 2] += shift[2];
          }
        }
        break;
      }
      case GroupElement::kRotationTranslation: {
        const auto r = random_orthogonal(3, trial_seed, 0);
        Rng trng(trial_seed, rng_streams::kHarness);
        double shift[3] = {trng.normal(), trng.normal(), trng.normal()};
        transformed = apply_translation(apply_rotation(batch, r), shift);
        if (!invariant_out) {
          rotate_inplace(expected, r);
          if (model.config().residual_positions) {
            for (std::size_t i = 0; i + 2 < expected.size(); i += 3) {
              expected[i] += shift[0];
              expected[i + 1] += shift[1];
              expected[i + 2] += shift[2];
            }
          }
        }
        break;
      }
      case GroupElement::kPermutation: {
        Rng prng(trial_seed, rng_streams::kHarness);
        std::vector<std::int64_t> perm(static_cast<std::size_t>(batch.n_nodes));
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<std::int64_t>(i);
        prng.shuffle(perm);
        transformed = apply_permutation(batch, perm);
        if (!invariant_out) {
          for (std::int64_t i = 0; i < batch.n_nodes; ++i) {
            for (int d = 0; d < 3; ++d) {
              expected[perm[static_cast<std::size_t>(i)] * 3 + d] = reference[i * 3 + d];
            }
          }
        }
        break;
      }
    }

    const std::vector<double> got = detail::forward_values(model, transformed, symmetry_break);
    rec.max_deviation = std::max(rec.max_deviation, detail::max_abs_diff(got, expected));
  }
  rec.pass = rec.max_deviation <= tol;
  return rec;
}

// Central finite differences over a random subset of parameters against the
// tape gradients of an MSE loss. Relative error is guarded below by 1e-2 so a
// near-zero gradient is compared absolutely.
inline PropertyRecord check_gradients(MultiChannelEgnn& model, const GraphBatch& batch,
                                      std::int64_t max_probes, double tol_rel, double h,
                                      std::uint64_t seed) {
  PropertyRecord rec;
  rec.property = "gradients_vs_finite_differences";
  rec.tolerance = tol_rel;
  rec.seed = seed;

  auto params = model.parameters();
  std::vector<double> targets(static_cast<std::size_t>(batch.n_nodes * 3));
  Rng trng(seed, rng_streams::kHarness);
  for (auto& t : targets) t = trng.normal();
  const Tensor target = Tensor::constant({batch.n_nodes, 3}, targets);

  auto loss_value = [&]() {
    const std::size_t mark = model.tape().size();
    const double v = mse_loss(model.forward(batch), target).value();
    model.tape().truncate(mark);
    return v;
  };

  // One backward pass for the analytic gradients.
  const std::size_t mark = model.tape().size();
  Tensor loss = mse_loss(model.forward(batch), target);
  backward(loss);
  std::vector<std::vector<double>> grads;
  for (const auto& p : params) grads.push_back(p.grad());
  model.tape().truncate(mark);

  std::int64_t total = 0;
  for (const auto& p : params) total += p.size();
  const std::int64_t probes = std::min<std::int64_t>(max_probes, total);
  rec.trials = probes;

  Rng rng(seed, rng_streams::kHarness);
  for (std::int64_t k = 0; k < probes; ++k) {
    const std::size_t pi = static_cast<std::size_t>(rng.below(params.size()));
    const std::size_t ei = static_cast<std::size_t>(
        rng.below(static_cast<std::uint64_t>(params[pi].size())));
    double& slot = params[pi].data()[ei];
    const double saved = slot;
    slot = saved + h;
    const double up = loss_value();
    slot = saved - h;
    const double down = loss_value();
    slot = saved;
    const double fd = (up - down) / (2.0 * h);
    const double an = grads[pi][ei];
    const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-2});
    rec.max_deviation = std::max(rec.max_deviation, rel);
  }
  rec.pass = rec.max_deviation <= tol_rel;
  return rec;
}

// Output agreement between the multi-channel model at m = 1 and the dedicated
// single-channel reference built from the same seed.
inline PropertyRecord check_parity(MultiChannelEgnn& mc, SingleChannelEgnn& reference,
                                   const std::vector<GraphBatch>& batches, double tol,
                                   std::uint64_t seed) {
  PropertyRecord rec;
  rec.property = "single_channel_parity";
  rec.trials = static_cast<std::int64_t>(batches.size());
  rec.tolerance = tol;
  rec.seed = seed;
  if (mc.config().channels != 1) throw std::invalid_argument("check_parity: mc model must have m=1");
  if (mc.param_count() != reference.param_count()) {
    throw std::invalid_argument("check_parity: parameter layouts differ");
  }
  for (const auto& batch : batches) {
    const std::vector<double> a = detail::forward_values(mc, batch);
    const std::size_t mark = reference.tape().size();
    const std::vector<double> b = reference.forward(batch).data();
    reference.tape().truncate(mark);
    rec.max_deviation = std::max(rec.max_deviation, detail::max_abs_diff(a, b));
  }
  rec.pass = rec.max_deviation <= tol;
  return rec;
}

// Random fully connected test batch with unit-scale coordinates.
inline GraphBatch random_batch(std::int64_t n_nodes, std::int64_t feature_width,
                               std::int64_t edge_attr_width, bool velocities,
                               std::uint64_t seed) {
  Rng rng(seed, rng_streams::kHarness);
  GraphBatch b;
  b.n_nodes = n_nodes;
  b.feature_width = feature_width;
  b.edge_attr_width = edge_attr_width;
  b.has_velocities = velocities;
  b.coords.resize(static_cast<std::size_t>(n_nodes * 3));
  for (auto& x : b.coords) x = rng.normal();
  b.features.resize(static_cast<std::size_t>(n_nodes * feature_width));
  for (auto& x : b.features) x = rng.normal();
  if (velocities) {
    b.velocities.resize(static_cast<std::size_t>(n_nodes * 3));
    for (auto& x : b.velocities) x = rng.normal();
  }
  b.edges = fully_connected_edges(n_nodes);
  if (edge_attr_width > 0) {
    b.edge_attrs.resize(static_cast<std::size_t>(b.n_edges() * edge_attr_width));
    for (auto& x : b.edge_attrs) x = rng.normal();
  }
  b.graph_ids.assign(static_cast<std::size_t>(n_nodes), 0);
  b.n_graphs = 1;
  b.canonicalize();
  return b;
}

// The full property suite used by acceptance and the CLI: symmetry checks
// across channel counts and velocity modes, the translation-invariant
// variant, gradient probes, parity, and the mutation sanity check (which
// passes only when the deliberately broken model violates rotation).
inline EquivarianceReport run_full_suite(std::uint64_t seed, std::int64_t trials = 20) {
  EquivarianceReport report;
  const double sym_tol = 1e-9;
  std::uint64_t salt = 0;

  for (std::int64_t m : {1, 2, 3, 5}) {
    for (bool velocity : {false, true}) {
      EgnnConfig cfg;
      cfg.n_layers = 3;
      cfg.hidden_width = 16;
      cfg.message_width = 16;
      cfg.channels = m;
      cfg.feature_width = 2;
      cfg.edge_attr_width = 1;
      cfg.velocity_mode = velocity;
      MultiChannelEgnn model(cfg, seed + salt);
      GraphBatch batch = random_batch(7, cfg.feature_width, cfg.edge_attr_width, true, seed + salt);
      const std::string tag =
          "m" + std::to_string(m) + (velocity ? "_velocity" : "") + "_";
      for (GroupElement g : {GroupElement::kRotation, GroupElement::kReflection,
                             GroupElement::kTranslation, GroupElement::kRotationTranslation,
                             GroupElement::kPermutation}) {
        PropertyRecord rec = check_equivariance(model, batch, g, trials, sym_tol, seed + salt);
        rec.property = tag + rec.property;
        report.records.push_back(rec);
      }
      ++salt;
    }
  }

  {
    // Invariant readout: every group action must leave the output unchanged.
    EgnnConfig cfg;
    cfg.n_layers = 3;
    cfg.hidden_width = 16;
    cfg.message_width = 16;
    cfg.channels = 3;
    cfg.feature_width = 2;
    cfg.readout = Readout::kInvariantScalar;
    MultiChannelEgnn model(cfg, seed + salt);
    GraphBatch batch = random_batch(7, cfg.feature_width, 0, false, seed + salt);
    for (GroupElement g : {GroupElement::kRotation, GroupElement::kReflection,
                           GroupElement::kRotationTranslation, GroupElement::kPermutation}) {
      PropertyRecord rec = check_equivariance(model, batch, g, trials, sym_tol, seed + salt);
      rec.property = std::string("invariant_readout_") + rec.property;
      report.records.push_back(rec);
    }
    ++salt;
  }

  {
    // Residual off: translation-invariant yet rotation-equivariant coordinates.
    EgnnConfig cfg;
    cfg.n_layers = 3;
    cfg.hidden_width = 16;
    cfg.message_width = 16;
    cfg.channels = 2;
    cfg.feature_width = 2;
    cfg.residual_positions = false;
    MultiChannelEgnn model(cfg, seed + salt);
    GraphBatch batch = random_batch(7, cfg.feature_width, 0, false, seed + salt);
    PropertyRecord trans =
        check_equivariance(model, batch, GroupElement::kTranslation, trials, 1e-12, seed + salt);
    trans.property = "no_residual_translation_invariance";
    report.records.push_back(trans);
    PropertyRecord rot =
        check_equivariance(model, batch, GroupElement::kRotation, trials, sym_tol, seed + salt);
    rot.property = "no_residual_rotation";
    report.records.push_back(rot);
    ++salt;
  }

  {
    // Mutation sanity check: leaking absolute coordinates must break rotation.
    EgnnConfig cfg;
    cfg.n_layers = 2;
    cfg.hidden_width = 16;
    cfg.message_width = 16;
    cfg.channels = 2;
    cfg.feature_width = 2;
    MultiChannelEgnn model(cfg, seed + salt);
    GraphBatch batch = random_batch(7, cfg.feature_width, 0, false, seed + salt);
    PropertyRecord rec = check_equivariance(model, batch, GroupElement::kRotation, trials,
                                            sym_tol, seed + salt, SymmetryBreak::kAbsoluteCoords);
    rec.property = "mutation_absolute_coords_detected";
    // The seeded violation must land far above both the tolerance and the
    // float-accumulation noise floor.
    rec.pass = rec.max_deviation > 1e-6;
    report.records.push_back(rec);
    ++salt;
  }

  {
    EgnnConfig cfg;
    cfg.n_layers = 2;
    cfg.hidden_width = 12;
    cfg.message_width = 12;
    cfg.channels = 3;
    cfg.feature_width = 2;
    cfg.velocity_mode = true;
    MultiChannelEgnn model(cfg, seed + salt);
    GraphBatch batch = random_batch(5, cfg.feature_width, 0, true, seed + salt);
    report.records.push_back(check_gradients(model, batch, 200, 1e-4, 1e-5, seed + salt));
    ++salt;
  }

  {
    EgnnConfig cfg;
    cfg.n_layers = 3;
    cfg.hidden_width = 16;
    cfg.message_width = 16;
    cfg.channels = 1;
    cfg.feature_width = 2;
    cfg.velocity_mode = true;
    MultiChannelEgnn mc(cfg, seed + salt);
    SingleChannelEgnn ref(cfg, seed + salt);
    std::vector<GraphBatch> batches;
    for (int i = 0; i < 10; ++i) {
      batches.push_back(random_batch(6, cfg.feature_width, 0, true, seed + salt + 100 + i));
    }
    report.records.push_back(check_parity(mc, ref, batches, 1e-12, seed + salt));
  }

  return report;
}

}  // namespace mcegnn
