#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mcegnn/dataset.hpp"
#include "mcegnn/egnn.hpp"
#include "mcegnn/nn.hpp"
#include "mcegnn/tensor.hpp"

namespace mcegnn {

enum class LossKind { kMse, kNormalizedMse };
enum class LrSchedule { kConstant, kCosine };

// Guard for near-stationary bodies in the normalized loss.
inline constexpr double kNormalizedMseEps = 1e-8;

inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  detail::check_same_shape(pred, target, "mse_loss");
  Tensor diff = sub(pred, target);
  return scale(sum_all(mul(diff, diff)), 1.0 / static_cast<double>(pred.size()));
}

// Mean over bodies of |pred_i - target_i|^2 / (|target_i - initial_i|^2 + eps).
// The denominators are data, not differentiated through.
inline Tensor normalized_mse_loss(const Tensor& pred, const Tensor& target,
                                  const Tensor& initial, double eps = kNormalizedMseEps) {
  detail::check_same_shape(pred, target, "normalized_mse_loss");
  detail::check_same_shape(pred, initial, "normalized_mse_loss");
  if (pred.shape().size() != 2 || pred.shape()[1] != 3) {
    throw std::invalid_argument("normalized_mse_loss expects [n,3] tensors");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("normalized_mse_loss: eps must be > 0");
  const std::int64_t n = pred.shape()[0];
  std::vector<double> weights(static_cast<std::size_t>(n));
  const auto& tv = target.data();
  const auto& iv = initial.data();
  for (std::int64_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (int d = 0; d < 3; ++d) {
      const double x = tv[i * 3 + d] - iv[i * 3 + d];
      sq += x * x;
    }
    weights[static_cast<std::size_t>(i)] = 1.0 / (sq + eps);
  }
  Tensor diff = sub(pred, target);
  Tensor per_body = sum_axis(mul(diff, diff), 1);  // [n]
  return scale(sum_all(row_scale(per_body, weights)), 1.0 / static_cast<double>(n));
}

struct TrainConfig {
  std::int64_t epochs = 1000;
  std::int64_t batch_size = 100;
  double learning_rate = 5e-4;
  LrSchedule lr_schedule = LrSchedule::kConstant;
  std::int64_t patience = 50;
  std::optional<double> clip_norm;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::kMse;

  void validate() const {
    if (epochs < 1 || batch_size < 1) throw std::invalid_argument("train config: epochs and batch size must be positive");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("train config: bad learning rate");
    if (patience < 1) throw std::invalid_argument("train config: patience must be >= 1");
    if (clip_norm && !(*clip_norm > 0.0)) throw std::invalid_argument("train config: clip_norm must be > 0");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return nlohmann::json{
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"lr_schedule", c.lr_schedule == LrSchedule::kConstant ? "constant" : "cosine"},
      {"patience", c.patience},
      {"clip_norm", c.clip_norm ? nlohmann::json(*c.clip_norm) : nlohmann::json(nullptr)},
      {"seed", c.seed},
      {"loss", c.loss == LossKind::kMse ? "mse" : "normalized_mse"},
  };
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  detail::require_keys(j,
                       {"epochs", "batch_size", "learning_rate", "lr_schedule", "patience",
                        "clip_norm", "seed", "loss"},
                       "train config");
  TrainConfig c;
  c.epochs = j.at("epochs").get<std::int64_t>();
  c.batch_size = j.at("batch_size").get<std::int64_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  const std::string sched = j.at("lr_schedule").get<std::string>();
  if (sched == "constant") {
    c.lr_schedule = LrSchedule::kConstant;
  } else if (sched == "cosine") {
    c.lr_schedule = LrSchedule::kCosine;
  } else {
    throw std::invalid_argument("train config: bad lr_schedule '" + sched + "'");
  }
  c.patience = j.at("patience").get<std::int64_t>();
  if (!j.at("clip_norm").is_null()) c.clip_norm = j.at("clip_norm").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  const std::string loss = j.at("loss").get<std::string>();
  if (loss == "mse") {
    c.loss = LossKind::kMse;
  } else if (loss == "normalized_mse") {
    c.loss = LossKind::kNormalizedMse;
  } else {
    throw std::invalid_argument("train config: bad loss '" + loss + "'");
  }
  c.validate();
  return c;
}

struct RunReport {
  std::uint64_t seed = 0;
  std::vector<double> train_losses;
  std::vector<double> val_losses;
  std::vector<double> epoch_seconds;
  std::vector<double> pre_clip_norms;  // one per optimizer step when clipping
  std::int64_t best_epoch = -1;
  double best_val_loss = 0.0;
  std::optional<double> test_metric;

  nlohmann::json to_json() const {
    return nlohmann::json{
        {"seed", seed},
        {"train_losses", train_losses},
        {"val_losses", val_losses},
        {"epoch_seconds", epoch_seconds},
        {"pre_clip_norms", pre_clip_norms},
        {"best_epoch", best_epoch},
        {"best_val_loss", best_val_loss},
        {"test_metric", test_metric ? nlohmann::json(*test_metric) : nlohmann::json(nullptr)},
    };
  }
};

inline void write_losses_csv(const std::filesystem::path& path, const RunReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "epoch,train_loss,val_loss\n";
  out.precision(17);
  for (std::size_t e = 0; e < report.train_losses.size(); ++e) {
    out << e << "," << report.train_losses[e] << "," << report.val_losses[e] << "\n";
  }
}

namespace detail {

inline Tensor batch_loss(const Tensor& pred, const BatchData& batch, LossKind kind) {
  const std::int64_t n = batch.graph.n_nodes;
  Tensor target = Tensor::constant({n, 3}, batch.targets);
  if (kind == LossKind::kMse) return mse_loss(pred, target);
  Tensor initial = Tensor::constant({n, 3}, batch.graph.coords);
  return normalized_mse_loss(pred, target, initial);
}

}  // namespace detail

// Mean loss over a split. Per-body terms are accumulated in sample order, so
// the result is independent of the evaluation batch size.
inline double evaluate(MultiChannelEgnn& model, const TrajectoryDataset& ds, Split split,
                       LossKind kind, std::int64_t batch_size = 100) {
  const auto indices = ds.indices_of(split);
  if (indices.empty()) {
    throw std::invalid_argument(std::string("evaluate: empty split '") + split_name(split) + "'");
  }
  const std::int64_t n = ds.n_bodies;
  std::vector<double> terms;
  for (std::size_t at = 0; at < indices.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(indices.size(), at + static_cast<std::size_t>(batch_size));
    const std::vector<std::int64_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(at),
                                          indices.begin() + static_cast<std::ptrdiff_t>(end));
    BatchData batch = make_batch(ds, chunk);
    const std::size_t mark = model.tape().size();
    Tensor pred = model.forward(batch.graph);
    const auto& pv = pred.data();
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t row = static_cast<std::int64_t>(k) * n + i;
        double err = 0.0, disp = 0.0;
        for (int d = 0; d < 3; ++d) {
          const double e = pv[row * 3 + d] - batch.targets[row * 3 + d];
          err += e * e;
          const double x = batch.targets[row * 3 + d] - batch.graph.coords[row * 3 + d];
          disp += x * x;
        }
        terms.push_back(kind == LossKind::kMse ? err / 3.0 : err / (disp + kNormalizedMseEps));
      }
    }
    model.tape().truncate(mark);
  }
  double sum = 0.0;
  for (double t : terms) sum += t;
  return sum / static_cast<double>(terms.size());
}

// Minibatch training with seeded shuffling, optional gradient clipping,
// per-epoch validation and early stopping on the validation loss. The model
// is left holding the best-validation parameters.
inline RunReport fit(MultiChannelEgnn& model, const TrajectoryDataset& ds,
                     const TrainConfig& cfg) {
  cfg.validate();
  const auto train_idx = ds.indices_of(Split::kTrain);
  const auto val_idx = ds.indices_of(Split::kVal);
  if (train_idx.empty()) throw std::invalid_argument("fit: empty train split");
  if (val_idx.empty()) throw std::invalid_argument("fit: empty val split");

  auto params = model.parameters();
  Adam adam(params, AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
  Rng shuffle_rng(cfg.seed, rng_streams::kShuffle);
  const std::optional<double> clip = cfg.clip_norm ? cfg.clip_norm : model.config().clip_norm;

  RunReport report;
  report.seed = cfg.seed;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_params;
  std::int64_t epochs_since_best = 0;

  std::vector<std::int64_t> order = train_idx;
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cfg.lr_schedule == LrSchedule::kCosine) {
      adam.set_lr(cfg.learning_rate * 0.5 *
                  (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(epoch) /
                                  static_cast<double>(cfg.epochs))));
    }
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::int64_t sample_count = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
      const std::vector<std::int64_t> chunk(order.begin() + static_cast<std::ptrdiff_t>(at),
                                            order.begin() + static_cast<std::ptrdiff_t>(end));
      BatchData batch = make_batch(ds, chunk);
      const std::size_t mark = model.tape().size();
      Tensor loss = detail::batch_loss(model.forward(batch.graph), batch, cfg.loss);
      backward(loss);
      if (clip) report.pre_clip_norms.push_back(clip_global_norm(params, *clip));
      adam.step();
      model.tape().truncate(mark);
      loss_sum += loss.value() * static_cast<double>(chunk.size());
      sample_count += static_cast<std::int64_t>(chunk.size());
    }
    report.train_losses.push_back(loss_sum / static_cast<double>(sample_count));

    const double val = evaluate(model, ds, Split::kVal, cfg.loss, cfg.batch_size);
    report.val_losses.push_back(val);
    report.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

    if (val < best_val) {
      best_val = val;
      report.best_epoch = epoch;
      epochs_since_best = 0;
      best_params.clear();
      for (const auto& p : params) best_params.push_back(p.data());
    } else {
      ++epochs_since_best;
      if (epochs_since_best >= cfg.patience) break;
    }
  }

  if (!best_params.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].data() = best_params[i];
  }
  report.best_val_loss = best_val;
  return report;
}

struct BenchRow {
  std::int64_t channels = 0;
  double seconds_mean = 0.0;
  double seconds_std = 0.0;
  std::int64_t params = 0;
};

// Forward-pass wall-clock per channel count on a frozen model. Reports the
// median of group means over `repeats` runs after `warmups` discarded runs;
// absolute times are hardware-bound, so consumers should compare ratios.
inline std::vector<BenchRow> bench_forward(const EgnnConfig& base,
                                           const std::vector<std::int64_t>& channel_counts,
                                           const GraphBatch& batch, std::int64_t repeats = 10,
                                           std::int64_t warmups = 3, std::uint64_t seed = 0) {
  if (repeats < 3) throw std::invalid_argument("bench_forward: need repeats >= 3");
  std::vector<BenchRow> rows;
  for (auto m : channel_counts) {
    EgnnConfig cfg = base;
    cfg.channels = m;
    MultiChannelEgnn model(cfg, seed);
    BenchRow row;
    row.channels = m;
    row.params = model.param_count();
    model.freeze();
    for (std::int64_t w = 0; w < warmups; ++w) model.forward(batch);
    std::vector<double> times;
    for (std::int64_t r = 0; r < repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      model.forward(batch);
      times.push_back(
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    const std::size_t groups = 5;
    std::vector<double> means(groups, 0.0);
    std::vector<std::size_t> counts(groups, 0);
    for (std::size_t i = 0; i < times.size(); ++i) {
      means[i % groups] += times[i];
      ++counts[i % groups];
    }
    for (std::size_t g = 0; g < groups; ++g) {
      if (counts[g]) means[g] /= static_cast<double>(counts[g]);
    }
    std::sort(means.begin(), means.end());
    row.seconds_mean = means[groups / 2];
    double mean_all = 0.0;
    for (double t : times) mean_all += t;
    mean_all /= static_cast<double>(times.size());
    double var = 0.0;
    for (double t : times) var += (t - mean_all) * (t - mean_all);
    row.seconds_std = std::sqrt(var / static_cast<double>(times.size()));
    rows.push_back(row);
  }
  return rows;
}

inline void write_bench_csv(const std::filesystem::path& path, const std::vector<BenchRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "m,forward_seconds_mean,forward_seconds_std,params\n";
  out.precision(9);
  for (const auto& r : rows) {
    out << r.channels << "," << r.seconds_mean << "," << r.seconds_std << "," << r.params << "\n";
  }
}

}  // namespace mcegnn
