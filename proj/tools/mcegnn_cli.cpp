#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mcegnn/checkpoint.hpp"
#include "mcegnn/dataset.hpp"
#include "mcegnn/egnn.hpp"
#include "mcegnn/equicheck.hpp"
#include "mcegnn/presets.hpp"
#include "mcegnn/sim.hpp"
#include "mcegnn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitPropertyFailure = 3;

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

std::vector<std::int64_t> parse_int_list(const std::string& csv) {
  std::vector<std::int64_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoll(item));
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

std::array<double, 3> parse_fractions(const std::string& csv) {
  std::stringstream ss(csv);
  std::string item;
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i) {
    if (!std::getline(ss, item, ',')) throw std::invalid_argument("expected three fractions");
    out[static_cast<std::size_t>(i)] = std::stod(item);
  }
  return out;
}

// ---- gen-data ---------------------------------------------------------------

struct GenDataArgs {
  std::string task = "charged";
  std::string preset;
  std::string out;
  std::int64_t systems = 100;
  std::uint64_t seed = 0;
  std::int64_t particles = 5;
  std::int64_t planets = 3;
  std::int64_t moons = 2;
  std::int64_t steps = 1000;
  std::int64_t burn_in = 0;
  double dt = 1e-3;
  double softening = 0.1;
  std::int64_t horizon = 1000;
  std::int64_t stride = 1;
  std::string splits = "0.8,0.1,0.1";
};

int run_gen_data(GenDataArgs a) {
  mcegnn::OrbitalConfig orbital;
  if (!a.preset.empty()) {
    const mcegnn::ExperimentPreset p = a.preset == "nbody-small"
                                           ? mcegnn::nbody_small_preset()
                                           : mcegnn::orbital_small_preset();
    a.task = p.task;
    a.systems = p.systems;
    a.particles = p.n_particles;
    orbital = p.orbital;
    a.planets = p.orbital.n_planets;
    a.moons = p.orbital.moons_per_planet;
    a.steps = p.n_steps;
    a.burn_in = p.burn_in;
    a.dt = p.dt;
    a.softening = p.softening;
    a.horizon = p.horizon;
    a.stride = p.stride;
  } else {
    orbital.n_planets = a.planets;
    orbital.moons_per_planet = a.moons;
    orbital.softening = a.softening;
  }

  const auto fracs = parse_fractions(a.splits);
  std::vector<mcegnn::Trajectory> trajs;
  trajs.reserve(static_cast<std::size_t>(a.systems));
  for (std::int64_t s = 0; s < a.systems; ++s) {
    const std::uint64_t traj_seed = a.seed * 1000003ull + static_cast<std::uint64_t>(s);
    if (a.task == "charged") {
      trajs.push_back(
          mcegnn::simulate_charged(a.particles, a.steps, a.dt, a.softening, traj_seed, a.burn_in));
    } else if (a.task == "orbital") {
      trajs.push_back(mcegnn::simulate_orbital(orbital, a.steps, a.dt, traj_seed, a.burn_in));
    } else {
      throw CLI::ValidationError("--task must be 'charged' or 'orbital'");
    }
  }
  const auto features = a.task == "charged" ? mcegnn::NodeFeatureKind::kCharge
                                            : mcegnn::NodeFeatureKind::kLogMass;
  const auto ds = mcegnn::make_dataset(trajs, a.horizon, a.stride, features, fracs);
  mcegnn::save_dataset(a.out, ds);

  const json summary{{"task", a.task},
                     {"systems", a.systems},
                     {"n_bodies", ds.n_bodies},
                     {"samples",
                      {{"train", ds.indices_of(mcegnn::Split::kTrain).size()},
                       {"val", ds.indices_of(mcegnn::Split::kVal).size()},
                       {"test", ds.indices_of(mcegnn::Split::kTest).size()}}},
                     {"horizon", a.horizon},
                     {"stride", a.stride},
                     {"dt", a.dt},
                     {"feature_kind", a.task == "charged" ? "charge" : "log_mass"},
                     {"seed", a.seed}};
  write_json(a.out + ".json", summary);
  std::cout << summary.dump(2) << "\n";
  return kExitOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out_dir;
  std::string preset;
  std::string config_path;
  std::optional<std::int64_t> channels, layers, hidden, message_width, epochs, batch, patience;
  std::optional<double> lr, clip_norm;
  std::optional<std::string> lr_schedule, loss, coord_agg;
  std::optional<bool> velocity, position_residual;
  std::optional<std::uint64_t> seed;
};

json resolved_experiment_json(const mcegnn::EgnnConfig& model, const mcegnn::TrainConfig& train,
                              const std::string& dataset, const std::string& out_dir) {
  return json{{"model", mcegnn::to_json(model)},
              {"train", mcegnn::to_json(train)},
              {"dataset", dataset},
              {"out_dir", out_dir}};
}

void parse_experiment_json(const json& j, mcegnn::EgnnConfig& model, mcegnn::TrainConfig& train,
                           std::string& dataset, std::string& out_dir) {
  mcegnn::detail::require_keys(j, {"model", "train", "dataset", "out_dir"}, "experiment config");
  model = mcegnn::egnn_config_from_json(j.at("model"));
  train = mcegnn::train_config_from_json(j.at("train"));
  dataset = j.at("dataset").get<std::string>();
  out_dir = j.at("out_dir").get<std::string>();
}

int run_train(const TrainArgs& a) {
  mcegnn::EgnnConfig model_cfg;
  mcegnn::TrainConfig train_cfg;
  std::string dataset = a.data;
  std::string out_dir = a.out_dir;

  if (!a.preset.empty()) {
    const mcegnn::ExperimentPreset p = a.preset == "nbody-small"
                                           ? mcegnn::nbody_small_preset()
                                           : mcegnn::orbital_small_preset();
    model_cfg = p.model;
    train_cfg = p.train;
  }
  if (!a.config_path.empty()) {
    std::ifstream in(a.config_path);
    if (!in) throw std::runtime_error("cannot open config '" + a.config_path + "'");
    json j = json::parse(in);
    std::string ds_path, od;
    parse_experiment_json(j, model_cfg, train_cfg, ds_path, od);
    if (dataset.empty()) dataset = ds_path;
    if (out_dir.empty()) out_dir = od;
  }
  if (a.channels) model_cfg.channels = *a.channels;
  if (a.layers) model_cfg.n_layers = *a.layers;
  if (a.hidden) {
    model_cfg.hidden_width = *a.hidden;
    if (!a.message_width) model_cfg.message_width = *a.hidden;
  }
  if (a.message_width) model_cfg.message_width = *a.message_width;
  if (a.velocity) model_cfg.velocity_mode = *a.velocity;
  if (a.position_residual) model_cfg.residual_positions = *a.position_residual;
  if (a.clip_norm) {
    model_cfg.clip_norm = *a.clip_norm;
    train_cfg.clip_norm = *a.clip_norm;
  }
  if (a.coord_agg) {
    model_cfg.coord_aggregation = *a.coord_agg == "sum" ? mcegnn::CoordAggregation::kSum
                                                        : mcegnn::CoordAggregation::kMean;
  }
  if (a.epochs) train_cfg.epochs = *a.epochs;
  if (a.batch) train_cfg.batch_size = *a.batch;
  if (a.patience) train_cfg.patience = *a.patience;
  if (a.lr) train_cfg.learning_rate = *a.lr;
  if (a.lr_schedule) {
    train_cfg.lr_schedule = *a.lr_schedule == "cosine" ? mcegnn::LrSchedule::kCosine
                                                       : mcegnn::LrSchedule::kConstant;
  }
  if (a.seed) train_cfg.seed = *a.seed;

  if (dataset.empty()) throw CLI::ValidationError("--data is required");
  if (out_dir.empty()) throw CLI::ValidationError("--out is required");
  if (!fs::exists(dataset)) throw std::runtime_error("dataset '" + dataset + "' does not exist");

  const auto ds = mcegnn::load_dataset(dataset);
  model_cfg.feature_width = 1;
  model_cfg.edge_attr_width = ds.edge_attr_width;
  if (a.loss) {
    train_cfg.loss = *a.loss == "normalized_mse" ? mcegnn::LossKind::kNormalizedMse
                                                 : mcegnn::LossKind::kMse;
  } else if (a.preset.empty() && a.config_path.empty()) {
    train_cfg.loss = ds.feature_kind == mcegnn::NodeFeatureKind::kLogMass
                         ? mcegnn::LossKind::kNormalizedMse
                         : mcegnn::LossKind::kMse;
  }
  model_cfg.validate();
  train_cfg.validate();

  fs::create_directories(out_dir);
  write_json(fs::path(out_dir) / "config.json",
             resolved_experiment_json(model_cfg, train_cfg, dataset, out_dir));

  mcegnn::MultiChannelEgnn model(model_cfg, train_cfg.seed);
  std::cout << "training: channels=" << model_cfg.channels
            << " params=" << model.param_count() << "\n";
  mcegnn::RunReport report = mcegnn::fit(model, ds, train_cfg);
  report.test_metric = mcegnn::evaluate(model, ds, mcegnn::Split::kTest, train_cfg.loss);

  mcegnn::save_checkpoint(fs::path(out_dir) / "checkpoint.bin", model);
  write_json(fs::path(out_dir) / "report.json", report.to_json());
  mcegnn::write_losses_csv(fs::path(out_dir) / "losses.csv", report);
  std::cout << "best_epoch=" << report.best_epoch << " best_val=" << report.best_val_loss
            << " test_metric=" << *report.test_metric << "\n";
  return kExitOk;
}

// ---- eval -------------------------------------------------------------------

int run_eval(const std::string& checkpoint, const std::string& data, const std::string& split,
             const std::string& out, const std::string& loss_flag) {
  if (!fs::exists(checkpoint)) throw std::runtime_error("checkpoint '" + checkpoint + "' does not exist");
  if (!fs::exists(data)) throw std::runtime_error("dataset '" + data + "' does not exist");
  mcegnn::MultiChannelEgnn model = mcegnn::load_checkpoint(checkpoint);
  const auto ds = mcegnn::load_dataset(data);
  if (ds.edge_attr_width != model.config().edge_attr_width) {
    throw std::runtime_error("checkpoint and dataset disagree on edge attributes");
  }
  mcegnn::Split sp = mcegnn::Split::kTest;
  if (split == "train") sp = mcegnn::Split::kTrain;
  else if (split == "val") sp = mcegnn::Split::kVal;
  else if (split != "test") throw CLI::ValidationError("--split must be train|val|test");
  mcegnn::LossKind kind = mcegnn::LossKind::kMse;
  if (loss_flag == "normalized_mse" ||
      (loss_flag.empty() && ds.feature_kind == mcegnn::NodeFeatureKind::kLogMass)) {
    kind = mcegnn::LossKind::kNormalizedMse;
  }
  const double metric = mcegnn::evaluate(model, ds, sp, kind);
  const json j{{"split", split},
               {"metric", metric},
               {"loss", kind == mcegnn::LossKind::kMse ? "mse" : "normalized_mse"},
               {"checkpoint", checkpoint},
               {"dataset", data}};
  if (!out.empty()) write_json(out, j);
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

// ---- equicheck ----------------------------------------------------------------

int run_equicheck(std::uint64_t seed, std::int64_t trials, const std::string& out) {
  const mcegnn::EquivarianceReport report = mcegnn::run_full_suite(seed, trials);
  for (const auto& r : report.records) {
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.property
              << " max_dev=" << r.max_deviation << " tol=" << r.tolerance << "\n";
  }
  if (!out.empty()) write_json(out, report.to_json());
  std::cout << (report.all_pass() ? "all properties passed" : "PROPERTY FAILURES") << "\n";
  return report.all_pass() ? kExitOk : kExitPropertyFailure;
}

// ---- bench --------------------------------------------------------------------

int run_bench(const std::string& channels_csv, std::int64_t systems, std::int64_t particles,
              std::int64_t repeats, const std::string& out, std::uint64_t seed) {
  const auto channels = parse_int_list(channels_csv);
  mcegnn::EgnnConfig base;
  base.n_layers = 4;
  base.hidden_width = 64;
  base.message_width = 64;
  base.feature_width = 1;
  base.edge_attr_width = 1;
  base.velocity_mode = true;

  std::vector<mcegnn::GraphBatch> parts;
  parts.reserve(static_cast<std::size_t>(systems));
  for (std::int64_t s = 0; s < systems; ++s) {
    parts.push_back(mcegnn::random_batch(particles, 1, 1, true,
                                         seed * 977ull + static_cast<std::uint64_t>(s)));
  }
  const mcegnn::GraphBatch batch = mcegnn::GraphBatch::merge(parts);
  const auto rows = mcegnn::bench_forward(base, channels, batch, repeats, 3, seed);
  std::cout << "m,forward_seconds_mean,forward_seconds_std,params\n";
  for (const auto& r : rows) {
    std::cout << r.channels << "," << r.seconds_mean << "," << r.seconds_std << "," << r.params
              << "\n";
  }
  if (!out.empty()) mcegnn::write_bench_csv(out, rows);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-channel equivariant GNN experiments"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* cmd_gen = app.add_subcommand("gen-data", "Generate a physics dataset");
  cmd_gen->add_option("--task", gen.task, "charged | orbital");
  cmd_gen->add_option("--preset", gen.preset, "nbody-small | orbital-small")
      ->check(CLI::IsMember({"nbody-small", "orbital-small"}));
  cmd_gen->add_option("--out", gen.out, "Output dataset file")->required();
  cmd_gen->add_option("--systems", gen.systems, "Number of independent systems");
  cmd_gen->add_option("--seed", gen.seed, "Generation seed");
  cmd_gen->add_option("--particles", gen.particles, "Charged task: particles per system");
  cmd_gen->add_option("--planets", gen.planets, "Orbital task: planets");
  cmd_gen->add_option("--moons", gen.moons, "Orbital task: moons per planet");
  cmd_gen->add_option("--steps", gen.steps, "Integrator steps per trajectory");
  cmd_gen->add_option("--burn-in", gen.burn_in, "Discarded leading steps");
  cmd_gen->add_option("--dt", gen.dt, "Integrator time step");
  cmd_gen->add_option("--softening", gen.softening, "Force softening length");
  cmd_gen->add_option("--horizon", gen.horizon, "Prediction horizon in steps");
  cmd_gen->add_option("--stride", gen.stride, "Sample stride along each trajectory");
  cmd_gen->add_option("--splits", gen.splits, "train,val,test fractions");

  TrainArgs tr;
  auto* cmd_train = app.add_subcommand("train", "Train a model on a dataset");
  cmd_train->add_option("--data", tr.data, "Dataset file");
  cmd_train->add_option("--out", tr.out_dir, "Run output directory");
  cmd_train->add_option("--preset", tr.preset, "nbody-small | orbital-small")
      ->check(CLI::IsMember({"nbody-small", "orbital-small"}));
  cmd_train->add_option("--config", tr.config_path, "Experiment config JSON");
  cmd_train->add_option("--channels", tr.channels, "Vector channels m");
  cmd_train->add_option("--layers", tr.layers, "Number of layers");
  cmd_train->add_option("--hidden", tr.hidden, "Hidden width d_h");
  cmd_train->add_option("--message-width", tr.message_width, "Message width d");
  cmd_train->add_option("--epochs", tr.epochs, "Max epochs");
  cmd_train->add_option("--batch", tr.batch, "Batch size (samples)");
  cmd_train->add_option("--patience", tr.patience, "Early-stop patience (epochs)");
  cmd_train->add_option("--lr", tr.lr, "Learning rate");
  cmd_train->add_option("--lr-schedule", tr.lr_schedule, "constant | cosine")
      ->check(CLI::IsMember({"constant", "cosine"}));
  cmd_train->add_option("--clip-norm", tr.clip_norm, "Global gradient-norm clip");
  cmd_train->add_option("--loss", tr.loss, "mse | normalized_mse")
      ->check(CLI::IsMember({"mse", "normalized_mse"}));
  cmd_train->add_option("--coord-agg", tr.coord_agg, "mean | sum")
      ->check(CLI::IsMember({"mean", "sum"}));
  cmd_train->add_option("--seed", tr.seed, "Training seed");
  cmd_train->add_flag("--velocity,!--no-velocity", tr.velocity, "Velocity-variant layers");
  cmd_train->add_flag("--position-residual,!--no-position-residual", tr.position_residual,
                      "Residual connection in the position update");

  std::string ev_checkpoint, ev_data, ev_split = "test", ev_out, ev_loss;
  auto* cmd_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  cmd_eval->add_option("--checkpoint", ev_checkpoint, "Checkpoint file")->required();
  cmd_eval->add_option("--data", ev_data, "Dataset file")->required();
  cmd_eval->add_option("--split", ev_split, "train | val | test");
  cmd_eval->add_option("--out", ev_out, "Metric JSON output path");
  cmd_eval->add_option("--loss", ev_loss, "mse | normalized_mse")
      ->check(CLI::IsMember({"mse", "normalized_mse"}));

  std::uint64_t eq_seed = 0;
  std::int64_t eq_trials = 20;
  std::string eq_out;
  auto* cmd_eq = app.add_subcommand("equicheck", "Run the symmetry/gradient property suite");
  cmd_eq->add_option("--seed", eq_seed, "Suite seed");
  cmd_eq->add_option("--trials", eq_trials, "Random trials per property");
  cmd_eq->add_option("--out", eq_out, "Report JSON output path");

  std::string bench_channels = "1,2,5,10,25", bench_out;
  std::int64_t bench_systems = 100, bench_particles = 5, bench_repeats = 10;
  std::uint64_t bench_seed = 0;
  auto* cmd_bench = app.add_subcommand("bench", "Forward-time / parameter-count table");
  cmd_bench->add_option("--channels", bench_channels, "Comma-separated channel counts");
  cmd_bench->add_option("--systems", bench_systems, "Systems in the timing batch");
  cmd_bench->add_option("--particles", bench_particles, "Particles per system");
  cmd_bench->add_option("--repeats", bench_repeats, "Timed repetitions");
  cmd_bench->add_option("--seed", bench_seed, "Batch/model seed");
  cmd_bench->add_option("--out", bench_out, "CSV output path");

  try {
    app.parse(argc, argv);
    if (*cmd_gen) return run_gen_data(gen);
    if (*cmd_train) return run_train(tr);
    if (*cmd_eval) return run_eval(ev_checkpoint, ev_data, ev_split, ev_out, ev_loss);
    if (*cmd_eq) return run_equicheck(eq_seed, eq_trials, eq_out);
    if (*cmd_bench) {
      return run_bench(bench_channels, bench_systems, bench_particles, bench_repeats, bench_out,
                       bench_seed);
    }
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
