#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mcegnn/rng.hpp"

namespace mcegnn {

// A simulated (or imported) system history. Frame f holds the state after f
// integrator steps, so there are n_steps + 1 frames for a fresh simulation.
struct Trajectory {
  std::int64_t n_bodies = 0;
  std::int64_t n_frames = 0;
  double dt = 0.0;
  std::vector<double> positions;   // [n_frames, n_bodies, 3]
  std::vector<double> velocities;  // [n_frames, n_bodies, 3]
  std::vector<double> body_attrs;  // charges (+-1) or masses, [n_bodies]
  bool attrs_are_charges = false;

  const double* frame_positions(std::int64_t f) const {
    return positions.data() + f * n_bodies * 3;
  }
  const double* frame_velocities(std::int64_t f) const {
    return velocities.data() + f * n_bodies * 3;
  }
};

namespace detail {

// a_i = sum_j q_i q_j (x_i - x_j) / (r^2 + soft^2)^(3/2), unit masses.
inline void accel_coulomb(const std::vector<double>& pos, const std::vector<double>& charges,
                          double softening, std::vector<double>& acc) {
  const std::int64_t n = static_cast<std::int64_t>(charges.size());
  std::fill(acc.begin(), acc.end(), 0.0);
  const double soft2 = softening * softening;
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dx = pos[i * 3 + 0] - pos[j * 3 + 0];
      const double dy = pos[i * 3 + 1] - pos[j * 3 + 1];
      const double dz = pos[i * 3 + 2] - pos[j * 3 + 2];
      const double r2 = dx * dx + dy * dy + dz * dz + soft2;
      const double f = charges[i] * charges[j] / (r2 * std::sqrt(r2));
      acc[i * 3 + 0] += f * dx;
      acc[i * 3 + 1] += f * dy;
      acc[i * 3 + 2] += f * dz;
    }
  }
}

// a_i = sum_j G m_j (x_j - x_i) / (r^2 + soft^2)^(3/2), G = 1.
inline void accel_gravity(const std::vector<double>& pos, const std::vector<double>& masses,
                          double softening, std::vector<double>& acc) {
  const std::int64_t n = static_cast<std::int64_t>(masses.size());
  std::fill(acc.begin(), acc.end(), 0.0);
  const double soft2 = softening * softening;
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dx = pos[j * 3 + 0] - pos[i * 3 + 0];
      const double dy = pos[j * 3 + 1] - pos[i * 3 + 1];
      const double dz = pos[j * 3 + 2] - pos[i * 3 + 2];
      const double r2 = dx * dx + dy * dy + dz * dz + soft2;
      const double f = masses[j] / (r2 * std::sqrt(r2));
      acc[i * 3 + 0] += f * dx;
      acc[i * 3 + 1] += f * dy;
      acc[i * 3 + 2] += f * dz;
    }
  }
}

// Kick-drift-kick leapfrog. AccelFn(pos, acc) fills accelerations in place.
template <typename AccelFn>
Trajectory integrate(std::vector<double> pos, std::vector<double> vel,
                     std::vector<double> attrs, bool charges, std::int64_t n_steps,
                     double dt, AccelFn&& accel_fn, std::int64_t burn_in = 0) {
  const std::int64_t n = static_cast<std::int64_t>(attrs.size());
  Trajectory traj;
  traj.n_bodies = n;
  traj.n_frames = n_steps + 1;
  traj.dt = dt;
  traj.body_attrs = std::move(attrs);
  traj.attrs_are_charges = charges;
  traj.positions.reserve(static_cast<std::size_t>(traj.n_frames * n * 3));
  traj.velocities.reserve(static_cast<std::size_t>(traj.n_frames * n * 3));

  std::vector<double> acc(static_cast<std::size_t>(n * 3), 0.0);
  accel_fn(pos, acc);
  const std::int64_t total = burn_in + n_steps;
  for (std::int64_t step = 0; step <= total; ++step) {
    if (step >= burn_in) {
      traj.positions.insert(traj.positions.end(), pos.begin(), pos.end());
      traj.velocities.insert(traj.velocities.end(), vel.begin(), vel.end());
    }
    if (step == total) break;
    for (std::size_t i = 0; i < pos.size(); ++i) vel[i] += 0.5 * dt * acc[i];
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] += dt * vel[i];
    accel_fn(pos, acc);
    for (std::size_t i = 0; i < pos.size(); ++i) vel[i] += 0.5 * dt * acc[i];
  }
  return traj;
}

}  // namespace detail

// Integrates a given charged-particle state (unit masses, softened Coulomb
// forces). Exposed separately from the sampler so tests can drive chosen
// initial conditions.
inline Trajectory integrate_charged(std::vector<double> positions, std::vector<double> velocities,
                                    std::vector<double> charges, std::int64_t n_steps, double dt,
                                    double softening, std::int64_t burn_in = 0) {
  if (charges.size() < 2) throw std::invalid_argument("integrate_charged: need >= 2 bodies");
  if (positions.size() != charges.size() * 3 || velocities.size() != charges.size() * 3) {
    throw std::invalid_argument("integrate_charged: state size mismatch");
  }
  if (!(dt > 0.0) || !(softening > 0.0) || n_steps < 0 || burn_in < 0) {
    throw std::invalid_argument("integrate_charged: bad dt/softening/steps");
  }
  std::vector<double> charges_copy = charges;
  return detail::integrate(std::move(positions), std::move(velocities), std::move(charges),
                           /*charges=*/true, n_steps, dt,
                           [softening, charges_copy](const std::vector<double>& p,
                                                     std::vector<double>& a) {
                             detail::accel_coulomb(p, charges_copy, softening, a);
                           },
                           burn_in);
}

inline Trajectory integrate_gravity(std::vector<double> positions, std::vector<double> velocities,
                                    std::vector<double> masses, std::int64_t n_steps, double dt,
                                    double softening, std::int64_t burn_in = 0) {
  if (masses.empty()) throw std::invalid_argument("integrate_gravity: need >= 1 body");
  if (positions.size() != masses.size() * 3 || velocities.size() != masses.size() * 3) {
    throw std::invalid_argument("integrate_gravity: state size mismatch");
  }
  if (!(dt > 0.0) || !(softening > 0.0) || n_steps < 0 || burn_in < 0) {
    throw std::invalid_argument("integrate_gravity: bad dt/softening/steps");
  }
  for (double m : masses) {
    if (!(m > 0.0)) throw std::invalid_argument("integrate_gravity: masses must be positive");
  }
  std::vector<double> masses_copy = masses;
  return detail::integrate(std::move(positions), std::move(velocities), std::move(masses),
                           /*charges=*/false, n_steps, dt,
                           [softening, masses_copy](const std::vector<double>& p,
                                                    std::vector<double>& a) {
                             detail::accel_gravity(p, masses_copy, softening, a);
                           },
                           burn_in);
}

// Samples a fresh 5-particle-style charged system: charges +-1 with equal
// probability, positions and velocities Gaussian with sigma 0.5 per axis.
inline Trajectory simulate_charged(std::int64_t n_particles, std::int64_t n_steps, double dt,
                                   double softening, std::uint64_t seed,
                                   std::int64_t burn_in = 0) {
  if (n_particles < 2) throw std::invalid_argument("simulate_charged: need >= 2 particles");
  Rng rng(seed, rng_streams::kDataGen);
  std::vector<double> charges(static_cast<std::size_t>(n_particles));
  for (auto& q : charges) q = rng.uniform() < 0.5 ? -1.0 : 1.0;
  std::vector<double> pos(static_cast<std::size_t>(n_particles * 3));
  std::vector<double> vel(static_cast<std::size_t>(n_particles * 3));
  for (auto& x : pos) x = 0.5 * rng.normal();
  for (auto& v : vel) v = 0.5 * rng.normal();
  return integrate_charged(std::move(pos), std::move(vel), std::move(charges), n_steps, dt,
                           softening, burn_in);
}

struct OrbitalConfig {
  std::int64_t n_planets = 3;
  std::int64_t moons_per_planet = 2;
  double central_mass = 1.0;
  std::pair<double, double> planet_mass_range{1e-3, 3e-3};
  std::pair<double, double> planet_radius_range{1.0, 3.0};
  std::pair<double, double> moon_mass_range{1e-7, 1e-6};
  std::pair<double, double> moon_radius_range{0.02, 0.08};
  double softening = 1e-3;

  void validate() const {
    if (n_planets < 0 || moons_per_planet < 0) {
      throw std::invalid_argument("orbital config: negative body counts");
    }
    if (!(central_mass > 0.0) || !(planet_mass_range.first > 0.0) ||
        !(moon_mass_range.first > 0.0)) {
      throw std::invalid_argument("orbital config: masses must be positive");
    }
    if (!(planet_radius_range.first > 0.0) || !(moon_radius_range.first > 0.0) ||
        planet_radius_range.second < planet_radius_range.first ||
        moon_radius_range.second < moon_radius_range.first ||
        planet_mass_range.second < planet_mass_range.first ||
        moon_mass_range.second < moon_mass_range.first) {
      throw std::invalid_argument("orbital config: bad ranges");
    }
    if (moons_per_planet > 0 && n_planets > 0 &&
        moon_radius_range.second > 0.1 * planet_radius_range.first) {
      throw std::invalid_argument(
          "orbital config: hierarchy violated (moon orbits must be <= 0.1x planet orbits)");
    }
    if (!(softening > 0.0)) throw std::invalid_argument("orbital config: softening must be > 0");
  }
};

namespace detail {

// Random orthonormal pair (e1, e2) spanning an orbital plane.
inline void random_plane(Rng& rng, double e1[3], double e2[3]) {
  double n1 = 0.0;
  do {
    for (int d = 0; d < 3; ++d) e1[d] = rng.normal();
    n1 = std::sqrt(e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]);
  } while (n1 < 1e-8);
  for (int d = 0; d < 3; ++d) e1[d] /= n1;
  double n2 = 0.0;
  do {
    for (int d = 0; d < 3; ++d) e2[d] = rng.normal();
    const double dot = e1[0] * e2[0] + e1[1] * e2[1] + e1[2] * e2[2];
    for (int d = 0; d < 3; ++d) e2[d] -= dot * e1[d];
    n2 = std::sqrt(e2[0] * e2[0] + e2[1] * e2[1] + e2[2] * e2[2]);
  } while (n2 < 1e-8);
  for (int d = 0; d < 3; ++d) e2[d] /= n2;
}

}  // namespace detail

// Hierarchical system: central body at rest at the origin, planets on random
// circular orbits (speed sqrt(G M / r)), moons on circular orbits about their
// planet with the planet's velocity added. Body order: central, then per
// planet the planet followed by its moons.
inline Trajectory simulate_orbital(const OrbitalConfig& cfg, std::int64_t n_steps, double dt,
                                   std::uint64_t seed, std::int64_t burn_in = 0) {
  cfg.validate();
  Rng rng(seed, rng_streams::kDataGen);
  const std::int64_t n = 1 + cfg.n_planets * (1 + cfg.moons_per_planet);
  std::vector<double> masses;
  std::vector<double> pos(static_cast<std::size_t>(n * 3), 0.0);
  std::vector<double> vel(static_cast<std::size_t>(n * 3), 0.0);
  masses.reserve(static_cast<std::size_t>(n));
  masses.push_back(cfg.central_mass);

  std::int64_t body = 1;
  for (std::int64_t p = 0; p < cfg.n_planets; ++p) {
    const double mp = rng.uniform(cfg.planet_mass_range.first, cfg.planet_mass_range.second);
    const double rp = rng.uniform(cfg.planet_radius_range.first, cfg.planet_radius_range.second);
    double e1[3], e2[3];
    detail::random_plane(rng, e1, e2);
    const double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double speed = std::sqrt(cfg.central_mass / rp);
    const std::int64_t pi = body++;
    masses.push_back(mp);
    for (int d = 0; d < 3; ++d) {
      pos[pi * 3 + d] = rp * (std::cos(phase) * e1[d] + std::sin(phase) * e2[d]);
      vel[pi * 3 + d] = speed * (-std::sin(phase) * e1[d] + std::cos(phase) * e2[d]);
    }
    for (std::int64_t m = 0; m < cfg.moons_per_planet; ++m) {
      const double mm = rng.uniform(cfg.moon_mass_range.first, cfg.moon_mass_range.second);
      const double rm = rng.uniform(cfg.moon_radius_range.first, cfg.moon_radius_range.second);
      double f1[3], f2[3];
      detail::random_plane(rng, f1, f2);
      const double mphase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      const double mspeed = std::sqrt(mp / rm);
      const std::int64_t mi = body++;
      masses.push_back(mm);
      for (int d = 0; d < 3; ++d) {
        pos[mi * 3 + d] = pos[pi * 3 + d] +
                          rm * (std::cos(mphase) * f1[d] + std::sin(mphase) * f2[d]);
        vel[mi * 3 + d] = vel[pi * 3 + d] +
                          mspeed * (-std::sin(mphase) * f1[d] + std::cos(mphase) * f2[d]);
      }
    }
  }
  return integrate_gravity(std::move(pos), std::move(vel), std::move(masses), n_steps, dt,
                           cfg.softening, burn_in);
}

// Imports a trajectory from CSV with the exact header
// body,step,x,y,z,vx,vy,vz,mass. Steps are taken as the sampling grid
// (dt = 1 per interval); every (body, step) pair must be present.
inline Trajectory load_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty trajectory CSV");
  auto strip = [](std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
    return s;
  };
  if (strip(line) != "body,step,x,y,z,vx,vy,vz,mass") {
    throw std::runtime_error("trajectory CSV must start with header body,step,x,y,z,vx,vy,vz,mass");
  }

  struct Row {
    double x, y, z, vx, vy, vz, mass;
  };
  std::map<std::pair<std::int64_t, std::int64_t>, Row> rows;
  std::int64_t max_body = -1, max_step = -1;
  std::int64_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip(line);
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 9) {
      throw std::runtime_error("trajectory CSV line " + std::to_string(lineno) +
                               ": expected 9 fields");
    }
    try {
      const std::int64_t b = std::stoll(fields[0]);
      const std::int64_t s = std::stoll(fields[1]);
      Row r{std::stod(fields[2]), std::stod(fields[3]), std::stod(fields[4]),
            std::stod(fields[5]), std::stod(fields[6]), std::stod(fields[7]),
            std::stod(fields[8])};
      if (b < 0 || s < 0) throw std::runtime_error("negative body/step");
      if (!rows.emplace(std::make_pair(b, s), r).second) {
        throw std::runtime_error("duplicate (body, step) pair");
      }
      max_body = std::max(max_body, b);
      max_step = std::max(max_step, s);
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("trajectory CSV line " + std::to_string(lineno) +
                               ": malformed number");
    }
  }
  if (max_body < 0) throw std::runtime_error("trajectory CSV has no data rows");

  Trajectory traj;
  traj.n_bodies = max_body + 1;
  traj.n_frames = max_step + 1;
  traj.dt = 1.0;
  traj.attrs_are_charges = false;
  traj.positions.resize(static_cast<std::size_t>(traj.n_frames * traj.n_bodies * 3));
  traj.velocities.resize(static_cast<std::size_t>(traj.n_frames * traj.n_bodies * 3));
  traj.body_attrs.assign(static_cast<std::size_t>(traj.n_bodies), 0.0);
  for (std::int64_t s = 0; s < traj.n_frames; ++s) {
    for (std::int64_t b = 0; b < traj.n_bodies; ++b) {
      auto it = rows.find({b, s});
      if (it == rows.end()) {
        throw std::runtime_error("trajectory CSV missing body " + std::to_string(b) +
                                 " at step " + std::to_string(s));
      }
      const Row& r = it->second;
      const std::int64_t base = (s * traj.n_bodies + b) * 3;
      traj.positions[base + 0] = r.x;
      traj.positions[base + 1] = r.y;
      traj.positions[base + 2] = r.z;
      traj.velocities[base + 0] = r.vx;
      traj.velocities[base + 1] = r.vy;
      traj.velocities[base + 2] = r.vz;
      traj.body_attrs[static_cast<std::size_t>(b)] = r.mass;
    }
  }
  return traj;
}

// Total energy of a charged state: kinetic (unit masses) plus softened
// Coulomb potential q_i q_j / sqrt(r^2 + soft^2) over pairs.
inline double charged_energy(const double* pos, const double* vel,
                             const std::vector<double>& charges, double softening) {
  const std::int64_t n = static_cast<std::int64_t>(charges.size());
  double e = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    e += 0.5 * (vel[i * 3] * vel[i * 3] + vel[i * 3 + 1] * vel[i * 3 + 1] +
                vel[i * 3 + 2] * vel[i * 3 + 2]);
  }
  const double soft2 = softening * softening;
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = i + 1; j < n; ++j) {
      const double dx = pos[i * 3] - pos[j * 3];
      const double dy = pos[i * 3 + 1] - pos[j * 3 + 1];
      const double dz = pos[i * 3 + 2] - pos[j * 3 + 2];
      e += charges[i] * charges[j] / std::sqrt(dx * dx + dy * dy + dz * dz + soft2);
    }
  }
  return e;
}

}  // namespace mcegnn
