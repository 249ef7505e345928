#pragma once

#include <string>
#include <vector>

#include "geotdm/geom.hpp"
#include "geotdm/rng.hpp"

namespace geotdm {

enum class SystemKind { Charged, Spring, Gravity };

SystemKind system_kind_from_string(const std::string& s);
std::string to_string(SystemKind k);

struct SimParams {
  SystemKind kind = SystemKind::Charged;
  int n_bodies = 5;        // 10 is the usual choice for gravity
  int space_dim = 3;
  double dt = 0.1;         // interval between stored frames
  int substeps = 10;       // leapfrog substeps per frame
  double softening = 0.1;  // added to r^2 in 1/r^2 force laws
  double coupling = 1.0;   // Coulomb constant / spring stiffness / G
  double rest_length = 1.0;
  double spring_prob = 0.5;
  double pos_scale = 1.0;
  double vel_scale = 0.5;
  double mass_lo = 0.5;
  double mass_hi = 2.0;
};

// A sampled system instance: interaction structure plus per-node constants.
struct SimSystem {
  SimParams params;
  std::vector<double> masses;   // [N]
  std::vector<double> charges;  // [N], zero unless charged
  // Unique undirected spring pairs; empty for charged/gravity.
  std::vector<std::array<int32_t, 2>> springs;
};

struct SimState {
  TensorD pos;  // [N, D]
  TensorD vel;  // [N, D]
};

SimSystem init_system(Rng& rng, const SimParams& p);
SimState init_state(Rng& rng, const SimParams& p);

// Forces at the given positions. Throws if two particles sit closer than
// 1e-9 while softening is zero.
TensorD forces(const SimSystem& sys, const TensorD& pos);

// One stored-frame step of velocity-Verlet, split into substeps.
void leapfrog_step(const SimSystem& sys, SimState& st, double dt, int substeps);

double kinetic_energy(const SimSystem& sys, const SimState& st);
double potential_energy(const SimSystem& sys, const TensorD& pos);
TensorD total_momentum(const SimSystem& sys, const SimState& st);

// Simulate one trajectory of `frames` stored frames (frame 0 is the initial
// state). Node features are the charge (charged) or mass (spring/gravity);
// edges are the complete directed graph, or both directions of each spring.
GeoTrajectory roll_trajectory(Rng& rng, const SimParams& p, int64_t frames);
GeoTrajectory roll_trajectory(const SimSystem& sys, const SimState& st0, int64_t frames);

GeoTrajectory simulate_charged(Rng& rng, const SimParams& p, int64_t frames);
GeoTrajectory simulate_spring(Rng& rng, const SimParams& p, int64_t frames);
GeoTrajectory simulate_gravity(Rng& rng, const SimParams& p, int64_t frames);

struct DatasetManifest {
  int64_t n_train = 3000;
  int64_t n_valid = 2000;
  int64_t n_test = 2000;
  int64_t t_total = 30;
  int64_t t_cond = 10;
  int64_t t_target = 20;
  uint64_t seed = 0;
};

// Simulates the three splits into <out_dir>/{train,valid,test}.gtrj and
// writes manifest.txt. Trajectory i of the run uses rng substream i, so a
// given (params, manifest, seed) rebuilds bit-identical files.
void build_dataset(const SimParams& p, const DatasetManifest& m, const std::string& out_dir);

std::vector<GeoTrajectory> load_split(const std::string& dir, const std::string& split);

}  // namespace geotdm
