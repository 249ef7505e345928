#include "geotdm/sim.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "geotdm/gtrj.hpp"

namespace geotdm {

SystemKind system_kind_from_string(const std::string& s) {
  if (s == "charged") return SystemKind::Charged;
  if (s == "spring") return SystemKind::Spring;
  if (s == "gravity") return SystemKind::Gravity;
  throw std::invalid_argument("unknown system kind '" + s + "'");
}

std::string to_string(SystemKind k) {
  switch (k) {
    case SystemKind::Charged: return "charged";
    case SystemKind::Spring: return "spring";
    case SystemKind::Gravity: return "gravity";
  }
  return "?";
}

SimSystem init_system(Rng& rng, const SimParams& p) {
  SimSystem sys;
  sys.params = p;
  int n = p.n_bodies;
  sys.masses.assign(n, 1.0);
  sys.charges.assign(n, 0.0);
  switch (p.kind) {
    case SystemKind::Charged:
      for (int i = 0; i < n; ++i) sys.charges[i] = rng.bernoulli(0.5) ? 1.0 : -1.0;
      break;
    case SystemKind::Spring:
      for (int i = 0; i < n; ++i) sys.masses[i] = rng.uniform(p.mass_lo, p.mass_hi);
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
          if (rng.bernoulli(p.spring_prob))
            sys.springs.push_back({static_cast<int32_t>(i), static_cast<int32_t>(j)});
      break;
    case SystemKind::Gravity:
      for (int i = 0; i < n; ++i) sys.masses[i] = rng.uniform(p.mass_lo, p.mass_hi);
      break;
  }
  return sys;
}

SimState init_state(Rng& rng, const SimParams& p) {
  SimState st;
  st.pos = TensorD({p.n_bodies, p.space_dim});
  st.vel = TensorD({p.n_bodies, p.space_dim});
  for (int64_t i = 0; i < st.pos.numel(); ++i) st.pos[i] = p.pos_scale * rng.normal();
  for (int64_t i = 0; i < st.vel.numel(); ++i) st.vel[i] = p.vel_scale * rng.normal();
  return st;
}

TensorD forces(const SimSystem& sys, const TensorD& pos) {
  const SimParams& p = sys.params;
  int n = p.n_bodies, d = p.space_dim;
  if (d > 8) throw std::invalid_argument("space_dim > 8 is not supported");
  TensorD f({n, d});
  double eps2 = p.softening * p.softening;
  auto pair_r2 = [&](int i, int j, double* diff) {
    double r2 = 0;
    for (int k = 0; k < d; ++k) {
      diff[k] = pos.at({i, k}) - pos.at({j, k});
      r2 += diff[k] * diff[k];
    }
    if (p.softening == 0.0 && r2 < 1e-18)
      throw std::runtime_error("particle overlap at zero softening; aborting integration");
    return r2;
  };
  double diff[8];
  if (p.kind == SystemKind::Spring) {
    for (const auto& s : sys.springs) {
      int i = s[0], j = s[1];
      double r2 = pair_r2(i, j, diff);
      double r = std::sqrt(r2 + eps2);
      // Hooke pull toward the rest length along the pair axis.
      double mag = -p.coupling * (r - p.rest_length) / r;
      for (int k = 0; k < d; ++k) {
        f.at({i, k}) += mag * diff[k];
        f.at({j, k}) -= mag * diff[k];
      }
    }
    return f;
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double r2 = pair_r2(i, j, diff);
      double denom = std::pow(r2 + eps2, 1.5);
      double mag;
      if (p.kind == SystemKind::Charged)
        mag = p.coupling * sys.charges[i] * sys.charges[j] / denom;
      else
        mag = -p.coupling * sys.masses[i] * sys.masses[j] / denom;
      for (int k = 0; k < d; ++k) {
        f.at({i, k}) += mag * diff[k];
        f.at({j, k}) -= mag * diff[k];
      }
    }
  return f;
}

void leapfrog_step(const SimSystem& sys, SimState& st, double dt, int substeps) {
  int n = sys.params.n_bodies, d = sys.params.space_dim;
  double h = dt / substeps;
  TensorD acc = forces(sys, st.pos);
  for (int64_t i = 0; i < acc.numel(); ++i) acc[i] /= sys.masses[i / d];
  for (int s = 0; s < substeps; ++s) {
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < d; ++k) {
        st.vel.at({i, k}) += 0.5 * h * acc.at({i, k});
        st.pos.at({i, k}) += h * st.vel.at({i, k});
      }
    acc = forces(sys, st.pos);
    for (int64_t i = 0; i < acc.numel(); ++i) acc[i] /= sys.masses[i / d];
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < d; ++k) st.vel.at({i, k}) += 0.5 * h * acc.at({i, k});
  }
}

double kinetic_energy(const SimSystem& sys, const SimState& st) {
  int d = sys.params.space_dim;
  double e = 0;
  for (int64_t i = 0; i < st.vel.numel(); ++i)
    e += 0.5 * sys.masses[i / d] * st.vel[i] * st.vel[i];
  return e;
}

double potential_energy(const SimSystem& sys, const TensorD& pos) {
  const SimParams& p = sys.params;
  int n = p.n_bodies, d = p.space_dim;
  double eps2 = p.softening * p.softening;
  double e = 0;
  auto dist = [&](int i, int j) {
    double r2 = 0;
    for (int k = 0; k < d; ++k) {
      double dk = pos.at({i, k}) - pos.at({j, k});
      r2 += dk * dk;
    }
    return std::sqrt(r2 + eps2);
  };
  if (p.kind == SystemKind::Spring) {
    for (const auto& s : sys.springs) {
      double stretch = dist(s[0], s[1]) - p.rest_length;
      e += 0.5 * p.coupling * stretch * stretch;
    }
    return e;
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      if (p.kind == SystemKind::Charged)
        e += p.coupling * sys.charges[i] * sys.charges[j] / dist(i, j);
      else
        e += -p.coupling * sys.masses[i] * sys.masses[j] / dist(i, j);
    }
  return e;
}

TensorD total_momentum(const SimSystem& sys, const SimState& st) {
  int d = sys.params.space_dim;
  TensorD mom({d});
  for (int64_t i = 0; i < st.vel.numel(); ++i) mom[i % d] += sys.masses[i / d] * st.vel[i];
  return mom;
}

GeoTrajectory roll_trajectory(const SimSystem& sys, const SimState& st0, int64_t frames) {
  const SimParams& p = sys.params;
  int n = p.n_bodies, d = p.space_dim;
  GeoTrajectory traj;
  traj.coords = TensorD({frames, n, d});
  traj.node_feats = TensorD({n, 1});
  for (int i = 0; i < n; ++i)
    traj.node_feats.at({i, 0}) =
        p.kind == SystemKind::Charged ? sys.charges[i] : sys.masses[i];
  if (p.kind == SystemKind::Spring) {
    for (const auto& s : sys.springs) {
      traj.edges.push_back({s[0], s[1]});
      traj.edges.push_back({s[1], s[0]});
    }
  } else {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j) traj.edges.push_back({static_cast<int32_t>(i), static_cast<int32_t>(j)});
  }
  SimState st = st0;
  for (int64_t t = 0; t < frames; ++t) {
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < d; ++k) traj.coords.at({t, i, k}) = st.pos.at({i, k});
    if (t + 1 < frames) leapfrog_step(sys, st, p.dt, p.substeps);
  }
  return traj;
}

GeoTrajectory roll_trajectory(Rng& rng, const SimParams& p, int64_t frames) {
  SimSystem sys = init_system(rng, p);
  SimState st = init_state(rng, p);
  return roll_trajectory(sys, st, frames);
}

GeoTrajectory simulate_charged(Rng& rng, const SimParams& p, int64_t frames) {
  SimParams q = p;
  q.kind = SystemKind::Charged;
  return roll_trajectory(rng, q, frames);
}

GeoTrajectory simulate_spring(Rng& rng, const SimParams& p, int64_t frames) {
  SimParams q = p;
  q.kind = SystemKind::Spring;
  return roll_trajectory(rng, q, frames);
}

GeoTrajectory simulate_gravity(Rng& rng, const SimParams& p, int64_t frames) {
  SimParams q = p;
  q.kind = SystemKind::Gravity;
  return roll_trajectory(rng, q, frames);
}

void build_dataset(const SimParams& p, const DatasetManifest& m, const std::string& out_dir) {
  if (m.n_train < 1 || m.n_valid < 1 || m.n_test < 1)
    throw std::invalid_argument("dataset manifest: split counts must be >= 1");
  if (m.t_total < m.t_cond + m.t_target)
    throw std::invalid_argument("dataset manifest: t_total must be >= t_cond + t_target");
  std::filesystem::create_directories(out_dir);
  Rng root(m.seed);
  int64_t index = 0;
  auto make_split = [&](const std::string& name, int64_t count) {
    std::vector<GeoTrajectory> trajs;
    trajs.reserve(count);
    for (int64_t i = 0; i < count; ++i) {
      Rng sub = root.fork(static_cast<uint64_t>(index++));
      trajs.push_back(roll_trajectory(sub, p, m.t_total));
    }
    write_gtrj(out_dir + "/" + name + ".gtrj", trajs);
  };
  make_split("train", m.n_train);
  make_split("valid", m.n_valid);
  make_split("test", m.n_test);
  std::ofstream mf(out_dir + "/manifest.txt");
  mf << "kind = " << to_string(p.kind) << "\n";
  mf << "n_bodies = " << p.n_bodies << "\n";
  mf << "n_train = " << m.n_train << "\n";
  mf << "n_valid = " << m.n_valid << "\n";
  mf << "n_test = " << m.n_test << "\n";
  mf << "t_total = " << m.t_total << "\n";
  mf << "t_cond = " << m.t_cond << "\n";
  mf << "t_target = " << m.t_target << "\n";
  mf << "seed = " << m.seed << "\n";
}

std::vector<GeoTrajectory> load_split(const std::string& dir, const std::string& split) {
  return read_gtrj(dir + "/" + split + ".gtrj");
}

}  // namespace geotdm
