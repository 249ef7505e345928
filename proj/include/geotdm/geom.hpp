#pragma once

#include <array>
#include <functional>
#include <vector>

#include "geotdm/rng.hpp"
#include "geotdm/tensor.hpp"

namespace geotdm {

// A geometric trajectory: per-frame coordinates for N nodes, static node
// features, and a directed edge list (src, dst) shared across frames.
struct GeoTrajectory {
  TensorD coords;      // [T, N, D]
  TensorD node_feats;  // [N, Dh]
  std::vector<std::array<int32_t, 2>> edges;

  int64_t frames() const { return coords.dim(0); }
  int64_t nodes() const { return coords.dim(1); }
  int64_t space_dim() const { return coords.dim(2); }
  int64_t feat_dim() const { return node_feats.ndim() == 2 ? node_feats.dim(1) : 0; }
};

// Proper rigid motion x -> R x + shift.
struct RigidMotion {
  TensorD rot;                // [D, D]
  std::vector<double> shift;  // [D]
};

// Subtract the mean over every point in every frame, per spatial component.
// Accepts any rank >= 2; the last axis is the spatial one.
template <class S>
Tensor<S> project_zero_com(const Tensor<S>& x) {
  int64_t d = x.dim(x.ndim() - 1);
  int64_t rows = x.numel() / d;
  std::vector<double> mean(d, 0.0);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j) mean[j] += static_cast<double>(x[r * d + j]);
  for (int64_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(rows);
  Tensor<S> out(x.shape());
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j)
      out[r * d + j] = x[r * d + j] - static_cast<S>(mean[j]);
  return out;
}

// Standard normal in the zero-CoM subspace: ambient draw, then projection.
// Per-component variance comes out as 1 - 1/(rows) with rows = T*N.
template <class S>
Tensor<S> sample_subspace_gaussian(Rng& rng, Shape shape) {
  Tensor<S> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.normal());
  return project_zero_com(t);
}

// Uniform proper rotation via QR of a Gaussian matrix, determinant fixed to +1.
TensorD random_rotation(Rng& rng, int d);

RigidMotion random_rigid_motion(Rng& rng, int d, double shift_scale);
RigidMotion inverse(const RigidMotion& m);

// Apply to coordinates of any rank; last axis must have length D.
template <class S>
Tensor<S> apply_motion(const Tensor<S>& coords, const RigidMotion& m) {
  int64_t d = coords.dim(coords.ndim() - 1);
  int64_t rows = coords.numel() / d;
  Tensor<S> out(coords.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const S* x = coords.data() + r * d;
    S* y = out.data() + r * d;
    for (int64_t i = 0; i < d; ++i) {
      double acc = m.shift[i];
      for (int64_t j = 0; j < d; ++j) acc += m.rot.at({i, j}) * static_cast<double>(x[j]);
      y[i] = static_cast<S>(acc);
    }
  }
  return out;
}

// Rotation only (no shift); used for vectors such as noise or displacements.
template <class S>
Tensor<S> apply_rotation(const Tensor<S>& coords, const TensorD& rot) {
  RigidMotion m{rot, std::vector<double>(rot.dim(0), 0.0)};
  return apply_motion(coords, m);
}

GeoTrajectory apply_rigid_motion(const GeoTrajectory& traj, const RigidMotion& m);

// Central finite differences of a scalar function, done in double.
std::vector<double> finite_diff_gradient(const std::function<double(const std::vector<double>&)>& f,
                                         std::vector<double> x, double h = 1e-5);

}  // namespace geotdm
