#include "geotdm/geom.hpp"

#include <Eigen/Dense>

namespace geotdm {

TensorD random_rotation(Rng& rng, int d) {
  Eigen::MatrixXd g(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  // Fix the sign convention so Q is haar-distributed, then force det = +1.
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < d; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  if (q.determinant() < 0) q.col(d - 1) = -q.col(d - 1);
  TensorD out({d, d});
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) out.at({i, j}) = q(i, j);
  return out;
}

RigidMotion random_rigid_motion(Rng& rng, int d, double shift_scale) {
  RigidMotion m;
  m.rot = random_rotation(rng, d);
  m.shift.resize(d);
  for (int i = 0; i < d; ++i) m.shift[i] = rng.uniform(-shift_scale, shift_scale);
  return m;
}

RigidMotion inverse(const RigidMotion& m) {
  int64_t d = m.rot.dim(0);
  RigidMotion inv;
  inv.rot = TensorD({d, d});
  inv.shift.assign(d, 0.0);
  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = 0; j < d; ++j) inv.rot.at({i, j}) = m.rot.at({j, i});
  // inverse shift = -R^T t
  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = 0; j < d; ++j) inv.shift[i] -= m.rot.at({j, i}) * m.shift[j];
  return inv;
}

GeoTrajectory apply_rigid_motion(const GeoTrajectory& traj, const RigidMotion& m) {
  GeoTrajectory out = traj;
  out.coords = apply_motion(traj.coords, m);
  return out;
}

std::vector<double> finite_diff_gradient(const std::function<double(const std::vector<double>&)>& f,
                                         std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double orig = x[i];
    x[i] = orig + h;
    double fp = f(x);
    x[i] = orig - h;
    double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace geotdm
