#include <array>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "geotdm/autodiff.hpp"
#include "geotdm/geom.hpp"

using namespace geotdm;

namespace {

double max_abs_diff(const TensorD& a, const TensorD& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Determinant via Gaussian elimination with partial pivoting.
double det(const TensorD& m) {
  REQUIRE(m.ndim() == 2);
  int64_t n = m.dim(0);
  REQUIRE(m.dim(1) == n);
  std::vector<double> a(m.data(), m.data() + n * n);
  double d = 1.0;
  for (int64_t c = 0; c < n; ++c) {
    int64_t piv = c;
    for (int64_t r = c + 1; r < n; ++r)
      if (std::abs(a[r * n + c]) > std::abs(a[piv * n + c])) piv = r;
    if (piv != c) {
      for (int64_t j = 0; j < n; ++j) std::swap(a[c * n + j], a[piv * n + j]);
      d = -d;
    }
    double p = a[c * n + c];
    if (p == 0.0) return 0.0;
    d *= p;
    for (int64_t r = c + 1; r < n; ++r) {
      double f = a[r * n + c] / p;
      for (int64_t j = c; j < n; ++j) a[r * n + j] -= f * a[c * n + j];
    }
  }
  return d;
}

}  // namespace

TEST_CASE("zero-mean projection") {
  Rng rng(7);
  TensorD x = ag::randn_tensor<double>(rng, {4, 5, 3});
  TensorD p = project_zero_com(x);

  SUBCASE("per-component mean is zero") {
    for (int64_t j = 0; j < 3; ++j) {
      double m = 0;
      for (int64_t r = 0; r < 20; ++r) m += p[r * 3 + j];
      CHECK(std::abs(m / 20) < 1e-14);
    }
  }
  SUBCASE("idempotent") { CHECK(max_abs_diff(project_zero_com(p), p) < 1e-14); }
  SUBCASE("commutes with rotation") {
    Rng rr(8);
    TensorD R = random_rotation(rr, 3);
    TensorD lhs = project_zero_com(apply_rotation(x, R));
    TensorD rhs = apply_rotation(p, R);
    CHECK(max_abs_diff(lhs, rhs) < 1e-12);
  }
  SUBCASE("kills global translations") {
    TensorD shifted = x;
    for (int64_t r = 0; r < 20; ++r)
      for (int64_t j = 0; j < 3; ++j) shifted[r * 3 + j] += 10.0 + j;
    CHECK(max_abs_diff(project_zero_com(shifted), p) < 1e-12);
  }
}

TEST_CASE("subspace gaussian statistics") {
  Rng rng(42);
  const Shape shape{5, 4, 3};
  const int64_t vals = 5 * 4 * 3;
  const int draws = 5000;
  double sq = 0;
  for (int k = 0; k < draws; ++k) {
    TensorD z = sample_subspace_gaussian<double>(rng, shape);
    if (k == 0) {
      for (int64_t j = 0; j < 3; ++j) {
        double m = 0;
        for (int64_t r = 0; r < 20; ++r) m += z[r * 3 + j];
        CHECK(std::abs(m / 20) < 1e-14);
      }
    }
    for (int64_t i = 0; i < vals; ++i) sq += z[i] * z[i];
  }
  double var = sq / (static_cast<double>(draws) * vals);
  CHECK(var == doctest::Approx(1.0 - 1.0 / 20.0).epsilon(0.005));
}

TEST_CASE("random rotations are special orthogonal") {
  Rng rng(5);
  for (int d : {2, 3, 5}) {
    TensorD R = random_rotation(rng, d);
    REQUIRE(R.shape() == Shape{d, d});
    for (int64_t i = 0; i < d; ++i)
      for (int64_t j = 0; j < d; ++j) {
        double dot = 0;
        for (int64_t k = 0; k < d; ++k) dot += R[k * d + i] * R[k * d + j];
        CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
      }
    CHECK(det(R) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("rigid motions") {
  Rng rng(9);
  TensorD x = ag::randn_tensor<double>(rng, {3, 4, 3});

  SUBCASE("inverse round trip") {
    RigidMotion m = random_rigid_motion(rng, 3, 2.0);
    TensorD back = apply_motion(apply_motion(x, m), inverse(m));
    CHECK(max_abs_diff(back, x) < 1e-12);
  }
  SUBCASE("double inverse restores the motion") {
    RigidMotion m = random_rigid_motion(rng, 3, 2.0);
    RigidMotion mm = inverse(inverse(m));
    CHECK(max_abs_diff(mm.rot, m.rot) < 1e-12);
    for (int j = 0; j < 3; ++j) CHECK(mm.shift[j] == doctest::Approx(m.shift[j]).epsilon(1e-12));
  }
  SUBCASE("matches the row-wise formula on a rank-2 input") {
    TensorD pts({2, 2}, {1.0, 0.0, 0.0, 2.0});
    double c = std::cos(0.5), s = std::sin(0.5);
    RigidMotion m{TensorD({2, 2}, {c, -s, s, c}), {0.25, -1.0}};
    TensorD y = apply_motion(pts, m);
    CHECK(y[0] == doctest::Approx(c + 0.25).epsilon(1e-15));
    CHECK(y[1] == doctest::Approx(s - 1.0).epsilon(1e-15));
    CHECK(y[2] == doctest::Approx(-2 * s + 0.25).epsilon(1e-15));
    CHECK(y[3] == doctest::Approx(2 * c - 1.0).epsilon(1e-15));
  }
  SUBCASE("trajectory transform leaves features and edges alone") {
    GeoTrajectory traj;
    traj.coords = x;
    traj.node_feats = ag::randn_tensor<double>(rng, {4, 2});
    traj.edges = {{0, 1}, {2, 3}};
    RigidMotion m = random_rigid_motion(rng, 3, 1.0);
    GeoTrajectory moved = apply_rigid_motion(traj, m);
    CHECK(max_abs_diff(moved.coords, apply_motion(x, m)) == 0.0);
    CHECK(max_abs_diff(moved.node_feats, traj.node_feats) == 0.0);
    REQUIRE(moved.edges.size() == 2);
    CHECK(moved.edges[0] == std::array<int32_t, 2>{0, 1});
    CHECK(moved.edges[1] == std::array<int32_t, 2>{2, 3});
  }
}

TEST_CASE("finite difference gradient") {
  auto f = [](const std::vector<double>& v) {
    double acc = 0;
    for (size_t i = 0; i < v.size(); ++i) acc += static_cast<double>(i + 1) * v[i] * v[i];
    return acc;
  };
  std::vector<double> x{0.3, -1.2, 2.0, 0.0};
  auto g = finite_diff_gradient(f, x);
  REQUIRE(g.size() == 4);
  for (size_t i = 0; i < 4; ++i)
    CHECK(g[i] == doctest::Approx(2.0 * (i + 1) * x[i]).epsilon(1e-7));
}
