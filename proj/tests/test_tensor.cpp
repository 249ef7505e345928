#include <cmath>
#include <functional>

#include "doctest.h"
#include "geotdm/autodiff.hpp"
#include "geotdm/geom.hpp"

using namespace geotdm;

namespace {

// Checks analytic gradients of `op` against central finite differences. The
// op output is contracted against a fixed random weight tensor so every
// output element influences the scalar loss differently.
void gradcheck(const Shape& xshape,
               const std::function<Var<double>(Var<double>)>& op,
               uint64_t seed = 1234, double tol = 1e-6, bool positive = false) {
  Rng rng(seed);
  TensorD x0 = positive ? ag::randu_tensor<double>(rng, xshape, 0.5, 2.0)
                        : ag::randn_tensor<double>(rng, xshape);
  TensorD w;
  {
    ag::NoGradGuard ng;
    Rng wrng = rng.fork(1);
    auto probe = op(ag::constant(x0));
    w = ag::randn_tensor<double>(wrng, probe->value.shape());
  }
  auto build = [&](Var<double> x) {
    return ag::sum_all(ag::mul(op(x), ag::constant(w)));
  };
  auto x = ag::parameter(x0);
  auto loss = build(x);
  ag::backward(loss);
  TensorD analytic = x->grad;
  REQUIRE(analytic.shape() == xshape);

  auto f = [&](const std::vector<double>& v) {
    ag::NoGradGuard ng;
    return build(ag::constant(TensorD(xshape, v)))->value[0];
  };
  std::vector<double> fd = finite_diff_gradient(f, x0.vec(), 1e-5);
  for (int64_t i = 0; i < analytic.numel(); ++i) {
    CAPTURE(i);
    CHECK(std::abs(analytic[i] - fd[static_cast<size_t>(i)]) <=
          tol * (1.0 + std::abs(fd[static_cast<size_t>(i)])));
  }
}

}  // namespace

TEST_CASE("tensor basics") {
  TensorD t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.ndim() == 2);
  for (int64_t i = 0; i < 6; ++i) CHECK(t[i] == 0.0);
  t.at({1, 2}) = 5.0;
  CHECK(t[5] == 5.0);
  TensorD u = TensorD::full({2, 2}, 3.0);
  CHECK(u[3] == 3.0);
  CHECK(TensorD::scalar(7.0).numel() == 1);
  CHECK(TensorD::ones({3})[2] == 1.0);
  CHECK(shape_numel({4, 5}) == 20);
  CHECK(shape_str({2, 3}) == "[2,3]");
  TensorD r = u.reshaped({4});
  CHECK(r.ndim() == 1);
  CHECK(r[0] == 3.0);
  TensorF f = u.cast<float>();
  CHECK(f[1] == 3.0f);
  CHECK_THROWS(t.reshaped({5}));
}

TEST_CASE("elementwise gradients") {
  Shape s{2, 3};
  gradcheck(s, [](Var<double> x) { return ag::add(x, ag::constant(TensorD::full({2, 3}, 2.0))); });
  gradcheck(s, [](Var<double> x) { return ag::sub(ag::constant(TensorD::full({2, 3}, 1.0)), x); });
  gradcheck(s, [](Var<double> x) { return ag::mul(x, x); });
  gradcheck(s, [](Var<double> x) {
    return ag::ediv(ag::constant(TensorD::full({2, 3}, 1.5)), x);
  }, 1234, 1e-6, true);
  gradcheck(s, [](Var<double> x) { return ag::scale(x, 2.5); });
  gradcheck(s, [](Var<double> x) { return ag::add_scalar(x, -1.25); });
  gradcheck(s, [](Var<double> x) { return ag::neg(x); });
  gradcheck(s, [](Var<double> x) { return ag::sigmoid(x); });
  gradcheck(s, [](Var<double> x) { return ag::silu(x); });
  gradcheck(s, [](Var<double> x) { return ag::vexp(x); });
  gradcheck(s, [](Var<double> x) { return ag::vlog(x); }, 1234, 1e-6, true);
  gradcheck(s, [](Var<double> x) { return ag::vsqrt(x); }, 1234, 1e-6, true);
  gradcheck(s, [](Var<double> x) { return ag::square(x); });
}

TEST_CASE("broadcast gradients") {
  Rng brng(9);
  TensorD big = ag::randn_tensor<double>(brng, {2, 3, 4});
  SUBCASE("small against big") {
    gradcheck({3, 1}, [&](Var<double> x) { return ag::mul(x, ag::constant(big)); });
  }
  SUBCASE("scalar against big") {
    gradcheck({1}, [&](Var<double> x) { return ag::add(ag::constant(big), x); });
  }
  SUBCASE("expand") {
    gradcheck({2, 1, 4}, [](Var<double> x) { return ag::expand(x, {2, 3, 4}); });
  }
}

TEST_CASE("matmul gradients") {
  Rng rng(7);
  TensorD b2 = ag::randn_tensor<double>(rng, {4, 2});
  gradcheck({3, 4}, [&](Var<double> x) { return ag::matmul(x, ag::constant(b2)); });
  TensorD a2 = ag::randn_tensor<double>(rng, {3, 4});
  gradcheck({4, 2}, [&](Var<double> x) { return ag::matmul(ag::constant(a2), x); });
  TensorD b3 = ag::randn_tensor<double>(rng, {2, 4, 3});
  gradcheck({2, 3, 4}, [&](Var<double> x) { return ag::matmul(x, ag::constant(b3)); });
  TensorD a3 = ag::randn_tensor<double>(rng, {2, 3, 4});
  gradcheck({2, 4, 3}, [&](Var<double> x) { return ag::matmul(ag::constant(a3), x); });
  SUBCASE("shared rhs over a batched lhs") {
    Rng srng(3);
    TensorD shared = ag::randn_tensor<double>(srng, {4, 5});
    gradcheck({4, 3}, [&](Var<double> x) { return ag::matmul(ag::constant(a3), x); });
    gradcheck({2, 3, 4},
              [&](Var<double> x) { return ag::matmul(x, ag::constant(shared)); });
  }
  SUBCASE("matmul value") {
    TensorD a({2, 2}, {1, 2, 3, 4});
    TensorD b({2, 2}, {5, 6, 7, 8});
    TensorD c = ag::matmul(ag::constant(a), ag::constant(b))->value;
    CHECK(c[0] == 19.0);
    CHECK(c[1] == 22.0);
    CHECK(c[2] == 43.0);
    CHECK(c[3] == 50.0);
  }
}

TEST_CASE("shape op gradients") {
  gradcheck({2, 6}, [](Var<double> x) { return ag::reshape(x, {3, 4}); });
  gradcheck({2, 3, 4}, [](Var<double> x) { return ag::transpose(x, {2, 0, 1}); });
  gradcheck({2, 5, 3}, [](Var<double> x) { return ag::slice(x, 1, 1, 3); });
  gradcheck({2, 3}, [](Var<double> x) {
    return ag::concat<double>({x, ag::constant(TensorD::full({2, 2}, 1.0))}, 1);
  });
  gradcheck({2, 3}, [](Var<double> x) { return ag::concat<double>({x, x}, 0); });
}

TEST_CASE("reduction gradients") {
  gradcheck({3, 4}, [](Var<double> x) { return ag::sum_axis(x, 1); });
  gradcheck({3, 4}, [](Var<double> x) { return ag::sum_axis(x, 0, false); });
  gradcheck({3, 4}, [](Var<double> x) { return ag::mean_axis(x, 1); });
  gradcheck({3, 4}, [](Var<double> x) { return ag::sum_all(x); });
  gradcheck({3, 4}, [](Var<double> x) { return ag::mean_all(x); });
}

TEST_CASE("softmax and norm gradients") {
  gradcheck({3, 5}, [](Var<double> x) { return ag::softmax_last(x); });
  gradcheck({2, 3, 4}, [](Var<double> x) { return ag::norm_last(x, 1e-8); });
  SUBCASE("softmax rows sum to one") {
    Rng rng(5);
    auto sm = ag::softmax_last(ag::constant(ag::randn_tensor<double>(rng, {4, 7})));
    for (int64_t r = 0; r < 4; ++r) {
      double s = 0;
      for (int64_t c = 0; c < 7; ++c) s += sm->value[r * 7 + c];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("softmax is shift invariant") {
    Rng rng(6);
    TensorD a = ag::randn_tensor<double>(rng, {2, 5});
    TensorD b = a;
    for (int64_t i = 0; i < b.numel(); ++i) b[i] += 100.0;
    auto sa = ag::softmax_last(ag::constant(a))->value;
    auto sb = ag::softmax_last(ag::constant(b))->value;
    for (int64_t i = 0; i < sa.numel(); ++i)
      CHECK(sa[i] == doctest::Approx(sb[i]).epsilon(1e-12));
  }
}

TEST_CASE("gather and scatter gradients") {
  auto idx = std::make_shared<std::vector<int64_t>>(std::vector<int64_t>{2, 0, 1, 2});
  gradcheck({3, 4}, [&](Var<double> x) { return ag::gather_rows(x, idx); });
  gradcheck({4, 3}, [&](Var<double> x) { return ag::scatter_add_rows(x, idx, 3); });
  SUBCASE("scatter accumulates duplicate rows") {
    TensorD src({2, 1}, {1.0, 2.0});
    auto dup = std::make_shared<std::vector<int64_t>>(std::vector<int64_t>{0, 0});
    auto out = ag::scatter_add_rows(ag::constant(src), dup, 2)->value;
    CHECK(out[0] == 3.0);
    CHECK(out[1] == 0.0);
  }
}

TEST_CASE("attention position-table op gradients") {
  Rng rng(11);
  auto psi = std::make_shared<TensorD>(ag::randn_tensor<double>(rng, {3, 4, 5}));
  gradcheck({2, 3, 5}, [&](Var<double> q) { return ag::score_pos(q, psi); });
  gradcheck({2, 3, 4}, [&](Var<double> a) { return ag::pos_mix(a, psi); });
  SUBCASE("score_pos matches explicit contraction") {
    TensorD q({1, 2, 2}, {1, 2, 3, 4});
    auto p = std::make_shared<TensorD>(TensorD({2, 2, 2}, {1, 0, 0, 1, 2, 0, 0, 2}));
    auto s = ag::score_pos(ag::constant(q), p)->value;
    CHECK(s.shape() == Shape{1, 2, 2});
    CHECK(s[0] == 1.0);   // q[0,0]·psi[0,0]
    CHECK(s[1] == 2.0);   // q[0,0]·psi[0,1]
    CHECK(s[2] == 6.0);   // q[0,1]·psi[1,0]
    CHECK(s[3] == 8.0);   // q[0,1]·psi[1,1]
  }
}

TEST_CASE("linear gradients") {
  Rng rng(13);
  TensorD W = ag::randn_tensor<double>(rng, {4, 3});
  TensorD b = ag::randn_tensor<double>(rng, {3});
  gradcheck({2, 5, 4}, [&](Var<double> x) {
    return ag::linear(x, ag::constant(W), ag::constant(b));
  });
}

TEST_CASE("autodiff bookkeeping") {
  SUBCASE("no graph recorded under the guard") {
    auto p = ag::parameter(TensorD::full({2}, 1.0));
    ag::NoGradGuard ng;
    auto y = ag::mul(p, p);
    CHECK(y->parents.empty());
  }
  SUBCASE("constants do not accumulate gradients") {
    auto c = ag::constant(TensorD::full({2}, 3.0));
    auto p = ag::parameter(TensorD::full({2}, 2.0));
    auto loss = ag::sum_all(ag::mul(c, p));
    ag::backward(loss);
    CHECK(c->grad.numel() == 0);
    CHECK(p->grad[0] == 3.0);
  }
  SUBCASE("gradients accumulate across shared use") {
    auto p = ag::parameter(TensorD::full({1}, 3.0));
    auto loss = ag::sum_all(ag::add(ag::mul(p, p), p));
    ag::backward(loss);
    CHECK(p->grad[0] == doctest::Approx(7.0));  // 2x + 1 at x = 3
  }
  SUBCASE("backward needs a scalar root") {
    auto p = ag::parameter(TensorD::full({2}, 1.0));
    auto y = ag::mul(p, p);
    CHECK_THROWS(ag::backward(y));
  }
}
