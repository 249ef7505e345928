#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "geotdm/diffusion.hpp"
#include "geotdm/geom.hpp"
#include "geotdm/sim.hpp"

using namespace geotdm;

namespace {

GraphBatch complete_graph(int64_t B, int64_t N) {
  GraphBatch g;
  g.n_batch = B;
  g.n_nodes = N;
  for (int64_t b = 0; b < B; ++b) {
    std::vector<std::array<int32_t, 2>> e;
    for (int32_t i = 0; i < N; ++i)
      for (int32_t j = 0; j < N; ++j)
        if (i != j) e.push_back({i, j});
    g.edges.push_back(std::move(e));
  }
  return g;
}

void perturb_params(EgtnModel<double>& m, uint64_t seed, double scale) {
  Rng rng(seed);
  m.visit_params([&](const std::string&, Var<double>& v) {
    for (int64_t i = 0; i < v->value.numel(); ++i) v->value[i] += scale * rng.normal();
  });
}

double max_abs(const TensorD& t) {
  double m = 0;
  for (int64_t i = 0; i < t.numel(); ++i) m = std::max(m, std::abs(t[i]));
  return m;
}

double max_abs_diff(const TensorD& a, const TensorD& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double rel_dev(const TensorD& got, const TensorD& want) {
  return max_abs_diff(got, want) / (max_abs(want) + 1e-12);
}

EgtnConfig small_config(bool conditional) {
  EgtnConfig cfg;
  cfg.n_layers = 2;
  cfg.hidden_dim = 16;
  cfg.time_emb_dim = 8;
  cfg.feat_dim = 2;
  cfg.space_dim = 3;
  cfg.conditional = conditional;
  cfg.t_target = conditional ? 3 : 0;
  return cfg;
}

}  // namespace

TEST_CASE("sinusoidal embeddings match pinned values") {
  TensorD a = sinusoidal_embedding<double>(1.0, 4);
  REQUIRE(a.shape() == Shape{4});
  CHECK(a[0] == doctest::Approx(0.8414709848078965).epsilon(1e-15));
  CHECK(a[1] == doctest::Approx(0.5403023058681398).epsilon(1e-15));
  CHECK(a[2] == doctest::Approx(0.009999833334166664).epsilon(1e-15));
  CHECK(a[3] == doctest::Approx(0.9999500004166653).epsilon(1e-15));

  TensorD b = sinusoidal_embedding<double>(7.0, 6);
  CHECK(b[0] == doctest::Approx(0.6569865987187891).epsilon(1e-15));
  CHECK(b[1] == doctest::Approx(0.7539022543433046).epsilon(1e-15));
  CHECK(b[2] == doctest::Approx(0.3192246506063149).epsilon(1e-15));
  CHECK(b[3] == doctest::Approx(0.9476790714399449).epsilon(1e-15));
  CHECK(b[4] == doctest::Approx(0.01508047117005742).epsilon(1e-15));
  CHECK(b[5] == doctest::Approx(0.9998862832288925).epsilon(1e-15));
}

TEST_CASE("frame offsets") {
  CHECK(default_times(3) == std::vector<int64_t>{0, 1, 2});
  CHECK(default_times(4, -4) == std::vector<int64_t>{-4, -3, -2, -1});
}

TEST_CASE("fresh models leave coordinates untouched") {
  Rng rng(1);
  GraphBatch g = complete_graph(2, 3);
  TensorD x = ag::randn_tensor<double>(rng, {2, 4, 3, 3});
  TensorD h = ag::randn_tensor<double>(rng, {2, 3, 2});
  std::vector<int> taus{3, 7};

  SUBCASE("unconditional forward and noise head") {
    Rng mr(2);
    auto m = EgtnModel<double>::create(small_config(false), mr);
    auto out = egtn_forward(m, ag::constant(x), ag::constant(h), g, taus, default_times(4));
    CHECK(max_abs_diff(out.coords->value, x) == 0.0);
    auto eps = predict_eps_uncond(m, ag::constant(x), ag::constant(h), g, taus);
    CHECK(max_abs(eps->value) == 0.0);
  }
  SUBCASE("conditional noise head and prior anchor") {
    Rng mr(3);
    auto m = EgtnModel<double>::create(small_config(true), mr);
    TensorD xc = ag::randn_tensor<double>(rng, {2, 2, 3, 3});
    TensorD xt = ag::randn_tensor<double>(rng, {2, 3, 3, 3});
    auto eps = predict_eps_cond(m, ag::constant(xt), ag::constant(xc), ag::constant(h), g, taus);
    CHECK(max_abs(eps->value) == 0.0);

    PriorOut<double> prior = build_prior(m, ag::constant(xc), ag::constant(h), g);
    REQUIRE(prior.anchor->value.shape() == Shape{2, 3, 3, 3});
    double md = 0;
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t t = 0; t < 3; ++t)
        for (int64_t i = 0; i < 3; ++i)
          for (int64_t d = 0; d < 3; ++d)
            md = std::max(md, std::abs(prior.anchor->value.at({b, t, i, d}) -
                                       xc.at({b, 1, i, d})));
    CHECK(md == 0.0);
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t t = 0; t < 3; ++t)
        for (int64_t i = 0; i < 3; ++i) {
          CHECK(prior.weights->value.at({b, t, 0, i}) == 0.0);
          CHECK(prior.weights->value.at({b, t, 1, i}) == 1.0);
        }
  }
}

TEST_CASE("randomised stacks are equivariant") {
  Rng rng(5);
  GraphBatch g = complete_graph(2, 4);
  TensorD x = ag::randn_tensor<double>(rng, {2, 3, 4, 3});
  TensorD h = ag::randn_tensor<double>(rng, {2, 4, 2});
  std::vector<int> taus{5, 9};
  Rng mr(6);
  auto m = EgtnModel<double>::create(small_config(false), mr);
  perturb_params(m, 7, 0.4);
  auto base = egtn_forward(m, ag::constant(x), ag::constant(h), g, taus, default_times(3));

  SUBCASE("rigid motions") {
    Rng rr(8);
    RigidMotion motion = random_rigid_motion(rr, 3, 2.0);
    TensorD xr = apply_motion(x, motion);
    auto out = egtn_forward(m, ag::constant(xr), ag::constant(h), g, taus, default_times(3));
    CHECK(rel_dev(out.coords->value, apply_motion(base.coords->value, motion)) < 1e-10);
    CHECK(rel_dev(out.feats->value, base.feats->value) < 1e-10);

    auto eps0 = predict_eps_uncond(m, ag::constant(x), ag::constant(h), g, taus);
    auto eps1 = predict_eps_uncond(m, ag::constant(xr), ag::constant(h), g, taus);
    CHECK(rel_dev(eps1->value, apply_rotation(eps0->value, motion.rot)) < 1e-10);
  }
  SUBCASE("node permutations") {
    const std::vector<int64_t> perm{2, 0, 3, 1};
    std::vector<int64_t> inv(4);
    for (int64_t j = 0; j < 4; ++j) inv[perm[j]] = j;
    TensorD xp({2, 3, 4, 3}), hp({2, 4, 2});
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t j = 0; j < 4; ++j) {
        for (int64_t t = 0; t < 3; ++t)
          for (int64_t d = 0; d < 3; ++d) xp.at({b, t, j, d}) = x.at({b, t, perm[j], d});
        for (int64_t f = 0; f < 2; ++f) hp.at({b, j, f}) = h.at({b, perm[j], f});
      }
    GraphBatch gp = g;
    for (auto& edges : gp.edges)
      for (auto& e : edges)
        e = {static_cast<int32_t>(inv[e[0]]), static_cast<int32_t>(inv[e[1]])};
    auto out = egtn_forward(m, ag::constant(xp), ag::constant(hp), gp, taus, default_times(3));
    double md = 0;
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t t = 0; t < 3; ++t)
        for (int64_t j = 0; j < 4; ++j)
          for (int64_t d = 0; d < 3; ++d)
            md = std::max(md, std::abs(out.coords->value.at({b, t, j, d}) -
                                       base.coords->value.at({b, t, perm[j], d})));
    CHECK(md / (max_abs(base.coords->value) + 1e-12) < 1e-10);
  }
}

TEST_CASE("conditional stack is equivariant through the prior") {
  Rng rng(9);
  GraphBatch g = complete_graph(2, 4);
  TensorD xc = ag::randn_tensor<double>(rng, {2, 2, 4, 3});
  TensorD xt = ag::randn_tensor<double>(rng, {2, 3, 4, 3});
  TensorD h = ag::randn_tensor<double>(rng, {2, 4, 2});
  std::vector<int> taus{2, 4};
  Rng mr(10);
  auto m = EgtnModel<double>::create(small_config(true), mr);
  perturb_params(m, 11, 0.4);

  Rng rr(12);
  RigidMotion motion = random_rigid_motion(rr, 3, 2.0);
  TensorD xcr = apply_motion(xc, motion);
  TensorD xtr = apply_motion(xt, motion);

  auto eps0 = predict_eps_cond(m, ag::constant(xt), ag::constant(xc), ag::constant(h), g, taus);
  auto eps1 = predict_eps_cond(m, ag::constant(xtr), ag::constant(xcr), ag::constant(h), g, taus);
  CHECK(rel_dev(eps1->value, apply_rotation(eps0->value, motion.rot)) < 1e-10);

  PriorOut<double> p0 = build_prior(m, ag::constant(xc), ag::constant(h), g);
  PriorOut<double> p1 = build_prior(m, ag::constant(xcr), ag::constant(h), g);
  CHECK(rel_dev(p1.anchor->value, apply_motion(p0.anchor->value, motion)) < 1e-10);
  CHECK(rel_dev(p1.weights->value, p0.weights->value) < 1e-10);
}

TEST_CASE("single-frame attention fixes coordinates") {
  Rng mr(13);
  auto m = EgtnModel<double>::create(small_config(false), mr);
  perturb_params(m, 14, 0.4);
  Rng rng(15);
  StreamBatch<double> in{ag::constant(ag::randn_tensor<double>(rng, {2, 1, 3, 3})),
                         ag::constant(ag::randn_tensor<double>(rng, {2, 1, 3, 16}))};
  auto out = attention_forward<double>(in, {0}, nullptr, {}, m.stack.layers[0].attn, 1);
  CHECK(max_abs_diff(out.coords->value, in.coords->value) < 1e-14);
  CHECK(max_abs_diff(out.feats->value, in.feats->value) > 1e-8);
}

TEST_CASE("the diffusion step input matters") {
  Rng rng(16);
  GraphBatch g = complete_graph(1, 3);
  TensorD x = ag::randn_tensor<double>(rng, {1, 3, 3, 3});
  TensorD h = ag::randn_tensor<double>(rng, {1, 3, 2});
  Rng mr(17);
  auto m = EgtnModel<double>::create(small_config(false), mr);
  perturb_params(m, 18, 0.4);
  auto a = predict_eps_uncond(m, ag::constant(x), ag::constant(h), g, {1});
  auto b = predict_eps_uncond(m, ag::constant(x), ag::constant(h), g, {50});
  CHECK(max_abs_diff(a->value, b->value) > 1e-8);
}

TEST_CASE("predicted noise stays mean-free per sample") {
  Rng rng(19);
  GraphBatch g = complete_graph(2, 4);
  TensorD x = ag::randn_tensor<double>(rng, {2, 3, 4, 3});
  TensorD h = ag::randn_tensor<double>(rng, {2, 4, 2});
  Rng mr(20);
  auto m = EgtnModel<double>::create(small_config(false), mr);
  perturb_params(m, 21, 0.4);
  auto eps = predict_eps_uncond(m, ag::constant(x), ag::constant(h), g, {4, 6});
  double scale = max_abs(eps->value) + 1.0;
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t d = 0; d < 3; ++d) {
      double mean = 0;
      for (int64_t t = 0; t < 3; ++t)
        for (int64_t i = 0; i < 4; ++i) mean += eps->value.at({b, t, i, d});
      CHECK(std::abs(mean / 12) / scale < 1e-14);
    }
}

TEST_CASE("prior weight mixing") {
  Rng rng(22);
  TensorD x_hat = ag::randn_tensor<double>(rng, {2, 4, 3, 2});

  SUBCASE("zero gain picks the last frame") {
    TensorD vals = ag::randn_tensor<double>(rng, {2, 4, 3});
    auto [anchor, w] = prior_from_parts(ag::constant(x_hat), ag::constant(vals),
                                        ag::constant(TensorD({3})));
    REQUIRE(anchor->value.shape() == Shape{2, 3, 3, 2});
    double md = 0;
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t t = 0; t < 3; ++t)
        for (int64_t i = 0; i < 3; ++i)
          for (int64_t d = 0; d < 2; ++d)
            md = std::max(md, std::abs(anchor->value.at({b, t, i, d}) - x_hat.at({b, 3, i, d})));
    CHECK(md == 0.0);
  }
  SUBCASE("uniform head values and unit gain average the frames") {
    TensorD vals = TensorD::full({2, 4, 3}, 0.25);
    auto [anchor, w] = prior_from_parts(ag::constant(x_hat), ag::constant(vals),
                                        ag::constant(TensorD::ones({3})));
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t t = 0; t < 3; ++t)
        for (int64_t i = 0; i < 3; ++i)
          for (int64_t d = 0; d < 2; ++d) {
            double mean = 0;
            for (int64_t s = 0; s < 4; ++s) mean += x_hat.at({b, s, i, d});
            mean /= 4;
            CHECK(anchor->value.at({b, t, i, d}) == doctest::Approx(mean).epsilon(1e-12));
          }
  }
  SUBCASE("weights always sum to one") {
    TensorD vals = ag::randn_tensor<double>(rng, {2, 4, 3});
    TensorD gamma = ag::randn_tensor<double>(rng, {3});
    auto [anchor, w] = prior_from_parts(ag::constant(x_hat), ag::constant(vals),
                                        ag::constant(gamma));
    REQUIRE(w->value.shape() == Shape{2, 3, 4, 3});
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t t = 0; t < 3; ++t)
        for (int64_t i = 0; i < 3; ++i) {
          double sum = 0;
          for (int64_t s = 0; s < 4; ++s) sum += w->value.at({b, t, s, i});
          CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        }
  }
  SUBCASE("a single condition frame is copied") {
    TensorD one = ag::randn_tensor<double>(rng, {2, 1, 3, 2});
    TensorD vals = ag::randn_tensor<double>(rng, {2, 1, 3});
    auto [anchor, w] = prior_from_parts(ag::constant(one), ag::constant(vals),
                                        ag::constant(TensorD::ones({3})));
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t t = 0; t < 3; ++t)
        for (int64_t i = 0; i < 3; ++i)
          for (int64_t d = 0; d < 2; ++d)
            CHECK(anchor->value.at({b, t, i, d}) == one.at({b, 0, i, d}));
  }
}

TEST_CASE("multi-head attention works and stays equivariant") {
  EgtnConfig cfg = small_config(false);
  cfg.n_heads = 2;
  Rng mr(23);
  auto m = EgtnModel<double>::create(cfg, mr);
  Rng rng(24);
  GraphBatch g = complete_graph(2, 3);
  TensorD x = ag::randn_tensor<double>(rng, {2, 3, 3, 3});
  TensorD h = ag::randn_tensor<double>(rng, {2, 3, 2});
  auto out0 = egtn_forward(m, ag::constant(x), ag::constant(h), g, {3, 5}, default_times(3));
  CHECK(max_abs_diff(out0.coords->value, x) == 0.0);

  perturb_params(m, 25, 0.4);
  auto base = predict_eps_uncond(m, ag::constant(x), ag::constant(h), g, {3, 5});
  Rng rr(26);
  RigidMotion motion = random_rigid_motion(rr, 3, 1.0);
  auto moved = predict_eps_uncond(m, ag::constant(apply_motion(x, motion)), ag::constant(h), g,
                                  {3, 5});
  CHECK(rel_dev(moved->value, apply_rotation(base->value, motion.rot)) < 1e-10);
}

TEST_CASE("loss gradients match finite differences") {
  EgtnConfig cfg;
  cfg.n_layers = 1;
  cfg.hidden_dim = 8;
  cfg.time_emb_dim = 4;
  cfg.feat_dim = 1;
  cfg.space_dim = 2;
  NoiseSchedule sched = make_linear_schedule(10, 1e-3, 0.2);
  GraphBatch g = complete_graph(2, 3);
  Rng rng(27);
  TensorD feats = ag::randn_tensor<double>(rng, {2, 3, 1});

  auto check_param_grads = [&](EgtnModel<double>& m,
                               const std::function<double()>& loss_value,
                               const std::function<Var<double>()>& loss_graph,
                               const std::vector<std::string>& must_cover) {
    std::vector<std::string> names;
    std::vector<Var<double>> ps;
    m.visit_params([&](const std::string& n, Var<double>& v) {
      names.push_back(n);
      ps.push_back(v);
    });
    for (auto& p : ps) p->grad = TensorD();
    Var<double> loss = loss_graph();
    ag::backward(loss);

    Rng pick(28);
    std::vector<std::pair<size_t, int64_t>> targets;
    for (int k = 0; k < 25; ++k) {
      size_t ti = static_cast<size_t>(pick.uniform_int(0, static_cast<int64_t>(ps.size()) - 1));
      targets.push_back({ti, pick.uniform_int(0, ps[ti]->value.numel() - 1)});
    }
    for (const auto& want : must_cover)
      for (size_t ti = 0; ti < names.size(); ++ti)
        if (names[ti] == want)
          for (int64_t e = 0; e < ps[ti]->value.numel(); ++e) targets.push_back({ti, e});

    const double h = 1e-5;
    for (auto [ti, e] : targets) {
      CAPTURE(names[ti]);
      CAPTURE(e);
      double saved = ps[ti]->value[e];
      ps[ti]->value[e] = saved + h;
      double up = loss_value();
      ps[ti]->value[e] = saved - h;
      double dn = loss_value();
      ps[ti]->value[e] = saved;
      double fd = (up - dn) / (2 * h);
      double an = ps[ti]->grad.numel() ? ps[ti]->grad[e] : 0.0;
      CHECK(std::abs(an - fd) < 1e-6 + 1e-3 * std::abs(fd));
    }
  };

  SUBCASE("unconditional") {
    cfg.conditional = false;
    Rng mr(29);
    auto m = EgtnModel<double>::create(cfg, mr);
    perturb_params(m, 30, 0.3);
    TensorD x0 = project_per_sample(ag::randn_tensor<double>(rng, {2, 3, 3, 2}));
    Rng nr(31);
    NoiseDraw<double> d = draw_noise<double>(nr, sched, x0.shape(), true);
    auto graph = [&] { return loss_uncond_core(m, sched, x0, feats, g, d); };
    auto value = [&] {
      ag::NoGradGuard ng;
      return graph()->value[0];
    };
    check_param_grads(m, value, graph, {});
  }
  SUBCASE("conditional") {
    cfg.conditional = true;
    cfg.t_target = 3;
    Rng mr(32);
    auto m = EgtnModel<double>::create(cfg, mr);
    perturb_params(m, 33, 0.3);
    TensorD x0 = ag::randn_tensor<double>(rng, {2, 3, 3, 2});
    TensorD xc = ag::randn_tensor<double>(rng, {2, 2, 3, 2});
    Rng nr(34);
    NoiseDraw<double> d = draw_noise<double>(nr, sched, x0.shape(), false);
    auto graph = [&] { return loss_cond_core(m, sched, x0, xc, feats, g, d); };
    auto value = [&] {
      ag::NoGradGuard ng;
      return graph()->value[0];
    };
    check_param_grads(m, value, graph, {"prior.gamma", "prior.head.w0", "prior.head.b0"});
  }
}

TEST_CASE("batch assembly") {
  Rng rng(35);
  SimParams p;
  p.n_bodies = 3;
  std::vector<GeoTrajectory> trajs;
  for (int i = 0; i < 3; ++i) trajs.push_back(roll_trajectory(rng, p, 5));

  SUBCASE("gathers the requested frame window") {
    TrajBatch<double> b = make_batch<double>(trajs, {2, 0}, 1, 4);
    REQUIRE(b.coords.shape() == Shape{2, 3, 3, 3});
    CHECK(b.coords.at({0, 0, 1, 2}) == trajs[2].coords.at({1, 1, 2}));
    CHECK(b.coords.at({1, 2, 0, 0}) == trajs[0].coords.at({3, 0, 0}));
    CHECK(b.feats.at({0, 2, 0}) == trajs[2].node_feats.at({2, 0}));
    REQUIRE(b.graph.n_batch == 2);
    CHECK(b.graph.edges[0].size() == trajs[2].edges.size());
  }
  SUBCASE("rejects bad requests") {
    CHECK_THROWS_AS(make_batch<double>(trajs, {}, 0, 2), std::invalid_argument);
    CHECK_THROWS_AS(make_batch<double>(trajs, {0}, 0, 6), std::invalid_argument);
    SimParams q = p;
    q.n_bodies = 4;
    std::vector<GeoTrajectory> mixed = trajs;
    mixed.push_back(roll_trajectory(rng, q, 5));
    CHECK_THROWS_AS(make_batch<double>(mixed, {0, 3}, 0, 2), std::invalid_argument);
  }
}
