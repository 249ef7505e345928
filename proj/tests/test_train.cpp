#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "geotdm/checkpoint.hpp"
#include "geotdm/train.hpp"

using namespace geotdm;

namespace {

Var<double> scalar_param(double v) { return ag::parameter(TensorD({1}, {v})); }

double square_loss_step(Adam<double>& opt, Var<double>& p) {
  opt.zero_grad();
  Var<double> loss = ag::sum_all(ag::mul(p, p));
  ag::backward(loss);
  return opt.step();
}

std::vector<GeoTrajectory> spring_set(uint64_t seed, int count, int frames) {
  Rng rng(seed);
  SimParams p;
  p.kind = SystemKind::Spring;
  p.n_bodies = 3;
  std::vector<GeoTrajectory> out;
  for (int i = 0; i < count; ++i) out.push_back(roll_trajectory(rng, p, frames));
  return out;
}

EgtnConfig tiny_config(bool conditional, int t_target) {
  EgtnConfig cfg;
  cfg.n_layers = 1;
  cfg.hidden_dim = 8;
  cfg.time_emb_dim = 4;
  cfg.feat_dim = 1;
  cfg.space_dim = 3;
  cfg.conditional = conditional;
  cfg.t_target = conditional ? t_target : 0;
  return cfg;
}

struct MetricsRow {
  int64_t step;
  double train;
  bool has_valid;
  double valid;
};

std::vector<MetricsRow> read_metrics(const std::filesystem::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  REQUIRE(header == "# step train_loss valid_loss wall_time");
  std::vector<MetricsRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    MetricsRow r{};
    std::string valid;
    double wall;
    REQUIRE((ls >> r.step >> r.train >> valid >> wall));
    r.has_valid = valid != "-";
    r.valid = r.has_valid ? std::stod(valid) : 0.0;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

TEST_CASE("optimizer follows the pinned scalar trace") {
  AdamConfig cfg;
  cfg.lr = 0.1;

  SUBCASE("without clipping") {
    cfg.clip_norm = 0.0;
    auto p = scalar_param(1.0);
    Adam<double> opt({p}, cfg);
    CHECK(square_loss_step(opt, p) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(p->value[0] == doctest::Approx(0.9000000005).epsilon(1e-12));
    square_loss_step(opt, p);
    CHECK(p->value[0] == doctest::Approx(0.8004122286917928).epsilon(1e-12));
    square_loss_step(opt, p);
    CHECK(p->value[0] == doctest::Approx(0.7015862729460303).epsilon(1e-12));
    CHECK(opt.t() == 3);
  }
  SUBCASE("with unit norm clipping") {
    cfg.clip_norm = 1.0;
    auto p = scalar_param(1.0);
    Adam<double> opt({p}, cfg);
    CHECK(square_loss_step(opt, p) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(p->value[0] == doctest::Approx(0.900000001).epsilon(1e-12));
    square_loss_step(opt, p);
    CHECK(p->value[0] == doctest::Approx(0.8000000020000007).epsilon(1e-12));
  }
  SUBCASE("cleared gradients freeze the parameters") {
    auto p = scalar_param(1.0);
    Adam<double> opt({p}, cfg);
    opt.zero_grad();
    opt.step();
    CHECK(p->value[0] == 1.0);
  }
  SUBCASE("restore rejects mismatched state") {
    auto p = scalar_param(1.0);
    Adam<double> opt({p}, cfg);
    CHECK_THROWS_AS(opt.restore({}, {}, 3), std::invalid_argument);
  }
  SUBCASE("restored state continues the original trace") {
    auto a = scalar_param(1.0);
    Adam<double> opt_a({a}, cfg);
    for (int i = 0; i < 3; ++i) square_loss_step(opt_a, a);

    auto b = scalar_param(1.0);
    Adam<double> opt_b({b}, cfg);
    for (int i = 0; i < 2; ++i) square_loss_step(opt_b, b);
    Adam<double> opt_c({b}, cfg);
    opt_c.restore(opt_b.moments1(), opt_b.moments2(), opt_b.t());
    square_loss_step(opt_c, b);
    CHECK(b->value[0] == a->value[0]);
  }
}

TEST_CASE("training loop") {
  namespace fs = std::filesystem;
  fs::path base = fs::temp_directory_path() / "geotdm_train_test";
  fs::remove_all(base);
  NoiseSchedule sched = make_linear_schedule(20, 1e-3, 0.2);
  std::vector<GeoTrajectory> data = spring_set(7, 10, 4);

  TrainConfig cfg;
  cfg.conditional = false;
  cfg.t_cond = 0;
  cfg.t_target = 4;
  cfg.batch_size = 5;
  cfg.valid_interval = 1;
  cfg.patience = 50;
  cfg.adam.lr = 1e-2;
  cfg.seed = 5;
  cfg.sched_steps = 20;
  cfg.beta_start = 1e-3;
  cfg.beta_end = 0.2;

  SUBCASE("overfits a small set") {
    cfg.max_epochs = 40;
    cfg.out_dir = (base / "overfit").string();
    Rng mr(1);
    auto model = EgtnModel<float>::create(tiny_config(false, 0), mr);
    TrainResult res = train_model(model, sched, data, data, cfg);
    CHECK(res.epochs == 40);
    CHECK(res.steps == 80);
    CHECK_FALSE(res.early_stopped);

    auto rows = read_metrics(fs::path(cfg.out_dir) / "metrics.log");
    REQUIRE(rows.size() == 40);
    REQUIRE(rows.front().has_valid);
    REQUIRE(rows.back().has_valid);
    CHECK(rows.back().valid < 0.6 * rows.front().valid);
    CHECK(res.best_valid <= rows.front().valid * (1.0 + 1e-6));
    CHECK(fs::exists(res.best_path));
    CHECK(fs::exists(res.last_path));
  }
  SUBCASE("a frozen model repeats its validation loss and stops early") {
    cfg.max_epochs = 30;
    cfg.patience = 1;
    cfg.adam.lr = 0.0;
    cfg.out_dir = (base / "frozen").string();
    Rng mr(2);
    auto model = EgtnModel<float>::create(tiny_config(false, 0), mr);
    TrainResult res = train_model(model, sched, data, data, cfg);
    CHECK(res.early_stopped);
    CHECK(res.epochs == 2);
    CHECK(res.steps == 4);

    auto rows = read_metrics(fs::path(cfg.out_dir) / "metrics.log");
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].valid == rows[1].valid);
    CHECK(res.best_valid == doctest::Approx(rows[0].valid).epsilon(1e-6));
  }
  SUBCASE("aborts on non-finite loss") {
    cfg.max_epochs = 3;
    cfg.out_dir = (base / "nan").string();
    std::vector<GeoTrajectory> poisoned = data;
    poisoned[0].coords[0] = std::numeric_limits<double>::infinity();
    Rng mr(3);
    auto model = EgtnModel<float>::create(tiny_config(false, 0), mr);
    CHECK_THROWS_WITH_AS(train_model(model, sched, poisoned, {}, cfg),
                         doctest::Contains("non-finite"), std::runtime_error);
  }
  SUBCASE("rejects inconsistent configs") {
    Rng mr(4);
    auto model = EgtnModel<float>::create(tiny_config(false, 0), mr);
    TrainConfig bad = cfg;
    bad.t_target = 0;
    CHECK_THROWS_AS(train_model(model, sched, data, {}, bad), std::invalid_argument);
    bad = cfg;
    bad.conditional = true;
    bad.t_cond = 0;
    CHECK_THROWS_AS(train_model(model, sched, data, {}, bad), std::invalid_argument);
    bad = cfg;
    bad.t_cond = 2;
    CHECK_THROWS_AS(train_model(model, sched, data, {}, bad), std::invalid_argument);
    CHECK_THROWS_AS(train_model(model, sched, {}, {}, cfg), std::invalid_argument);
  }
  fs::remove_all(base);
}

TEST_CASE("checkpoint container") {
  namespace fs = std::filesystem;
  fs::path base = fs::temp_directory_path() / "geotdm_ckpt_test";
  fs::remove_all(base);
  fs::create_directories(base);
  std::string path = (base / "model.ckpt").string();

  EgtnConfig cfg = tiny_config(true, 3);
  Rng mr(11);
  auto model = EgtnModel<float>::create(cfg, mr);
  Rng pr(12);
  model.visit_params([&](const std::string&, Var<float>& v) {
    for (int64_t i = 0; i < v->value.numel(); ++i)
      v->value[i] += static_cast<float>(0.1 * pr.normal());
  });

  CheckpointMeta meta;
  meta.cfg = cfg;
  meta.step = 42;
  meta.sched_steps = 100;
  meta.beta_start = 1e-3;
  meta.beta_end = 0.2;

  SUBCASE("weights round-trip bit for bit") {
    Adam<float> opt(model.params(), AdamConfig{});
    Rng gr(13);
    model.visit_params([&](const std::string&, Var<float>& v) {
      v->grad = ag::randn_tensor<float>(gr, v->value.shape());
    });
    opt.step();
    opt.zero_grad();
    meta.has_optimizer = true;
    save_checkpoint(path, model, meta, &opt);

    LoadedCheckpoint lc = load_checkpoint(path);
    CHECK(lc.meta.step == 42);
    CHECK(lc.meta.sched_steps == 100);
    CHECK(lc.meta.beta_start == 1e-3);
    CHECK(lc.meta.beta_end == 0.2);
    CHECK(lc.meta.has_optimizer);
    CHECK(lc.meta.cfg.hidden_dim == 8);
    CHECK(lc.meta.cfg.conditional);
    CHECK(lc.meta.cfg.t_target == 3);
    CHECK(lc.adam_t == 1);

    std::vector<TensorF> want;
    model.visit_params([&](const std::string&, Var<float>& v) { want.push_back(v->value); });
    size_t k = 0;
    bool all_equal = true;
    lc.model.visit_params([&](const std::string&, Var<float>& v) {
      REQUIRE(v->value.shape() == want[k].shape());
      for (int64_t i = 0; i < v->value.numel(); ++i)
        if (v->value[i] != want[k][i]) all_equal = false;
      ++k;
    });
    CHECK(all_equal);
    CHECK(k == want.size());

    REQUIRE(lc.adam_m.size() == want.size());
    auto& m1 = opt.moments1();
    for (size_t i = 0; i < m1.size(); ++i)
      for (int64_t j = 0; j < m1[i].numel(); ++j) {
        REQUIRE(lc.adam_m[i][j] == m1[i][j]);
        REQUIRE(lc.adam_v[i][j] == opt.moments2()[i][j]);
      }
  }
  SUBCASE("weights load into a matching model by name") {
    save_checkpoint(path, model, meta);
    LoadedCheckpoint lc = load_checkpoint(path);
    CHECK_FALSE(lc.meta.has_optimizer);
    CHECK(lc.adam_m.empty());

    Rng fr(14);
    auto fresh = EgtnModel<float>::create(cfg, fr);
    load_checkpoint_into(path, fresh);
    std::vector<TensorF> want;
    model.visit_params([&](const std::string&, Var<float>& v) { want.push_back(v->value); });
    size_t k = 0;
    fresh.visit_params([&](const std::string&, Var<float>& v) {
      for (int64_t i = 0; i < v->value.numel(); ++i) REQUIRE(v->value[i] == want[k][i]);
      ++k;
    });
  }
  SUBCASE("shape mismatches are reported by tensor name") {
    save_checkpoint(path, model, meta);
    EgtnConfig wide = cfg;
    wide.hidden_dim = 12;
    Rng fr(15);
    auto other = EgtnModel<float>::create(wide, fr);
    CHECK_THROWS_WITH_AS(load_checkpoint_into(path, other),
                         doctest::Contains("layers.0"), std::runtime_error);
  }
  SUBCASE("corruption is detected") {
    save_checkpoint(path, model, meta);
    auto bytes = [&] {
      std::ifstream in(path, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }();
    REQUIRE(bytes.size() > 64);

    std::string flipped = bytes;
    flipped[bytes.size() / 2] = static_cast<char>(flipped[bytes.size() / 2] ^ 0x40);
    {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out << flipped;
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("checksum"),
                         std::runtime_error);

    {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out << bytes.substr(0, bytes.size() / 2);
    }
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);

    std::string wrong_magic = bytes;
    wrong_magic[0] = 'X';
    {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out << wrong_magic;
    }
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  }
  fs::remove_all(base);
}
