#include "geotdm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "geotdm/train.hpp"

namespace geotdm {

AdeFde ade_fde(const TensorD& pred, const TensorD& ref) {
  if (pred.shape() != ref.shape())
    throw std::invalid_argument("displacement metrics need matching shapes, got " +
                                shape_str(pred.shape()) + " vs " + shape_str(ref.shape()));
  if (pred.ndim() != 3) throw std::invalid_argument("displacement metrics take [T, N, D]");
  int64_t T = pred.dim(0), N = pred.dim(1), D = pred.dim(2);
  AdeFde out;
  for (int64_t t = 0; t < T; ++t)
    for (int64_t n = 0; n < N; ++n) {
      double d2 = 0;
      for (int64_t d = 0; d < D; ++d) {
        double diff = pred.at({t, n, d}) - ref.at({t, n, d});
        d2 += diff * diff;
      }
      double dist = std::sqrt(d2);
      out.ade += dist;
      if (t == T - 1) out.fde += dist;
    }
  out.ade /= static_cast<double>(T * N);
  out.fde /= static_cast<double>(N);
  return out;
}

AdeFde ade_fde_over_k(const std::vector<TensorD>& preds, const TensorD& ref, bool min_over_k) {
  if (preds.empty()) throw std::invalid_argument("no candidate predictions");
  AdeFde agg;
  if (min_over_k) {
    agg.ade = std::numeric_limits<double>::infinity();
    agg.fde = std::numeric_limits<double>::infinity();
  }
  for (const auto& p : preds) {
    AdeFde one = ade_fde(p, ref);
    if (min_over_k) {
      agg.ade = std::min(agg.ade, one.ade);
      agg.fde = std::min(agg.fde, one.fde);
    } else {
      agg.ade += one.ade;
      agg.fde += one.fde;
    }
  }
  if (!min_over_k) {
    agg.ade /= static_cast<double>(preds.size());
    agg.fde /= static_cast<double>(preds.size());
  }
  return agg;
}

double marginal_score(const std::vector<GeoTrajectory>& gen,
                      const std::vector<GeoTrajectory>& ref, int bins) {
  if (gen.empty() || ref.empty()) throw std::invalid_argument("empty trajectory set");
  if (bins < 1) throw std::invalid_argument("bins must be at least 1");
  int64_t T = gen[0].frames();
  for (const auto& tr : gen)
    if (tr.frames() != T) throw std::invalid_argument("trajectory sets must share frame count");
  for (const auto& tr : ref)
    if (tr.frames() != T) throw std::invalid_argument("trajectory sets must share frame count");

  auto pool = [](const std::vector<GeoTrajectory>& set, int64_t t, std::vector<double>& out) {
    out.clear();
    for (const auto& tr : set) {
      int64_t per = tr.nodes() * tr.space_dim();
      const double* frame = &tr.coords[t * per];
      out.insert(out.end(), frame, frame + per);
    }
  };

  double total = 0;
  std::vector<double> g, r;
  std::vector<double> hg(static_cast<size_t>(bins)), hr(static_cast<size_t>(bins));
  for (int64_t t = 0; t < T; ++t) {
    pool(gen, t, g);
    pool(ref, t, r);
    double lo = std::min(*std::min_element(g.begin(), g.end()),
                         *std::min_element(r.begin(), r.end()));
    double hi = std::max(*std::max_element(g.begin(), g.end()),
                         *std::max_element(r.begin(), r.end()));
    if (hi <= lo) continue;
    std::fill(hg.begin(), hg.end(), 0.0);
    std::fill(hr.begin(), hr.end(), 0.0);
    auto drop = [&](std::vector<double>& h, const std::vector<double>& vals) {
      for (double v : vals) {
        auto b = static_cast<int64_t>((v - lo) / (hi - lo) * bins);
        h[static_cast<size_t>(std::clamp<int64_t>(b, 0, bins - 1))] +=
            1.0 / static_cast<double>(vals.size());
      }
    };
    drop(hg, g);
    drop(hr, r);
    double mae = 0;
    for (int b = 0; b < bins; ++b) mae += std::abs(hg[static_cast<size_t>(b)] - hr[static_cast<size_t>(b)]);
    total += mae / static_cast<double>(bins);
  }
  return total / static_cast<double>(T);
}

namespace {

Var<float> softplus(Var<float> z) {
  return ag::unary(
      z,
      [](float x) {
        return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
      },
      [](float x, float) { return 1.0f / (1.0f + std::exp(-x)); });
}

void check_shared_frames(const std::vector<GeoTrajectory>& gen,
                         const std::vector<GeoTrajectory>& ref, int64_t min_frames) {
  if (gen.empty() || ref.empty()) throw std::invalid_argument("empty trajectory set");
  int64_t T = gen[0].frames();
  if (T < min_frames)
    throw std::invalid_argument("trajectories too short, need at least " +
                                std::to_string(min_frames) + " frames");
  for (const auto& tr : gen)
    if (tr.frames() != T) throw std::invalid_argument("trajectory sets must share frame count");
  for (const auto& tr : ref)
    if (tr.frames() != T) throw std::invalid_argument("trajectory sets must share frame count");
}

std::vector<int64_t> sample_indices(Rng& rng, int64_t n, int count) {
  std::vector<int64_t> idx(static_cast<size_t>(count));
  for (auto& i : idx) i = rng.uniform_int(0, n - 1);
  return idx;
}

}  // namespace

double classification_score(const std::vector<GeoTrajectory>& gen,
                            const std::vector<GeoTrajectory>& ref, const SurrogateConfig& cfg) {
  check_shared_frames(gen, ref, 1);
  std::vector<GeoTrajectory> all(gen);
  all.insert(all.end(), ref.begin(), ref.end());
  std::vector<float> labels(all.size(), 0.0f);
  for (size_t i = 0; i < gen.size(); ++i) labels[i] = 1.0f;
  int64_t T = all[0].frames();

  Rng rng(cfg.seed);
  std::vector<int64_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
  auto n_train = static_cast<size_t>(std::llround(cfg.train_frac * static_cast<double>(order.size())));
  n_train = std::clamp<size_t>(n_train, 1, order.size() - 1);
  std::vector<int64_t> train_idx(order.begin(), order.begin() + static_cast<int64_t>(n_train));
  std::vector<int64_t> test_idx(order.begin() + static_cast<int64_t>(n_train), order.end());

  EgtnConfig mc;
  mc.n_layers = 1;
  mc.hidden_dim = cfg.hidden_dim;
  mc.time_emb_dim = cfg.time_emb_dim;
  mc.feat_dim = all[0].feat_dim();
  mc.space_dim = static_cast<int>(all[0].space_dim());
  mc.conditional = false;
  EgtnModel<float> model = EgtnModel<float>::create(mc, rng);
  Mlp<float> head = Mlp<float>::create(rng, {cfg.hidden_dim, 1});
  std::vector<Var<float>> params = model.params();
  for (auto& w : head.W) params.push_back(w);
  for (auto& b : head.b) params.push_back(b);
  AdamConfig ac;
  ac.lr = cfg.lr;
  Adam<float> opt(params, ac);

  auto forward_bce = [&](const std::vector<int64_t>& idx) {
    TrajBatch<float> tb = make_batch<float>(all, idx, 0, T);
    std::vector<int> taus(idx.size(), 0);
    EgtnOut<float> out = egtn_forward(model, ag::constant(tb.coords), ag::constant(tb.feats),
                                      tb.graph, taus, default_times(T));
    Var<float> pooled = ag::reshape(
        ag::mean_axis(ag::mean_axis(out.feats, 2), 1),
        {static_cast<int64_t>(idx.size()), static_cast<int64_t>(cfg.hidden_dim)});
    Var<float> logit =
        ag::reshape(head.forward(pooled), {static_cast<int64_t>(idx.size())});
    TensorF y({static_cast<int64_t>(idx.size())});
    for (size_t i = 0; i < idx.size(); ++i) y[static_cast<int64_t>(i)] = labels[static_cast<size_t>(idx[i])];
    return ag::mean_all(ag::sub(softplus(logit), ag::mul(ag::constant(y), logit)));
  };

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<int64_t> pick = sample_indices(rng, static_cast<int64_t>(train_idx.size()), cfg.batch_size);
    for (auto& i : pick) i = train_idx[static_cast<size_t>(i)];
    Var<float> loss = forward_bce(pick);
    ag::backward(loss);
    double lv = loss->value[0];
    if (!std::isfinite(lv))
      throw std::runtime_error("non-finite classifier loss at step " + std::to_string(step));
    opt.step();
    opt.zero_grad();
  }

  ag::NoGradGuard guard;
  double total = 0;
  int64_t count = 0;
  for (size_t start = 0; start < test_idx.size(); start += static_cast<size_t>(cfg.batch_size)) {
    std::vector<int64_t> chunk(
        test_idx.begin() + static_cast<int64_t>(start),
        test_idx.begin() + static_cast<int64_t>(std::min(test_idx.size(),
                                                         start + static_cast<size_t>(cfg.batch_size))));
    total += forward_bce(chunk)->value[0] * static_cast<double>(chunk.size());
    count += static_cast<int64_t>(chunk.size());
  }
  return total / static_cast<double>(count);
}

double prediction_score(const std::vector<GeoTrajectory>& gen,
                        const std::vector<GeoTrajectory>& ref, const SurrogateConfig& cfg) {
  check_shared_frames(gen, ref, 2);
  int64_t T = gen[0].frames();
  int64_t Tc = T / 2, Tt = T - Tc;

  Rng rng(cfg.seed);
  EgtnConfig mc;
  mc.n_layers = 1;
  mc.hidden_dim = cfg.hidden_dim;
  mc.time_emb_dim = cfg.time_emb_dim;
  mc.feat_dim = gen[0].feat_dim();
  mc.space_dim = static_cast<int>(gen[0].space_dim());
  mc.conditional = true;
  mc.t_target = static_cast<int>(Tt);
  EgtnModel<float> model = EgtnModel<float>::create(mc, rng);
  AdamConfig ac;
  ac.lr = cfg.lr;
  Adam<float> opt(model.params(), ac);

  auto forward_mse = [&](const std::vector<GeoTrajectory>& set, const std::vector<int64_t>& idx) {
    TrajBatch<float> tb = make_batch<float>(set, idx, 0, T);
    int64_t B = tb.coords.dim(0), N = tb.coords.dim(2), D = tb.coords.dim(3);
    TensorF x_cond({B, Tc, N, D});
    TensorF target({B, Tt, N, D});
    TensorF x_init({B, Tt, N, D});
    int64_t frame = N * D;
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t t = 0; t < Tc; ++t)
        std::copy_n(&tb.coords[(b * T + t) * frame], frame, &x_cond[(b * Tc + t) * frame]);
      for (int64_t t = 0; t < Tt; ++t) {
        std::copy_n(&tb.coords[(b * T + Tc + t) * frame], frame, &target[(b * Tt + t) * frame]);
        std::copy_n(&tb.coords[(b * T + Tc - 1) * frame], frame, &x_init[(b * Tt + t) * frame]);
      }
    }
    std::vector<int> taus(idx.size(), 0);
    EgtnOut<float> out =
        egtn_forward(model, ag::constant(x_init), ag::constant(tb.feats), tb.graph, taus,
                     default_times(Tt), ag::constant(x_cond), default_times(Tc, -Tc));
    return ag::mean_all(ag::square(ag::sub(out.coords, ag::constant(target))));
  };

  for (int step = 0; step < cfg.steps; ++step) {
    Var<float> loss =
        forward_mse(gen, sample_indices(rng, static_cast<int64_t>(gen.size()), cfg.batch_size));
    ag::backward(loss);
    double lv = loss->value[0];
    if (!std::isfinite(lv))
      throw std::runtime_error("non-finite forecaster loss at step " + std::to_string(step));
    opt.step();
    opt.zero_grad();
  }

  ag::NoGradGuard guard;
  double total = 0;
  int64_t count = 0;
  for (size_t start = 0; start < ref.size(); start += static_cast<size_t>(cfg.batch_size)) {
    std::vector<int64_t> chunk;
    for (size_t i = start; i < std::min(ref.size(), start + static_cast<size_t>(cfg.batch_size)); ++i)
      chunk.push_back(static_cast<int64_t>(i));
    total += forward_mse(ref, chunk)->value[0] * static_cast<double>(chunk.size());
    count += static_cast<int64_t>(chunk.size());
  }
  return total / static_cast<double>(count);
}

SurrogateScores surrogate_scores(const std::vector<GeoTrajectory>& gen,
                                 const std::vector<GeoTrajectory>& ref,
                                 const SurrogateConfig& cfg) {
  SurrogateScores out;
  out.classification_ce = classification_score(gen, ref, cfg);
  out.prediction_mse = prediction_score(gen, ref, cfg);
  return out;
}

std::string MetricReport::table() const {
  size_t width = 0;
  for (const auto& [name, _] : items) width = std::max(width, name.size());
  std::ostringstream os;
  for (const auto& [name, value] : items)
    os << std::left << std::setw(static_cast<int>(width + 2)) << name << std::setprecision(6)
       << value << '\n';
  return os.str();
}

std::string MetricReport::kv() const {
  std::ostringstream os;
  for (const auto& [name, value] : items) os << name << '=' << std::setprecision(10) << value << '\n';
  return os.str();
}

}  // namespace geotdm
