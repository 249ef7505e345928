#include "geotdm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "geotdm/checkpoint.hpp"

namespace geotdm {

namespace {

TensorF slice_frames(const TensorF& coords, int64_t t0, int64_t t1) {
  int64_t B = coords.dim(0), T = coords.dim(1), N = coords.dim(2), D = coords.dim(3);
  TensorF out({B, t1 - t0, N, D});
  int64_t frame = N * D;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = t0; t < t1; ++t)
      std::copy_n(&coords[(b * T + t) * frame], frame, &out[(b * (t1 - t0) + (t - t0)) * frame]);
  return out;
}

double batch_loss(EgtnModel<float>& model, const NoiseSchedule& sched, const TrainConfig& cfg,
                  const TrajBatch<float>& tb, Rng& rng, bool with_grad, Adam<float>* opt) {
  Var<float> loss;
  if (cfg.conditional) {
    TensorF x_cond = slice_frames(tb.coords, 0, cfg.t_cond);
    TensorF x0 = slice_frames(tb.coords, cfg.t_cond, cfg.t_cond + cfg.t_target);
    loss = loss_cond(model, sched, x0, x_cond, tb.feats, tb.graph, rng);
  } else {
    loss = loss_uncond(model, sched, tb.coords, tb.feats, tb.graph, rng);
  }
  double lv = loss->value[0];
  if (with_grad) {
    opt->zero_grad();
    ag::backward(loss);
    opt->step();
  }
  return lv;
}

std::vector<std::vector<int64_t>> fixed_batches(size_t n, int batch_size) {
  std::vector<std::vector<int64_t>> out;
  for (size_t start = 0; start < n; start += static_cast<size_t>(batch_size)) {
    std::vector<int64_t> idx;
    for (size_t i = start; i < std::min(n, start + static_cast<size_t>(batch_size)); ++i)
      idx.push_back(static_cast<int64_t>(i));
    out.push_back(std::move(idx));
  }
  return out;
}

}  // namespace

TrainResult train_model(EgtnModel<float>& model, const NoiseSchedule& sched,
                        const std::vector<GeoTrajectory>& train_set,
                        const std::vector<GeoTrajectory>& valid_set, const TrainConfig& cfg,
                        std::ostream* progress) {
  if (train_set.empty()) throw std::invalid_argument("training set is empty");
  if (cfg.t_target < 1) throw std::invalid_argument("t_target must be at least 1");
  if (cfg.conditional && cfg.t_cond < 1)
    throw std::invalid_argument("conditional training needs t_cond >= 1");
  if (!cfg.conditional && cfg.t_cond != 0)
    throw std::invalid_argument("unconditional training takes t_cond = 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (cfg.max_epochs < 1) throw std::invalid_argument("max_epochs must be at least 1");
  if (cfg.valid_interval < 1) throw std::invalid_argument("valid_interval must be at least 1");
  int64_t window = cfg.t_cond + cfg.t_target;

  Rng root(cfg.seed);
  Rng shuffle_rng = root.fork(1);
  Rng noise_rng = root.fork(2);

  Adam<float> opt(model.params(), cfg.adam);

  TrainResult res;
  std::string best_path, last_path;
  std::ofstream log;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    best_path = cfg.out_dir + "/best.ckpt";
    last_path = cfg.out_dir + "/last.ckpt";
    log.open(cfg.out_dir + "/metrics.log", std::ios::trunc);
    log << "# step train_loss valid_loss wall_time\n";
  }

  auto save = [&](const std::string& path, bool with_opt) {
    CheckpointMeta meta;
    meta.cfg = model.cfg;
    meta.step = res.steps;
    meta.sched_steps = cfg.sched_steps;
    meta.beta_start = cfg.beta_start;
    meta.beta_end = cfg.beta_end;
    meta.has_optimizer = with_opt;
    save_checkpoint(path, model, meta, with_opt ? &opt : nullptr);
  };

  auto valid_batches = fixed_batches(valid_set.size(), cfg.batch_size);
  auto validate = [&]() {
    ag::NoGradGuard guard;
    Rng vrng = root.fork(3);
    double total = 0;
    int64_t count = 0;
    for (auto& idx : valid_batches) {
      TrajBatch<float> tb = make_batch<float>(valid_set, idx, 0, window);
      total += batch_loss(model, sched, cfg, tb, vrng, false, nullptr) *
               static_cast<double>(idx.size());
      count += static_cast<int64_t>(idx.size());
    }
    return total / static_cast<double>(count);
  };

  std::vector<int64_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  double best_valid = std::numeric_limits<double>::infinity();
  int bad_validations = 0;
  auto t_start = std::chrono::steady_clock::now();

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) {
      int64_t j = shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1);
      std::swap(order[i - 1], order[static_cast<size_t>(j)]);
    }
    double epoch_total = 0;
    int64_t epoch_count = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      std::vector<int64_t> idx(
          order.begin() + static_cast<int64_t>(start),
          order.begin() +
              static_cast<int64_t>(std::min(order.size(), start + static_cast<size_t>(cfg.batch_size))));
      TrajBatch<float> tb = make_batch<float>(train_set, idx, 0, window);
      double lv = batch_loss(model, sched, cfg, tb, noise_rng, true, &opt);
      if (!std::isfinite(lv)) {
        std::ostringstream msg;
        msg << "non-finite training loss " << lv << " at step " << res.steps + 1 << " (epoch "
            << epoch << ")";
        throw std::runtime_error(msg.str());
      }
      ++res.steps;
      epoch_total += lv * static_cast<double>(idx.size());
      epoch_count += static_cast<int64_t>(idx.size());
    }
    res.final_train = epoch_total / static_cast<double>(epoch_count);
    res.epochs = epoch;

    bool do_valid = !valid_set.empty() &&
                    (epoch % cfg.valid_interval == 0 || epoch == cfg.max_epochs);
    double valid_loss = std::numeric_limits<double>::quiet_NaN();
    if (do_valid) {
      valid_loss = validate();
      if (valid_loss < best_valid) {
        best_valid = valid_loss;
        bad_validations = 0;
        if (!best_path.empty()) save(best_path, false);
      } else {
        ++bad_validations;
      }
    }

    double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    std::ostringstream line;
    line << res.steps << ' ' << std::setprecision(8) << res.final_train << ' ';
    if (do_valid)
      line << std::setprecision(8) << valid_loss;
    else
      line << '-';
    line << ' ' << std::setprecision(4) << std::fixed << wall;
    if (log.is_open()) log << line.str() << '\n' << std::flush;
    if (progress) *progress << "epoch " << epoch << ": " << line.str() << '\n' << std::flush;

    if (do_valid && bad_validations >= cfg.patience) {
      res.early_stopped = true;
      break;
    }
  }

  res.best_valid = std::isinf(best_valid) ? res.final_train : best_valid;
  if (!last_path.empty()) {
    save(last_path, true);
    if (std::isinf(best_valid) || !std::filesystem::exists(best_path)) save(best_path, false);
    res.best_path = best_path;
    res.last_path = last_path;
  }
  return res;
}

}  // namespace geotdm
