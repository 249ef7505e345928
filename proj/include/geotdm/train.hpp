#pragma once

#include <iosfwd>
#include <string>

#include "geotdm/diffusion.hpp"
#include "geotdm/sim.hpp"

namespace geotdm {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // 0 disables clipping
};

// Adam with bias correction and global-norm gradient clipping. Parameters
// with no accumulated gradient are left untouched that step.
template <class S>
class Adam {
 public:
  Adam(std::vector<Var<S>> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto& p : params_) {
      m_.push_back(Tensor<S>::zeros(p->value.shape()));
      v_.push_back(Tensor<S>::zeros(p->value.shape()));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p->grad = Tensor<S>();
  }

  // Returns the pre-clip gradient norm.
  double step() {
    double norm2 = 0;
    for (auto& p : params_)
      if (p->grad.numel())
        for (int64_t i = 0; i < p->grad.numel(); ++i)
          norm2 += static_cast<double>(p->grad[i]) * p->grad[i];
    double norm = std::sqrt(norm2);
    double scale = 1.0;
    if (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (!p->grad.numel()) continue;
      for (int64_t i = 0; i < p->value.numel(); ++i) {
        double g = static_cast<double>(p->grad[i]) * scale;
        double m = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g;
        double v = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g * g;
        m_[k][i] = static_cast<S>(m);
        v_[k][i] = static_cast<S>(v);
        p->value[i] -= static_cast<S>(cfg_.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps));
      }
    }
    return norm;
  }

  int64_t t() const { return t_; }
  std::vector<Tensor<S>>& moments1() { return m_; }
  std::vector<Tensor<S>>& moments2() { return v_; }
  void restore(std::vector<Tensor<S>> m, std::vector<Tensor<S>> v, int64_t t) {
    if (m.size() != params_.size() || v.size() != params_.size())
      throw std::invalid_argument("optimizer state has the wrong parameter count");
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
  }

 private:
  std::vector<Var<S>> params_;
  std::vector<Tensor<S>> m_, v_;
  int64_t t_ = 0;
  AdamConfig cfg_;
};

struct TrainConfig {
  bool conditional = false;
  int64_t t_cond = 0;
  int64_t t_target = 0;
  int batch_size = 128;
  int max_epochs = 100;
  int valid_interval = 20;  // epochs between validation passes
  int patience = 5;         // consecutive non-improved validations before stopping
  AdamConfig adam;
  uint64_t seed = 0;
  std::string out_dir;      // receives best.ckpt, last.ckpt, metrics.log
  int sched_steps = 1000;   // echoed into checkpoints
  double beta_start = 1e-4;
  double beta_end = 2e-2;
};

struct TrainResult {
  double best_valid = 0;
  double final_train = 0;
  int64_t steps = 0;
  int epochs = 0;
  bool early_stopped = false;
  std::string best_path, last_path;
};

// Full training run: shuffled minibatches, denoising loss, periodic
// validation with a frozen noise draw, early stopping, checkpoints.
TrainResult train_model(EgtnModel<float>& model, const NoiseSchedule& sched,
                        const std::vector<GeoTrajectory>& train_set,
                        const std::vector<GeoTrajectory>& valid_set, const TrainConfig& cfg,
                        std::ostream* progress = nullptr);

}  // namespace geotdm
