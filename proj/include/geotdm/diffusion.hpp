#pragma once

#include <optional>

#include "geotdm/egtn.hpp"

namespace geotdm {

// Variance schedule, 1-indexed: beta[tau] for tau in [1, n_steps].
struct NoiseSchedule {
  int n_steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> sigma;  // reverse-kernel std, sigma^2 = beta
};

NoiseSchedule make_linear_schedule(int n_steps, double beta_start = 1e-4,
                                   double beta_end = 2e-2);

// Posterior q(x_{tau-1} | x_tau, x_0) mean coefficients about the anchor:
// mean = anchor + c0 * (x0 - anchor) + c1 * (x_tau - anchor).
struct PosteriorCoeffs {
  double c0, c1, var;
};
PosteriorCoeffs posterior_coeffs(const NoiseSchedule& s, int tau);

// Weight relating ||eps - eps_hat||^2 to the step KL mean term.
double kl_weight(const NoiseSchedule& s, int tau);

// ---- plain-tensor kernels -----------------------------------------------------

// Zero-CoM projection applied to each [T,N,D] slice of a [B,T,N,D] tensor.
template <class S>
Tensor<S> project_per_sample(const Tensor<S>& x) {
  int64_t B = x.dim(0), rest = x.numel() / B;
  int64_t D = x.dim(x.ndim() - 1), rows = rest / D;
  Tensor<S> out = x;
  for (int64_t b = 0; b < B; ++b) {
    S* p = out.data() + b * rest;
    for (int64_t d = 0; d < D; ++d) {
      double mean = 0;
      for (int64_t r = 0; r < rows; ++r) mean += static_cast<double>(p[r * D + d]);
      mean /= static_cast<double>(rows);
      for (int64_t r = 0; r < rows; ++r) p[r * D + d] -= static_cast<S>(mean);
    }
  }
  return out;
}

// x_tau = anchor + sqrt(ab) (x0 - anchor) + sqrt(1-ab) eps; anchor may be null.
template <class S>
Tensor<S> q_sample(const NoiseSchedule& s, int tau, const Tensor<S>& x0,
                   const Tensor<S>& eps, const Tensor<S>* anchor = nullptr) {
  double ab = s.alpha_bar[tau];
  S ca = static_cast<S>(std::sqrt(ab));
  S ce = static_cast<S>(std::sqrt(1.0 - ab));
  Tensor<S> out(x0.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    S a = anchor ? (*anchor)[i] : S(0);
    out[i] = a + ca * (x0[i] - a) + ce * eps[i];
  }
  return out;
}

template <class S>
Tensor<S> posterior_mean(const NoiseSchedule& s, int tau, const Tensor<S>& x0,
                         const Tensor<S>& x_tau, const Tensor<S>* anchor = nullptr) {
  PosteriorCoeffs c = posterior_coeffs(s, tau);
  Tensor<S> out(x0.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    S a = anchor ? (*anchor)[i] : S(0);
    out[i] = a + static_cast<S>(c.c0) * (x0[i] - a) + static_cast<S>(c.c1) * (x_tau[i] - a);
  }
  return out;
}

// Reverse-kernel mean from the predicted noise:
// anchor + (x_tau - anchor - beta/sqrt(1-ab) * eps_hat) / sqrt(alpha).
template <class S>
Tensor<S> reverse_mean(const NoiseSchedule& s, int tau, const Tensor<S>& x_tau,
                       const Tensor<S>& eps_hat, const Tensor<S>* anchor = nullptr) {
  double ab = s.alpha_bar[tau];
  S inv_sa = static_cast<S>(1.0 / std::sqrt(s.alpha[tau]));
  S ce = static_cast<S>(s.beta[tau] / std::sqrt(1.0 - ab));
  Tensor<S> out(x_tau.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    S a = anchor ? (*anchor)[i] : S(0);
    out[i] = a + inv_sa * (x_tau[i] - a - ce * eps_hat[i]);
  }
  return out;
}

// ---- training losses -------------------------------------------------------------

// Frozen randomness for one loss evaluation, so gradient checks and the
// KL-equivalence identity are well-posed.
template <class S>
struct NoiseDraw {
  std::vector<int> taus;  // one per batch element
  Tensor<S> eps;          // [B, T, N, D]
};

template <class S>
NoiseDraw<S> draw_noise(Rng& rng, const NoiseSchedule& s, const Shape& xshape, bool project) {
  NoiseDraw<S> d;
  int64_t B = xshape[0];
  for (int64_t b = 0; b < B; ++b)
    d.taus.push_back(static_cast<int>(rng.uniform_int(1, s.n_steps)));
  d.eps = ag::randn_tensor<S>(rng, xshape);
  if (project) d.eps = project_per_sample(d.eps);
  return d;
}

// Per-sample scalar broadcast tensor [B,1,1,1].
template <class S, class F>
Tensor<S> per_sample_coeff(const NoiseSchedule& s, const std::vector<int>& taus, F f) {
  Tensor<S> c({static_cast<int64_t>(taus.size()), 1, 1, 1});
  for (size_t b = 0; b < taus.size(); ++b) c[static_cast<int64_t>(b)] = static_cast<S>(f(taus[b]));
  return c;
}

// Denoising MSE in the zero-CoM subspace; x0 must already be centered.
template <class S>
Var<S> loss_uncond_core(const EgtnModel<S>& m, const NoiseSchedule& s, const Tensor<S>& x0,
                        const Tensor<S>& feats, const GraphBatch& g, const NoiseDraw<S>& d) {
  Tensor<S> x_tau(x0.shape());
  Tensor<S> ca = per_sample_coeff<S>(s, d.taus, [&](int t) { return std::sqrt(s.alpha_bar[t]); });
  Tensor<S> ce =
      per_sample_coeff<S>(s, d.taus, [&](int t) { return std::sqrt(1.0 - s.alpha_bar[t]); });
  int64_t per = x0.numel() / x0.dim(0);
  for (int64_t i = 0; i < x0.numel(); ++i) {
    int64_t b = i / per;
    x_tau[i] = ca[b] * x0[i] + ce[b] * d.eps[i];
  }
  Var<S> eps_hat = predict_eps_uncond(m, ag::constant(std::move(x_tau)), ag::constant(feats), g,
                                      d.taus);
  return ag::mean_all(ag::square(ag::sub(eps_hat, ag::constant(d.eps))));
}

// Conditional denoising MSE about the learned prior anchor. Gradients reach
// the denoiser through eps_hat and the prior through both the anchor inside
// x_tau and the conditioning stream.
template <class S>
Var<S> loss_cond_core(const EgtnModel<S>& m, const NoiseSchedule& s, const Tensor<S>& x0,
                      const Tensor<S>& x_cond, const Tensor<S>& feats, const GraphBatch& g,
                      const NoiseDraw<S>& d) {
  Var<S> xc = ag::constant(x_cond);
  Var<S> hn = ag::constant(feats);
  PriorOut<S> prior = build_prior(m, xc, hn, g);
  Tensor<S> ca = per_sample_coeff<S>(s, d.taus, [&](int t) { return std::sqrt(s.alpha_bar[t]); });
  Tensor<S> noise = d.eps;
  {
    Tensor<S> ce =
        per_sample_coeff<S>(s, d.taus, [&](int t) { return std::sqrt(1.0 - s.alpha_bar[t]); });
    int64_t per = noise.numel() / noise.dim(0);
    for (int64_t i = 0; i < noise.numel(); ++i) noise[i] *= ce[i / per];
  }
  Var<S> x0v = ag::constant(x0);
  Var<S> cav = ag::constant(ca);
  Var<S> x_tau = ag::add(ag::add(prior.anchor, ag::mul(cav, ag::sub(x0v, prior.anchor))),
                         ag::constant(noise));
  Var<S> eps_hat = predict_eps_cond(m, x_tau, xc, hn, g, d.taus);
  return ag::mean_all(ag::square(ag::sub(eps_hat, ag::constant(d.eps))));
}

template <class S>
Var<S> loss_uncond(const EgtnModel<S>& m, const NoiseSchedule& s, const Tensor<S>& x0_raw,
                   const Tensor<S>& feats, const GraphBatch& g, Rng& rng) {
  NoiseDraw<S> d = draw_noise<S>(rng, s, x0_raw.shape(), true);
  return loss_uncond_core(m, s, project_per_sample(x0_raw), feats, g, d);
}

template <class S>
Var<S> loss_cond(const EgtnModel<S>& m, const NoiseSchedule& s, const Tensor<S>& x0,
                 const Tensor<S>& x_cond, const Tensor<S>& feats, const GraphBatch& g,
                 Rng& rng) {
  NoiseDraw<S> d = draw_noise<S>(rng, s, x0.shape(), false);
  return loss_cond_core(m, s, x0, x_cond, feats, g, d);
}

// ---- sampling ------------------------------------------------------------------

// Records or replays the noise tensors a sampling chain consumes, in draw
// order: the initial state, then one z per step after the first.
template <class S>
struct NoiseLog {
  bool replay = false;
  std::vector<Tensor<S>> draws;
  size_t cursor = 0;
};

template <class S>
Tensor<S> chain_draw(Rng& rng, const Shape& shape, bool project, NoiseLog<S>* log) {
  if (log && log->replay) {
    if (log->cursor >= log->draws.size())
      throw std::logic_error("noise log exhausted during replay");
    return log->draws[log->cursor++];
  }
  Tensor<S> z = ag::randn_tensor<S>(rng, shape);
  if (project) z = project_per_sample(z);
  if (log) log->draws.push_back(z);
  return z;
}

// Reverse chain in the zero-CoM subspace from a projected Gaussian start.
template <class S>
Tensor<S> sample_uncond(const EgtnModel<S>& m, const NoiseSchedule& s, const Tensor<S>& feats,
                        const GraphBatch& g, int64_t T, Rng& rng, NoiseLog<S>* log = nullptr) {
  ag::NoGradGuard ng;
  int64_t B = g.n_batch, N = g.n_nodes, D = m.cfg.space_dim;
  Shape shape{B, T, N, D};
  Tensor<S> x = chain_draw<S>(rng, shape, true, log);
  Var<S> hn = ag::constant(feats);
  for (int tau = s.n_steps; tau >= 1; --tau) {
    std::vector<int> taus(static_cast<size_t>(B), tau);
    Tensor<S> eps_hat = predict_eps_uncond(m, ag::constant(x), hn, g, taus)->value;
    x = reverse_mean(s, tau, x, eps_hat);
    if (tau > 1) {
      Tensor<S> z = chain_draw<S>(rng, shape, true, log);
      S sig = static_cast<S>(s.sigma[tau]);
      for (int64_t i = 0; i < x.numel(); ++i) x[i] += sig * z[i];
    }
  }
  return x;
}

// Anchored reverse chain for conditional generation. Frame offsets default to
// condition at [-Tc, -1] and target at [0, T-1].
template <class S>
Tensor<S> sample_cond(const EgtnModel<S>& m, const NoiseSchedule& s, const Tensor<S>& x_cond,
                      const Tensor<S>& feats, const GraphBatch& g, int64_t T, Rng& rng,
                      NoiseLog<S>* log = nullptr, const std::vector<int64_t>& times = {},
                      const std::vector<int64_t>& cond_times = {}) {
  ag::NoGradGuard ng;
  int64_t B = g.n_batch, N = g.n_nodes, D = m.cfg.space_dim;
  Shape shape{B, T, N, D};
  Var<S> xc = ag::constant(x_cond);
  Var<S> hn = ag::constant(feats);
  Tensor<S> anchor_t = build_prior(m, xc, hn, g, cond_times).anchor->value;
  Tensor<S> anchor(shape);
  {
    // anchor is [B, t_target, N, D]; T must match the trained gain length
    if (anchor_t.shape() != shape)
      throw std::invalid_argument("sample length " + std::to_string(T) +
                                  " does not match the model's frame-gain length " +
                                  std::to_string(m.cfg.t_target));
    anchor = anchor_t;
  }
  Tensor<S> x = chain_draw<S>(rng, shape, false, log);
  for (int64_t i = 0; i < x.numel(); ++i) x[i] += anchor[i];
  for (int tau = s.n_steps; tau >= 1; --tau) {
    std::vector<int> taus(static_cast<size_t>(B), tau);
    Tensor<S> eps_hat =
        predict_eps_cond(m, ag::constant(x), xc, hn, g, taus, times, cond_times)->value;
    x = reverse_mean(s, tau, x, eps_hat, &anchor);
    if (tau > 1) {
      Tensor<S> z = chain_draw<S>(rng, shape, false, log);
      S sig = static_cast<S>(s.sigma[tau]);
      for (int64_t i = 0; i < x.numel(); ++i) x[i] += sig * z[i];
    }
  }
  return x;
}

// Fill t_mid frames between a head and tail window: both windows condition
// the chain, head at negative offsets, tail just past the generated span.
template <class S>
Tensor<S> interpolate_gap(const EgtnModel<S>& m, const NoiseSchedule& s, const Tensor<S>& head,
                          const Tensor<S>& tail, const Tensor<S>& feats, const GraphBatch& g,
                          int64_t t_mid, Rng& rng, NoiseLog<S>* log = nullptr) {
  int64_t Th = head.dim(1), Tt = tail.dim(1);
  int64_t B = head.dim(0), N = head.dim(2), D = head.dim(3);
  Tensor<S> x_cond({B, Th + Tt, N, D});
  for (int64_t b = 0; b < B; ++b) {
    std::copy_n(head.data() + b * Th * N * D, Th * N * D,
                x_cond.data() + b * (Th + Tt) * N * D);
    std::copy_n(tail.data() + b * Tt * N * D, Tt * N * D,
                x_cond.data() + (b * (Th + Tt) + Th) * N * D);
  }
  std::vector<int64_t> cond_times = default_times(Th, -Th);
  for (int64_t i = 0; i < Tt; ++i) cond_times.push_back(t_mid + i);
  return sample_cond(m, s, x_cond, feats, g, t_mid, rng, log, default_times(t_mid), cond_times);
}

// Forward-diffuse a draft trajectory to step k about the prior anchor, then
// denoise back. k = 0 returns the draft unchanged.
template <class S>
Tensor<S> refine_trajectory(const EgtnModel<S>& m, const NoiseSchedule& s,
                            const Tensor<S>& x_init, const Tensor<S>& x_cond,
                            const Tensor<S>& feats, const GraphBatch& g, int k_steps, Rng& rng,
                            NoiseLog<S>* log = nullptr) {
  if (k_steps < 0 || k_steps > s.n_steps)
    throw std::invalid_argument("refine steps must lie in [0, n_steps]");
  if (k_steps == 0) return x_init;
  ag::NoGradGuard ng;
  Var<S> xc = ag::constant(x_cond);
  Var<S> hn = ag::constant(feats);
  Tensor<S> anchor = build_prior(m, xc, hn, g).anchor->value;
  Tensor<S> eps = chain_draw<S>(rng, x_init.shape(), false, log);
  Tensor<S> x = q_sample(s, k_steps, x_init, eps, &anchor);
  int64_t B = x.dim(0);
  for (int tau = k_steps; tau >= 1; --tau) {
    std::vector<int> taus(static_cast<size_t>(B), tau);
    Tensor<S> eps_hat = predict_eps_cond(m, ag::constant(x), xc, hn, g, taus)->value;
    x = reverse_mean(s, tau, x, eps_hat, &anchor);
    if (tau > 1) {
      Tensor<S> z = chain_draw<S>(rng, x.shape(), false, log);
      S sig = static_cast<S>(s.sigma[tau]);
      for (int64_t i = 0; i < x.numel(); ++i) x[i] += sig * z[i];
    }
  }
  return x;
}

// Long rollout: one unconditional (or given) segment, then conditional
// continuations, each conditioned on the last cond_window frames so far.
template <class S>
Tensor<S> compose_long(const EgtnModel<S>* uncond, const EgtnModel<S>& cond,
                       const NoiseSchedule& s_uncond, const NoiseSchedule& s_cond,
                       const Tensor<S>& feats, const GraphBatch& g, int n_segments,
                       int64_t seg_len, int64_t cond_window, Rng& rng,
                       const Tensor<S>* first_segment = nullptr) {
  if (n_segments < 1) throw std::invalid_argument("compose needs at least one segment");
  int64_t B = g.n_batch, N = g.n_nodes;
  int64_t D = cond.cfg.space_dim;
  Tensor<S> out({B, n_segments * seg_len, N, D});
  Tensor<S> seg;
  if (first_segment) {
    if (first_segment->dim(1) != seg_len)
      throw std::invalid_argument("given first segment has the wrong length");
    seg = *first_segment;
  } else {
    if (!uncond) throw std::invalid_argument("compose needs an unconditional model or a first segment");
    seg = sample_uncond(*uncond, s_uncond, feats, g, seg_len, rng);
  }
  auto paste = [&](const Tensor<S>& src, int64_t at) {
    for (int64_t b = 0; b < B; ++b)
      std::copy_n(src.data() + b * seg_len * N * D, seg_len * N * D,
                  out.data() + (b * n_segments * seg_len + at) * N * D);
  };
  paste(seg, 0);
  for (int k = 1; k < n_segments; ++k) {
    Tensor<S> x_cond({B, cond_window, N, D});
    for (int64_t b = 0; b < B; ++b)
      std::copy_n(seg.data() + (b * seg_len + seg_len - cond_window) * N * D,
                  cond_window * N * D, x_cond.data() + b * cond_window * N * D);
    seg = sample_cond(cond, s_cond, x_cond, feats, g, seg_len, rng);
    paste(seg, k * seg_len);
  }
  return out;
}

}  // namespace geotdm
