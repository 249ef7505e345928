#include "geotdm/diffusion.hpp"

namespace geotdm {

NoiseSchedule make_linear_schedule(int n_steps, double beta_start, double beta_end) {
  if (n_steps < 1) throw std::invalid_argument("schedule needs n_steps >= 1");
  if (beta_start <= 0 || beta_end >= 1 || beta_start > beta_end)
    throw std::invalid_argument("schedule needs 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.n_steps = n_steps;
  s.beta.assign(n_steps + 1, 0.0);
  s.alpha.assign(n_steps + 1, 1.0);
  s.alpha_bar.assign(n_steps + 1, 1.0);
  s.sigma.assign(n_steps + 1, 0.0);
  for (int t = 1; t <= n_steps; ++t) {
    double frac = n_steps == 1 ? 0.0 : static_cast<double>(t - 1) / (n_steps - 1);
    s.beta[t] = beta_start + (beta_end - beta_start) * frac;
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.sigma[t] = std::sqrt(s.beta[t]);
  }
  return s;
}

PosteriorCoeffs posterior_coeffs(const NoiseSchedule& s, int tau) {
  if (tau < 1 || tau > s.n_steps) throw std::invalid_argument("posterior tau out of range");
  double ab = s.alpha_bar[tau];
  double ab_prev = s.alpha_bar[tau - 1];
  PosteriorCoeffs c;
  c.c0 = std::sqrt(ab_prev) * s.beta[tau] / (1.0 - ab);
  c.c1 = std::sqrt(s.alpha[tau]) * (1.0 - ab_prev) / (1.0 - ab);
  c.var = (1.0 - ab_prev) / (1.0 - ab) * s.beta[tau];
  return c;
}

double kl_weight(const NoiseSchedule& s, int tau) {
  double b = s.beta[tau];
  double sig2 = s.sigma[tau] * s.sigma[tau];
  return b * b / (2.0 * sig2 * s.alpha[tau] * (1.0 - s.alpha_bar[tau]));
}

}  // namespace geotdm
