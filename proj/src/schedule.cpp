#include "sdg/schedule.hpp"

#include <cmath>
#include <string>

namespace sdg {

std::size_t NoiseSchedule::index(int t) const {
  if (t < 1 || t > T_) {
    fail(ErrorCode::invalid_argument,
         "schedule: timestep " + std::to_string(t) + " out of range [1," +
             std::to_string(T_) + "]");
  }
  return static_cast<std::size_t>(t - 1);
}

NoiseSchedule NoiseSchedule::linear(int timesteps, double beta_start, double beta_end) {
  if (timesteps < 1) {
    fail(ErrorCode::invalid_argument,
         "schedule: timestep count must be >= 1, got " + std::to_string(timesteps));
  }
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    fail(ErrorCode::invalid_argument,
         "schedule: betas must satisfy 0 < beta_start <= beta_end < 1, got " +
             std::to_string(beta_start) + " .. " + std::to_string(beta_end));
  }
  NoiseSchedule s;
  s.T_ = timesteps;
  s.beta_.resize(static_cast<std::size_t>(timesteps));
  s.alpha_.resize(static_cast<std::size_t>(timesteps));
  s.alpha_bar_.resize(static_cast<std::size_t>(timesteps));
  s.posterior_var_.resize(static_cast<std::size_t>(timesteps));
  double abar = 1.0;
  for (int t = 1; t <= timesteps; ++t) {
    const std::size_t i = static_cast<std::size_t>(t - 1);
    const double frac =
        timesteps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(timesteps - 1);
    s.beta_[i] = beta_start + (beta_end - beta_start) * frac;
    s.alpha_[i] = 1.0 - s.beta_[i];
    const double abar_prev = abar;
    abar *= s.alpha_[i];
    s.alpha_bar_[i] = abar;
    s.posterior_var_[i] = s.beta_[i] * (1.0 - abar_prev) / (1.0 - abar);
  }
  // beta_tilde_1 is exactly 0 (abar_0 = 1); clip so the reverse variance is
  // strictly positive at every step.
  s.posterior_var_[0] = timesteps > 1 ? s.posterior_var_[1] : s.beta_[0];
  return s;
}

NoiseSchedule build_schedule(const std::string& kind, int timesteps, double beta_start,
                             double beta_end) {
  if (kind != "linear") {
    fail(ErrorCode::invalid_argument, "schedule: unknown kind '" + kind + "'");
  }
  return NoiseSchedule::linear(timesteps, beta_start, beta_end);
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  if (x0.shape() != eps.shape()) {
    fail(ErrorCode::invalid_argument,
         "q_sample: eps shape " + shape_str(eps.shape()) + " does not match x0 shape " +
             shape_str(x0.shape()));
  }
  const double abar = sched.alpha_bar(t);
  const double a = std::sqrt(abar);
  const double b = std::sqrt(1.0 - abar);
  const auto xv = x0.data();
  const auto ev = eps.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * xv[i] + b * ev[i];
  return Tensor::from_data(x0.shape(), std::move(out));
}

std::pair<Tensor, double> reverse_moments_from_eps(const Tensor& x_t, const Tensor& eps,
                                                   int t, const NoiseSchedule& sched) {
  if (x_t.shape() != eps.shape()) {
    fail(ErrorCode::invalid_argument,
         "reverse_moments: predicted eps shape " + shape_str(eps.shape()) +
             " does not match x_t shape " + shape_str(x_t.shape()));
  }
  const double coef = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
  const auto xv = x_t.data();
  const auto ev = eps.data();
  std::vector<double> mu(xv.size());
  for (std::size_t i = 0; i < mu.size(); ++i) mu[i] = inv_sqrt_alpha * (xv[i] - coef * ev[i]);
  return {Tensor::from_data(x_t.shape(), std::move(mu)), sched.posterior_var(t)};
}

std::pair<Tensor, double> reverse_moments(const EpsilonFn& model, const Tensor& x_t,
                                          int t, const NoiseSchedule& sched) {
  return reverse_moments_from_eps(x_t, model(x_t, t), t, sched);
}

}  // namespace sdg
