#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "sdg/tensor.hpp"

namespace sdg {

// Precomputed forward-process quantities for T timesteps. Indices are
// 1-based: t ranges over [1, T]. Immutable after construction.
class NoiseSchedule {
 public:
  static NoiseSchedule linear(int timesteps, double beta_start, double beta_end);

  int timesteps() const { return T_; }
  double beta(int t) const { return beta_[index(t)]; }
  double alpha(int t) const { return alpha_[index(t)]; }
  double alpha_bar(int t) const { return alpha_bar_[index(t)]; }
  // Posterior variance beta_tilde_t = beta_t (1 - abar_{t-1}) / (1 - abar_t)
  // with abar_0 = 1; the t=1 entry is clipped to the t=2 value (beta_1 when
  // T == 1) so it stays strictly positive.
  double posterior_var(int t) const { return posterior_var_[index(t)]; }

 private:
  std::size_t index(int t) const;

  int T_ = 0;
  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
  std::vector<double> posterior_var_;
};

NoiseSchedule build_schedule(const std::string& kind, int timesteps, double beta_start,
                             double beta_end);

// Closed-form forward marginal: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

// Denoiser hook: predicts the noise component of x_t given (x_t, t).
using EpsilonFn = std::function<Tensor(const Tensor& x_t, int t)>;

// Reverse Gaussian step moments: mu = (x_t - beta_t/sqrt(1-abar_t) eps) / sqrt(alpha_t),
// variance fixed to the schedule's posterior variance.
std::pair<Tensor, double> reverse_moments(const EpsilonFn& model, const Tensor& x_t,
                                          int t, const NoiseSchedule& sched);
std::pair<Tensor, double> reverse_moments_from_eps(const Tensor& x_t, const Tensor& eps,
                                                   int t, const NoiseSchedule& sched);

}  // namespace sdg
