#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdg/nn.hpp"
#include "sdg/schedule.hpp"
#include "sdg/tensor.hpp"

namespace sdg {

struct DenoiserConfig {
  int channels = 3;
  int height = 32;
  int width = 32;
  int base_channels = 32;  // widths {base, 2*base, 2*base}
  int t_embed_dim = 64;
  std::uint64_t init_seed = 1;
};

// Unconditional epsilon-prediction network: a 3-resolution convolutional
// encoder-decoder with skip connections; the sinusoidal timestep embedding is
// injected through time-conditioned affine (FiLM) layers. The output head is
// zero-initialized so a fresh model predicts exactly zero.
class EpsilonModel {
 public:
  explicit EpsilonModel(const DenoiserConfig& cfg);

  // x_t is [N,C,H,W] with the trained C,H,W; returns a same-shape tensor.
  Tensor predict_eps(const Tensor& x_t, int t) const;
  // Convenience single-image form, [C,H,W] -> [C,H,W].
  Tensor predict_eps_image(const Tensor& x_t, int t) const;

  EpsilonFn predictor() const;

  const DenoiserConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  void save(const std::string& path,
            const std::vector<std::pair<std::string, Tensor>>& extra = {}) const;
  static EpsilonModel load(const std::string& path);
  static EpsilonModel load(const std::string& path,
                           std::vector<std::pair<std::string, Tensor>>& extra_out);

 private:
  DenoiserConfig cfg_;
  ParamStore params_;
  LinearLayer t_mlp_;
  Conv2dLayer enc1a_, enc1b_, enc2_, enc3_, mid_, dec1_, dec2_, head_;
  FiLMLayer film_e1a_, film_e1b_, film_e2_, film_e3_, film_mid_, film_d1_, film_d2_;
};

struct TrainConfig {
  int steps = 1500;
  int batch = 4;
  double lr = 2e-4;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
  int checkpoint_every = 0;          // 0 disables periodic checkpoints
  std::string checkpoint_path;       // used when checkpoint_every > 0
};

struct TrainResult {
  std::vector<double> losses;  // one entry per optimizer step
};

// Minimizes E || eps - eps_theta(q_sample(x0, t, eps), t) ||^2 / dim over
// uniformly drawn t. Fully reproducible from cfg.seed; resuming from a
// checkpoint continues the identical trajectory because parameters and
// optimizer state pass through f32 quantization at every checkpoint write and
// each step's draws depend only on (seed, step).
TrainResult train_denoiser(EpsilonModel& model, const std::vector<Tensor>& corpus,
                           const NoiseSchedule& sched, const TrainConfig& cfg);

// Fresh model + training in one call (the spec-level operation).
EpsilonModel train_denoiser(const std::vector<Tensor>& corpus, const NoiseSchedule& sched,
                            const TrainConfig& cfg, const DenoiserConfig& model_cfg,
                            TrainResult* result = nullptr);

// Resumes training from a checkpoint written by train_denoiser.
EpsilonModel resume_denoiser(const std::string& checkpoint_path,
                             const std::vector<Tensor>& corpus, const NoiseSchedule& sched,
                             const TrainConfig& cfg, TrainResult* result = nullptr);

}  // namespace sdg
