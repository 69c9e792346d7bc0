#include "sdg/denoiser.hpp"

#include <cmath>

#include "sdg/checkpoint.hpp"

namespace sdg {

namespace {

constexpr std::uint64_t kStepStream = 0x5d3e9;

std::vector<std::pair<std::string, Tensor>> meta_entries(const DenoiserConfig& cfg) {
  return {
      {"meta.shape", Tensor::from_data({3}, {static_cast<double>(cfg.channels),
                                             static_cast<double>(cfg.height),
                                             static_cast<double>(cfg.width)})},
      {"meta.base_channels", Tensor::scalar(static_cast<double>(cfg.base_channels))},
      {"meta.t_embed_dim", Tensor::scalar(static_cast<double>(cfg.t_embed_dim))},
  };
}

DenoiserConfig config_from_meta(const std::vector<std::pair<std::string, Tensor>>& entries,
                                const std::string& path) {
  DenoiserConfig cfg;
  bool have_shape = false;
  for (const auto& [name, t] : entries) {
    if (name == "meta.shape") {
      cfg.channels = static_cast<int>(t.data()[0]);
      cfg.height = static_cast<int>(t.data()[1]);
      cfg.width = static_cast<int>(t.data()[2]);
      have_shape = true;
    } else if (name == "meta.base_channels") {
      cfg.base_channels = static_cast<int>(t.item());
    } else if (name == "meta.t_embed_dim") {
      cfg.t_embed_dim = static_cast<int>(t.item());
    }
  }
  if (!have_shape) {
    fail(ErrorCode::bad_checkpoint, "checkpoint: '" + path + "' lacks model metadata");
  }
  return cfg;
}

}  // namespace

EpsilonModel::EpsilonModel(const DenoiserConfig& cfg) : cfg_(cfg) {
  Rng rng(mix_seed(cfg.init_seed, 0xD0D0));
  const int c0 = cfg.base_channels;      // 32
  const int c1 = 2 * cfg.base_channels;  // 64
  const int td = cfg.t_embed_dim;
  t_mlp_ = LinearLayer::create(params_, "t_mlp", td, td, rng);
  enc1a_ = Conv2dLayer::create(params_, "enc1a", cfg.channels, c0, 3, 1, 1, rng);
  enc1b_ = Conv2dLayer::create(params_, "enc1b", c0, c0, 3, 1, 1, rng);
  enc2_ = Conv2dLayer::create(params_, "enc2", c0, c1, 3, 1, 1, rng);
  enc3_ = Conv2dLayer::create(params_, "enc3", c1, c1, 3, 1, 1, rng);
  mid_ = Conv2dLayer::create(params_, "mid", c1, c1, 3, 1, 1, rng);
  dec1_ = Conv2dLayer::create(params_, "dec1", c1 + c1, c1, 3, 1, 1, rng);
  dec2_ = Conv2dLayer::create(params_, "dec2", c1 + c0, c0, 3, 1, 1, rng);
  head_ = Conv2dLayer::create(params_, "head", c0, cfg.channels, 3, 1, 1, rng,
                              /*zero_init=*/true);
  film_e1a_ = FiLMLayer::create(params_, "film_e1a", td, c0, rng);
  film_e1b_ = FiLMLayer::create(params_, "film_e1b", td, c0, rng);
  film_e2_ = FiLMLayer::create(params_, "film_e2", td, c1, rng);
  film_e3_ = FiLMLayer::create(params_, "film_e3", td, c1, rng);
  film_mid_ = FiLMLayer::create(params_, "film_mid", td, c1, rng);
  film_d1_ = FiLMLayer::create(params_, "film_d1", td, c1, rng);
  film_d2_ = FiLMLayer::create(params_, "film_d2", td, c0, rng);
}

Tensor EpsilonModel::predict_eps(const Tensor& x_t, int t) const {
  if (x_t.shape().size() != 4 || x_t.shape()[1] != cfg_.channels ||
      x_t.shape()[2] != cfg_.height || x_t.shape()[3] != cfg_.width) {
    fail(ErrorCode::invalid_argument,
         "predict_eps: input shape " + shape_str(x_t.shape()) +
             " does not match trained shape [N," + std::to_string(cfg_.channels) + "," +
             std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) + "]");
  }
  Tensor t_raw = sinusoidal_time_embedding(t, cfg_.t_embed_dim);
  Tensor t_vec = reshape(
      silu(t_mlp_.forward(reshape(t_raw, {1, cfg_.t_embed_dim}))), {cfg_.t_embed_dim});

  Tensor h1 = silu(film_e1a_.forward(enc1a_.forward(x_t), t_vec));
  Tensor h1b = silu(film_e1b_.forward(enc1b_.forward(h1), t_vec));
  Tensor h2 = silu(film_e2_.forward(enc2_.forward(avg_pool2(h1b)), t_vec));
  Tensor h3 = silu(film_e3_.forward(enc3_.forward(avg_pool2(h2)), t_vec));
  Tensor m = silu(film_mid_.forward(mid_.forward(h3), t_vec));
  Tensor u1 = silu(film_d1_.forward(dec1_.forward(concat_channels(upsample2(m), h2)), t_vec));
  Tensor u2 = silu(film_d2_.forward(dec2_.forward(concat_channels(upsample2(u1), h1b)), t_vec));
  return head_.forward(u2);
}

Tensor EpsilonModel::predict_eps_image(const Tensor& x_t, int t) const {
  if (x_t.shape().size() != 3) {
    fail(ErrorCode::invalid_argument,
         "predict_eps: expected [C,H,W] image, got " + shape_str(x_t.shape()));
  }
  Tensor batched = reshape(x_t, {1, x_t.shape()[0], x_t.shape()[1], x_t.shape()[2]});
  return reshape(predict_eps(batched, t), x_t.shape());
}

EpsilonFn EpsilonModel::predictor() const {
  return [this](const Tensor& x_t, int t) {
    return x_t.shape().size() == 3 ? predict_eps_image(x_t, t) : predict_eps(x_t, t);
  };
}

void EpsilonModel::save(const std::string& path,
                        const std::vector<std::pair<std::string, Tensor>>& extra) const {
  std::vector<std::pair<std::string, Tensor>> entries = meta_entries(cfg_);
  for (const auto& e : params_.entries()) entries.push_back(e);
  for (const auto& e : extra) entries.push_back(e);
  save_checkpoint(path, kDenoiserMagic, entries);
}

EpsilonModel EpsilonModel::load(const std::string& path) {
  std::vector<std::pair<std::string, Tensor>> extra;
  return load(path, extra);
}

EpsilonModel EpsilonModel::load(const std::string& path,
                                std::vector<std::pair<std::string, Tensor>>& extra_out) {
  auto entries = load_checkpoint(path, kDenoiserMagic);
  EpsilonModel model(config_from_meta(entries, path));
  ParamStore loaded;
  extra_out.clear();
  for (auto& [name, t] : entries) {
    if (name.rfind("meta.", 0) == 0) continue;
    if (name.rfind("opt.", 0) == 0) {
      extra_out.emplace_back(name, t);
      continue;
    }
    loaded.add(name, t);
  }
  const auto copied = model.params_.copy_matching_from(loaded);
  if (copied.size() != model.params_.entries().size()) {
    fail(ErrorCode::bad_checkpoint,
         "checkpoint: '" + path + "' is missing model parameters");
  }
  return model;
}

namespace {

TrainResult run_training(EpsilonModel& model, Adam& adam, const std::vector<Tensor>& corpus,
                         const NoiseSchedule& sched, const TrainConfig& cfg) {
  if (corpus.empty()) {
    fail(ErrorCode::invalid_argument, "train_denoiser: empty corpus");
  }
  if (cfg.batch < 1 || cfg.steps < 0) {
    fail(ErrorCode::invalid_argument, "train_denoiser: batch must be >= 1, steps >= 0");
  }
  const auto& dc = model.config();
  for (const Tensor& img : corpus) {
    if (img.shape() != Shape{dc.channels, dc.height, dc.width}) {
      fail(ErrorCode::invalid_argument,
           "train_denoiser: corpus image shape " + shape_str(img.shape()) +
               " does not match model shape");
    }
  }
  const std::int64_t dim =
      static_cast<std::int64_t>(dc.channels) * dc.height * dc.width;
  TrainResult result;

  auto checkpoint = [&]() {
    model.params().round_trip_f32();
    adam.round_trip_f32();
    model.save(cfg.checkpoint_path, adam.state());
  };

  for (int step = static_cast<int>(adam.step_count()); step < cfg.steps; ++step) {
    Rng rng(mix_seed(cfg.seed, kStepStream + static_cast<std::uint64_t>(step)));
    model.params().zero_grad();
    double step_loss = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto idx = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(corpus.size()) - 1));
      const int t = static_cast<int>(rng.uniform_int(1, sched.timesteps()));
      Tensor eps = Tensor::from_data({dc.channels, dc.height, dc.width},
                                     rng.normal_vector(static_cast<std::size_t>(dim)));
      Tensor x_t = q_sample(corpus[idx], t, eps, sched);
      Tensor pred = model.predict_eps_image(x_t, t);
      Tensor diff = sub(pred, eps);
      Tensor example_loss = scale(sum_squares(diff), 1.0 / static_cast<double>(dim));
      step_loss += example_loss.item();
      backward(scale(example_loss, 1.0 / cfg.batch));
    }
    adam.step(model.params(), cfg.clip_norm);
    result.losses.push_back(step_loss / cfg.batch);
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() &&
        (step + 1) % cfg.checkpoint_every == 0) {
      checkpoint();
    }
  }
  if (!cfg.checkpoint_path.empty()) checkpoint();
  return result;
}

}  // namespace

TrainResult train_denoiser(EpsilonModel& model, const std::vector<Tensor>& corpus,
                           const NoiseSchedule& sched, const TrainConfig& cfg) {
  Adam adam(cfg.lr);
  return run_training(model, adam, corpus, sched, cfg);
}

EpsilonModel train_denoiser(const std::vector<Tensor>& corpus, const NoiseSchedule& sched,
                            const TrainConfig& cfg, const DenoiserConfig& model_cfg,
                            TrainResult* result) {
  DenoiserConfig mc = model_cfg;
  mc.init_seed = cfg.seed;
  EpsilonModel model(mc);
  Adam adam(cfg.lr);
  TrainResult r = run_training(model, adam, corpus, sched, cfg);
  if (result) *result = std::move(r);
  return model;
}

EpsilonModel resume_denoiser(const std::string& checkpoint_path,
                             const std::vector<Tensor>& corpus, const NoiseSchedule& sched,
                             const TrainConfig& cfg, TrainResult* result) {
  std::vector<std::pair<std::string, Tensor>> opt_state;
  EpsilonModel model = EpsilonModel::load(checkpoint_path, opt_state);
  Adam adam(cfg.lr);
  adam.load_state(opt_state);
  TrainResult r = run_training(model, adam, corpus, sched, cfg);
  if (result) *result = std::move(r);
  return model;
}

}  // namespace sdg
