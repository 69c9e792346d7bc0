#include "sdg/sampler.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace sdg {

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kModelStream = 2;
constexpr std::uint64_t kGuidanceStream = 3;

double l2_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace

Tensor shifted_step(const Tensor& mu, double var, const Tensor& g, double s,
                    const Tensor& z) {
  if (z.shape() != mu.shape()) {
    fail(ErrorCode::invalid_argument,
         "shifted_step: z shape " + shape_str(z.shape()) + " does not match mu shape " +
             shape_str(mu.shape()));
  }
  if (!(var > 0.0)) {
    fail(ErrorCode::invalid_argument, "shifted_step: variance must be positive");
  }
  const double shift = s * var;
  const double sigma = std::sqrt(var);
  const auto mv = mu.data();
  const auto zv = z.data();
  std::vector<double> out(mv.size());
  if (shift == 0.0 || !g.defined()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = mv[i] + sigma * zv[i];
  } else {
    if (g.shape() != mu.shape()) {
      fail(ErrorCode::invalid_argument,
           "shifted_step: g shape " + shape_str(g.shape()) + " does not match mu shape " +
               shape_str(mu.shape()));
    }
    const auto gv = g.data();
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = (mv[i] + shift * gv[i]) + sigma * zv[i];
  }
  return Tensor::from_data(mu.shape(), std::move(out));
}

SampleResult sdg_sample(const EpsilonModel& model, const NoiseSchedule& sched,
                        const GuidanceSpec* spec, const SamplerConfig& cfg,
                        GuidanceContext ctx) {
  if (cfg.trace_stride < 1) {
    fail(ErrorCode::invalid_argument, "sampler: trace_stride must be >= 1");
  }
  const auto& mc = model.config();
  const Shape image_shape{mc.channels, mc.height, mc.width};
  const auto dim = static_cast<std::size_t>(numel(image_shape));
  if (spec) {
    if (!ctx.encoder) {
      fail(ErrorCode::invalid_argument, "sampler: guidance requires an encoder context");
    }
    spec->validate(ctx.encoder->exposed_layer_count());
    if (ctx.encoder->config().image_size != mc.height ||
        ctx.encoder->config().channels != mc.channels) {
      fail(ErrorCode::invalid_argument,
           "sampler: encoder image shape does not match the denoiser");
    }
  }
  ctx.schedule = &sched;
  ctx.ref_noise_cache.clear();

  Rng init_rng(mix_seed(cfg.seed, kInitStream));
  Rng model_rng(mix_seed(cfg.seed, kModelStream));
  Rng guidance_rng(mix_seed(cfg.seed, kGuidanceStream));

  Tensor x = Tensor::from_data(image_shape, init_rng.normal_vector(dim));
  SampleResult result;
  const Tensor zero = Tensor::zeros(image_shape);

  for (int t = sched.timesteps(); t >= 1; --t) {
    Tensor mu;
    double var = 0.0;
    {
      NoGradGuard ng;  // the denoiser is consumed numerically, no graph
      Tensor eps_hat = model.predict_eps_image(x, t);
      auto [m, v] = reverse_moments_from_eps(x, eps_hat, t, sched);
      mu = m;
      var = v;
    }
    double f_value = 0.0;
    double g_norm = 0.0;
    Tensor g;
    if (spec) {
      GuidanceEval eval = guidance_gradient(*spec, x, t, ctx, guidance_rng);
      f_value = eval.value;
      g = eval.gradient;
      g_norm = l2_norm(g.data());
    }
    if (cfg.record_trace &&
        (t == sched.timesteps() || (sched.timesteps() - t) % cfg.trace_stride == 0)) {
      result.trace.entries.push_back({t, x, f_value, g_norm});
    }
    Tensor z = t > 1
                   ? Tensor::from_data(image_shape, model_rng.normal_vector(dim))
                   : zero;
    x = shifted_step(mu, var, spec ? g : Tensor(), spec ? spec->scale : 0.0, z);
    if (!all_finite(x)) {
      fail(ErrorCode::numeric,
           "sampler: non-finite value at step t=" + std::to_string(t) +
               " (guidance scale too large?)");
    }
  }
  result.image = cfg.clamp_final ? clamp_values(x, -1.0, 1.0) : x;
  return result;
}

std::vector<SampleResult> batch_sample(int n, const EpsilonModel& model,
                                       const NoiseSchedule& sched, const GuidanceSpec* spec,
                                       const SamplerConfig& cfg, const GuidanceContext& ctx) {
  if (n < 1) {
    fail(ErrorCode::invalid_argument, "batch_sample: n must be >= 1");
  }
  std::vector<SampleResult> results;
  results.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    SamplerConfig per = cfg;
    per.seed = cfg.seed + static_cast<std::uint64_t>(i);
    results.push_back(sdg_sample(model, sched, spec, per, ctx));
  }
  return results;
}

void write_trace(const std::string& path, const SampleTrace& trace) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) {
    fail(ErrorCode::io, "trace: cannot open '" + path + "' for writing");
  }
  char line[96];
  for (const TraceEntry& e : trace.entries) {
    std::snprintf(line, sizeof(line), "%d %.12g %.12g\n", e.t, e.guidance_value,
                  e.grad_norm);
    os << line;
  }
}

}  // namespace sdg
