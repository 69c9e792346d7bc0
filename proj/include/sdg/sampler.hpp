#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sdg/denoiser.hpp"
#include "sdg/guidance.hpp"
#include "sdg/schedule.hpp"
#include "sdg/tensor.hpp"

namespace sdg {

struct SamplerConfig {
  std::uint64_t seed = 7;
  bool record_trace = false;
  int trace_stride = 10;
  bool clamp_final = true;
};

struct TraceEntry {
  int t = 0;
  Tensor x_t;               // snapshot of the iterate the step saw
  double guidance_value = 0.0;
  double grad_norm = 0.0;
};

struct SampleTrace {
  std::vector<TraceEntry> entries;  // timesteps strictly decreasing
};

struct SampleResult {
  Tensor image;
  SampleTrace trace;
};

// One reverse step drawn from N(mu + s * var * g, var I): returns
// (mu + s*var*g) + sqrt(var) * z. A zero shift (s == 0 or g == 0) leaves mu
// bitwise untouched so guided-with-zero-scale and unguided runs coincide.
Tensor shifted_step(const Tensor& mu, double var, const Tensor& g, double s,
                    const Tensor& z);

// Guided reverse diffusion loop. spec == nullptr samples unconditionally.
// Three named rng streams are derived from cfg.seed (initialization, model
// noise, guidance reference perturbation) so toggling guidance cannot shift
// the unconditional draw sequence. The final step emits the mean without
// noise; clamp_final maps the result to [-1,1]. Aborts with the step index if
// a non-finite value appears (a mis-scaled s).
SampleResult sdg_sample(const EpsilonModel& model, const NoiseSchedule& sched,
                        const GuidanceSpec* spec, const SamplerConfig& cfg,
                        GuidanceContext ctx);

// n independent samples from per-sample seeds cfg.seed + i.
std::vector<SampleResult> batch_sample(int n, const EpsilonModel& model,
                                       const NoiseSchedule& sched, const GuidanceSpec* spec,
                                       const SamplerConfig& cfg, const GuidanceContext& ctx);

// Trace metrics file: one line per recorded step: t, F, ||g||.
void write_trace(const std::string& path, const SampleTrace& trace);

}  // namespace sdg
