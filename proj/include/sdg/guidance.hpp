#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "sdg/encoders.hpp"
#include "sdg/rng.hpp"
#include "sdg/schedule.hpp"
#include "sdg/tensor.hpp"

namespace sdg {

enum class GuidanceKind { language, content, structure, style, composite };

const char* guidance_kind_name(GuidanceKind k);

// Declarative description of a guidance signal y with its scaling factor s.
// Reference images are stored noise-free; perturbation to x'_t happens inside
// evaluation.
struct GuidanceSpec {
  GuidanceKind kind = GuidanceKind::language;
  double scale = 1.0;

  std::string text;        // language
  Tensor reference;        // content / structure / style, noise-free x'_0
  std::vector<int> layers; // structure / style layer subset

  std::vector<std::pair<GuidanceSpec, double>> children;  // composite (spec, weight)

  static GuidanceSpec make_language(std::string text, double scale);
  static GuidanceSpec make_content(Tensor reference, double scale);
  static GuidanceSpec make_structure(Tensor reference, std::vector<int> layers, double scale);
  static GuidanceSpec make_style(Tensor reference, std::vector<int> layers, double scale);
  static GuidanceSpec make_composite(std::vector<std::pair<GuidanceSpec, double>> children,
                                     double scale = 1.0);

  void validate(int exposed_layers) const;
};

enum class GramNorm { chw, none };

// Evaluation context: encoders, schedule, and the reference-perturbation
// policy. One context per sample; the noise cache backs the reuse-one-eps
// mode and is keyed by reference tensor identity.
struct GuidanceContext {
  const TimeConditionedEncoder* encoder = nullptr;
  const TextEncoder* text_encoder = nullptr;
  const NoiseSchedule* schedule = nullptr;
  GramNorm gram_norm = GramNorm::chw;
  bool fresh_ref_noise = true;

  std::unordered_map<const void*, Tensor> ref_noise_cache;
};

// Individual guidance functions. All return a scalar tensor differentiable
// w.r.t. x_t when recording is on; reference branches carry no gradient.
Tensor language_guidance(const Tensor& x_t, int t, const Tensor& text_emb,
                         const TimeConditionedEncoder& enc);
Tensor content_guidance(const Tensor& x_t, const Tensor& ref, int t,
                        GuidanceContext& ctx, Rng& rng);
Tensor structure_guidance(const Tensor& x_t, const Tensor& ref, int t,
                          const std::vector<int>& layers, GuidanceContext& ctx, Rng& rng);
Tensor style_guidance(const Tensor& x_t, const Tensor& ref, int t,
                      const std::vector<int>& layers, GuidanceContext& ctx, Rng& rng);

// Weighted sum over already-evaluated child values (linearity of Eq-style
// composite guidance): F = sum_k s_k F_k.
Tensor composite_guidance(const std::vector<std::pair<Tensor, double>>& children);

// Evaluates the spec's guidance value at x_t (no gradient).
double guidance_value(const GuidanceSpec& spec, const Tensor& x_t, int t,
                      GuidanceContext& ctx, Rng& rng);

struct GuidanceEval {
  double value = 0.0;   // unscaled F, for logging
  Tensor gradient;      // exact reverse-mode d F / d x_t, same shape as x_t
};

// g = grad of the (unscaled) guidance value w.r.t. x_t. The sampler applies
// the spec's scale s outside; for composites the child weights s_k are part
// of F itself. Deterministic given the rng state.
GuidanceEval guidance_gradient(const GuidanceSpec& spec, const Tensor& x_t, int t,
                               GuidanceContext& ctx, Rng& rng);

}  // namespace sdg
