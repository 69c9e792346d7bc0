#include "sdg/guidance.hpp"

#include <cmath>

namespace sdg {

const char* guidance_kind_name(GuidanceKind k) {
  switch (k) {
    case GuidanceKind::language: return "language";
    case GuidanceKind::content: return "content";
    case GuidanceKind::structure: return "structure";
    case GuidanceKind::style: return "style";
    case GuidanceKind::composite: return "composite";
  }
  return "?";
}

GuidanceSpec GuidanceSpec::make_language(std::string text, double scale) {
  GuidanceSpec s;
  s.kind = GuidanceKind::language;
  s.text = std::move(text);
  s.scale = scale;
  return s;
}

GuidanceSpec GuidanceSpec::make_content(Tensor reference, double scale) {
  GuidanceSpec s;
  s.kind = GuidanceKind::content;
  s.reference = std::move(reference);
  s.scale = scale;
  return s;
}

GuidanceSpec GuidanceSpec::make_structure(Tensor reference, std::vector<int> layers,
                                          double scale) {
  GuidanceSpec s;
  s.kind = GuidanceKind::structure;
  s.reference = std::move(reference);
  s.layers = std::move(layers);
  s.scale = scale;
  return s;
}

GuidanceSpec GuidanceSpec::make_style(Tensor reference, std::vector<int> layers,
                                      double scale) {
  GuidanceSpec s;
  s.kind = GuidanceKind::style;
  s.reference = std::move(reference);
  s.layers = std::move(layers);
  s.scale = scale;
  return s;
}

GuidanceSpec GuidanceSpec::make_composite(
    std::vector<std::pair<GuidanceSpec, double>> children, double scale) {
  GuidanceSpec s;
  s.kind = GuidanceKind::composite;
  s.children = std::move(children);
  s.scale = scale;
  return s;
}

void GuidanceSpec::validate(int exposed_layers) const {
  if (scale < 0.0) {
    fail(ErrorCode::invalid_argument, "guidance: scale must be >= 0");
  }
  switch (kind) {
    case GuidanceKind::language:
      if (text.empty()) fail(ErrorCode::invalid_argument, "guidance: empty text");
      break;
    case GuidanceKind::content:
      if (!reference.defined())
        fail(ErrorCode::invalid_argument, "guidance: missing reference image");
      break;
    case GuidanceKind::structure:
    case GuidanceKind::style:
      if (!reference.defined())
        fail(ErrorCode::invalid_argument, "guidance: missing reference image");
      if (layers.empty())
        fail(ErrorCode::invalid_argument, "guidance: empty layer set");
      for (int j : layers) {
        if (j < 0 || j >= exposed_layers) {
          fail(ErrorCode::invalid_argument,
               "guidance: layer " + std::to_string(j) + " outside exposed range [0," +
                   std::to_string(exposed_layers) + ")");
        }
      }
      break;
    case GuidanceKind::composite:
      if (children.empty())
        fail(ErrorCode::invalid_argument, "guidance: composite needs at least one child");
      for (const auto& [child, weight] : children) {
        if (weight < 0.0)
          fail(ErrorCode::invalid_argument, "guidance: composite weights must be >= 0");
        child.validate(exposed_layers);
      }
      break;
  }
}

namespace {

// Perturbs the noise-free reference to x'_t (fresh eps per evaluation, or one
// cached eps per reference when fresh_ref_noise is off). t = 0 leaves the
// reference clean. Never records a graph; references receive no gradient.
Tensor perturb_reference(const Tensor& ref, int t, GuidanceContext& ctx, Rng& rng) {
  if (t == 0) return ref;
  Tensor eps;
  if (ctx.fresh_ref_noise) {
    eps = Tensor::from_data(ref.shape(), rng.normal_vector(ref.data().size()));
  } else {
    auto it = ctx.ref_noise_cache.find(ref.node().get());
    if (it == ctx.ref_noise_cache.end()) {
      eps = Tensor::from_data(ref.shape(), rng.normal_vector(ref.data().size()));
      ctx.ref_noise_cache.emplace(ref.node().get(), eps);
    } else {
      eps = it->second;
    }
  }
  return q_sample(ref, t, eps, *ctx.schedule);
}

void require_encoder(const GuidanceContext& ctx) {
  if (!ctx.encoder || !ctx.schedule) {
    fail(ErrorCode::invalid_argument, "guidance: context lacks encoder or schedule");
  }
}

}  // namespace

Tensor language_guidance(const Tensor& x_t, int t, const Tensor& text_emb,
                         const TimeConditionedEncoder& enc) {
  return dot(enc.embed(x_t, t), text_emb);
}

Tensor content_guidance(const Tensor& x_t, const Tensor& ref, int t, GuidanceContext& ctx,
                        Rng& rng) {
  require_encoder(ctx);
  Tensor ref_emb;
  {
    NoGradGuard ng;
    Tensor ref_t = perturb_reference(ref, t, ctx, rng);
    ref_emb = ctx.encoder->embed(ref_t, t);
  }
  return dot(ctx.encoder->embed(x_t, t), ref_emb);
}

Tensor structure_guidance(const Tensor& x_t, const Tensor& ref, int t,
                          const std::vector<int>& layers, GuidanceContext& ctx, Rng& rng) {
  require_encoder(ctx);
  if (layers.empty()) {
    fail(ErrorCode::invalid_argument, "structure_guidance: empty layer set");
  }
  std::vector<Tensor> ref_layers;
  {
    NoGradGuard ng;
    Tensor ref_t = perturb_reference(ref, t, ctx, rng);
    ref_layers = ctx.encoder->encode(ref_t, t).layers;
  }
  EncoderFeatures fx = ctx.encoder->encode(x_t, t);
  Tensor total = Tensor::scalar(0.0);
  for (int j : layers) {
    const Tensor& a = fx.layers[static_cast<std::size_t>(j)];
    const Tensor& b = ref_layers[static_cast<std::size_t>(j)];
    const double inv = 1.0 / static_cast<double>(numel(a.shape()));
    total = add(total, scale(sum_squares(sub(a, b)), inv));
  }
  return neg(total);
}

Tensor style_guidance(const Tensor& x_t, const Tensor& ref, int t,
                      const std::vector<int>& layers, GuidanceContext& ctx, Rng& rng) {
  require_encoder(ctx);
  if (layers.empty()) {
    fail(ErrorCode::invalid_argument, "style_guidance: empty layer set");
  }
  const bool normalize = ctx.gram_norm == GramNorm::chw;
  std::vector<Tensor> ref_grams;
  {
    NoGradGuard ng;
    Tensor ref_t = perturb_reference(ref, t, ctx, rng);
    const auto ref_feats = ctx.encoder->encode(ref_t, t).layers;
    for (int j : layers) {
      ref_grams.push_back(gram_matrix(ref_feats[static_cast<std::size_t>(j)], normalize));
    }
  }
  EncoderFeatures fx = ctx.encoder->encode(x_t, t);
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Tensor gx = gram_matrix(fx.layers[static_cast<std::size_t>(layers[i])], normalize);
    total = add(total, sum_squares(sub(gx, ref_grams[i])));
  }
  return neg(total);
}

Tensor composite_guidance(const std::vector<std::pair<Tensor, double>>& children) {
  if (children.empty()) {
    fail(ErrorCode::invalid_argument, "composite_guidance: no children");
  }
  Tensor total = Tensor::scalar(0.0);
  for (const auto& [value, weight] : children) {
    total = add(total, scale(value, weight));
  }
  return total;
}

namespace {

Tensor evaluate_spec(const GuidanceSpec& spec, const Tensor& x_t, int t,
                     GuidanceContext& ctx, Rng& rng) {
  switch (spec.kind) {
    case GuidanceKind::language: {
      if (!ctx.text_encoder) {
        fail(ErrorCode::invalid_argument, "guidance: context lacks a text encoder");
      }
      Tensor text_emb;
      {
        NoGradGuard ng;
        text_emb = ctx.text_encoder->encode(spec.text);
      }
      return language_guidance(x_t, t, text_emb, *ctx.encoder);
    }
    case GuidanceKind::content:
      return content_guidance(x_t, spec.reference, t, ctx, rng);
    case GuidanceKind::structure:
      return structure_guidance(x_t, spec.reference, t, spec.layers, ctx, rng);
    case GuidanceKind::style:
      return style_guidance(x_t, spec.reference, t, spec.layers, ctx, rng);
    case GuidanceKind::composite: {
      std::vector<std::pair<Tensor, double>> values;
      values.reserve(spec.children.size());
      for (const auto& [child, weight] : spec.children) {
        values.emplace_back(evaluate_spec(child, x_t, t, ctx, rng), weight);
      }
      return composite_guidance(values);
    }
  }
  fail(ErrorCode::invalid_argument, "guidance: unknown kind");
}

}  // namespace

double guidance_value(const GuidanceSpec& spec, const Tensor& x_t, int t,
                      GuidanceContext& ctx, Rng& rng) {
  require_encoder(ctx);
  spec.validate(ctx.encoder->exposed_layer_count());
  NoGradGuard ng;
  return evaluate_spec(spec, x_t, t, ctx, rng).item();
}

GuidanceEval guidance_gradient(const GuidanceSpec& spec, const Tensor& x_t, int t,
                               GuidanceContext& ctx, Rng& rng) {
  require_encoder(ctx);
  spec.validate(ctx.encoder->exposed_layer_count());
  // x_t is a differentiation leaf each step; no gradient flows across steps.
  Tensor leaf = Tensor::from_data(
      x_t.shape(), std::vector<double>(x_t.data().begin(), x_t.data().end()),
      /*requires_grad=*/true);
  Tensor value = evaluate_spec(spec, leaf, t, ctx, rng);
  GuidanceEval out;
  out.value = value.item();
  backward(value);
  out.gradient = Tensor::from_data(x_t.shape(), leaf.grad());
  return out;
}

}  // namespace sdg
