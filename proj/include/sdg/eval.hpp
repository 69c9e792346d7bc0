#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdg/encoders.hpp"
#include "sdg/guidance.hpp"
#include "sdg/sampler.hpp"
#include "sdg/tensor.hpp"

namespace sdg {

struct EvalReport {
  double scale = 0.0;
  std::string guidance_type;
  std::vector<int> ks{1, 5, 10, 20};
  std::vector<double> topk;      // hit rates, non-decreasing in k
  double diversity = 0.0;        // mean pairwise (1 - cos) within same-guidance groups
  double frechet = 0.0;          // Frechet feature distance to the real set
  double mean_ref_cosine = 0.0;  // mean cos(generated, its reference) in clean space
  std::uint64_t base_seed = 0;
  int sample_count = 0;
};

// For each generated image, ranks it among {itself, 99 negatives} by cosine
// similarity of clean-encoder embeddings to its guidance embedding; returns
// the fraction ranked within top k, per k. Retrieval always uses the frozen
// clean encoder.
std::vector<double> retrieval_accuracy(const std::vector<Tensor>& generated,
                                       const std::vector<Tensor>& query_embeddings,
                                       const std::vector<Tensor>& negatives,
                                       const CleanEncoder& enc, const std::vector<int>& ks);

// Mean over unordered pairs of (1 - cosine similarity) of clean-encoder
// embeddings; in [0,2].
double pairwise_diversity(const std::vector<Tensor>& images, const CleanEncoder& enc);

// ||mu_A - mu_B||^2 + tr(S_A + S_B - 2 (S_B^1/2 S_A S_B^1/2)^1/2) on
// clean-encoder embeddings. Each set needs >= 2*D images (D = embedding dim).
double frechet_feature_distance(const std::vector<Tensor>& set_a,
                                const std::vector<Tensor>& set_b, const CleanEncoder& enc);

// The same statistic on raw embedding rows (sample covariance, ddof = 1);
// exposed so synthetic-moment tests hit the identical math.
double frechet_from_embeddings(const std::vector<std::vector<double>>& a,
                               const std::vector<std::vector<double>>& b);

struct AblationConfig {
  std::vector<double> scales;  // must contain 0
  int refs = 16;               // guidance references
  int seeds_per_ref = 3;       // paired base seeds shared across scales
  std::uint64_t base_seed = 500;
  GuidanceKind kind = GuidanceKind::content;
  std::vector<int> layers{0, 1, 2};
};

// One EvalReport per scale (rows ordered by s), with shared base seeds across
// scales for paired comparison. Diversity is measured within same-reference
// groups; retrieval queries each sample by its own reference embedding
// against 99 negatives.
std::vector<EvalReport> ablation_sweep(const EpsilonModel& model, const NoiseSchedule& sched,
                                       const CleanEncoder& clean,
                                       const GuidanceContext& ctx_template,
                                       const std::vector<Tensor>& references,
                                       const std::vector<Tensor>& negatives,
                                       const std::vector<Tensor>& real_set,
                                       const AblationConfig& cfg,
                                       const SamplerConfig& sampler_template);

std::string render_report_table(const std::vector<EvalReport>& reports);
void write_report_kv(const std::string& path, const std::vector<EvalReport>& reports);

}  // namespace sdg
