#include "sdg/eval.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace sdg {

namespace {

std::vector<double> embed_raw(const CleanEncoder& enc, const Tensor& image) {
  NoGradGuard ng;
  Tensor e = enc.embed(image);
  return {e.data().begin(), e.data().end()};
}

double dot_raw(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

std::vector<double> retrieval_accuracy(const std::vector<Tensor>& generated,
                                       const std::vector<Tensor>& query_embeddings,
                                       const std::vector<Tensor>& negatives,
                                       const CleanEncoder& enc, const std::vector<int>& ks) {
  if (negatives.size() != 99) {
    fail(ErrorCode::invalid_argument,
         "retrieval_accuracy: protocol requires exactly 99 negatives, got " +
             std::to_string(negatives.size()));
  }
  if (generated.empty() || generated.size() != query_embeddings.size()) {
    fail(ErrorCode::invalid_argument,
         "retrieval_accuracy: one query embedding per generated image required");
  }
  std::vector<std::vector<double>> neg_emb;
  neg_emb.reserve(negatives.size());
  for (const Tensor& img : negatives) neg_emb.push_back(embed_raw(enc, img));

  std::vector<double> hits(ks.size(), 0.0);
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const std::vector<double> gen = embed_raw(enc, generated[i]);
    const std::vector<double> q(query_embeddings[i].data().begin(),
                                query_embeddings[i].data().end());
    const double gen_sim = dot_raw(gen, q);
    int rank = 1;
    for (const auto& n : neg_emb) {
      if (dot_raw(n, q) > gen_sim) ++rank;
    }
    for (std::size_t k = 0; k < ks.size(); ++k) {
      if (rank <= ks[k]) hits[k] += 1.0;
    }
  }
  for (double& h : hits) h /= static_cast<double>(generated.size());
  return hits;
}

double pairwise_diversity(const std::vector<Tensor>& images, const CleanEncoder& enc) {
  if (images.size() < 2) {
    fail(ErrorCode::invalid_argument, "pairwise_diversity: need at least 2 images");
  }
  std::vector<std::vector<double>> emb;
  emb.reserve(images.size());
  for (const Tensor& img : images) emb.push_back(embed_raw(enc, img));
  double acc = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < emb.size(); ++i) {
    for (std::size_t j = i + 1; j < emb.size(); ++j) {
      acc += 1.0 - dot_raw(emb[i], emb[j]);
      ++pairs;
    }
  }
  return acc / static_cast<double>(pairs);
}

double frechet_from_embeddings(const std::vector<std::vector<double>>& a,
                               const std::vector<std::vector<double>>& b) {
  if (a.empty() || b.empty()) {
    fail(ErrorCode::invalid_argument, "frechet: empty embedding set");
  }
  const auto d = static_cast<Eigen::Index>(a.front().size());
  const std::size_t min_count = 2 * static_cast<std::size_t>(d);
  if (a.size() < min_count || b.size() < min_count) {
    fail(ErrorCode::invalid_argument,
         "frechet: each set needs at least " + std::to_string(min_count) +
             " samples for a stable covariance, got " + std::to_string(a.size()) + " and " +
             std::to_string(b.size()));
  }
  auto moments = [d](const std::vector<std::vector<double>>& rows) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < d; ++j)
        x(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    Eigen::VectorXd mu = x.colwise().mean();
    Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
    Eigen::MatrixXd cov =
        centered.transpose() * centered / static_cast<double>(n - 1);
    return std::pair{mu, cov};
  };
  const auto [mu_a, cov_a] = moments(a);
  const auto [mu_b, cov_b] = moments(b);

  // sqrt of cov_b through its eigendecomposition, eigenvalues clipped at 0.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_b(cov_b);
  Eigen::VectorXd ev_b = es_b.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd sqrt_b =
      es_b.eigenvectors() * ev_b.asDiagonal() * es_b.eigenvectors().transpose();

  Eigen::MatrixXd inner = sqrt_b * cov_a * sqrt_b;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_m(inner);
  const double tr_sqrt = es_m.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double mean_term = (mu_a - mu_b).squaredNorm();
  return mean_term + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
}

double frechet_feature_distance(const std::vector<Tensor>& set_a,
                                const std::vector<Tensor>& set_b, const CleanEncoder& enc) {
  std::vector<std::vector<double>> a, b;
  a.reserve(set_a.size());
  b.reserve(set_b.size());
  for (const Tensor& img : set_a) a.push_back(embed_raw(enc, img));
  for (const Tensor& img : set_b) b.push_back(embed_raw(enc, img));
  return frechet_from_embeddings(a, b);
}

std::vector<EvalReport> ablation_sweep(const EpsilonModel& model, const NoiseSchedule& sched,
                                       const CleanEncoder& clean,
                                       const GuidanceContext& ctx_template,
                                       const std::vector<Tensor>& references,
                                       const std::vector<Tensor>& negatives,
                                       const std::vector<Tensor>& real_set,
                                       const AblationConfig& cfg,
                                       const SamplerConfig& sampler_template) {
  if (cfg.scales.empty() ||
      std::none_of(cfg.scales.begin(), cfg.scales.end(), [](double s) { return s == 0.0; })) {
    fail(ErrorCode::invalid_argument, "ablation_sweep: scales must include 0");
  }
  if (cfg.kind == GuidanceKind::language || cfg.kind == GuidanceKind::composite) {
    fail(ErrorCode::invalid_argument,
         "ablation_sweep: sweep supports image guidance kinds");
  }
  if (references.size() < static_cast<std::size_t>(cfg.refs)) {
    fail(ErrorCode::invalid_argument, "ablation_sweep: not enough reference images");
  }
  if (cfg.seeds_per_ref < 2) {
    fail(ErrorCode::invalid_argument,
         "ablation_sweep: need >= 2 seeds per reference for diversity groups");
  }
  std::vector<double> scales = cfg.scales;
  std::sort(scales.begin(), scales.end());

  std::vector<Tensor> query_emb;
  query_emb.reserve(static_cast<std::size_t>(cfg.refs));
  {
    NoGradGuard ng;
    for (int r = 0; r < cfg.refs; ++r)
      query_emb.push_back(clean.embed(references[static_cast<std::size_t>(r)]));
  }

  std::vector<EvalReport> reports;
  for (double s : scales) {
    EvalReport report;
    report.scale = s;
    report.guidance_type = guidance_kind_name(cfg.kind);
    report.base_seed = cfg.base_seed;

    std::vector<Tensor> generated;
    std::vector<Tensor> queries;
    double diversity_acc = 0.0;
    double cosine_acc = 0.0;
    for (int r = 0; r < cfg.refs; ++r) {
      GuidanceSpec spec;
      const Tensor& ref = references[static_cast<std::size_t>(r)];
      switch (cfg.kind) {
        case GuidanceKind::content: spec = GuidanceSpec::make_content(ref, s); break;
        case GuidanceKind::structure:
          spec = GuidanceSpec::make_structure(ref, cfg.layers, s);
          break;
        default: spec = GuidanceSpec::make_style(ref, cfg.layers, s); break;
      }
      std::vector<Tensor> group;
      for (int j = 0; j < cfg.seeds_per_ref; ++j) {
        SamplerConfig sc = sampler_template;
        sc.seed = cfg.base_seed +
                  static_cast<std::uint64_t>(r) * static_cast<std::uint64_t>(cfg.seeds_per_ref) +
                  static_cast<std::uint64_t>(j);
        SampleResult res = sdg_sample(model, sched, &spec, sc, ctx_template);
        group.push_back(res.image);
        generated.push_back(res.image);
        queries.push_back(query_emb[static_cast<std::size_t>(r)]);
        {
          NoGradGuard ng;
          cosine_acc += dot_raw(embed_raw(clean, res.image),
                                {query_emb[static_cast<std::size_t>(r)].data().begin(),
                                 query_emb[static_cast<std::size_t>(r)].data().end()});
        }
      }
      diversity_acc += pairwise_diversity(group, clean);
    }
    report.topk = retrieval_accuracy(generated, queries, negatives, clean, report.ks);
    report.diversity = diversity_acc / cfg.refs;
    report.mean_ref_cosine = cosine_acc / static_cast<double>(generated.size());
    const std::size_t min_set = 2 * static_cast<std::size_t>(clean.config().embed_dim);
    report.frechet = (generated.size() >= min_set && real_set.size() >= min_set)
                         ? frechet_feature_distance(generated, real_set, clean)
                         : std::nan("");
    report.sample_count = static_cast<int>(generated.size());
    reports.push_back(std::move(report));
  }
  return reports;
}

std::string render_report_table(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  os << "scale  type       top1   top5   top10  top20  diversity  frechet  n\n";
  char line[160];
  for (const EvalReport& r : reports) {
    std::snprintf(line, sizeof(line),
                  "%-6g %-10s %-6.3f %-6.3f %-6.3f %-6.3f %-10.4f %-8.4f %d\n", r.scale,
                  r.guidance_type.c_str(), r.topk.size() > 0 ? r.topk[0] : 0.0,
                  r.topk.size() > 1 ? r.topk[1] : 0.0, r.topk.size() > 2 ? r.topk[2] : 0.0,
                  r.topk.size() > 3 ? r.topk[3] : 0.0, r.diversity, r.frechet,
                  r.sample_count);
    os << line;
  }
  return os.str();
}

void write_report_kv(const std::string& path, const std::vector<EvalReport>& reports) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) {
    fail(ErrorCode::io, "report: cannot open '" + path + "' for writing");
  }
  char buf[96];
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const EvalReport& r = reports[i];
    const std::string prefix = "report." + std::to_string(i) + ".";
    os << prefix << "scale = " << r.scale << '\n';
    os << prefix << "guidance = " << r.guidance_type << '\n';
    os << prefix << "seed = " << r.base_seed << '\n';
    os << prefix << "samples = " << r.sample_count << '\n';
    for (std::size_t k = 0; k < r.ks.size(); ++k) {
      std::snprintf(buf, sizeof(buf), "top%d = %.6f", r.ks[k],
                    k < r.topk.size() ? r.topk[k] : 0.0);
      os << prefix << buf << '\n';
    }
    std::snprintf(buf, sizeof(buf), "diversity = %.6f", r.diversity);
    os << prefix << buf << '\n';
    std::snprintf(buf, sizeof(buf), "frechet = %.6f", r.frechet);
    os << prefix << buf << '\n';
    std::snprintf(buf, sizeof(buf), "ref_cosine = %.6f", r.mean_ref_cosine);
    os << prefix << buf << '\n';
  }
}

}  // namespace sdg
