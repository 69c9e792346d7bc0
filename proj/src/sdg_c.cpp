#include "sdg/sdg_c.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>

#include "sdg/config.hpp"
#include "sdg/corpus.hpp"
#include "sdg/denoiser.hpp"
#include "sdg/encoders.hpp"
#include "sdg/errors.hpp"
#include "sdg/eval.hpp"
#include "sdg/guidance.hpp"
#include "sdg/image_io.hpp"
#include "sdg/sampler.hpp"

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Handles and error plumbing
// ---------------------------------------------------------------------------

struct sdg_config {
  sdg::RunConfig cfg = sdg::RunConfig::defaults();
};

struct sdg_corpus {
  sdg::CaptionedCorpus corpus;
};

struct sdg_models {
  std::optional<sdg::EpsilonModel> denoiser;
  std::optional<sdg::CleanEncoder> clean;
  std::optional<sdg::TextEncoder> text;
  std::optional<sdg::TimeConditionedEncoder> noised;
};

struct sdg_guidance {
  sdg::GuidanceSpec spec;
  std::string manifest_kind;     // "text" | "image"
  std::string manifest_payload;  // prompt or reference path
};

namespace {

thread_local std::string g_last_error;

sdg_status status_from(sdg::ErrorCode code) {
  switch (code) {
    case sdg::ErrorCode::invalid_argument: return SDG_ERR_INVALID_ARGUMENT;
    case sdg::ErrorCode::io: return SDG_ERR_IO;
    case sdg::ErrorCode::bad_checkpoint: return SDG_ERR_BAD_CHECKPOINT;
    case sdg::ErrorCode::bad_config: return SDG_ERR_BAD_CONFIG;
    case sdg::ErrorCode::numeric: return SDG_ERR_NUMERIC;
  }
  return SDG_ERR_UNKNOWN;
}

template <typename Fn>
sdg_status wrap(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return SDG_OK;
  } catch (const sdg::Error& e) {
    g_last_error = e.what();
    return status_from(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SDG_ERR_UNKNOWN;
  } catch (...) {
    g_last_error = "unknown error";
    return SDG_ERR_UNKNOWN;
  }
}

void require(bool cond, const char* message) {
  if (!cond) sdg::fail(sdg::ErrorCode::invalid_argument, message);
}

void copy_out(const std::string& value, char* buf, size_t buf_size) {
  require(buf != nullptr && buf_size > 0, "output buffer required");
  if (value.size() + 1 > buf_size) {
    sdg::fail(sdg::ErrorCode::invalid_argument,
              "output buffer too small (" + std::to_string(value.size() + 1) +
                  " bytes needed)");
  }
  std::memcpy(buf, value.c_str(), value.size() + 1);
}

void write_resolved_config(const sdg::RunConfig& cfg, const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  cfg.save((fs::path(out_dir) / "config.resolved.txt").string());
}

void write_loss_log(const std::string& path, const std::vector<double>& losses,
                    int first_step) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) {
    sdg::fail(sdg::ErrorCode::io, "cannot open loss log '" + path + "'");
  }
  char line[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(line, sizeof(line), "%d %.17g\n", first_step + static_cast<int>(i),
                  losses[i]);
    os << line;
  }
}

std::vector<sdg::Tensor> corpus_images(const sdg::CaptionedCorpus& corpus) {
  std::vector<sdg::Tensor> images;
  images.reserve(corpus.items.size());
  for (const auto& item : corpus.items) images.push_back(item.image);
  return images;
}

sdg::GuidanceContext make_context(const sdg::RunConfig& cfg, const sdg_models* models) {
  sdg::GuidanceContext ctx;
  if (models->noised) ctx.encoder = &*models->noised;
  if (models->text) ctx.text_encoder = &*models->text;
  ctx.gram_norm = cfg.gram_norm();
  ctx.fresh_ref_noise = cfg.fresh_ref_noise();
  return ctx;
}

std::string sample_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%03d.ppm", i);
  return buf;
}

}  // namespace

extern "C" {

const char* sdg_last_error(void) { return g_last_error.c_str(); }

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

sdg_status sdg_config_create(sdg_config** out) {
  return wrap([&] {
    require(out != nullptr, "output handle required");
    *out = new sdg_config();
  });
}

sdg_status sdg_config_load(const char* path, sdg_config** out) {
  return wrap([&] {
    require(path != nullptr && out != nullptr, "path and output handle required");
    auto cfg = std::make_unique<sdg_config>();
    cfg->cfg = sdg::RunConfig::load(path);
    *out = cfg.release();
  });
}

sdg_status sdg_config_set(sdg_config* cfg, const char* key, const char* value) {
  return wrap([&] {
    require(cfg != nullptr && key != nullptr && value != nullptr,
            "config, key and value required");
    cfg->cfg.set(key, value);
  });
}

sdg_status sdg_config_get(const sdg_config* cfg, const char* key, char* buf,
                          size_t buf_size) {
  return wrap([&] {
    require(cfg != nullptr && key != nullptr, "config and key required");
    copy_out(cfg->cfg.get(key), buf, buf_size);
  });
}

sdg_status sdg_config_save(const sdg_config* cfg, const char* path) {
  return wrap([&] {
    require(cfg != nullptr && path != nullptr, "config and path required");
    cfg->cfg.save(path);
  });
}

void sdg_config_free(sdg_config* cfg) { delete cfg; }

// ---------------------------------------------------------------------------
// Corpus
// ---------------------------------------------------------------------------

sdg_status sdg_corpus_generate(const sdg_config* cfg, sdg_corpus** out) {
  return wrap([&] {
    require(cfg != nullptr && out != nullptr, "config and output handle required");
    auto corpus = std::make_unique<sdg_corpus>();
    corpus->corpus = sdg::generate_corpus(cfg->cfg.corpus_spec());
    *out = corpus.release();
  });
}

sdg_status sdg_corpus_save(const sdg_corpus* corpus, const char* dir) {
  return wrap([&] {
    require(corpus != nullptr && dir != nullptr, "corpus and directory required");
    sdg::save_corpus(corpus->corpus, dir);
  });
}

sdg_status sdg_corpus_load(const char* dir, sdg_corpus** out) {
  return wrap([&] {
    require(dir != nullptr && out != nullptr, "directory and output handle required");
    auto corpus = std::make_unique<sdg_corpus>();
    corpus->corpus = sdg::load_corpus(dir);
    *out = corpus.release();
  });
}

size_t sdg_corpus_size(const sdg_corpus* corpus) {
  return corpus ? corpus->corpus.items.size() : 0;
}

sdg_status sdg_corpus_caption(const sdg_corpus* corpus, size_t index, char* buf,
                              size_t buf_size) {
  return wrap([&] {
    require(corpus != nullptr, "corpus required");
    require(index < corpus->corpus.items.size(), "corpus index out of range");
    copy_out(corpus->corpus.items[index].caption, buf, buf_size);
  });
}

void sdg_corpus_free(sdg_corpus* corpus) { delete corpus; }

// ---------------------------------------------------------------------------
// Training commands
// ---------------------------------------------------------------------------

sdg_status sdg_train_denoiser(const sdg_config* cfg, const sdg_corpus* corpus,
                              const char* out_dir, const char* resume_checkpoint) {
  return wrap([&] {
    require(cfg != nullptr && corpus != nullptr && out_dir != nullptr,
            "config, corpus and output directory required");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    sdg::TrainConfig tc = cfg->cfg.train_config();
    tc.checkpoint_path = (fs::path(out_dir) / "denoiser.ckpt").string();
    const sdg::NoiseSchedule sched = cfg->cfg.schedule();
    const auto images = corpus_images(corpus->corpus);
    sdg::TrainResult result;
    int first_step = 0;
    if (resume_checkpoint != nullptr) {
      std::vector<std::pair<std::string, sdg::Tensor>> opt_state;
      sdg::EpsilonModel probe = sdg::EpsilonModel::load(resume_checkpoint, opt_state);
      for (const auto& [name, t] : opt_state) {
        if (name == "opt.t") first_step = static_cast<int>(t.item());
      }
      sdg::resume_denoiser(resume_checkpoint, images, sched, tc, &result);
    } else {
      sdg::train_denoiser(images, sched, tc, cfg->cfg.denoiser_config(), &result);
    }
    write_loss_log((fs::path(out_dir) / "train_loss.txt").string(), result.losses,
                   first_step);
    write_resolved_config(cfg->cfg, out_dir);
  });
}

sdg_status sdg_pretrain_encoders(const sdg_config* cfg, const sdg_corpus* corpus,
                                 const char* out_dir) {
  return wrap([&] {
    require(cfg != nullptr && corpus != nullptr && out_dir != nullptr,
            "config, corpus and output directory required");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::vector<double> losses;
    auto [clean, text] = sdg::pretrain_dual_encoder(
        corpus->corpus, cfg->cfg.pretrain_config(), cfg->cfg.encoder_config(), &losses);
    sdg::save_dual_encoder((fs::path(out_dir) / "encoders.ckpt").string(), clean, text);
    write_loss_log((fs::path(out_dir) / "pretrain_loss.txt").string(), losses, 0);
    write_resolved_config(cfg->cfg, out_dir);
  });
}

sdg_status sdg_finetune_encoders(const sdg_config* cfg, const sdg_corpus* corpus,
                                 const char* dual_encoder_checkpoint, const char* out_dir) {
  return wrap([&] {
    require(cfg != nullptr && corpus != nullptr && dual_encoder_checkpoint != nullptr &&
                out_dir != nullptr,
            "config, corpus, encoder checkpoint and output directory required");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    auto [clean, text] = sdg::load_dual_encoder(dual_encoder_checkpoint);
    std::vector<double> losses;
    sdg::TimeConditionedEncoder noised = sdg::finetune_noised_encoder(
        clean, corpus_images(corpus->corpus), cfg->cfg.schedule(),
        cfg->cfg.finetune_config(), &losses);
    sdg::save_noised_encoder((fs::path(out_dir) / "noised_encoder.ckpt").string(), noised);
    write_loss_log((fs::path(out_dir) / "finetune_loss.txt").string(), losses, 0);
    write_resolved_config(cfg->cfg, out_dir);
  });
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

sdg_status sdg_models_load(const sdg_config* cfg, const char* denoiser_checkpoint,
                           const char* dual_encoder_checkpoint,
                           const char* noised_encoder_checkpoint, sdg_models** out) {
  return wrap([&] {
    require(cfg != nullptr && out != nullptr, "config and output handle required");
    auto models = std::make_unique<sdg_models>();
    if (denoiser_checkpoint != nullptr) {
      models->denoiser = sdg::EpsilonModel::load(denoiser_checkpoint);
    }
    if (dual_encoder_checkpoint != nullptr) {
      auto [clean, text] = sdg::load_dual_encoder(dual_encoder_checkpoint);
      models->clean = std::move(clean);
      models->text = std::move(text);
    }
    if (noised_encoder_checkpoint != nullptr) {
      models->noised = sdg::load_noised_encoder(noised_encoder_checkpoint);
    }
    *out = models.release();
  });
}

void sdg_models_free(sdg_models* models) { delete models; }

// ---------------------------------------------------------------------------
// Guidance
// ---------------------------------------------------------------------------

sdg_status sdg_guidance_text(const char* text, double scale, sdg_guidance** out) {
  return wrap([&] {
    require(text != nullptr && out != nullptr, "text and output handle required");
    auto g = std::make_unique<sdg_guidance>();
    g->spec = sdg::GuidanceSpec::make_language(text, scale);
    g->manifest_kind = "text";
    g->manifest_payload = text;
    *out = g.release();
  });
}

sdg_status sdg_guidance_image(const char* ppm_path, const char* mode, double scale,
                              const int* layers, size_t layer_count, sdg_guidance** out) {
  return wrap([&] {
    require(ppm_path != nullptr && mode != nullptr && out != nullptr,
            "reference path, mode and output handle required");
    sdg::Tensor ref = sdg::read_ppm(ppm_path);
    std::vector<int> layer_set;
    if (layers != nullptr && layer_count > 0) {
      layer_set.assign(layers, layers + layer_count);
    } else {
      layer_set = {0, 1, 2};
    }
    auto g = std::make_unique<sdg_guidance>();
    const std::string m = mode;
    if (m == "content") {
      g->spec = sdg::GuidanceSpec::make_content(ref, scale);
    } else if (m == "structure") {
      g->spec = sdg::GuidanceSpec::make_structure(ref, layer_set, scale);
    } else if (m == "style") {
      g->spec = sdg::GuidanceSpec::make_style(ref, layer_set, scale);
    } else {
      sdg::fail(sdg::ErrorCode::invalid_argument,
                "guidance mode must be content, structure, or style; got '" + m + "'");
    }
    g->manifest_kind = "image";
    g->manifest_payload = ppm_path;
    *out = g.release();
  });
}

sdg_status sdg_guidance_composite(sdg_guidance* const* children, const double* weights,
                                  size_t count, sdg_guidance** out) {
  return wrap([&] {
    require(children != nullptr && weights != nullptr && out != nullptr && count > 0,
            "children, weights and output handle required");
    std::vector<std::pair<sdg::GuidanceSpec, double>> specs;
    specs.reserve(count);
    std::string kind = "image", payload;
    for (size_t i = 0; i < count; ++i) {
      require(children[i] != nullptr, "null composite child");
      specs.emplace_back(children[i]->spec, weights[i]);
      if (payload.empty() || children[i]->manifest_kind == "text") {
        kind = children[i]->manifest_kind;
        payload = children[i]->manifest_payload;
      }
    }
    auto g = std::make_unique<sdg_guidance>();
    g->spec = sdg::GuidanceSpec::make_composite(std::move(specs));
    g->manifest_kind = kind;
    g->manifest_payload = payload;
    *out = g.release();
  });
}

void sdg_guidance_free(sdg_guidance* guidance) { delete guidance; }

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

sdg_status sdg_sample_images(const sdg_config* cfg, const sdg_models* models,
                             const sdg_guidance* guidance, uint64_t seed, int n,
                             const char* out_dir) {
  return wrap([&] {
    require(cfg != nullptr && models != nullptr && out_dir != nullptr,
            "config, models and output directory required");
    require(models->denoiser.has_value(), "sampling requires a denoiser checkpoint");
    if (guidance != nullptr) {
      require(models->noised.has_value(),
              "guided sampling requires the finetuned noised encoder");
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    const sdg::NoiseSchedule sched = cfg->cfg.schedule();
    sdg::SamplerConfig sc = cfg->cfg.sampler_config();
    sc.seed = seed;
    sdg::GuidanceContext ctx = make_context(cfg->cfg, models);
    const auto results = sdg::batch_sample(n, *models->denoiser, sched,
                                           guidance ? &guidance->spec : nullptr, sc, ctx);

    std::ofstream manifest(fs::path(out_dir) / "manifest.txt", std::ios::trunc);
    if (!manifest) {
      sdg::fail(sdg::ErrorCode::io, "cannot write manifest in '" + std::string(out_dir) + "'");
    }
    for (int i = 0; i < n; ++i) {
      const std::string name = sample_name(i);
      sdg::write_ppm((fs::path(out_dir) / name).string(), results[static_cast<std::size_t>(i)].image);
      if (guidance != nullptr) {
        manifest << name << '\t' << guidance->manifest_kind << '\t'
                 << guidance->manifest_payload << '\n';
      } else {
        manifest << name << "\tnone\t-\n";
      }
      if (sc.record_trace) {
        char tname[32];
        std::snprintf(tname, sizeof(tname), "trace_%03d.txt", i);
        sdg::write_trace((fs::path(out_dir) / tname).string(),
                         results[static_cast<std::size_t>(i)].trace);
      }
    }
    sdg::RunConfig resolved = cfg->cfg;
    resolved.set("sampler.seed", std::to_string(seed));
    write_resolved_config(resolved, out_dir);
  });
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

struct ManifestEntry {
  std::string file;
  std::string kind;
  std::string payload;
};

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) {
    sdg::fail(sdg::ErrorCode::io, "cannot open manifest '" + path + "'");
  }
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = line.find('\t', tab1 + 1);
    if (tab1 == std::string::npos || tab2 == std::string::npos) {
      sdg::fail(sdg::ErrorCode::io, "malformed manifest line '" + line + "'");
    }
    out.push_back({line.substr(0, tab1), line.substr(tab1 + 1, tab2 - tab1 - 1),
                   line.substr(tab2 + 1)});
  }
  if (out.empty()) {
    sdg::fail(sdg::ErrorCode::io, "manifest '" + path + "' is empty");
  }
  return out;
}

}  // namespace

sdg_status sdg_evaluate(const sdg_config* cfg, const sdg_models* models,
                        const char* generated_dir, const char* manifest_path,
                        const char* corpus_dir, const char* out_dir) {
  return wrap([&] {
    require(cfg != nullptr && models != nullptr && generated_dir != nullptr &&
                manifest_path != nullptr && corpus_dir != nullptr && out_dir != nullptr,
            "config, models, generated dir, manifest, corpus dir and output dir required");
    require(models->clean.has_value(), "evaluation requires the clean encoder");
    const auto entries = read_manifest(manifest_path);
    const sdg::CaptionedCorpus corpus = sdg::load_corpus(corpus_dir);
    const sdg::CleanEncoder& clean = *models->clean;

    std::vector<sdg::Tensor> generated;
    std::vector<sdg::Tensor> queries;
    std::vector<std::string> ref_paths;
    for (const auto& e : entries) {
      sdg::Tensor img = sdg::read_ppm((fs::path(generated_dir) / e.file).string());
      if (e.kind == "text") {
        require(models->text.has_value(), "text queries require the text encoder");
        sdg::NoGradGuard ng;
        generated.push_back(img);
        queries.push_back(models->text->encode(e.payload));
      } else if (e.kind == "image") {
        sdg::NoGradGuard ng;
        generated.push_back(img);
        queries.push_back(clean.embed(sdg::read_ppm(e.payload)));
        ref_paths.push_back(e.payload);
      }  // "none" rows carry no retrieval query
    }
    require(!generated.empty(), "manifest has no guided samples to evaluate");

    // Negatives come from the corpus, disjoint from guidance reference files.
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < corpus.items.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "img_%05zu.ppm", i);
      const fs::path p = fs::path(corpus_dir) / name;
      bool is_ref = false;
      for (const auto& rp : ref_paths) {
        std::error_code ec;
        if (fs::equivalent(p, fs::path(rp), ec) && !ec) {
          is_ref = true;
          break;
        }
      }
      if (!is_ref) candidates.push_back(i);
    }
    const auto negative_count = static_cast<std::size_t>(cfg->cfg.get_int("eval.negatives"));
    if (candidates.size() < negative_count) {
      sdg::fail(sdg::ErrorCode::invalid_argument,
                "corpus too small for " + std::to_string(negative_count) + " negatives");
    }
    sdg::Rng rng(sdg::mix_seed(cfg->cfg.get_u64("eval.seed"), 0xeva1));
    for (std::size_t i = candidates.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(candidates[i - 1], candidates[j]);
    }
    std::vector<sdg::Tensor> negatives;
    for (std::size_t i = 0; i < negative_count; ++i)
      negatives.push_back(corpus.items[candidates[i]].image);

    sdg::EvalReport report;
    report.guidance_type = entries.front().kind;
    report.base_seed = cfg->cfg.get_u64("eval.seed");
    report.sample_count = static_cast<int>(generated.size());
    report.ks = cfg->cfg.get_int_list("eval.ks");
    report.topk = sdg::retrieval_accuracy(generated, queries, negatives, clean, report.ks);
    report.diversity = generated.size() >= 2 ? sdg::pairwise_diversity(generated, clean)
                                             : 0.0;
    const std::size_t min_set = 2 * static_cast<std::size_t>(clean.config().embed_dim);
    if (generated.size() >= min_set && candidates.size() >= negative_count + min_set) {
      std::vector<sdg::Tensor> real_set;
      for (std::size_t i = negative_count; i < negative_count + min_set; ++i)
        real_set.push_back(corpus.items[candidates[i]].image);
      report.frechet = sdg::frechet_feature_distance(generated, real_set, clean);
    } else {
      report.frechet = std::nan("");
    }

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::vector<sdg::EvalReport> reports{report};
    std::ofstream table(fs::path(out_dir) / "report.txt", std::ios::trunc);
    table << sdg::render_report_table(reports);
    sdg::write_report_kv((fs::path(out_dir) / "report.kv").string(), reports);
    write_resolved_config(cfg->cfg, out_dir);
  });
}

sdg_status sdg_ablate(const sdg_config* cfg, const sdg_models* models,
                      const char* corpus_dir, const char* out_dir) {
  return wrap([&] {
    require(cfg != nullptr && models != nullptr && corpus_dir != nullptr &&
                out_dir != nullptr,
            "config, models, corpus dir and output dir required");
    require(models->denoiser.has_value(), "ablation requires a denoiser checkpoint");
    require(models->clean.has_value() && models->noised.has_value(),
            "ablation requires both encoder checkpoints");
    const sdg::CaptionedCorpus corpus = sdg::load_corpus(corpus_dir);
    const sdg::AblationConfig ac = cfg->cfg.ablation_config();
    const auto negative_count = static_cast<std::size_t>(cfg->cfg.get_int("eval.negatives"));
    const std::size_t min_real =
        2 * static_cast<std::size_t>(models->clean->config().embed_dim);
    const std::size_t needed =
        static_cast<std::size_t>(ac.refs) + negative_count + min_real;
    if (corpus.items.size() < needed) {
      sdg::fail(sdg::ErrorCode::invalid_argument,
                "ablation needs at least " + std::to_string(needed) + " corpus images");
    }
    std::vector<std::size_t> idx(corpus.items.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    sdg::Rng rng(sdg::mix_seed(ac.base_seed, 0xab1a));
    for (std::size_t i = idx.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(idx[i - 1], idx[j]);
    }
    std::vector<sdg::Tensor> references, negatives, real_set;
    std::size_t cursor = 0;
    for (int r = 0; r < ac.refs; ++r) references.push_back(corpus.items[idx[cursor++]].image);
    for (std::size_t i = 0; i < negative_count; ++i)
      negatives.push_back(corpus.items[idx[cursor++]].image);
    for (std::size_t i = 0; i < min_real; ++i)
      real_set.push_back(corpus.items[idx[cursor++]].image);

    sdg::GuidanceContext ctx = make_context(cfg->cfg, models);
    const sdg::NoiseSchedule sched = cfg->cfg.schedule();
    const auto reports =
        sdg::ablation_sweep(*models->denoiser, sched, *models->clean, ctx, references,
                            negatives, real_set, ac, cfg->cfg.sampler_config());

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::ofstream table(fs::path(out_dir) / "report.txt", std::ios::trunc);
    table << sdg::render_report_table(reports);
    sdg::write_report_kv((fs::path(out_dir) / "report.kv").string(), reports);
    write_resolved_config(cfg->cfg, out_dir);
  });
}

}  // extern "C"
