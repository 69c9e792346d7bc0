// Command-line front end. Talks to the library exclusively through the C API.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "sdg/sdg_c.h"

namespace {

const char* status_name(sdg_status s) {
  switch (s) {
    case SDG_OK: return "ok";
    case SDG_ERR_INVALID_ARGUMENT: return "invalid-argument";
    case SDG_ERR_IO: return "io";
    case SDG_ERR_BAD_CHECKPOINT: return "bad-checkpoint";
    case SDG_ERR_BAD_CONFIG: return "bad-config";
    case SDG_ERR_NUMERIC: return "numeric";
    case SDG_ERR_UNKNOWN: return "unknown";
  }
  return "unknown";
}

[[noreturn]] void die(sdg_status s) {
  std::fprintf(stderr, "error: %s: %s\n", status_name(s), sdg_last_error());
  std::exit(static_cast<int>(s));
}

void check(sdg_status s) {
  if (s != SDG_OK) die(s);
}

struct ConfigHandle {
  sdg_config* ptr = nullptr;
  ~ConfigHandle() { sdg_config_free(ptr); }
};

struct CorpusHandle {
  sdg_corpus* ptr = nullptr;
  ~CorpusHandle() { sdg_corpus_free(ptr); }
};

struct ModelsHandle {
  sdg_models* ptr = nullptr;
  ~ModelsHandle() { sdg_models_free(ptr); }
};

struct GuidanceHandle {
  sdg_guidance* ptr = nullptr;
  ~GuidanceHandle() { sdg_guidance_free(ptr); }
};

void load_config(const std::string& path, ConfigHandle& cfg) {
  if (path.empty()) {
    check(sdg_config_create(&cfg.ptr));
  } else {
    check(sdg_config_load(path.c_str(), &cfg.ptr));
  }
}

std::string config_get(const ConfigHandle& cfg, const char* key) {
  char buf[256];
  check(sdg_config_get(cfg.ptr, key, buf, sizeof(buf)));
  return buf;
}

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::string item;
  for (char c : csv + ",") {
    if (c == ',') {
      if (!item.empty()) out.push_back(std::stoi(item));
      item.clear();
    } else {
      item += c;
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic diffusion guidance toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  bool seed_given = false;
  app.add_option("--config", config_path, "Run configuration file");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--seed", seed, "Seed override")->each([&](const std::string&) {
    seed_given = true;
  });

  auto* gen = app.add_subcommand("gen-corpus", "Generate the synthetic captioned corpus");

  auto* train = app.add_subcommand("train", "Train the unconditional denoiser");
  std::string corpus_dir, resume_path;
  train->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  train->add_option("--resume", resume_path, "Resume from a denoiser checkpoint");

  auto* pretrain = app.add_subcommand("pretrain-encoder", "Train the dual text/image encoder");
  pretrain->add_option("--corpus", corpus_dir, "Corpus directory")->required();

  auto* finetune =
      app.add_subcommand("finetune-encoder", "Finetune the time-conditioned encoder");
  std::string encoders_path;
  finetune->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  finetune->add_option("--encoders", encoders_path, "Dual encoder checkpoint")->required();

  auto* sample = app.add_subcommand("sample", "Sample images with optional guidance");
  std::string denoiser_path, noised_path, text_prompt, ref_image, mode = "content";
  double scale = -1.0, text_scale = -1.0, image_scale = -1.0;
  int n = 1;
  sample->add_option("--denoiser", denoiser_path, "Denoiser checkpoint")->required();
  sample->add_option("--encoders", encoders_path, "Dual encoder checkpoint");
  sample->add_option("--noised", noised_path, "Finetuned noised-encoder checkpoint");
  sample->add_option("--text", text_prompt, "Language guidance prompt");
  sample->add_option("--ref-image", ref_image, "Reference image (PPM) for image guidance");
  sample->add_option("--mode", mode, "Image guidance mode: content|structure|style");
  sample->add_option("--scale", scale, "Guidance scale s");
  sample->add_option("--text-scale", text_scale, "Language branch scale (composite)");
  sample->add_option("--image-scale", image_scale, "Image branch scale (composite)");
  sample->add_option("--n", n, "Number of samples");

  auto* eval = app.add_subcommand("eval", "Evaluate a generated directory");
  std::string generated_dir, manifest_path;
  eval->add_option("--encoders", encoders_path, "Dual encoder checkpoint")->required();
  eval->add_option("--generated", generated_dir, "Generated image directory")->required();
  eval->add_option("--manifest", manifest_path, "Guidance manifest (default: <generated>/manifest.txt)");
  eval->add_option("--corpus", corpus_dir, "Corpus directory")->required();

  auto* ablate = app.add_subcommand("ablate", "Scaling-factor sweep");
  std::string scales_csv;
  ablate->add_option("--denoiser", denoiser_path, "Denoiser checkpoint")->required();
  ablate->add_option("--encoders", encoders_path, "Dual encoder checkpoint")->required();
  ablate->add_option("--noised", noised_path, "Finetuned noised-encoder checkpoint")->required();
  ablate->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  ablate->add_option("--scales", scales_csv, "Comma-separated scales (overrides config)");

  CLI11_PARSE(app, argc, argv);

  ConfigHandle cfg;
  load_config(config_path, cfg);

  if (gen->parsed()) {
    if (out_dir.empty()) {
      std::fprintf(stderr, "error: invalid-argument: --out is required\n");
      return SDG_ERR_INVALID_ARGUMENT;
    }
    if (seed_given) check(sdg_config_set(cfg.ptr, "corpus.seed", std::to_string(seed).c_str()));
    CorpusHandle corpus;
    check(sdg_corpus_generate(cfg.ptr, &corpus.ptr));
    check(sdg_corpus_save(corpus.ptr, out_dir.c_str()));
    std::string resolved = out_dir + "/config.resolved.txt";
    check(sdg_config_save(cfg.ptr, resolved.c_str()));
    std::printf("wrote %zu images to %s\n", sdg_corpus_size(corpus.ptr), out_dir.c_str());
    return 0;
  }

  if (train->parsed() || pretrain->parsed() || finetune->parsed()) {
    if (out_dir.empty()) {
      std::fprintf(stderr, "error: invalid-argument: --out is required\n");
      return SDG_ERR_INVALID_ARGUMENT;
    }
    if (seed_given) {
      const char* key = train->parsed() ? "denoiser.seed" : "encoders.seed";
      check(sdg_config_set(cfg.ptr, key, std::to_string(seed).c_str()));
    }
    CorpusHandle corpus;
    check(sdg_corpus_load(corpus_dir.c_str(), &corpus.ptr));
    if (train->parsed()) {
      check(sdg_train_denoiser(cfg.ptr, corpus.ptr, out_dir.c_str(),
                               resume_path.empty() ? nullptr : resume_path.c_str()));
    } else if (pretrain->parsed()) {
      check(sdg_pretrain_encoders(cfg.ptr, corpus.ptr, out_dir.c_str()));
    } else {
      check(sdg_finetune_encoders(cfg.ptr, corpus.ptr, encoders_path.c_str(),
                                  out_dir.c_str()));
    }
    std::printf("artifacts written to %s\n", out_dir.c_str());
    return 0;
  }

  if (sample->parsed()) {
    if (out_dir.empty()) {
      std::fprintf(stderr, "error: invalid-argument: --out is required\n");
      return SDG_ERR_INVALID_ARGUMENT;
    }
    const bool has_text = !text_prompt.empty();
    const bool has_image = !ref_image.empty();
    GuidanceHandle guidance;
    const std::vector<int> layers = parse_int_list(config_get(cfg, "guidance.layers"));
    if (has_text && has_image) {
      if (text_scale < 0.0 || image_scale < 0.0) {
        std::fprintf(stderr,
                     "error: invalid-argument: both --text and --ref-image given; "
                     "per-branch scales --text-scale and --image-scale are required\n");
        return SDG_ERR_INVALID_ARGUMENT;
      }
      GuidanceHandle text_child, image_child;
      check(sdg_guidance_text(text_prompt.c_str(), 1.0, &text_child.ptr));
      check(sdg_guidance_image(ref_image.c_str(), mode.c_str(), 1.0, layers.data(),
                               layers.size(), &image_child.ptr));
      sdg_guidance* children[2] = {text_child.ptr, image_child.ptr};
      const double weights[2] = {text_scale, image_scale};
      check(sdg_guidance_composite(children, weights, 2, &guidance.ptr));
    } else if (has_text) {
      double s = scale >= 0.0 ? scale : text_scale;
      if (s < 0.0) s = std::stod(config_get(cfg, "guidance.scale_text"));
      check(sdg_guidance_text(text_prompt.c_str(), s, &guidance.ptr));
    } else if (has_image) {
      double s = scale >= 0.0 ? scale : image_scale;
      if (s < 0.0) s = std::stod(config_get(cfg, "guidance.scale_image"));
      check(sdg_guidance_image(ref_image.c_str(), mode.c_str(), s, layers.data(),
                               layers.size(), &guidance.ptr));
    }
    ModelsHandle models;
    check(sdg_models_load(cfg.ptr, denoiser_path.c_str(),
                          encoders_path.empty() ? nullptr : encoders_path.c_str(),
                          noised_path.empty() ? nullptr : noised_path.c_str(), &models.ptr));
    const std::uint64_t run_seed =
        seed_given ? seed : std::stoull(config_get(cfg, "sampler.seed"));
    check(sdg_sample_images(cfg.ptr, models.ptr, guidance.ptr, run_seed, n, out_dir.c_str()));
    std::printf("wrote %d samples to %s\n", n, out_dir.c_str());
    return 0;
  }

  if (eval->parsed()) {
    if (out_dir.empty()) {
      std::fprintf(stderr, "error: invalid-argument: --out is required\n");
      return SDG_ERR_INVALID_ARGUMENT;
    }
    if (seed_given) check(sdg_config_set(cfg.ptr, "eval.seed", std::to_string(seed).c_str()));
    if (manifest_path.empty()) manifest_path = generated_dir + "/manifest.txt";
    ModelsHandle models;
    check(sdg_models_load(cfg.ptr, nullptr, encoders_path.c_str(), nullptr, &models.ptr));
    check(sdg_evaluate(cfg.ptr, models.ptr, generated_dir.c_str(), manifest_path.c_str(),
                       corpus_dir.c_str(), out_dir.c_str()));
    std::printf("report written to %s\n", out_dir.c_str());
    return 0;
  }

  if (ablate->parsed()) {
    if (out_dir.empty()) {
      std::fprintf(stderr, "error: invalid-argument: --out is required\n");
      return SDG_ERR_INVALID_ARGUMENT;
    }
    if (!scales_csv.empty()) check(sdg_config_set(cfg.ptr, "ablate.scales", scales_csv.c_str()));
    if (seed_given) check(sdg_config_set(cfg.ptr, "ablate.base_seed", std::to_string(seed).c_str()));
    ModelsHandle models;
    check(sdg_models_load(cfg.ptr, denoiser_path.c_str(), encoders_path.c_str(),
                          noised_path.c_str(), &models.ptr));
    check(sdg_ablate(cfg.ptr, models.ptr, corpus_dir.c_str(), out_dir.c_str()));
    std::printf("sweep report written to %s\n", out_dir.c_str());
    return 0;
  }

  return 0;
}
