// Exercises the shared-library surface end to end: every call goes through
// the extern-C API, never the C++ headers.
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "sdg/sdg_c.h"

namespace fs = std::filesystem;

namespace {

std::string work_dir() {
  static const std::string dir = [] {
    const auto d = fs::temp_directory_path() / "sdg_capi_work";
    fs::remove_all(d);
    fs::create_directories(d);
    return d.string();
  }();
  return dir;
}

sdg_config* tiny_config() {
  sdg_config* cfg = nullptr;
  REQUIRE(sdg_config_create(&cfg) == SDG_OK);
  auto set = [&](const char* k, const char* v) { REQUIRE(sdg_config_set(cfg, k, v) == SDG_OK); };
  set("corpus.image_size", "16");
  set("corpus.count", "130");
  set("schedule.timesteps", "20");
  set("denoiser.base_channels", "8");
  set("denoiser.t_embed_dim", "16");
  set("denoiser.steps", "3");
  set("denoiser.batch", "2");
  set("encoders.base_channels", "4");
  set("encoders.embed_dim", "8");
  set("encoders.token_dim", "16");
  set("encoders.t_embed_dim", "16");
  set("encoders.pretrain_steps", "2");
  set("encoders.pretrain_batch", "8");
  set("encoders.finetune_steps", "2");
  set("encoders.finetune_batch", "4");
  set("ablate.refs", "2");
  set("ablate.seeds_per_ref", "2");
  set("ablate.scales", "0,10");
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

struct Artifacts {
  std::string corpus_dir;
  std::string denoiser_ckpt;
  std::string encoders_ckpt;
  std::string noised_ckpt;
};

// Builds the tiny artifact set once; later cases reuse it.
const Artifacts& artifacts() {
  static const Artifacts a = [] {
    Artifacts art;
    sdg_config* cfg = tiny_config();
    const std::string base = work_dir();
    art.corpus_dir = base + "/corpus";
    sdg_corpus* corpus = nullptr;
    REQUIRE(sdg_corpus_generate(cfg, &corpus) == SDG_OK);
    REQUIRE(sdg_corpus_save(corpus, art.corpus_dir.c_str()) == SDG_OK);
    REQUIRE(sdg_train_denoiser(cfg, corpus, (base + "/den").c_str(), nullptr) == SDG_OK);
    REQUIRE(sdg_pretrain_encoders(cfg, corpus, (base + "/enc").c_str()) == SDG_OK);
    art.denoiser_ckpt = base + "/den/denoiser.ckpt";
    art.encoders_ckpt = base + "/enc/encoders.ckpt";
    REQUIRE(sdg_finetune_encoders(cfg, corpus, art.encoders_ckpt.c_str(),
                                  (base + "/fin").c_str()) == SDG_OK);
    art.noised_ckpt = base + "/fin/noised_encoder.ckpt";
    sdg_corpus_free(corpus);
    sdg_config_free(cfg);
    return art;
  }();
  return a;
}

}  // namespace

TEST_CASE("config handle: set, get, save, load, unknown keys") {
  sdg_config* cfg = nullptr;
  REQUIRE(sdg_config_create(&cfg) == SDG_OK);
  char buf[64];
  CHECK(sdg_config_get(cfg, "guidance.scale_text", buf, sizeof(buf)) == SDG_OK);
  CHECK(std::string(buf) == "120.0");
  CHECK(sdg_config_set(cfg, "schedule.timesteps", "25") == SDG_OK);
  CHECK(sdg_config_get(cfg, "schedule.timesteps", buf, sizeof(buf)) == SDG_OK);
  CHECK(std::string(buf) == "25");

  CHECK(sdg_config_set(cfg, "corpus.cout", "1") == SDG_ERR_BAD_CONFIG);
  CHECK(std::string(sdg_last_error()).find("corpus.cout") != std::string::npos);
  CHECK(sdg_config_get(cfg, "corpus.missing", buf, sizeof(buf)) == SDG_ERR_BAD_CONFIG);
  CHECK(std::string(sdg_last_error()).find("corpus.missing") != std::string::npos);

  const std::string path = work_dir() + "/cfg.txt";
  CHECK(sdg_config_save(cfg, path.c_str()) == SDG_OK);
  sdg_config* loaded = nullptr;
  CHECK(sdg_config_load(path.c_str(), &loaded) == SDG_OK);
  CHECK(sdg_config_get(loaded, "schedule.timesteps", buf, sizeof(buf)) == SDG_OK);
  CHECK(std::string(buf) == "25");
  sdg_config_free(loaded);
  sdg_config_free(cfg);
  CHECK(sdg_config_load("/nonexistent/path.txt", &loaded) == SDG_ERR_IO);
}

TEST_CASE("corpus handle round-trips through a directory") {
  const Artifacts& art = artifacts();
  sdg_corpus* corpus = nullptr;
  REQUIRE(sdg_corpus_load(art.corpus_dir.c_str(), &corpus) == SDG_OK);
  CHECK(sdg_corpus_size(corpus) == 130);
  char caption[128];
  CHECK(sdg_corpus_caption(corpus, 0, caption, sizeof(caption)) == SDG_OK);
  CHECK(std::string(caption).find("background") != std::string::npos);
  CHECK(sdg_corpus_caption(corpus, 9999, caption, sizeof(caption)) ==
        SDG_ERR_INVALID_ARGUMENT);
  sdg_corpus_free(corpus);
  CHECK(sdg_corpus_load("/nonexistent/dir", &corpus) == SDG_ERR_IO);
}

TEST_CASE("training commands write checkpoints, logs, and resolved configs") {
  const Artifacts& art = artifacts();
  const std::string base = work_dir();
  CHECK(fs::exists(art.denoiser_ckpt));
  CHECK(fs::exists(base + "/den/train_loss.txt"));
  CHECK(fs::exists(base + "/den/config.resolved.txt"));
  CHECK(fs::exists(art.encoders_ckpt));
  CHECK(fs::exists(art.noised_ckpt));
  // Loss log has one line per step.
  std::ifstream is(base + "/den/train_loss.txt");
  int lines = 0;
  std::string line;
  while (std::getline(is, line)) ++lines;
  CHECK(lines == 3);
}

TEST_CASE("wrong magic is reported as a bad checkpoint") {
  const Artifacts& art = artifacts();
  sdg_config* cfg = tiny_config();
  sdg_models* models = nullptr;
  CHECK(sdg_models_load(cfg, art.encoders_ckpt.c_str(), nullptr, nullptr, &models) ==
        SDG_ERR_BAD_CHECKPOINT);
  CHECK(std::string(sdg_last_error()).find("not a checkpoint") != std::string::npos);
  sdg_config_free(cfg);
}

TEST_CASE("guidance handles validate their inputs") {
  sdg_guidance* g = nullptr;
  CHECK(sdg_guidance_text("a red square", 120.0, &g) == SDG_OK);
  sdg_guidance_free(g);
  CHECK(sdg_guidance_image("/nonexistent.ppm", "content", 100.0, nullptr, 0, &g) ==
        SDG_ERR_IO);
  const Artifacts& art = artifacts();
  const std::string ref = art.corpus_dir + "/img_00000.ppm";
  CHECK(sdg_guidance_image(ref.c_str(), "sideways", 100.0, nullptr, 0, &g) ==
        SDG_ERR_INVALID_ARGUMENT);
  CHECK(std::string(sdg_last_error()).find("sideways") != std::string::npos);
  REQUIRE(sdg_guidance_image(ref.c_str(), "style", 100.0, nullptr, 0, &g) == SDG_OK);
  sdg_guidance* text = nullptr;
  REQUIRE(sdg_guidance_text("a red square", 1.0, &text) == SDG_OK);
  sdg_guidance* children[2] = {text, g};
  const double weights[2] = {120.0, 100.0};
  sdg_guidance* comp = nullptr;
  CHECK(sdg_guidance_composite(children, weights, 2, &comp) == SDG_OK);
  sdg_guidance_free(comp);
  sdg_guidance_free(text);
  sdg_guidance_free(g);
}

TEST_CASE("sampling writes images, a manifest, and the resolved config") {
  const Artifacts& art = artifacts();
  sdg_config* cfg = tiny_config();
  sdg_models* models = nullptr;
  REQUIRE(sdg_models_load(cfg, art.denoiser_ckpt.c_str(), art.encoders_ckpt.c_str(),
                          art.noised_ckpt.c_str(), &models) == SDG_OK);
  const std::string out = work_dir() + "/samples_uncond";
  REQUIRE(sdg_sample_images(cfg, models, nullptr, 42, 2, out.c_str()) == SDG_OK);
  CHECK(fs::exists(out + "/sample_000.ppm"));
  CHECK(fs::exists(out + "/sample_001.ppm"));
  CHECK(fs::exists(out + "/manifest.txt"));
  CHECK(fs::exists(out + "/config.resolved.txt"));
  CHECK(slurp(out + "/manifest.txt").find("none") != std::string::npos);

  // Zero-scale guidance reproduces the unconditional bytes (same seed).
  sdg_guidance* g = nullptr;
  const std::string ref = art.corpus_dir + "/img_00003.ppm";
  REQUIRE(sdg_guidance_image(ref.c_str(), "content", 0.0, nullptr, 0, &g) == SDG_OK);
  const std::string out2 = work_dir() + "/samples_s0";
  REQUIRE(sdg_sample_images(cfg, models, g, 42, 2, out2.c_str()) == SDG_OK);
  CHECK(slurp(out + "/sample_000.ppm") == slurp(out2 + "/sample_000.ppm"));
  CHECK(slurp(out + "/sample_001.ppm") == slurp(out2 + "/sample_001.ppm"));
  CHECK(slurp(out2 + "/manifest.txt").find("image") != std::string::npos);

  // Nonzero scale diverges.
  sdg_guidance* strong = nullptr;
  REQUIRE(sdg_guidance_image(ref.c_str(), "content", 40.0, nullptr, 0, &strong) == SDG_OK);
  const std::string out3 = work_dir() + "/samples_guided";
  REQUIRE(sdg_sample_images(cfg, models, strong, 42, 1, out3.c_str()) == SDG_OK);
  CHECK(slurp(out + "/sample_000.ppm") != slurp(out3 + "/sample_000.ppm"));

  sdg_guidance_free(strong);
  sdg_guidance_free(g);
  sdg_models_free(models);
  sdg_config_free(cfg);
}

TEST_CASE("evaluate consumes a manifest and writes reports") {
  const Artifacts& art = artifacts();
  sdg_config* cfg = tiny_config();
  sdg_models* models = nullptr;
  REQUIRE(sdg_models_load(cfg, art.denoiser_ckpt.c_str(), art.encoders_ckpt.c_str(),
                          art.noised_ckpt.c_str(), &models) == SDG_OK);
  sdg_guidance* g = nullptr;
  const std::string ref = art.corpus_dir + "/img_00005.ppm";
  REQUIRE(sdg_guidance_image(ref.c_str(), "content", 10.0, nullptr, 0, &g) == SDG_OK);
  const std::string gen = work_dir() + "/eval_gen";
  REQUIRE(sdg_sample_images(cfg, models, g, 7, 3, gen.c_str()) == SDG_OK);

  const std::string out = work_dir() + "/eval_out";
  REQUIRE(sdg_evaluate(cfg, models, gen.c_str(), (gen + "/manifest.txt").c_str(),
                       art.corpus_dir.c_str(), out.c_str()) == SDG_OK);
  CHECK(fs::exists(out + "/report.txt"));
  CHECK(fs::exists(out + "/report.kv"));
  const std::string kv = slurp(out + "/report.kv");
  CHECK(kv.find("report.0.top1 = ") != std::string::npos);
  CHECK(kv.find("report.0.diversity = ") != std::string::npos);
  sdg_guidance_free(g);
  sdg_models_free(models);
  sdg_config_free(cfg);
}

TEST_CASE("ablate runs a small sweep through the API") {
  const Artifacts& art = artifacts();
  sdg_config* cfg = tiny_config();
  sdg_models* models = nullptr;
  REQUIRE(sdg_models_load(cfg, art.denoiser_ckpt.c_str(), art.encoders_ckpt.c_str(),
                          art.noised_ckpt.c_str(), &models) == SDG_OK);
  const std::string out = work_dir() + "/ablate_out";
  REQUIRE(sdg_ablate(cfg, models, art.corpus_dir.c_str(), out.c_str()) == SDG_OK);
  const std::string kv = slurp(out + "/report.kv");
  CHECK(kv.find("report.0.scale = 0") != std::string::npos);
  CHECK(kv.find("report.1.scale = 10") != std::string::npos);
  sdg_models_free(models);
  sdg_config_free(cfg);
}

TEST_CASE("null-argument hygiene") {
  CHECK(sdg_config_create(nullptr) == SDG_ERR_INVALID_ARGUMENT);
  CHECK(sdg_corpus_generate(nullptr, nullptr) == SDG_ERR_INVALID_ARGUMENT);
  CHECK(sdg_corpus_size(nullptr) == 0);
  sdg_guidance* g = nullptr;
  CHECK(sdg_guidance_text(nullptr, 1.0, &g) == SDG_ERR_INVALID_ARGUMENT);
}
