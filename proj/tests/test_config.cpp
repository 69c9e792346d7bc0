#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "sdg/config.hpp"

using namespace sdg;

TEST_CASE("defaults carry the documented guidance scales") {
  RunConfig c = RunConfig::defaults();
  CHECK(c.get_double("guidance.scale_image") == 100.0);
  CHECK(c.get_double("guidance.scale_text") == 120.0);
  CHECK(c.get_int("schedule.timesteps") == 200);
  CHECK(c.get("schedule.kind") == "linear");
  CHECK(c.get_int("corpus.count") == 4000);
  CHECK(c.get_int("eval.negatives") == 99);
}

TEST_CASE("unknown and missing keys are rejected by name") {
  RunConfig c = RunConfig::defaults();
  CHECK_THROWS_WITH_AS(c.set("corpus.cout", "10"), doctest::Contains("corpus.cout"), Error);
  CHECK_THROWS_WITH_AS(c.get("corpus.nonexistent"), doctest::Contains("corpus.nonexistent"),
                       Error);
  CHECK_THROWS_AS(c.apply_line("just some words"), Error);
}

TEST_CASE("typed getters validate their values") {
  RunConfig c = RunConfig::defaults();
  c.set("denoiser.steps", "abc");
  CHECK_THROWS_WITH_AS(c.get_int("denoiser.steps"), doctest::Contains("denoiser.steps"),
                       Error);
  c.set("sampler.clamp_final", "maybe");
  CHECK_THROWS_AS(c.get_bool("sampler.clamp_final"), Error);
  c.set("guidance.layers", "0,1,2");
  CHECK(c.get_int_list("guidance.layers") == std::vector<int>{0, 1, 2});
  c.set("ablate.scales", "0, 30, 100");
  CHECK(c.get_double_list("ablate.scales") == std::vector<double>{0.0, 30.0, 100.0});
}

TEST_CASE("load resolves overrides on top of a full schema and round-trips") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "sdg_cfg_test.txt").string();
  {
    std::ofstream os(path, std::ios::trunc);
    os << "# comment lines and blanks are skipped\n\n";
    os << "schedule.timesteps = 50\n";
    os << "corpus.count=12\n";
  }
  RunConfig c = RunConfig::load(path);
  CHECK(c.get_int("schedule.timesteps") == 50);
  CHECK(c.get_int("corpus.count") == 12);
  CHECK(c.get_double("guidance.scale_text") == 120.0);  // untouched default resolved

  const std::string out = (fs::temp_directory_path() / "sdg_cfg_out.txt").string();
  c.save(out);
  RunConfig c2 = RunConfig::load(out);
  CHECK(c2.to_string() == c.to_string());  // every key persisted, no hidden defaults
}

TEST_CASE("unknown key in a config file is rejected naming the key") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "sdg_cfg_bad.txt").string();
  {
    std::ofstream os(path, std::ios::trunc);
    os << "sampler.sede = 4\n";
  }
  CHECK_THROWS_WITH_AS(RunConfig::load(path), doctest::Contains("sampler.sede"), Error);
}

TEST_CASE("typed views build consistent objects") {
  RunConfig c = RunConfig::defaults();
  c.set("corpus.image_size", "16");
  c.set("schedule.timesteps", "20");
  NoiseSchedule s = c.schedule();
  CHECK(s.timesteps() == 20);
  CHECK(c.denoiser_config().height == 16);
  CHECK(c.encoder_config().image_size == 16);
  CHECK(c.train_config().steps == 1500);
  CHECK(c.pretrain_config().tau == 0.07);
  CHECK(c.finetune_config().seed != c.pretrain_config().seed);
  CHECK(c.sampler_config().seed == 7);
  CHECK(c.gram_norm() == GramNorm::chw);
  CHECK(c.ablation_config().kind == GuidanceKind::content);
}
