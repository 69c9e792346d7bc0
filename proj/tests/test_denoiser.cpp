#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>

#include "oracle_utils.hpp"
#include "sdg/corpus.hpp"
#include "sdg/denoiser.hpp"

using namespace sdg;

namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig c;
  c.channels = 3;
  c.height = 16;
  c.width = 16;
  c.base_channels = 8;
  c.t_embed_dim = 16;
  c.init_seed = 4;
  return c;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

bool same_params(const ParamStore& a, const ParamStore& b) {
  if (a.entries().size() != b.entries().size()) return false;
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    const auto& [na, ta] = a.entries()[i];
    const auto& [nb, tb] = b.entries()[i];
    if (na != nb || ta.shape() != tb.shape()) return false;
    if (std::memcmp(ta.data().data(), tb.data().data(),
                    ta.data().size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("freshly initialized model predicts exactly zero") {
  EpsilonModel model(tiny_config());
  Rng rng(1);
  Tensor x = Tensor::from_data({3, 16, 16}, oracle::random_vector(3 * 256, rng));
  Tensor eps = model.predict_eps_image(x, 5);
  for (double v : eps.data()) CHECK(v == 0.0);
}

TEST_CASE("prediction is deterministic and shape-checked") {
  EpsilonModel model(tiny_config());
  Rng rng(2);
  Tensor x = Tensor::from_data({1, 3, 16, 16}, oracle::random_vector(3 * 256, rng));
  Tensor a = model.predict_eps(x, 3);
  Tensor b = model.predict_eps(x, 3);
  CHECK(std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(double)) == 0);
  CHECK(a.shape() == x.shape());
  CHECK_THROWS_WITH_AS(model.predict_eps(Tensor::zeros({1, 3, 8, 8}), 1),
                       doctest::Contains("does not match"), Error);
}

TEST_CASE("training rejects an empty corpus") {
  NoiseSchedule sched = build_schedule("linear", 10, 1e-4, 0.02);
  TrainConfig tc;
  tc.steps = 1;
  CHECK_THROWS_WITH_AS(train_denoiser({}, sched, tc, tiny_config()),
                       doctest::Contains("empty"), Error);
}

TEST_CASE("first-step loss is about 1 with a zero-initialized head") {
  NoiseSchedule sched = build_schedule("linear", 20, 1e-4, 0.02);
  CorpusSpec cs;
  cs.image_size = 16;
  cs.count = 4;
  cs.seed = 5;
  CaptionedCorpus corpus = generate_corpus(cs);
  std::vector<Tensor> images;
  for (const auto& item : corpus.items) images.push_back(item.image);
  TrainConfig tc;
  tc.steps = 1;
  tc.batch = 8;
  tc.seed = 6;
  TrainResult result;
  train_denoiser(images, sched, tc, tiny_config(), &result);
  REQUIRE(result.losses.size() == 1);
  // E||eps||^2 / dim = 1; 8 * 768 iid squared normals give SE ~ 0.018.
  CHECK(std::abs(result.losses[0] - 1.0) < 0.15);
}

TEST_CASE("fixed seed reproduces identical final parameters") {
  NoiseSchedule sched = build_schedule("linear", 10, 1e-4, 0.02);
  CorpusSpec cs;
  cs.image_size = 16;
  cs.count = 3;
  cs.seed = 7;
  CaptionedCorpus corpus = generate_corpus(cs);
  std::vector<Tensor> images;
  for (const auto& item : corpus.items) images.push_back(item.image);
  TrainConfig tc;
  tc.steps = 5;
  tc.batch = 2;
  tc.seed = 8;
  EpsilonModel a = train_denoiser(images, sched, tc, tiny_config());
  EpsilonModel b = train_denoiser(images, sched, tc, tiny_config());
  CHECK(same_params(a.params(), b.params()));
}

TEST_CASE("checkpoint save/load round-trips the model") {
  EpsilonModel model(tiny_config());
  // Nudge parameters off their init so the round-trip is non-trivial.
  Rng rng(9);
  for (auto& [name, t] : model.params().mutable_entries()) {
    std::vector<double> v(t.data().begin(), t.data().end());
    for (double& x : v) x += 0.01 * rng.normal();
    t.set_data(v);
  }
  const std::string path = temp_path("sdg_model_rt.ckpt");
  model.params().round_trip_f32();
  model.save(path);
  EpsilonModel loaded = EpsilonModel::load(path);
  CHECK(loaded.config().height == 16);
  CHECK(same_params(model.params(), loaded.params()));
}

TEST_CASE("resume reproduces the uninterrupted training trajectory") {
  NoiseSchedule sched = build_schedule("linear", 10, 1e-4, 0.02);
  CorpusSpec cs;
  cs.image_size = 16;
  cs.count = 3;
  cs.seed = 10;
  CaptionedCorpus corpus = generate_corpus(cs);
  std::vector<Tensor> images;
  for (const auto& item : corpus.items) images.push_back(item.image);

  const std::string full_path = temp_path("sdg_full.ckpt");
  const std::string half_path = temp_path("sdg_half.ckpt");

  // Uninterrupted run: 10 steps with a checkpoint write (and f32 commit) at 5.
  TrainConfig full;
  full.steps = 10;
  full.batch = 2;
  full.seed = 11;
  full.checkpoint_every = 5;
  full.checkpoint_path = full_path;
  train_denoiser(images, sched, full, tiny_config());

  // Interrupted run: 5 steps, then resume to 10 in a second call.
  TrainConfig half = full;
  half.steps = 5;
  half.checkpoint_path = half_path;
  train_denoiser(images, sched, half, tiny_config());
  TrainConfig rest = full;
  rest.steps = 10;
  rest.checkpoint_path = half_path;
  resume_denoiser(half_path, images, sched, rest);

  std::ifstream fa(full_path, std::ios::binary), fb(half_path, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
}

TEST_CASE("overfitting a single image drives the loss down and recovers eps") {
  NoiseSchedule sched = build_schedule("linear", 50, 1e-4, 0.02);
  CorpusSpec cs;
  cs.image_size = 16;
  cs.count = 1;
  cs.seed = 12;
  CaptionedCorpus corpus = generate_corpus(cs);
  std::vector<Tensor> images{corpus.items[0].image};
  DenoiserConfig dc = tiny_config();
  dc.base_channels = 16;
  TrainConfig tc;
  tc.steps = 2000;
  tc.batch = 1;
  tc.lr = 1e-3;
  tc.seed = 13;
  TrainResult result;
  EpsilonModel model = train_denoiser(images, sched, tc, dc, &result);
  double tail = 0.0;
  for (std::size_t i = result.losses.size() - 100; i < result.losses.size(); ++i)
    tail += result.losses[i];
  tail /= 100.0;
  CHECK(tail < 0.05);

  // Mid-trajectory eps recovery on a fresh noised copy.
  Rng rng(14);
  Tensor eps = Tensor::from_data({3, 16, 16}, rng.normal_vector(3 * 256));
  const int t = 25;
  Tensor x_t = q_sample(images[0], t, eps, sched);
  Tensor pred = model.predict_eps_image(x_t, t);
  double mse = 0.0;
  for (std::size_t i = 0; i < eps.data().size(); ++i) {
    const double d = pred.data()[i] - eps.data()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(eps.data().size());
  CHECK(mse < 0.1);
}
