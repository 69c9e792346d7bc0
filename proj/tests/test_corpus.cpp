#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "sdg/corpus.hpp"
#include "sdg/image_io.hpp"

using namespace sdg;

namespace {

CorpusSpec small_spec() {
  CorpusSpec s;
  s.image_size = 16;
  s.count = 40;
  s.seed = 21;
  s.position_jitter = 2.0;
  return s;
}

std::vector<char> read_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("corpus generation is deterministic") {
  CaptionedCorpus a = generate_corpus(small_spec());
  CaptionedCorpus b = generate_corpus(small_spec());
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.items[i].caption == b.items[i].caption);
    CHECK(std::memcmp(a.items[i].image.data().data(), b.items[i].image.data().data(),
                      a.items[i].image.data().size() * sizeof(double)) == 0);
  }
}

TEST_CASE("caption template and bijection") {
  AttributeRecord rec{ShapeKind::square, ColorKind::red, SizeKind::large,
                      BackgroundKind::dark};
  CHECK(caption_for(rec) == "a large red square on a dark background");
  for (int sh = 0; sh < 3; ++sh)
    for (int co = 0; co < 4; ++co)
      for (int si = 0; si < 2; ++si)
        for (int bg = 0; bg < 2; ++bg) {
          AttributeRecord a{static_cast<ShapeKind>(sh), static_cast<ColorKind>(co),
                            static_cast<SizeKind>(si), static_cast<BackgroundKind>(bg)};
          auto parsed = parse_caption(caption_for(a));
          REQUIRE(parsed.has_value());
          CHECK(*parsed == a);
        }
  CHECK_FALSE(parse_caption("not a caption").has_value());
}

TEST_CASE("attribute marginals are approximately uniform at count 4000") {
  CorpusSpec spec;
  spec.image_size = 16;  // rasterization size does not affect the marginals
  spec.count = 4000;
  spec.seed = 17;
  CaptionedCorpus corpus = generate_corpus(spec);
  int color_counts[4] = {0, 0, 0, 0};
  int shape_counts[3] = {0, 0, 0};
  for (const auto& item : corpus.items) {
    ++color_counts[static_cast<int>(item.attrs.color)];
    ++shape_counts[static_cast<int>(item.attrs.shape)];
  }
  for (int c = 0; c < 4; ++c) {
    const double freq = color_counts[c] / 4000.0;
    CHECK(freq >= 0.2);
    CHECK(freq <= 0.3);
  }
  for (int s = 0; s < 3; ++s) {
    const double freq = shape_counts[s] / 4000.0;
    CHECK(freq >= 1.0 / 3.0 * 0.8);
    CHECK(freq <= 1.0 / 3.0 * 1.2);
  }
}

TEST_CASE("images stay in range and contain one foreground shape") {
  CaptionedCorpus corpus = generate_corpus(small_spec());
  for (const auto& item : corpus.items) {
    const double bg = 2.0 * background_gray(item.attrs.background) - 1.0;
    int foreground = 0;
    const auto v = item.image.data();
    for (double x : v) {
      CHECK(x >= -1.0);
      CHECK(x <= 1.0);
    }
    const std::size_t plane = v.size() / 3;
    for (std::size_t i = 0; i < plane; ++i) {
      if (std::abs(v[i] - bg) > 0.25) ++foreground;
    }
    CHECK(foreground > 4);                                   // shape present
    CHECK(foreground < static_cast<int>(plane) * 3 / 4);     // background visible
  }
}

TEST_CASE("holdout split is disjoint, exhaustive, deterministic") {
  CaptionedCorpus corpus = generate_corpus(small_spec());
  SUBCASE("even split") {
    CorpusSpec spec = small_spec();
    spec.count = 100;
    CaptionedCorpus big = generate_corpus(spec);
    auto [train, test] = holdout_split(big, 0.5, 9);
    CHECK(train.size() == 50);
    CHECK(test.size() == 50);
  }
  auto [train, test] = holdout_split(corpus, 0.25, 9);
  CHECK(train.size() + test.size() == corpus.size());
  std::set<const void*> seen;
  for (const auto& item : train.items) seen.insert(item.image.node().get());
  for (const auto& item : test.items) {
    CHECK(seen.count(item.image.node().get()) == 0);  // disjoint
    seen.insert(item.image.node().get());
  }
  CHECK(seen.size() == corpus.size());  // exhaustive
  auto [train2, test2] = holdout_split(corpus, 0.25, 9);
  for (std::size_t i = 0; i < test.size(); ++i)
    CHECK(test.items[i].image.node().get() == test2.items[i].image.node().get());
  CHECK_THROWS_WITH_AS(holdout_split(corpus, 0.001, 9), doctest::Contains("degenerate"),
                       Error);
  CHECK_THROWS_AS(holdout_split(corpus, 1.5, 9), Error);
}

TEST_CASE("corpus saves and reloads through PPM files byte-identically") {
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "sdg_corpus_test").string();
  fs::remove_all(dir);
  CorpusSpec spec = small_spec();
  spec.count = 6;
  CaptionedCorpus corpus = generate_corpus(spec);
  save_corpus(corpus, dir);
  CaptionedCorpus loaded = load_corpus(dir);
  REQUIRE(loaded.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(loaded.items[i].caption == corpus.items[i].caption);
    CHECK(loaded.items[i].attrs == corpus.items[i].attrs);
  }
  // Re-saving the corpus reproduces every file byte for byte.
  const std::string dir2 = (fs::temp_directory_path() / "sdg_corpus_test2").string();
  fs::remove_all(dir2);
  save_corpus(corpus, dir2);
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto other = fs::path(dir2) / entry.path().filename();
    CHECK(read_file(entry.path()) == read_file(other));
  }
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("ppm mapping is the documented quantization") {
  namespace fs = std::filesystem;
  Tensor img = Tensor::from_data({3, 1, 2}, {-1.0, 1.0, 0.0, 0.5, -0.2, 0.996});
  const std::string path = (fs::temp_directory_path() / "sdg_ppm_test.ppm").string();
  write_ppm(path, img);
  std::ifstream is(path, std::ios::binary);
  std::string header;
  int w, h, maxval;
  is >> header >> w >> h >> maxval;
  CHECK(header == "P6");
  CHECK(w == 2);
  CHECK(h == 1);
  CHECK(maxval == 255);
  is.get();
  unsigned char px[6];
  is.read(reinterpret_cast<char*>(px), 6);
  // interleaved RGB per pixel; channel-planar source: pixel0 = (-1, 0, -0.2)
  CHECK(px[0] == 0);    // round((-1+1)*127.5)
  CHECK(px[1] == 128);  // round((0+1)*127.5) = round(127.5) -> 128 (away from zero)
  CHECK(px[2] == 102);  // round((0.8)*127.5) = 102
  CHECK(px[3] == 255);
  CHECK(px[4] == 191);  // round(1.5*127.5) = round(191.25)
  CHECK(px[5] == 254);  // round(1.996*127.5) = round(254.49)
  Tensor back = read_ppm(path);
  CHECK(back.shape() == Shape{3, 1, 2});
  // write(read(file)) reproduces the file exactly
  const std::string path2 = (fs::temp_directory_path() / "sdg_ppm_test2.ppm").string();
  write_ppm(path2, back);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
}
