#include "sdg/corpus.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sdg/image_io.hpp"
#include "sdg/rng.hpp"

namespace sdg {

namespace fs = std::filesystem;

const char* shape_name(ShapeKind s) {
  switch (s) {
    case ShapeKind::square: return "square";
    case ShapeKind::circle: return "circle";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

const char* color_name(ColorKind c) {
  switch (c) {
    case ColorKind::red: return "red";
    case ColorKind::green: return "green";
    case ColorKind::blue: return "blue";
    case ColorKind::yellow: return "yellow";
  }
  return "?";
}

const char* size_name(SizeKind s) {
  return s == SizeKind::small ? "small" : "large";
}

const char* background_name(BackgroundKind b) {
  return b == BackgroundKind::dark ? "dark" : "light";
}

std::array<double, 3> color_rgb(ColorKind c) {
  switch (c) {
    case ColorKind::red: return {0.85, 0.10, 0.10};
    case ColorKind::green: return {0.10, 0.75, 0.15};
    case ColorKind::blue: return {0.15, 0.20, 0.85};
    case ColorKind::yellow: return {0.90, 0.85, 0.10};
  }
  return {0, 0, 0};
}

double background_gray(BackgroundKind b) {
  return b == BackgroundKind::dark ? 0.15 : 0.85;
}

std::string caption_for(const AttributeRecord& a) {
  std::ostringstream os;
  os << "a " << size_name(a.size) << ' ' << color_name(a.color) << ' '
     << shape_name(a.shape) << " on a " << background_name(a.background) << " background";
  return os.str();
}

std::optional<AttributeRecord> parse_caption(const std::string& caption) {
  std::istringstream is(caption);
  std::vector<std::string> words;
  for (std::string w; is >> w;) words.push_back(w);
  // a <size> <color> <shape> on a <background> background
  if (words.size() != 8 || words[0] != "a" || words[4] != "on" || words[5] != "a" ||
      words[7] != "background") {
    return std::nullopt;
  }
  AttributeRecord a;
  bool ok = false;
  for (int i = 0; i < 2; ++i) {
    if (words[1] == size_name(static_cast<SizeKind>(i))) {
      a.size = static_cast<SizeKind>(i);
      ok = true;
    }
  }
  if (!ok) return std::nullopt;
  ok = false;
  for (int i = 0; i < 4; ++i) {
    if (words[2] == color_name(static_cast<ColorKind>(i))) {
      a.color = static_cast<ColorKind>(i);
      ok = true;
    }
  }
  if (!ok) return std::nullopt;
  ok = false;
  for (int i = 0; i < 3; ++i) {
    if (words[3] == shape_name(static_cast<ShapeKind>(i))) {
      a.shape = static_cast<ShapeKind>(i);
      ok = true;
    }
  }
  if (!ok) return std::nullopt;
  ok = false;
  for (int i = 0; i < 2; ++i) {
    if (words[6] == background_name(static_cast<BackgroundKind>(i))) {
      a.background = static_cast<BackgroundKind>(i);
      ok = true;
    }
  }
  if (!ok) return std::nullopt;
  return a;
}

namespace {

bool inside_shape(ShapeKind kind, double x, double y, double radius) {
  switch (kind) {
    case ShapeKind::square:
      return std::max(std::abs(x), std::abs(y)) <= radius;
    case ShapeKind::circle:
      return x * x + y * y <= radius * radius;
    case ShapeKind::triangle: {
      // Equilateral triangle, one vertex up, inscribed in radius.
      const double v0x = 0.0, v0y = -radius;
      const double v1x = radius * 0.8660254037844386, v1y = radius * 0.5;
      const double v2x = -v1x, v2y = v1y;
      auto edge = [&](double ax, double ay, double bx, double by) {
        return (bx - ax) * (y - ay) - (by - ay) * (x - ax);
      };
      const double e0 = edge(v0x, v0y, v1x, v1y);
      const double e1 = edge(v1x, v1y, v2x, v2y);
      const double e2 = edge(v2x, v2y, v0x, v0y);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
  }
  return false;
}

}  // namespace

Tensor render_shape_image(int image_size, const AttributeRecord& attrs, double dx,
                          double dy, double rotation) {
  const int S = image_size;
  const double cx = S / 2.0 + dx;
  const double cy = S / 2.0 + dy;
  const double radius = (attrs.size == SizeKind::small ? 0.15 : 0.28) * S;
  const double cosr = std::cos(rotation), sinr = std::sin(rotation);
  const auto fg = color_rgb(attrs.color);
  const double bg = background_gray(attrs.background);

  const std::size_t plane = static_cast<std::size_t>(S) * S;
  std::vector<double> data(3 * plane);
  constexpr int kSub = 3;  // 3x3 supersampling for anti-aliased edges
  for (int py = 0; py < S; ++py) {
    for (int px = 0; px < S; ++px) {
      int hits = 0;
      for (int sy = 0; sy < kSub; ++sy) {
        for (int sx = 0; sx < kSub; ++sx) {
          const double sample_x = px + (sx + 0.5) / kSub - cx;
          const double sample_y = py + (sy + 0.5) / kSub - cy;
          // rotate into the shape frame
          const double rx = cosr * sample_x + sinr * sample_y;
          const double ry = -sinr * sample_x + cosr * sample_y;
          if (inside_shape(attrs.shape, rx, ry, radius)) ++hits;
        }
      }
      const double cov = static_cast<double>(hits) / (kSub * kSub);
      for (int c = 0; c < 3; ++c) {
        const double v01 = bg * (1.0 - cov) + fg[static_cast<std::size_t>(c)] * cov;
        data[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(py) * S + px] =
            2.0 * v01 - 1.0;
      }
    }
  }
  return Tensor::from_data({3, S, S}, std::move(data));
}

CaptionedCorpus generate_corpus(const CorpusSpec& spec) {
  if (spec.count < 1) {
    fail(ErrorCode::invalid_argument, "corpus: count must be >= 1");
  }
  if (spec.image_size < 8) {
    fail(ErrorCode::invalid_argument, "corpus: image size must be >= 8");
  }
  CaptionedCorpus corpus;
  corpus.spec = spec;
  corpus.items.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) {
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(i)));
    AttributeRecord a;
    a.shape = static_cast<ShapeKind>(rng.uniform_int(0, 2));
    a.color = static_cast<ColorKind>(rng.uniform_int(0, 3));
    a.size = static_cast<SizeKind>(rng.uniform_int(0, 1));
    a.background = static_cast<BackgroundKind>(rng.uniform_int(0, 1));
    const double dx = rng.uniform(-spec.position_jitter, spec.position_jitter);
    const double dy = rng.uniform(-spec.position_jitter, spec.position_jitter);
    const double rot = (a.shape == ShapeKind::circle)
                           ? 0.0
                           : rng.uniform(-spec.rotation_jitter, spec.rotation_jitter);
    CorpusItem item;
    item.image = render_shape_image(spec.image_size, a, dx, dy, rot);
    item.attrs = a;
    item.caption = caption_for(a);
    corpus.items.push_back(std::move(item));
  }
  return corpus;
}

std::pair<CaptionedCorpus, CaptionedCorpus> holdout_split(const CaptionedCorpus& corpus,
                                                          double fraction,
                                                          std::uint64_t seed) {
  const std::size_t n = corpus.items.size();
  if (!(fraction > 0.0) || !(fraction < 1.0)) {
    fail(ErrorCode::invalid_argument, "holdout_split: fraction must be in (0,1)");
  }
  const auto test_count =
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (test_count == 0 || test_count >= n) {
    fail(ErrorCode::invalid_argument,
         "holdout_split: degenerate split sizes (" + std::to_string(n - test_count) + "/" +
             std::to_string(test_count) + ")");
  }
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(mix_seed(seed, 0x5917));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
  CaptionedCorpus train, test;
  train.spec = corpus.spec;
  test.spec = corpus.spec;
  for (std::size_t i = 0; i < n; ++i) {
    (i < test_count ? test : train).items.push_back(corpus.items[idx[i]]);
  }
  return {std::move(train), std::move(test)};
}

void save_corpus(const CaptionedCorpus& corpus, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream meta(fs::path(dir) / "metadata.txt", std::ios::trunc);
  if (!meta) {
    fail(ErrorCode::io, "corpus: cannot write metadata in '" + dir + "'");
  }
  char name[32];
  for (std::size_t i = 0; i < corpus.items.size(); ++i) {
    const CorpusItem& item = corpus.items[i];
    std::snprintf(name, sizeof(name), "img_%05zu.ppm", i);
    write_ppm((fs::path(dir) / name).string(), item.image);
    meta << i << '\t' << shape_name(item.attrs.shape) << ' ' << color_name(item.attrs.color)
         << ' ' << size_name(item.attrs.size) << ' '
         << background_name(item.attrs.background) << '\t' << item.caption << '\n';
  }
  meta << std::flush;
  if (!meta) {
    fail(ErrorCode::io, "corpus: metadata write failed in '" + dir + "'");
  }
}

CaptionedCorpus load_corpus(const std::string& dir) {
  std::ifstream meta(fs::path(dir) / "metadata.txt");
  if (!meta) {
    fail(ErrorCode::io, "corpus: cannot open metadata in '" + dir + "'");
  }
  CaptionedCorpus corpus;
  char name[32];
  std::string line;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = line.find('\t', tab1 + 1);
    if (tab1 == std::string::npos || tab2 == std::string::npos) {
      fail(ErrorCode::io, "corpus: malformed metadata line '" + line + "'");
    }
    CorpusItem item;
    item.caption = line.substr(tab2 + 1);
    const auto attrs = parse_caption(item.caption);
    if (!attrs) {
      fail(ErrorCode::io, "corpus: cannot parse caption '" + item.caption + "'");
    }
    item.attrs = *attrs;
    const std::size_t index = std::stoul(line.substr(0, tab1));
    std::snprintf(name, sizeof(name), "img_%05zu.ppm", index);
    item.image = read_ppm((fs::path(dir) / name).string());
    corpus.items.push_back(std::move(item));
  }
  if (corpus.items.empty()) {
    fail(ErrorCode::io, "corpus: no records in '" + dir + "'");
  }
  corpus.spec.count = static_cast<int>(corpus.items.size());
  corpus.spec.image_size = corpus.items.front().image.shape()[1];
  return corpus;
}

}  // namespace sdg
