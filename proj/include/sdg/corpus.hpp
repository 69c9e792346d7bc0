#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sdg/tensor.hpp"

namespace sdg {

enum class ShapeKind { square = 0, circle = 1, triangle = 2 };
enum class ColorKind { red = 0, green = 1, blue = 2, yellow = 3 };
enum class SizeKind { small = 0, large = 1 };
enum class BackgroundKind { dark = 0, light = 1 };

struct AttributeRecord {
  ShapeKind shape = ShapeKind::square;
  ColorKind color = ColorKind::red;
  SizeKind size = SizeKind::small;
  BackgroundKind background = BackgroundKind::dark;

  bool operator==(const AttributeRecord&) const = default;
};

// Caption from the fixed template "a <size> <color> <shape> on a
// <background> background".
std::string caption_for(const AttributeRecord& attrs);
std::optional<AttributeRecord> parse_caption(const std::string& caption);

const char* shape_name(ShapeKind s);
const char* color_name(ColorKind c);
const char* size_name(SizeKind s);
const char* background_name(BackgroundKind b);

// Foreground color prototype in [0,1] RGB, used by rasterization and by
// hue-classification checks.
std::array<double, 3> color_rgb(ColorKind c);
double background_gray(BackgroundKind b);

struct CorpusSpec {
  int image_size = 32;
  int count = 4000;
  std::uint64_t seed = 17;
  double position_jitter = 4.0;  // pixels, uniform in +/- jitter
  double rotation_jitter = 0.3;  // radians, squares and triangles only
};

struct CorpusItem {
  Tensor image;  // [3,S,S], values in [-1,1]
  AttributeRecord attrs;
  std::string caption;
};

struct CaptionedCorpus {
  CorpusSpec spec;
  std::vector<CorpusItem> items;

  std::size_t size() const { return items.size(); }
};

// Deterministic given spec.seed; attributes drawn uniformly per image,
// shapes rasterized with 3x3 supersampling.
CaptionedCorpus generate_corpus(const CorpusSpec& spec);

// Renders a single image from explicit attributes and jitter (used for
// reference-image construction in tests and tools).
Tensor render_shape_image(int image_size, const AttributeRecord& attrs, double dx,
                          double dy, double rotation);

// Disjoint, exhaustive, deterministic split; the second element holds
// round(fraction * n) items.
std::pair<CaptionedCorpus, CaptionedCorpus> holdout_split(const CaptionedCorpus& corpus,
                                                          double fraction,
                                                          std::uint64_t seed);

// Directory layout: img_%05d.ppm plus metadata.txt with one record per line:
// index, attribute words, caption (tab separated).
void save_corpus(const CaptionedCorpus& corpus, const std::string& dir);
CaptionedCorpus load_corpus(const std::string& dir);

}  // namespace sdg
