#include "sdg/image_io.hpp"

#include <cmath>
#include <fstream>
#include <vector>

namespace sdg {

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.shape().size() != 3 || image.shape()[0] != 3) {
    fail(ErrorCode::invalid_argument,
         "ppm: expected [3,H,W] image, got " + shape_str(image.shape()));
  }
  const int H = image.shape()[1], W = image.shape()[2];
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) {
    fail(ErrorCode::io, "ppm: cannot open '" + path + "' for writing");
  }
  os << "P6\n" << W << " " << H << "\n255\n";
  const auto v = image.data();
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<unsigned char> row(static_cast<std::size_t>(W) * 3);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double val = v[static_cast<std::size_t>(c) * plane +
                             static_cast<std::size_t>(y) * W + x];
        long q = std::lround((val + 1.0) * 127.5);
        if (q < 0) q = 0;
        if (q > 255) q = 255;
        row[static_cast<std::size_t>(x) * 3 + static_cast<std::size_t>(c)] =
            static_cast<unsigned char>(q);
      }
    }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) {
    fail(ErrorCode::io, "ppm: write failed for '" + path + "'");
  }
}

Tensor read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    fail(ErrorCode::io, "ppm: cannot open '" + path + "'");
  }
  std::string magic;
  is >> magic;
  if (magic != "P6") {
    fail(ErrorCode::io, "ppm: '" + path + "' is not a binary PPM (P6)");
  }
  int W = 0, H = 0, maxval = 0;
  is >> W >> H >> maxval;
  if (!is || W <= 0 || H <= 0 || maxval != 255) {
    fail(ErrorCode::io, "ppm: unsupported header in '" + path + "'");
  }
  is.get();  // single whitespace after header
  std::vector<unsigned char> raw(static_cast<std::size_t>(W) * H * 3);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    fail(ErrorCode::io, "ppm: truncated pixel data in '" + path + "'");
  }
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<double> data(3 * plane);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) {
        const unsigned char q =
            raw[(static_cast<std::size_t>(y) * W + x) * 3 + static_cast<std::size_t>(c)];
        data[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * W + x] =
            static_cast<double>(q) / 127.5 - 1.0;
      }
    }
  }
  return Tensor::from_data({3, H, W}, std::move(data));
}

}  // namespace sdg
