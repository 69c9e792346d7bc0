#include "sdg/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace sdg {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    fail(ErrorCode::bad_checkpoint, "checkpoint: truncated file '" + path + "'");
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float get_f32(std::istream& is, const std::string& path) {
  const std::uint32_t bits = get_u32(is, path);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& magic,
                     const std::vector<std::pair<std::string, Tensor>>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) {
    fail(ErrorCode::io, "checkpoint: cannot open '" + path + "' for writing");
  }
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.shape().size()));
    for (int e : t.shape()) put_u32(os, static_cast<std::uint32_t>(e));
    for (double v : t.data()) put_f32(os, static_cast<float>(v));
  }
  if (!os) {
    fail(ErrorCode::io, "checkpoint: write failed for '" + path + "'");
  }
}

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path,
                                                            const std::string& magic) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    fail(ErrorCode::io, "checkpoint: cannot open '" + path + "'");
  }
  std::string got(magic.size(), '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(magic.size())) || got != magic) {
    fail(ErrorCode::bad_checkpoint,
         "not a checkpoint: '" + path + "' does not start with magic '" + magic + "'");
  }
  const std::uint32_t count = get_u32(is, path);
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (std::uint32_t r = 0; r < count; ++r) {
    const std::uint32_t name_len = get_u32(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) {
      fail(ErrorCode::bad_checkpoint, "checkpoint: truncated file '" + path + "'");
    }
    const std::uint32_t rank = get_u32(is, path);
    Shape shape;
    std::int64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t e = get_u32(is, path);
      shape.push_back(static_cast<int>(e));
      n *= e;
    }
    std::vector<double> data(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      data[static_cast<std::size_t>(i)] = static_cast<double>(get_f32(is, path));
    }
    out.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
  }
  return out;
}

}  // namespace sdg
