#pragma once

#include <string>

#include "sdg/tensor.hpp"

namespace sdg {

// Binary PPM (P6, maxval 255). Pixel values map from [-1,1] by
// v = round((x+1) * 127.5) clamped to [0,255]; reading maps back by
// x = v / 127.5 - 1. Images are [C,H,W] tensors with C == 3.
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

}  // namespace sdg
