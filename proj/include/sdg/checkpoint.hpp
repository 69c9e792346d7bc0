#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sdg/tensor.hpp"

namespace sdg {

// Checkpoint container: magic string, then little-endian u32 record count,
// then per named parameter: u32 name length + bytes, u32 rank, u32 extents,
// row-major 32-bit float payload.
inline constexpr const char* kDenoiserMagic = "SDGCKPT1";
inline constexpr const char* kEncoderMagic = "SDGENC1";

void save_checkpoint(const std::string& path, const std::string& magic,
                     const std::vector<std::pair<std::string, Tensor>>& params);

std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path,
                                                            const std::string& magic);

}  // namespace sdg
