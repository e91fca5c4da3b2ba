#pragma once

#include <string>

#include "talkgen/tensor.hpp"

namespace talkgen {

// Frames are [3,H,W] doubles in [-1,1]; files are binary PPM (P6).
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

// Quantize to the 8-bit grid the PPM writer uses (useful for byte-level
// determinism checks without touching the filesystem).
Tensor quantize_8bit(const Tensor& image);

}  // namespace talkgen
