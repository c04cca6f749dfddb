#pragma once

#include <filesystem>

#include "vclab/tensor.hpp"

namespace vclab {

// Images are HWC float tensors with values in [0, 1]. Files are binary PPM
// (P6, maxval 255). Written pixels are quantized with round-half-away, so a
// tensor that already sits on the 8-bit grid survives a save/load round trip
// bit for bit.
uint8_t quantize8(float v);
void quantize_image(Tensor<float>& image);

std::string encode_ppm(const Tensor<float>& image);
void write_ppm(const std::filesystem::path& path, const Tensor<float>& image);
Tensor<float> read_ppm(const std::filesystem::path& path);

}  // namespace vclab
