#pragma once

#include <string>

#include "core/tensor.hpp"

namespace avloc::dataio {

// Binary PPM/PGM, the lossless formats used for all image artifacts.
// Tensors are (3,H,W) / (H,W) with values in [0,1], quantized to 8 bits.
void write_ppm(const std::string& path, const Tensor& img);
Tensor read_ppm(const std::string& path);
void write_pgm(const std::string& path, const Tensor& gray);

Tensor bilinear_resize_chw(const Tensor& img, int out_h, int out_w);

}  // namespace avloc::dataio
