#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dvp/tensor.hpp"

namespace dvp {

/// Minimal 8-bit grayscale PNG writer (zlib-compressed, filter 0).
void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& pixels);

/// Packs a batch [n,1,side,side] of values in [0,1] into a grid image with a
/// 1-pixel separator; images fill rows left to right.
struct GrayGrid {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;
};
GrayGrid make_grid(const std::vector<Tensor>& rows_of_batches, int columns);

void write_grid_png(const std::string& path,
                    const std::vector<Tensor>& rows_of_batches, int columns);

}  // namespace dvp
