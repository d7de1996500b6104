#include "dvp/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

namespace dvp {

namespace {

void put_be32(std::vector<uint8_t>& b, uint32_t v) {
  b.push_back(uint8_t(v >> 24));
  b.push_back(uint8_t(v >> 16));
  b.push_back(uint8_t(v >> 8));
  b.push_back(uint8_t(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4],
               const std::vector<uint8_t>& data) {
  put_be32(out, uint32_t(data.size()));
  const size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + type_at, uInt(4 + data.size()));
  put_be32(out, crc);
}

}  // namespace

void write_png_gray(const std::string& path, int width, int height,
                    const std::vector<uint8_t>& pixels) {
  if (int64_t(pixels.size()) != int64_t(width) * height)
    throw UsageError("write_png_gray: pixel buffer does not match extents");

  // filter byte 0 in front of every scanline
  std::vector<uint8_t> raw;
  raw.reserve(size_t(height) * (width + 1));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), pixels.begin() + int64_t(y) * width,
               pixels.begin() + int64_t(y + 1) * width);
  }
  uLongf comp_len = compressBound(uLong(raw.size()));
  std::vector<uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), uLong(raw.size()), 9) != Z_OK)
    throw FormatError("write_png_gray: compression failed");
  comp.resize(comp_len);

  std::vector<uint8_t> out = {137, 80, 78, 71, 13, 10, 26, 10};
  std::vector<uint8_t> ihdr;
  put_be32(ihdr, uint32_t(width));
  put_be32(ihdr, uint32_t(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // grayscale
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", comp);
  put_chunk(out, "IEND", {});

  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw FormatError("cannot write " + path);
  const size_t n = std::fwrite(out.data(), 1, out.size(), f);
  std::fclose(f);
  if (n != out.size()) throw FormatError("short write to " + path);
}

GrayGrid make_grid(const std::vector<Tensor>& rows_of_batches, int columns) {
  if (rows_of_batches.empty() || columns < 1)
    throw UsageError("make_grid: nothing to draw");
  const int side = rows_of_batches[0].shape()[3];
  int image_rows = 0;
  for (const auto& t : rows_of_batches) {
    if (t.shape().size() != 4 || t.shape()[1] != 1 || t.shape()[2] != side ||
        t.shape()[3] != side)
      throw UsageError("make_grid: expects [n,1,side,side] batches of equal side");
    image_rows += (t.shape()[0] + columns - 1) / columns;
  }

  GrayGrid grid;
  grid.width = columns * side + (columns + 1);
  grid.height = image_rows * side + (image_rows + 1);
  grid.pixels.assign(size_t(grid.width) * grid.height, 96);  // separator gray

  int row = 0;
  for (const auto& t : rows_of_batches) {
    const int n = t.shape()[0];
    for (int i = 0; i < n; ++i) {
      const int r = row + i / columns;
      const int c = i % columns;
      const int y0 = 1 + r * (side + 1);
      const int x0 = 1 + c * (side + 1);
      const real* img = t.data().data() + int64_t(i) * side * side;
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
          const double v = std::clamp(double(img[y * side + x]), 0.0, 1.0);
          grid.pixels[size_t(y0 + y) * grid.width + x0 + x] =
              uint8_t(std::lround(v * 255.0));
        }
    }
    row += (n + columns - 1) / columns;
  }
  return grid;
}

void write_grid_png(const std::string& path,
                    const std::vector<Tensor>& rows_of_batches, int columns) {
  GrayGrid grid = make_grid(rows_of_batches, columns);
  write_png_gray(path, grid.width, grid.height, grid.pixels);
}

}  // namespace dvp
