#include "dvp/data.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <sstream>

namespace dvp {

namespace {

constexpr uint32_t kImagesMagic = 0x00000803;
constexpr uint32_t kLabelsMagic = 0x00000801;

std::vector<uint8_t> read_file_maybe_gz(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw FormatError("cannot open " + path);
  std::vector<uint8_t> out;
  uint8_t buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
  const bool bad = n < 0;
  gzclose(f);
  if (bad) throw FormatError("decompression failed for " + path);
  return out;
}

uint32_t read_be32(const std::vector<uint8_t>& b, size_t off, const std::string& path) {
  if (off + 4 > b.size()) {
    std::ostringstream os;
    os << path << ": truncated at byte offset " << off;
    throw FormatError(os.str());
  }
  return (uint32_t(b[off]) << 24) | (uint32_t(b[off + 1]) << 16) |
         (uint32_t(b[off + 2]) << 8) | uint32_t(b[off + 3]);
}

void write_be32(std::vector<uint8_t>& b, uint32_t v) {
  b.push_back(uint8_t(v >> 24));
  b.push_back(uint8_t(v >> 16));
  b.push_back(uint8_t(v >> 8));
  b.push_back(uint8_t(v));
}

std::string digest_of(int count, int side, const std::vector<uint8_t>& pixels) {
  uint64_t h = fnv1a64(nullptr, 0);
  uint8_t dims[8] = {uint8_t(count >> 24), uint8_t(count >> 16), uint8_t(count >> 8),
                     uint8_t(count),       uint8_t(side >> 8),   uint8_t(side),
                     0,                    0};
  h = fnv1a64(dims, sizeof(dims), h);
  h = fnv1a64(pixels.data(), pixels.size(), h);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
  return buf;
}

}  // namespace

uint64_t fnv1a64(const uint8_t* data, size_t len, uint64_t h) {
  for (size_t i = 0; i < len; ++i) {
    h ^= data[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

void Dataset::fill_intensity(int i, double* buf) const {
  const uint8_t* img = image(i);
  for (int j = 0; j < image_size(); ++j) buf[j] = double(img[j]) / 255.0;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const std::vector<uint8_t> raw = read_file_maybe_gz(images_path);
  const uint32_t magic = read_be32(raw, 0, images_path);
  if (magic != kImagesMagic) {
    std::ostringstream os;
    os << images_path << ": bad magic 0x" << std::hex << magic
       << " at byte offset 0 (want 0x803)";
    throw FormatError(os.str());
  }
  const uint32_t count = read_be32(raw, 4, images_path);
  const uint32_t rows = read_be32(raw, 8, images_path);
  const uint32_t cols = read_be32(raw, 12, images_path);
  if (rows != cols) throw FormatError(images_path + ": only square images are supported");
  const size_t want = size_t(count) * rows * cols;
  if (raw.size() != 16 + want) {
    std::ostringstream os;
    os << images_path << ": payload has " << raw.size() - 16 << " bytes at offset 16, want "
       << want;
    throw FormatError(os.str());
  }

  if (!labels_path.empty()) {
    const std::vector<uint8_t> lraw = read_file_maybe_gz(labels_path);
    const uint32_t lmagic = read_be32(lraw, 0, labels_path);
    if (lmagic != kLabelsMagic) {
      std::ostringstream os;
      os << labels_path << ": bad magic 0x" << std::hex << lmagic
         << " at byte offset 0 (want 0x801)";
      throw FormatError(os.str());
    }
    const uint32_t lcount = read_be32(lraw, 4, labels_path);
    if (lcount != count)
      throw FormatError(labels_path + ": label count does not match image count");
    if (lraw.size() != 8 + lcount)
      throw FormatError(labels_path + ": truncated label payload");
  }

  Dataset ds;
  ds.count = int(count);
  ds.side = int(rows);
  ds.channels = 1;
  ds.pixels.assign(raw.begin() + 16, raw.end());
  ds.digest = digest_of(ds.count, ds.side, ds.pixels);
  return ds;
}

void write_idx(const std::string& path, const Dataset& ds) {
  if (ds.channels != 1) throw UsageError("write_idx: only single-channel data");
  std::vector<uint8_t> out;
  write_be32(out, kImagesMagic);
  write_be32(out, uint32_t(ds.count));
  write_be32(out, uint32_t(ds.side));
  write_be32(out, uint32_t(ds.side));
  out.insert(out.end(), ds.pixels.begin(), ds.pixels.end());
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw FormatError("cannot write " + path);
  const size_t n = std::fwrite(out.data(), 1, out.size(), f);
  std::fclose(f);
  if (n != out.size()) throw FormatError("short write to " + path);
}

Dataset dataset_from_bytes(int count, int side, std::vector<uint8_t> pixels,
                           std::string split) {
  if (int64_t(pixels.size()) != int64_t(count) * side * side)
    throw UsageError("dataset_from_bytes: pixel buffer does not match extents");
  Dataset ds;
  ds.count = count;
  ds.side = side;
  ds.channels = 1;
  ds.pixels = std::move(pixels);
  ds.split = std::move(split);
  ds.digest = digest_of(ds.count, ds.side, ds.pixels);
  return ds;
}

Dataset dataset_head(const Dataset& ds, int count, std::string split) {
  if (count < 1 || count > ds.count) throw UsageError("dataset_head: bad count");
  std::vector<uint8_t> px(ds.pixels.begin(),
                          ds.pixels.begin() + size_t(count) * ds.image_size());
  return dataset_from_bytes(count, ds.side, std::move(px), std::move(split));
}

Dataset dataset_tail(const Dataset& ds, int count, std::string split) {
  if (count < 1 || count > ds.count) throw UsageError("dataset_tail: bad count");
  std::vector<uint8_t> px(ds.pixels.end() - size_t(count) * ds.image_size(),
                          ds.pixels.end());
  return dataset_from_bytes(count, ds.side, std::move(px), std::move(split));
}

Tensor binarize_dynamic(const Dataset& ds, const std::vector<int>& indices,
                        Rng& rng) {
  const int b = int(indices.size());
  const int m = ds.image_size();
  std::vector<real> out(size_t(b) * m);
  for (int i = 0; i < b; ++i) {
    const uint8_t* img = ds.image(indices[i]);
    real* dst = out.data() + size_t(i) * m;
    for (int j = 0; j < m; ++j) {
      const double p = double(img[j]) / 255.0;
      dst[j] = rng.uniform() < p ? real(1) : real(0);
    }
  }
  return Tensor::constant({b, ds.channels, ds.side, ds.side}, std::move(out));
}

Dataset synthetic_shapes(int n, int side, uint64_t seed) {
  if (side < 4) throw UsageError("synthetic_shapes: side must be >= 4");
  Rng rng(seed);
  const int m = side * side;
  std::vector<uint8_t> px(size_t(n) * m, 0);
  const int smin = 3, smax = std::max(3, side / 2);
  const int amax = std::max(1, side / 4);
  for (int i = 0; i < n; ++i) {
    uint8_t* img = px.data() + size_t(i) * m;
    if (rng.uniform_int(2) == 0) {
      const int w = smin + rng.uniform_int(smax - smin + 1);
      const int h = smin + rng.uniform_int(smax - smin + 1);
      const int x0 = rng.uniform_int(side - w + 1);
      const int y0 = rng.uniform_int(side - h + 1);
      for (int x = x0; x < x0 + w; ++x) {
        img[y0 * side + x] = 255;
        img[(y0 + h - 1) * side + x] = 255;
      }
      for (int y = y0; y < y0 + h; ++y) {
        img[y * side + x0] = 255;
        img[y * side + x0 + w - 1] = 255;
      }
    } else {
      const int arm = 1 + rng.uniform_int(amax);
      const int cx = arm + rng.uniform_int(side - 2 * arm);
      const int cy = arm + rng.uniform_int(side - 2 * arm);
      for (int d = -arm; d <= arm; ++d) {
        img[cy * side + cx + d] = 255;
        img[(cy + d) * side + cx] = 255;
      }
    }
  }
  Dataset ds = dataset_from_bytes(n, side, std::move(px), "synthetic");
  return ds;
}

Dataset synthetic_scenes(int n, int side, uint64_t seed) {
  if (side < 8) throw UsageError("synthetic_scenes: side must be >= 8");
  Rng rng(seed);
  const int m = side * side;
  std::vector<uint8_t> px(size_t(n) * m, 0);
  const uint8_t levels[4] = {96, 160, 224, 255};
  for (int i = 0; i < n; ++i) {
    uint8_t* img = px.data() + size_t(i) * m;
    const int shapes = 1 + rng.uniform_int(3);
    for (int s = 0; s < shapes; ++s) {
      const uint8_t v = levels[rng.uniform_int(4)];
      switch (rng.uniform_int(4)) {
        case 0: {  // filled rectangle
          const int w = 3 + rng.uniform_int(side / 2 - 2);
          const int h = 3 + rng.uniform_int(side / 2 - 2);
          const int x0 = rng.uniform_int(side - w + 1);
          const int y0 = rng.uniform_int(side - h + 1);
          for (int y = y0; y < y0 + h; ++y)
            for (int x = x0; x < x0 + w; ++x)
              img[y * side + x] = std::max(img[y * side + x], v);
          break;
        }
        case 1: {  // rectangle outline
          const int w = 4 + rng.uniform_int(side / 2 - 3);
          const int h = 4 + rng.uniform_int(side / 2 - 3);
          const int x0 = rng.uniform_int(side - w + 1);
          const int y0 = rng.uniform_int(side - h + 1);
          for (int x = x0; x < x0 + w; ++x) {
            img[y0 * side + x] = std::max(img[y0 * side + x], v);
            img[(y0 + h - 1) * side + x] = std::max(img[(y0 + h - 1) * side + x], v);
          }
          for (int y = y0; y < y0 + h; ++y) {
            img[y * side + x0] = std::max(img[y * side + x0], v);
            img[y * side + x0 + w - 1] = std::max(img[y * side + x0 + w - 1], v);
          }
          break;
        }
        case 2: {  // cross
          const int arm = 2 + rng.uniform_int(std::max(1, side / 4 - 1));
          const int cx = arm + rng.uniform_int(side - 2 * arm);
          const int cy = arm + rng.uniform_int(side - 2 * arm);
          for (int d = -arm; d <= arm; ++d) {
            img[cy * side + cx + d] = std::max(img[cy * side + cx + d], v);
            img[(cy + d) * side + cx] = std::max(img[(cy + d) * side + cx], v);
          }
          break;
        }
        default: {  // line segment, horizontal or vertical
          const int len = 4 + rng.uniform_int(side / 2);
          if (rng.uniform_int(2) == 0) {
            const int y = rng.uniform_int(side);
            const int x0 = rng.uniform_int(side - len + 1);
            for (int x = x0; x < x0 + len; ++x)
              img[y * side + x] = std::max(img[y * side + x], v);
          } else {
            const int x = rng.uniform_int(side);
            const int y0 = rng.uniform_int(side - len + 1);
            for (int y = y0; y < y0 + len; ++y)
              img[y * side + x] = std::max(img[y * side + x], v);
          }
        }
      }
    }
  }
  return dataset_from_bytes(n, side, std::move(px), "synthetic-scenes");
}

}  // namespace dvp
