#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dvp/tensor.hpp"

namespace dvp {

/// Byte-intensity image collection (values 0..255), immutable after load.
struct Dataset {
  int count = 0;
  int channels = 1;
  int side = 0;
  std::vector<uint8_t> pixels;  // count * channels * side * side
  std::string split;
  std::string digest;

  const uint8_t* image(int i) const {
    return pixels.data() + size_t(i) * channels * side * side;
  }
  int image_size() const { return channels * side * side; }
  /// Intensities of image i scaled to [0, 1]; buf holds channels*side*side.
  void fill_intensity(int i, double* buf) const;
};

/// Parses big-endian IDX images (magic 0x00000803) with optional labels
/// (magic 0x00000801, count must match). Accepts gzip-compressed files.
Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path = "");
void write_idx(const std::string& path, const Dataset& ds);

Dataset dataset_from_bytes(int count, int side, std::vector<uint8_t> pixels,
                           std::string split = "");
Dataset dataset_head(const Dataset& ds, int count, std::string split = "");
Dataset dataset_tail(const Dataset& ds, int count, std::string split = "");

uint64_t fnv1a64(const uint8_t* data, size_t len, uint64_t h = 0xCBF29CE484222325ull);

/// Each pixel is resampled as Bernoulli(intensity/255); returns a constant
/// tensor [b, c, side, side] of exact zeros and ones.
Tensor binarize_dynamic(const Dataset& ds, const std::vector<int>& indices,
                        Rng& rng);

/// Deterministic single-shape binary images (rectangle outlines and
/// crosses) drawn from a small discrete grid; the draw order is part of the
/// contract so tests can enumerate the support:
///   type ~ U{rect, cross};
///   rect:  w ~ U[3, max(3, side/2)], h likewise, x0 ~ U[0, side-w],
///          y0 ~ U[0, side-h]; the outline is set to 255.
///   cross: arm ~ U[1, max(1, side/4)], cx, cy ~ U[arm, side-1-arm]; the
///          plus shape is set to 255.
Dataset synthetic_shapes(int n, int side, uint64_t seed);

/// Richer multi-shape scenes with graded intensities; the training corpus
/// for desk-scale runs (not enumerable, not used by entropy oracles).
Dataset synthetic_scenes(int n, int side, uint64_t seed);

}  // namespace dvp
