#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dvp/tensor.hpp"

namespace dvp {

/// Orthonormal type-II DCT basis for a given side length.
/// Row 0 is sqrt(1/D); row k>0, column n is sqrt(2/D)*cos((pi/D)(n+1/2)k).
struct DctBasis {
  int side = 0;
  std::vector<double> coeff;  // D x D, row-major

  explicit DctBasis(int side_d);
  /// Process-wide cache; bases are immutable once built.
  static const DctBasis& get(int side_d);
};

/// y = C x C^T for one square channel (row-major buffers of side*side).
void dct2(const double* x, int side, double* y);
/// x = C^T y C, the exact inverse of dct2.
void idct2(const double* y, int side, double* x);

std::vector<double> dct2(const std::vector<double>& x, int side);
std::vector<double> idct2(const std::vector<double>& y, int side);

/// Per-frequency normalization: the maximal |DCT(x)| over a dataset,
/// restricted to the kept low-frequency block. Entries below 1e-8 are
/// replaced by 1 so the divide is always defined.
struct NormMatrix {
  int channels = 0;
  int side = 0;  // d
  std::vector<double> s;
  std::string source_digest;

  double at(int c, int k, int n) const { return s[(size_t(c) * side + k) * side + n]; }
};

/// fill_image(i, buf) must write channels*D*D doubles for datapoint i.
NormMatrix compute_norm_matrix(int channels, int image_side, int crop_side,
                               int count,
                               const std::function<void(int, double*)>& fill_image,
                               std::string source_digest = "");

/// DCT, crop to the top-left d x d block, divide by S. In/out are
/// channels*D*D and channels*d*d row-major buffers.
void f_dct(const double* x, int channels, int image_side, const NormMatrix& S,
           double* u);
std::vector<double> f_dct(const std::vector<double>& x, int channels,
                          int image_side, const NormMatrix& S);

/// Multiply by S, zero-pad the high frequencies, inverse DCT.
void f_dct_dagger(const double* u, int channels, int image_side,
                  const NormMatrix& S, double* ux);
std::vector<double> f_dct_dagger(const std::vector<double>& u, int channels,
                                 int image_side, const NormMatrix& S);

/// Batched, differentiable lift of pseudoinputs to the data domain:
/// u [n,c,d,d] -> u_x [n,c,D,D]. Linear, so the backward pass is the
/// adjoint crop(dct2(g)) * S.
Tensor dct_lift(const Tensor& u, const NormMatrix& S, int image_side);

/// Batched f_dct of constant image data (no gradient path).
Tensor dct_pseudoinput_mean(const Tensor& x, const NormMatrix& S);

struct PseudoinputPair {
  Tensor u;       // [n,c,d,d]
  Tensor u_x;     // [n,c,D,D]
  Tensor logsig;  // clamped log sigma, shape [1], on the graph
  double sigma = 0;
};

/// u = f_dct(x) + exp(clamp(logsig, -10, inf)) * eps, lifted to u_x.
/// Reparameterized: gradients reach logsig through u and u_x.
PseudoinputPair sample_pseudoinput(const Tensor& x, const NormMatrix& S,
                                   const Tensor& logsig, Rng& rng);

}  // namespace dvp
