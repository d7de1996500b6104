#include "dvp/dct.hpp"

#include <Eigen/Core>
#include <cmath>
#include <map>
#include <mutex>

namespace dvp {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<Mat>;
using CMapM = Eigen::Map<const Mat>;

void check_square(int side, const char* op) {
  if (side < 1) throw ShapeError(std::string(op) + ": side must be >= 1");
}

}  // namespace

DctBasis::DctBasis(int side_d) : side(side_d), coeff(size_t(side_d) * side_d) {
  check_square(side_d, "DctBasis");
  const double d = double(side_d);
  for (int n = 0; n < side_d; ++n) coeff[n] = std::sqrt(1.0 / d);
  for (int k = 1; k < side_d; ++k)
    for (int n = 0; n < side_d; ++n)
      coeff[size_t(k) * side_d + n] =
          std::sqrt(2.0 / d) * std::cos(M_PI / d * (n + 0.5) * k);
}

const DctBasis& DctBasis::get(int side_d) {
  static std::mutex mu;
  static std::map<int, DctBasis> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(side_d);
  if (it == cache.end()) it = cache.emplace(side_d, DctBasis(side_d)).first;
  return it->second;
}

void dct2(const double* x, int side, double* y) {
  const DctBasis& b = DctBasis::get(side);
  CMapM C(b.coeff.data(), side, side), X(x, side, side);
  MapM Y(y, side, side);
  Y.noalias() = C * X * C.transpose();
}

void idct2(const double* y, int side, double* x) {
  const DctBasis& b = DctBasis::get(side);
  CMapM C(b.coeff.data(), side, side), Y(y, side, side);
  MapM X(x, side, side);
  X.noalias() = C.transpose() * Y * C;
}

std::vector<double> dct2(const std::vector<double>& x, int side) {
  if (int64_t(x.size()) != int64_t(side) * side)
    throw ShapeError("dct2: input is not a square side*side channel");
  std::vector<double> y(x.size());
  dct2(x.data(), side, y.data());
  return y;
}

std::vector<double> idct2(const std::vector<double>& y, int side) {
  if (int64_t(y.size()) != int64_t(side) * side)
    throw ShapeError("idct2: input is not a square side*side channel");
  std::vector<double> x(y.size());
  idct2(y.data(), side, x.data());
  return x;
}

NormMatrix compute_norm_matrix(int channels, int image_side, int crop_side,
                               int count,
                               const std::function<void(int, double*)>& fill_image,
                               std::string source_digest) {
  if (count < 1) throw UsageError("compute_norm_matrix: dataset is empty");
  if (crop_side > image_side || crop_side < 1)
    throw UsageError("compute_norm_matrix: crop side must be in [1, D]");
  NormMatrix S;
  S.channels = channels;
  S.side = crop_side;
  S.source_digest = std::move(source_digest);
  S.s.assign(size_t(channels) * crop_side * crop_side, 0.0);

  const int dd = image_side * image_side;
  std::vector<double> img(size_t(channels) * dd);
  std::vector<double> freq(dd);
  for (int i = 0; i < count; ++i) {
    fill_image(i, img.data());
    for (int c = 0; c < channels; ++c) {
      dct2(img.data() + size_t(c) * dd, image_side, freq.data());
      double* sc = S.s.data() + size_t(c) * crop_side * crop_side;
      for (int k = 0; k < crop_side; ++k)
        for (int n = 0; n < crop_side; ++n) {
          const double a = std::abs(freq[size_t(k) * image_side + n]);
          double& slot = sc[size_t(k) * crop_side + n];
          if (a > slot) slot = a;
        }
    }
  }
  // Frequencies absent from the data keep the transform as identity.
  for (double& v : S.s)
    if (v < 1e-8) v = 1.0;
  return S;
}

void f_dct(const double* x, int channels, int image_side, const NormMatrix& S,
           double* u) {
  const int d = S.side;
  if (d > image_side) throw UsageError("f_dct: crop side exceeds image side");
  const int dd = image_side * image_side;
  std::vector<double> freq(dd);
  for (int c = 0; c < channels; ++c) {
    dct2(x + size_t(c) * dd, image_side, freq.data());
    const double* sc = S.s.data() + size_t(c) * d * d;
    double* uc = u + size_t(c) * d * d;
    for (int k = 0; k < d; ++k)
      for (int n = 0; n < d; ++n)
        uc[size_t(k) * d + n] =
            freq[size_t(k) * image_side + n] / sc[size_t(k) * d + n];
  }
}

std::vector<double> f_dct(const std::vector<double>& x, int channels,
                          int image_side, const NormMatrix& S) {
  if (int64_t(x.size()) != int64_t(channels) * image_side * image_side)
    throw ShapeError("f_dct: input size does not match channels*D*D");
  std::vector<double> u(size_t(channels) * S.side * S.side);
  f_dct(x.data(), channels, image_side, S, u.data());
  return u;
}

void f_dct_dagger(const double* u, int channels, int image_side,
                  const NormMatrix& S, double* ux) {
  const int d = S.side;
  if (d > image_side) throw UsageError("f_dct_dagger: crop side exceeds image side");
  const int dd = image_side * image_side;
  std::vector<double> freq(dd);
  for (int c = 0; c < channels; ++c) {
    std::fill(freq.begin(), freq.end(), 0.0);
    const double* sc = S.s.data() + size_t(c) * d * d;
    const double* uc = u + size_t(c) * d * d;
    for (int k = 0; k < d; ++k)
      for (int n = 0; n < d; ++n)
        freq[size_t(k) * image_side + n] =
            uc[size_t(k) * d + n] * sc[size_t(k) * d + n];
    idct2(freq.data(), image_side, ux + size_t(c) * dd);
  }
}

std::vector<double> f_dct_dagger(const std::vector<double>& u, int channels,
                                 int image_side, const NormMatrix& S) {
  if (int64_t(u.size()) != int64_t(channels) * S.side * S.side)
    throw ShapeError("f_dct_dagger: input size does not match channels*d*d");
  std::vector<double> ux(size_t(channels) * image_side * image_side);
  f_dct_dagger(u.data(), channels, image_side, S, ux.data());
  return ux;
}

Tensor dct_lift(const Tensor& u, const NormMatrix& S, int image_side) {
  if (u.shape().size() != 4) throw ShapeError("dct_lift: expects [n,c,d,d]");
  const int n = u.shape()[0], c = u.shape()[1];
  if (u.shape()[1] != S.channels || u.shape()[2] != S.side ||
      u.shape()[3] != S.side)
    throw ShapeError("dct_lift: pseudoinput extents do not match S");
  const int d = S.side, D = image_side;
  if (d > D) throw UsageError("dct_lift: crop side exceeds image side");

  const int cdd = c * d * d;
  const int cDD = c * D * D;
  std::vector<real> out(size_t(n) * cDD);
  {
    std::vector<double> ubuf(cdd), xbuf(cDD);
    for (int s = 0; s < n; ++s) {
      const real* src = u.data().data() + int64_t(s) * cdd;
      for (int i = 0; i < cdd; ++i) ubuf[i] = double(src[i]);
      f_dct_dagger(ubuf.data(), c, D, S, xbuf.data());
      real* dst = out.data() + int64_t(s) * cDD;
      for (int i = 0; i < cDD; ++i) dst[i] = real(xbuf[i]);
    }
  }
  Tensor res = Tensor::constant({n, c, D, D}, std::move(out));
  if (!grad_enabled() || !u.requires_grad()) return res;

  Node* un = u.node();
  Node* rn = res.node();
  rn->requires_grad = true;
  rn->parents = {u.ptr()};
  const NormMatrix* sp = &S;  // NormMatrix is immutable after construction
  rn->backward_fn = [un, sp, n, c, d, D, cdd, cDD](Node& self) {
    un->ensure_grad();
    std::vector<double> gbuf(D * D), freq(D * D);
    for (int s = 0; s < n; ++s) {
      const real* g = self.grad.data() + int64_t(s) * cDD;
      real* gu = un->grad.data() + int64_t(s) * cdd;
      for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < D * D; ++i) gbuf[i] = double(g[ch * D * D + i]);
        dct2(gbuf.data(), D, freq.data());
        const double* sc = sp->s.data() + size_t(ch) * d * d;
        for (int k = 0; k < d; ++k)
          for (int m = 0; m < d; ++m)
            gu[ch * d * d + k * d + m] +=
                real(freq[size_t(k) * D + m] * sc[size_t(k) * d + m]);
      }
    }
  };
  return res;
}

Tensor dct_pseudoinput_mean(const Tensor& x, const NormMatrix& S) {
  if (x.shape().size() != 4) throw ShapeError("dct_pseudoinput_mean: expects [n,c,D,D]");
  const int n = x.shape()[0], c = x.shape()[1], D = x.shape()[2];
  if (c != S.channels) throw ShapeError("dct_pseudoinput_mean: channel mismatch");
  const int d = S.side;
  const int cdd = c * d * d;
  const int cDD = c * D * D;
  std::vector<real> out(size_t(n) * cdd);
  std::vector<double> xbuf(cDD), ubuf(cdd);
  for (int s = 0; s < n; ++s) {
    const real* src = x.data().data() + int64_t(s) * cDD;
    for (int i = 0; i < cDD; ++i) xbuf[i] = double(src[i]);
    f_dct(xbuf.data(), c, D, S, ubuf.data());
    real* dst = out.data() + int64_t(s) * cdd;
    for (int i = 0; i < cdd; ++i) dst[i] = real(ubuf[i]);
  }
  return Tensor::constant({n, c, d, d}, std::move(out));
}

PseudoinputPair sample_pseudoinput(const Tensor& x, const NormMatrix& S,
                                   const Tensor& logsig, Rng& rng) {
  if (logsig.numel() != 1) throw ShapeError("sample_pseudoinput: logsig must be scalar");
  if (!std::isfinite(double(logsig.data()[0])))
    throw UsageError("sample_pseudoinput: logsig must be finite");
  PseudoinputPair pair;
  Tensor mean = dct_pseudoinput_mean(x, S);
  pair.logsig = clamp(logsig, real(-10), real(1e30));
  Tensor eps = Tensor::randn(mean.shape(), rng);
  pair.u = add(mean, scale(eps, exp(pair.logsig)));
  pair.u_x = dct_lift(pair.u, S, x.shape()[2]);
  pair.sigma = std::exp(double(pair.logsig.data()[0]));
  return pair;
}

}  // namespace dvp
