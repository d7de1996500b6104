#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dvp/dct.hpp"
#include "support/test_utils.hpp"

using namespace dvp;
using dvp::testing::random_values;

namespace {

std::vector<double> random_image(int n, Rng& rng, double lo = -1, double hi = 1) {
  std::vector<double> v(n);
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return v;
}

NormMatrix unit_norm_matrix(int channels, int d) {
  NormMatrix S;
  S.channels = channels;
  S.side = d;
  S.s.assign(size_t(channels) * d * d, 1.0);
  return S;
}

}  // namespace

TEST_CASE("basis is orthonormal for every side length used") {
  for (int d : {2, 7, 8, 14, 28}) {
    const DctBasis& b = DctBasis::get(d);
    double worst = 0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        double dot = 0;
        for (int k = 0; k < d; ++k)
          dot += b.coeff[i * d + k] * b.coeff[j * d + k];
        worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
      }
    CAPTURE(d);
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("basis entries follow the cosine formula") {
  const int d = 8;
  const DctBasis& b = DctBasis::get(d);
  for (int n = 0; n < d; ++n)
    CHECK(b.coeff[n] == doctest::Approx(std::sqrt(1.0 / d)).epsilon(1e-14));
  for (int k = 1; k < d; ++k)
    for (int n = 0; n < d; ++n)
      CHECK(b.coeff[k * d + n] ==
            doctest::Approx(std::sqrt(2.0 / d) *
                            std::cos(M_PI / d * (n + 0.5) * k)));
}

TEST_CASE("dct2 of the all-ones 2x2 keeps only the DC coefficient") {
  auto y = dct2(std::vector<double>{1, 1, 1, 1}, 2);
  CHECK(y[0] == doctest::Approx(2));
  CHECK(std::abs(y[1]) < 1e-14);
  CHECK(std::abs(y[2]) < 1e-14);
  CHECK(std::abs(y[3]) < 1e-14);
}

TEST_CASE("1-D transform at D=2 is the rotated sum/difference") {
  const DctBasis& b = DctBasis::get(2);
  const double a = 1.3, c = -0.4;
  const double y0 = b.coeff[0] * a + b.coeff[1] * c;
  const double y1 = b.coeff[2] * a + b.coeff[3] * c;
  CHECK(y0 == doctest::Approx((a + c) / std::sqrt(2.0)));
  CHECK(y1 == doctest::Approx((a - c) / std::sqrt(2.0)));
}

TEST_CASE("idct2 inverts dct2") {
  auto x = idct2(std::vector<double>{2, 0, 0, 0}, 2);
  for (double v : x) CHECK(v == doctest::Approx(1.0));

  auto z = idct2(std::vector<double>(16, 0.0), 4);
  for (double v : z) CHECK(v == 0.0);

  Rng rng(9);
  auto img = random_image(64, rng);
  auto back = idct2(dct2(img, 8), 8);
  double worst = 0;
  for (int i = 0; i < 64; ++i) worst = std::max(worst, std::abs(back[i] - img[i]));
  CHECK(worst < 1e-10);
}

TEST_CASE("non-square buffers are rejected") {
  CHECK_THROWS_AS(dct2(std::vector<double>(6, 0.0), 2), ShapeError);
  CHECK_THROWS_AS(idct2(std::vector<double>(6, 0.0), 2), ShapeError);
}

TEST_CASE("compute_norm_matrix applies the zero-replacement rule") {
  auto fill = [](int, double* buf) { std::fill(buf, buf + 4, 1.0); };
  NormMatrix S = compute_norm_matrix(1, 2, 2, 1, fill);
  CHECK(S.at(0, 0, 0) == doctest::Approx(2.0));
  CHECK(S.at(0, 0, 1) == doctest::Approx(1.0));
  CHECK(S.at(0, 1, 0) == doctest::Approx(1.0));
  CHECK(S.at(0, 1, 1) == doctest::Approx(1.0));
}

TEST_CASE("compute_norm_matrix is symmetric under sign flips") {
  Rng rng(13);
  auto img = random_image(36, rng);
  auto fill_one = [&](int, double* buf) { std::copy(img.begin(), img.end(), buf); };
  auto fill_pair = [&](int i, double* buf) {
    for (int j = 0; j < 36; ++j) buf[j] = (i == 0 ? img[j] : -img[j]);
  };
  NormMatrix a = compute_norm_matrix(1, 6, 4, 1, fill_one);
  NormMatrix b = compute_norm_matrix(1, 6, 4, 2, fill_pair);
  for (size_t i = 0; i < a.s.size(); ++i)
    CHECK(a.s[i] == doctest::Approx(b.s[i]));
}

TEST_CASE("compute_norm_matrix rejects an empty dataset") {
  auto fill = [](int, double*) {};
  CHECK_THROWS_AS(compute_norm_matrix(1, 4, 2, 0, fill), UsageError);
}

TEST_CASE("normalized coefficients of the source dataset lie in [-1, 1]") {
  Rng rng(17);
  const int count = 100, D = 8, d = 4;
  std::vector<std::vector<double>> imgs;
  for (int i = 0; i < count; ++i) imgs.push_back(random_image(D * D, rng));
  auto fill = [&](int i, double* buf) {
    std::copy(imgs[i].begin(), imgs[i].end(), buf);
  };
  NormMatrix S = compute_norm_matrix(1, D, d, count, fill);
  for (int i = 0; i < count; ++i) {
    auto u = f_dct(imgs[i], 1, D, S);
    for (double v : u) CHECK(std::abs(v) <= 1.0 + 1e-12);
  }
}

TEST_CASE("f_dct with no crop and unit normalization is the plain DCT") {
  Rng rng(19);
  auto img = random_image(64, rng);
  auto u = f_dct(img, 1, 8, unit_norm_matrix(1, 8));
  auto ref = dct2(img, 8);
  for (int i = 0; i < 64; ++i) CHECK(u[i] == doctest::Approx(ref[i]));
}

TEST_CASE("f_dct of all-ones 2x2 at d=1 with S=[[2]]") {
  NormMatrix S;
  S.channels = 1;
  S.side = 1;
  S.s = {2.0};
  auto u = f_dct(std::vector<double>{1, 1, 1, 1}, 1, 2, S);
  REQUIRE(u.size() == 1);
  CHECK(u[0] == doctest::Approx(1.0));
}

TEST_CASE("f_dct equals the full-DCT-slice-divide composition") {
  Rng rng(23);
  const int D = 8, d = 4;
  auto img = random_image(D * D, rng);
  NormMatrix S;
  S.channels = 1;
  S.side = d;
  S.s = random_image(d * d, rng, 0.5, 2.0);
  auto u = f_dct(img, 1, D, S);
  auto freq = dct2(img, D);
  for (int k = 0; k < d; ++k)
    for (int n = 0; n < d; ++n)
      CHECK(u[k * d + n] == doctest::Approx(freq[k * D + n] / S.at(0, k, n)));
}

TEST_CASE("crop side larger than the image is a usage error") {
  NormMatrix S = unit_norm_matrix(1, 4);
  std::vector<double> img(4, 0.0);
  CHECK_THROWS_AS(f_dct(img, 1, 2, S), UsageError);
  std::vector<double> u(16, 0.0);
  CHECK_THROWS_AS(f_dct_dagger(u, 1, 2, S), UsageError);
}

TEST_CASE("f_dct_dagger inverts f_dct exactly when nothing is cropped") {
  Rng rng(29);
  const int D = 8;
  auto img = random_image(D * D, rng);
  auto fill = [&](int, double* buf) { std::copy(img.begin(), img.end(), buf); };
  NormMatrix S = compute_norm_matrix(1, D, D, 1, fill);
  auto back = f_dct_dagger(f_dct(img, 1, D, S), 1, D, S);
  double worst = 0;
  for (int i = 0; i < D * D; ++i)
    worst = std::max(worst, std::abs(back[i] - img[i]));
  CHECK(worst < 1e-10);
}

TEST_CASE("f_dct_dagger of a zero pseudoinput is zero") {
  NormMatrix S = unit_norm_matrix(1, 3);
  auto ux = f_dct_dagger(std::vector<double>(9, 0.0), 1, 8, S);
  for (double v : ux) CHECK(v == 0.0);
}

TEST_CASE("cropped round trip equals the ideal low-pass reconstruction") {
  Rng rng(31);
  const int D = 8, d = 4;
  auto img = random_image(D * D, rng);
  auto fill = [&](int, double* buf) { std::copy(img.begin(), img.end(), buf); };
  NormMatrix S = compute_norm_matrix(1, D, d, 1, fill);
  auto got = f_dct_dagger(f_dct(img, 1, D, S), 1, D, S);

  // oracle: zero the high-frequency rows/columns directly
  auto freq = dct2(img, D);
  for (int k = 0; k < D; ++k)
    for (int n = 0; n < D; ++n)
      if (k >= d || n >= d) freq[k * D + n] = 0.0;
  auto want = idct2(freq, D);
  for (int i = 0; i < D * D; ++i)
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-10));
}

TEST_CASE("dct_lift matches the per-sample scalar path and is adjoint-correct") {
  Rng rng(37);
  const int D = 6, d = 3, n = 2;
  NormMatrix S;
  S.channels = 1;
  S.side = d;
  S.s = random_image(d * d, rng, 0.5, 2.0);

  auto uv = random_values(n * d * d, rng);
  Tensor u = Tensor::constant({n, 1, d, d}, uv);
  Tensor ux = dct_lift(u, S, D);
  for (int s = 0; s < n; ++s) {
    std::vector<double> one(d * d);
    for (int i = 0; i < d * d; ++i) one[i] = double(uv[s * d * d + i]);
    auto want = f_dct_dagger(one, 1, D, S);
    for (int i = 0; i < D * D; ++i)
      CHECK(double(ux.data()[s * D * D + i]) == doctest::Approx(want[i]));
  }

  auto res = dvp::testing::check_gradients(
      [&](const std::vector<Tensor>& in) {
        Tensor lifted = dct_lift(in[0], S, D);
        return sum_all(mul(lifted, lifted));
      },
      {random_values(n * d * d, rng)}, {{n, 1, d, d}});
  CHECK(res.max_rel_err < 1e-7);
}

TEST_CASE("sample_pseudoinput collapses to f_dct in the small-sigma limit") {
  Rng rng(41);
  const int D = 8, d = 4;
  auto xv = random_values(D * D, rng, 0.0, 1.0);
  Tensor x = Tensor::constant({1, 1, D, D}, xv);
  std::vector<double> xd(xv.begin(), xv.end());
  auto fill = [&](int, double* buf) { std::copy(xd.begin(), xd.end(), buf); };
  NormMatrix S = compute_norm_matrix(1, D, d, 1, fill);

  Tensor logsig = Tensor::leaf({1}, {-30});  // clamps to -10
  Rng sample_rng(1);
  PseudoinputPair pair = sample_pseudoinput(x, S, logsig, sample_rng);
  CHECK(pair.logsig.item() == doctest::Approx(-10));
  auto want = f_dct(xd, 1, D, S);
  for (int i = 0; i < d * d; ++i)
    CHECK(std::abs(double(pair.u.data()[i]) - want[i]) < 1e-3);
}

TEST_CASE("sample_pseudoinput is reproducible and reparameterized") {
  Rng rng(43);
  const int D = 4, d = 2;
  Tensor x = Tensor::constant({2, 1, D, D}, random_values(2 * D * D, rng, 0, 1));
  NormMatrix S = unit_norm_matrix(1, d);
  Tensor logsig = Tensor::leaf({1}, {real(std::log(0.5))});

  Rng a(7), b(7);
  PseudoinputPair pa = sample_pseudoinput(x, S, logsig, a);
  PseudoinputPair pb = sample_pseudoinput(x, S, logsig, b);
  for (int64_t i = 0; i < pa.u.numel(); ++i)
    CHECK(pa.u.data()[i] == pb.u.data()[i]);
  for (int64_t i = 0; i < pa.u_x.numel(); ++i)
    CHECK(pa.u_x.data()[i] == pb.u_x.data()[i]);

  backward(sum_all(mul(pa.u_x, pa.u_x)));
  CHECK(std::abs(double(logsig.grad()[0])) > 0);
}

TEST_CASE("pseudoinput noise has the requested standard deviation") {
  Rng rng(47);
  const int D = 4, d = 2;
  const double sigma = 0.5;
  const int batch = 2500, reps = 10;
  Tensor x = Tensor::constant({1, 1, D, D}, random_values(D * D, rng, 0, 1));
  NormMatrix S = unit_norm_matrix(1, d);
  Tensor logsig = Tensor::constant({1}, {real(std::log(sigma))});

  std::vector<double> mean_u(d * d);
  {
    std::vector<double> xd(x.data().begin(), x.data().end());
    auto m = f_dct(xd, 1, D, S);
    std::copy(m.begin(), m.end(), mean_u.begin());
  }
  Rng sample_rng(3);
  std::vector<real> big(size_t(batch) * D * D);
  for (int s = 0; s < batch; ++s)
    std::copy(x.data().begin(), x.data().end(), big.begin() + size_t(s) * D * D);
  Tensor xb = Tensor::constant({batch, 1, D, D}, big);

  double sq = 0;
  int64_t count = 0;
  for (int r = 0; r < reps; ++r) {
    PseudoinputPair p = sample_pseudoinput(xb, S, logsig, sample_rng);
    for (int s = 0; s < batch; ++s)
      for (int i = 0; i < d * d; ++i) {
        const double dev = double(p.u.data()[s * d * d + i]) - mean_u[i];
        sq += dev * dev;
        ++count;
      }
  }
  const double emp = std::sqrt(sq / double(count));
  CHECK(emp == doctest::Approx(sigma).epsilon(0.01));
}
