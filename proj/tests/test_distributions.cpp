#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dvp/distributions.hpp"
#include "support/test_utils.hpp"

using namespace dvp;
using dvp::testing::random_values;

namespace {

double normal_logpdf(double x, double mu, double var) {
  return -0.5 * (std::log(2.0 * M_PI * var) + (x - mu) * (x - mu) / var);
}

}  // namespace

TEST_CASE("make_gaussian clamps logvar into [-10, 10]") {
  DiagGaussian g = make_gaussian(Tensor::zeros({3}),
                                 Tensor::constant({3}, {-50, 0, 50}));
  CHECK(g.logvar.data()[0] == doctest::Approx(-10));
  CHECK(g.logvar.data()[1] == doctest::Approx(0));
  CHECK(g.logvar.data()[2] == doctest::Approx(10));
}

TEST_CASE("rsample at temperature zero returns the mean exactly") {
  Rng rng(1);
  DiagGaussian g = make_gaussian(Tensor::constant({4}, {1, -2, 3, 0.5}),
                                 Tensor::zeros({4}));
  Tensor z = rsample(g, 0, rng);
  for (int i = 0; i < 4; ++i) CHECK(z.data()[i] == g.mu.data()[i]);
  CHECK_THROWS_AS(rsample(g, real(-0.1), rng), UsageError);
}

TEST_CASE("rsample of a standard normal has unit variance") {
  const int n = 100000;
  Rng rng(5);
  DiagGaussian g = make_gaussian(Tensor::zeros({n}), Tensor::zeros({n}));
  Tensor z = rsample(g, 1, rng);
  double sq = 0;
  for (real v : z.data()) sq += double(v) * double(v);
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("rsample is reproducible under a fixed seed") {
  DiagGaussian g = make_gaussian(Tensor::zeros({8}), Tensor::zeros({8}));
  Rng a(11), b(11);
  Tensor za = rsample(g, 1, a), zb = rsample(g, 1, b);
  for (int i = 0; i < 8; ++i) CHECK(za.data()[i] == zb.data()[i]);
}

TEST_CASE("KL of identical distributions is zero") {
  Rng rng(3);
  Tensor mu = Tensor::constant({2, 3}, random_values(6, rng));
  Tensor lv = Tensor::constant({2, 3}, random_values(6, rng, -1, 1));
  DiagGaussian q = make_gaussian(mu, lv);
  Tensor kl = kl_per_sample(q, q);
  for (real v : kl.data()) CHECK(std::abs(double(v)) < 1e-12);
}

TEST_CASE("KL analytic value for unit-gap means") {
  DiagGaussian q = make_gaussian(Tensor::constant({1, 1}, {1}), Tensor::zeros({1, 1}));
  DiagGaussian p = make_gaussian(Tensor::zeros({1, 1}), Tensor::zeros({1, 1}));
  CHECK(kl_per_sample(q, p).data()[0] == doctest::Approx(0.5));
}

TEST_CASE("KL matches a Monte-Carlo estimate of E_q[log q - log p]") {
  Rng rng(17);
  const int dims = 4;
  std::vector<double> mq, lq, mp, lp;
  for (int i = 0; i < dims; ++i) {
    mq.push_back(rng.uniform() * 2 - 1);
    lq.push_back(rng.uniform() * 2 - 1);
    mp.push_back(rng.uniform() * 2 - 1);
    lp.push_back(rng.uniform() * 2 - 1);
  }
  DiagGaussian q = make_gaussian(
      Tensor::constant({1, dims}, std::vector<real>(mq.begin(), mq.end())),
      Tensor::constant({1, dims}, std::vector<real>(lq.begin(), lq.end())));
  DiagGaussian p = make_gaussian(
      Tensor::constant({1, dims}, std::vector<real>(mp.begin(), mp.end())),
      Tensor::constant({1, dims}, std::vector<real>(lp.begin(), lp.end())));
  const double analytic = double(kl_per_sample(q, p).data()[0]);

  const int n = 1000000;
  std::vector<double> draws(n);
  Rng mc(23);
  for (int s = 0; s < n; ++s) {
    double acc = 0;
    for (int i = 0; i < dims; ++i) {
      const double vq = std::exp(lq[i]);
      const double z = mq[i] + std::sqrt(vq) * mc.normal();
      acc += normal_logpdf(z, mq[i], vq) - normal_logpdf(z, mp[i], std::exp(lp[i]));
    }
    draws[s] = acc;
  }
  const double mean = dvp::testing::mean_of(draws);
  const double se = dvp::testing::stddev_of(draws) / std::sqrt(double(n));
  CHECK(std::abs(mean - analytic) < 3 * se + 1e-9);
}

TEST_CASE("KL is nonnegative over random parameters") {
  Rng rng(29);
  for (int trial = 0; trial < 10000; ++trial) {
    DiagGaussian q = make_gaussian(
        Tensor::constant({1, 2}, random_values(2, rng)),
        Tensor::constant({1, 2}, random_values(2, rng, -3, 3)));
    DiagGaussian p = make_gaussian(
        Tensor::constant({1, 2}, random_values(2, rng)),
        Tensor::constant({1, 2}, random_values(2, rng, -3, 3)));
    CHECK(double(kl_per_sample(q, p).data()[0]) >= -1e-12);
  }
}

TEST_CASE("KL gradients match finite differences for all four parameters") {
  Rng rng(31);
  Shape shape{2, 3};
  auto res = dvp::testing::check_gradients(
      [](const std::vector<Tensor>& in) {
        DiagGaussian q{in[0], in[1]};
        DiagGaussian p{in[2], in[3]};
        return mean_batch(kl_per_sample(q, p));
      },
      {random_values(6, rng), random_values(6, rng, -1, 1),
       random_values(6, rng), random_values(6, rng, -1, 1)},
      {shape, shape, shape, shape});
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("entropy of a standard Gaussian") {
  Tensor logsig = Tensor::scalar(0);
  CHECK(gaussian_entropy(logsig, 1).item() == doctest::Approx(1.418939).epsilon(1e-6));
  CHECK(gaussian_entropy(logsig, 49).item() == doctest::Approx(69.528).epsilon(1e-4));
}

TEST_CASE("entropy equals -E[log density] by Monte Carlo") {
  for (double sigma : {0.1, 1.0, 3.0}) {
    Tensor logsig = Tensor::scalar(real(std::log(sigma)));
    const double analytic = double(gaussian_entropy(logsig, 1).item());
    const int n = 200000;
    Rng mc(37);
    std::vector<double> draws(n);
    for (int s = 0; s < n; ++s) {
      const double z = sigma * mc.normal();
      draws[s] = -normal_logpdf(z, 0, sigma * sigma);
    }
    const double mean = dvp::testing::mean_of(draws);
    const double se = dvp::testing::stddev_of(draws) / std::sqrt(double(n));
    CAPTURE(sigma);
    CHECK(std::abs(mean - analytic) < 3 * se);
  }
}

TEST_CASE("bernoulli_log_prob special values") {
  BernoulliLikelihood flat{Tensor::zeros({1, 1})};
  CHECK(bernoulli_log_prob(flat, Tensor::full({1, 1}, 1)).data()[0] ==
        doctest::Approx(std::log(0.5)));

  BernoulliLikelihood sure{Tensor::full({1, 1}, 20)};
  CHECK(std::abs(double(bernoulli_log_prob(sure, Tensor::full({1, 1}, 1)).data()[0])) <
        1e-8);
}

TEST_CASE("bernoulli_log_prob matches the naive formula") {
  Rng rng(41);
  const int pixels = 10;
  auto logits = random_values(pixels, rng, -4, 4);
  std::vector<real> x(pixels);
  for (auto& v : x) v = rng.uniform() < 0.5 ? real(0) : real(1);

  BernoulliLikelihood lik{Tensor::constant({1, pixels}, logits)};
  const double got = double(bernoulli_log_prob(lik, Tensor::constant({1, pixels}, x)).data()[0]);

  double want = 0;
  for (int i = 0; i < pixels; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-double(logits[i])));
    want += double(x[i]) * std::log(p) + (1 - double(x[i])) * std::log(1 - p);
  }
  CHECK(std::abs(got - want) < 1e-9);
}

TEST_CASE("bernoulli_log_prob rejects non-binary targets") {
  BernoulliLikelihood lik{Tensor::zeros({1, 2})};
  CHECK_THROWS_AS(bernoulli_log_prob(lik, Tensor::constant({1, 2}, {real(0.5), 1})),
                  UsageError);
}

TEST_CASE("gaussian_log_prob agrees with the scalar formula") {
  Rng rng(43);
  auto mu = random_values(5, rng);
  auto lv = random_values(5, rng, -1, 1);
  auto x = random_values(5, rng);
  DiagGaussian g{Tensor::constant({1, 5}, mu), Tensor::constant({1, 5}, lv)};
  const double got = double(gaussian_log_prob(g, Tensor::constant({1, 5}, x)).data()[0]);
  double want = 0;
  for (int i = 0; i < 5; ++i)
    want += normal_logpdf(double(x[i]), double(mu[i]), std::exp(double(lv[i])));
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
}
