#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dvp/tensor.hpp"
#include "support/test_utils.hpp"

using namespace dvp;
using dvp::testing::check_gradients;
using dvp::testing::GraphBuilder;
using dvp::testing::random_values;

TEST_CASE("matmul identity and hand-computed product") {
  Tensor I2 = Tensor::constant({2, 2}, {1, 0, 0, 1});
  Tensor A = Tensor::constant({2, 2}, {1, 2, 3, 4});
  Tensor P = matmul(I2, A);
  for (int i = 0; i < 4; ++i) CHECK(P.data()[i] == doctest::Approx(A.data()[i]));

  Tensor B = Tensor::constant({2, 2}, {1, 0, 0, 0});
  Tensor C = Tensor::constant({2, 2}, {0, 1, 1, 0});
  Tensor BC = matmul(B, C);
  CHECK(BC.data()[0] == doctest::Approx(0));
  CHECK(BC.data()[1] == doctest::Approx(1));
  CHECK(BC.data()[2] == doctest::Approx(0));
  CHECK(BC.data()[3] == doctest::Approx(0));
}

TEST_CASE("matmul shape mismatch raises a dimension error") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(7);
  auto res = check_gradients(
      [](const std::vector<Tensor>& in) {
        return sum_all(matmul(in[0], in[1]));
      },
      {random_values(9, rng), random_values(9, rng)}, {{3, 3}, {3, 3}});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("conv2d delta kernel reproduces the input") {
  Rng rng(3);
  Tensor x = Tensor::constant({1, 1, 4, 4}, random_values(16, rng));
  std::vector<real> k(9, 0);
  k[4] = 1;  // center tap
  Tensor out = conv2d(x, Tensor::constant({1, 1, 3, 3}, k));
  for (int i = 0; i < 16; ++i)
    CHECK(out.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d all-ones kernel on all-ones input") {
  Tensor x = Tensor::full({1, 1, 3, 3}, 1);
  Tensor k = Tensor::full({1, 1, 3, 3}, 1);
  Tensor out = conv2d(x, k);
  CHECK(out.data()[4] == doctest::Approx(9));  // center sees the full window
  CHECK(out.data()[0] == doctest::Approx(4));  // corner sees a 2x2 window
  CHECK(out.data()[1] == doctest::Approx(6));  // edge sees a 2x3 window
}

TEST_CASE("conv2d channel mismatch raises a dimension error") {
  Tensor x = Tensor::zeros({1, 2, 4, 4});
  Tensor k = Tensor::zeros({3, 1, 3, 3});
  CHECK_THROWS_AS(conv2d(x, k), ShapeError);
}

TEST_CASE("conv2d gradient matches finite differences") {
  Rng rng(11);
  auto res = check_gradients(
      [](const std::vector<Tensor>& in) {
        return sum_all(silu(conv2d(in[0], in[1])));
      },
      {random_values(2 * 4 * 4, rng), random_values(3 * 2 * 3 * 3, rng, -0.5, 0.5)},
      {{1, 2, 4, 4}, {3, 2, 3, 3}});
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("conv2d multi-sample batches agree with per-sample results") {
  Rng rng(12);
  auto xv = random_values(6 * 2 * 5 * 5, rng);
  auto kv = random_values(4 * 2 * 3 * 3, rng);
  Tensor k = Tensor::constant({4, 2, 3, 3}, kv);
  Tensor full = conv2d(Tensor::constant({6, 2, 5, 5}, xv), k);
  for (int s = 0; s < 6; ++s) {
    std::vector<real> one(xv.begin() + s * 50, xv.begin() + (s + 1) * 50);
    Tensor out = conv2d(Tensor::constant({1, 2, 5, 5}, one), k);
    for (int i = 0; i < 4 * 25; ++i)
      CHECK(full.data()[s * 100 + i] == doctest::Approx(out.data()[i]));
  }
}

TEST_CASE("silu at zero and its gradient at one") {
  Tensor x = Tensor::scalar(0);
  CHECK(silu(x).item() == doctest::Approx(0));

  Tensor one = Tensor::leaf({1}, {1});
  backward(sum_all(silu(one)));
  const double s = 1.0 / (1.0 + std::exp(-1.0));
  CHECK(double(one.grad()[0]) == doctest::Approx(s * (1 + (1 - s))).epsilon(1e-9));
  CHECK(double(one.grad()[0]) == doctest::Approx(0.92767).epsilon(1e-4));
}

TEST_CASE("avg_pool2d of a constant image is the same constant") {
  Tensor x = Tensor::full({2, 3, 4, 4}, real(0.37));
  Tensor out = avg_pool2d(x, 2);
  CHECK(out.shape() == Shape{2, 3, 2, 2});
  for (real v : out.data()) CHECK(v == doctest::Approx(0.37));
}

TEST_CASE("nearest_upsample then avg_pool2d is the identity") {
  Rng rng(5);
  auto vals = random_values(2 * 1 * 3 * 3, rng);
  Tensor x = Tensor::constant({2, 1, 3, 3}, vals);
  Tensor back = avg_pool2d(nearest_upsample(x, 2), 2);
  for (size_t i = 0; i < vals.size(); ++i)
    CHECK(back.data()[i] == doctest::Approx(vals[i]));
}

TEST_CASE("every differentiable op passes a finite-difference check") {
  Rng rng(101);
  const double tol = 1e-4;

  auto unary_shapes = Shape{2, 2, 4, 4};
  auto uv = [&](double lo = -2, double hi = 2) {
    return random_values(shape_numel(unary_shapes), rng, lo, hi);
  };
  auto check1 = [&](const char* name, GraphBuilder b, double lo = -2,
                    double hi = 2) {
    CAPTURE(name);
    auto res = check_gradients(b, {random_values(shape_numel(unary_shapes), rng, lo, hi)},
                               {unary_shapes});
    CHECK(res.max_rel_err < tol);
  };

  check1("silu", [](const std::vector<Tensor>& in) { return sum_all(silu(in[0])); });
  check1("sigmoid", [](const std::vector<Tensor>& in) { return sum_all(sigmoid(in[0])); });
  check1("exp", [](const std::vector<Tensor>& in) { return sum_all(exp(in[0])); });
  check1("log", [](const std::vector<Tensor>& in) { return sum_all(log(in[0])); }, 0.5, 2.0);
  check1("softplus", [](const std::vector<Tensor>& in) { return sum_all(softplus(in[0])); });
  // keep samples away from the clamp kinks at +-1.5
  check1("clamp", [](const std::vector<Tensor>& in) {
    return sum_all(clamp(in[0], real(-1.5), real(1.5)));
  }, -1.4, 1.4);
  check1("mean_all", [](const std::vector<Tensor>& in) { return mean_all(in[0]); });
  check1("sum_per_sample", [](const std::vector<Tensor>& in) {
    return mean_batch(sum_per_sample(silu(in[0])));
  });
  check1("avg_pool2d", [](const std::vector<Tensor>& in) {
    return sum_all(silu(avg_pool2d(in[0], 2)));
  });
  check1("nearest_upsample", [](const std::vector<Tensor>& in) {
    return sum_all(silu(nearest_upsample(in[0], 2)));
  });
  check1("slice_channels", [](const std::vector<Tensor>& in) {
    return sum_all(silu(slice_channels(in[0], 1, 2)));
  });
  check1("reshape", [](const std::vector<Tensor>& in) {
    return sum_all(silu(reshape(in[0], {4, 16})));
  });
  check1("add_scalar/mul_scalar", [](const std::vector<Tensor>& in) {
    return sum_all(mul_scalar(add_scalar(in[0], real(0.7)), real(-1.3)));
  });

  auto check2 = [&](const char* name, GraphBuilder b) {
    CAPTURE(name);
    auto res = check_gradients(b, {uv(), uv()}, {unary_shapes, unary_shapes});
    CHECK(res.max_rel_err < tol);
  };
  check2("add", [](const std::vector<Tensor>& in) {
    return sum_all(silu(add(in[0], in[1])));
  });
  check2("sub", [](const std::vector<Tensor>& in) {
    return sum_all(silu(sub(in[0], in[1])));
  });
  check2("mul", [](const std::vector<Tensor>& in) {
    return sum_all(mul(in[0], in[1]));
  });
  check2("concat_channels", [](const std::vector<Tensor>& in) {
    return sum_all(silu(concat_channels(in[0], in[1])));
  });

  {
    auto res = check_gradients(
        [](const std::vector<Tensor>& in) {
          return sum_all(silu(add_channel_bias(in[0], in[1])));
        },
        {uv(), random_values(2, rng)}, {unary_shapes, {2}});
    CHECK(res.max_rel_err < tol);
  }
  {
    auto res = check_gradients(
        [](const std::vector<Tensor>& in) {
          return sum_all(silu(scale(in[0], in[1])));
        },
        {uv(), random_values(1, rng)}, {unary_shapes, {1}});
    CHECK(res.max_rel_err < tol);
  }
  {
    auto res = check_gradients(
        [](const std::vector<Tensor>& in) {
          return sum_all(silu(broadcast_batch(in[0], 3)));
        },
        {random_values(2 * 3 * 3, rng)}, {Shape{2, 3, 3}});
    CHECK(res.max_rel_err < tol);
  }
}

TEST_CASE("backward requires a scalar root") {
  Tensor x = Tensor::leaf({2, 2}, {1, 2, 3, 4});
  Tensor y = silu(x);
  CHECK_THROWS_AS(backward(y), UsageError);
}

TEST_CASE("repeated backward accumulates leaf gradients") {
  Tensor x = Tensor::leaf({3}, {1, 2, 3});
  Tensor y = sum_all(mul(x, x));
  backward(y);
  std::vector<real> first = x.grad();
  backward(y);
  for (int i = 0; i < 3; ++i)
    CHECK(x.grad()[i] == doctest::Approx(2 * first[i]));
}

TEST_CASE("graph evaluation is deterministic under a fixed seed") {
  auto run = [] {
    Rng rng(42);
    Tensor a = Tensor::randn({4, 4}, rng);
    Tensor b = Tensor::randn({4, 4}, rng);
    return sum_all(mul(silu(a), b)).item();
  };
  CHECK(run() == run());
}

TEST_CASE("no-grad mode skips graph construction") {
  Tensor x = Tensor::leaf({2}, {1, 2});
  NoGradGuard ng;
  Tensor y = silu(x);
  CHECK_FALSE(y.requires_grad());
}
