#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gprune/ops.hpp"
#include "gprune/optim.hpp"
#include "gprune/rng.hpp"
#include "test_util.hpp"

using namespace gprune;
using num::Tensor;

TEST_CASE("analytic values of simple primitives") {
  CHECK(num::sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(0.5));

  // all-ones 1x3x3 input, single all-ones 3x3 kernel, no padding -> 9
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor y = num::conv2d(x, w, {}, 1, 1, 0, 0, 1);
  CHECK(y.numel() == 1);
  CHECK(y.item() == doctest::Approx(9.0));

  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
  Tensor c = num::matmul(a, b);
  CHECK(c.data() == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("loss = x^2 has gradient 2x") {
  Tensor x = Tensor::scalar(3.0, true);
  num::Tape tape;
  Tensor loss = num::mul(x, x);
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward requires a scalar loss") {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  num::Tape tape;
  Tensor y = num::relu(x);
  CHECK_THROWS_AS(tape.backward(y), NotScalarError);
}

TEST_CASE("conv2d matches the naive 7-loop reference on random inputs") {
  Rng rng(11);
  for (int trial = 0; trial < 12; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(2));
    const int cin = 1 + static_cast<int>(rng.uniform_int(2));
    const int h = 4 + static_cast<int>(rng.uniform_int(5));  // up to 8
    const int w = 4 + static_cast<int>(rng.uniform_int(5));
    const int cout = 1 + static_cast<int>(rng.uniform_int(4));
    const int k = 1 + 2 * static_cast<int>(rng.uniform_int(2));  // 1 or 3
    const int s = 1 + static_cast<int>(rng.uniform_int(2));
    const int p = static_cast<int>(rng.uniform_int(2));
    Tensor x = testutil::random_tensor({n, cin, h, w}, rng);
    Tensor wt = testutil::random_tensor({cout, cin, k, k}, rng);
    Tensor bias = testutil::random_tensor({cout}, rng);
    Tensor got = num::conv2d(x, wt, bias, s, s, p, p, 1);
    Tensor want = testutil::naive_conv2d(x, wt, bias, s, s, p, p, 1);
    REQUIRE(got.shape() == want.shape());
    for (size_t i = 0; i < got.data().size(); ++i)
      CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("grouped conv equals per-channel independent conv when groups == C_in") {
  Rng rng(12);
  const int c = 3, h = 5;
  Tensor x = testutil::random_tensor({2, c, h, h}, rng);
  Tensor w = testutil::random_tensor({c, 1, 3, 3}, rng);
  Tensor bias = testutil::random_tensor({c}, rng);
  Tensor got = num::conv2d(x, w, bias, 1, 1, 1, 1, c);
  Tensor want = testutil::naive_conv2d(x, w, bias, 1, 1, 1, 1, c);
  for (size_t i = 0; i < got.data().size(); ++i)
    CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
}

TEST_CASE("finite differences: dense MLP") {
  Rng rng(21);
  Tensor x = testutil::random_tensor({3, 4}, rng);
  Tensor w1 = testutil::random_tensor({5, 4}, rng, -0.7, 0.7, true);
  Tensor b1 = testutil::random_tensor({5}, rng, -0.2, 0.2, true);
  Tensor w2 = testutil::random_tensor({2, 5}, rng, -0.7, 0.7, true);
  Tensor b2 = testutil::random_tensor({2}, rng, -0.2, 0.2, true);
  Tensor target = testutil::random_tensor({3, 2}, rng);
  auto forward = [&]() {
    Tensor h = num::relu(num::linear(x, w1, b1));
    return num::mse(num::linear(h, w2, b2), target);
  };
  auto res = testutil::check_gradients(forward, {w1, b1, w2, b2});
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("finite differences: conv2d parameters on a 1x4x4 input") {
  Rng rng(22);
  Tensor x = testutil::random_tensor({1, 1, 4, 4}, rng, -1, 1, true);
  Tensor w = testutil::random_tensor({2, 1, 3, 3}, rng, -0.6, 0.6, true);
  Tensor bias = testutil::random_tensor({2}, rng, -0.2, 0.2, true);
  auto forward = [&]() {
    Tensor y = num::conv2d(x, w, bias, 1, 1, 1, 1, 1);
    return num::mean(num::mul(y, y));
  };
  auto res = testutil::check_gradients(forward, {x, w, bias});
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("finite differences: every differentiable primitive") {
  Rng rng(23);
  int instances = 0;
  for (int trial = 0; trial < 4; ++trial) {
    // pooling + shuffle + concat + bn chain over a 4-D input
    Tensor x = testutil::random_tensor({2, 4, 4, 4}, rng, -1, 1, true);
    Tensor gamma = testutil::random_tensor({4}, rng, 0.5, 1.5, true);
    Tensor beta = testutil::random_tensor({4}, rng, -0.3, 0.3, true);
    Tensor target4 = testutil::random_tensor({2, 8, 2, 2}, rng);
    auto forward4 = [&]() {
      Tensor h = num::batchnorm_train(x, gamma, beta, {}, {}, 0.1, 1e-5);
      h = num::channel_shuffle(h, 2);
      Tensor p1 = num::maxpool2d(h, 2, 2, 2, 2, 0, 0);
      Tensor p2 = num::avgpool2d(h, 2, 2, 2, 2, 0, 0);
      Tensor cat = num::concat_channels({p1, p2});
      return num::mse(cat, target4);
    };
    auto r4 = testutil::check_gradients(forward4, {x, gamma, beta}, 1e-5, 12,
                                        100 + static_cast<uint64_t>(trial));
    CHECK(r4.max_rel_err < 1e-4);
    ++instances;

    // gather/scatter/scale_rows/vstack/sigmoid/softmax path
    Tensor m = testutil::random_tensor({5, 3}, rng, -1, 1, true);
    Tensor m2 = testutil::random_tensor({2, 3}, rng, -1, 1, true);
    std::vector<int> labels = {0, 2, 1};
    auto forward2 = [&]() {
      Tensor g = num::gather_rows(num::vstack({m, m2}), {0, 2, 4, 5, 1});
      Tensor s = num::scatter_add_rows(g, {0, 1, 0, 2, 1}, 3);
      Tensor sc = num::scale_rows(s, {0.5, 2.0, 1.5});
      Tensor sg = num::sigmoid(sc);
      return num::softmax_cross_entropy(sg, labels);
    };
    auto r2 = testutil::check_gradients(forward2, {m, m2}, 1e-5, 15,
                                        200 + static_cast<uint64_t>(trial));
    CHECK(r2.max_rel_err < 1e-4);
    ++instances;

    // global_avgpool + flatten + add_bias + eval-mode batchnorm
    Tensor x2 = testutil::random_tensor({2, 3, 3, 3}, rng, -1, 1, true);
    Tensor bias = testutil::random_tensor({3}, rng, -0.5, 0.5, true);
    Tensor mean = testutil::random_tensor({3}, rng, -0.2, 0.2);
    Tensor var = testutil::random_tensor({3}, rng, 0.5, 1.5);
    Tensor target = testutil::random_tensor({2, 3}, rng);
    auto forward3 = [&]() {
      Tensor h = num::batchnorm_eval(x2, bias, bias, mean, var, 1e-5);
      h = num::add_bias(h, bias);
      Tensor g = num::global_avgpool(h);
      return num::mse(g, target);
    };
    auto r3 = testutil::check_gradients(forward3, {x2, bias}, 1e-5, 12,
                                        300 + static_cast<uint64_t>(trial));
    CHECK(r3.max_rel_err < 1e-4);
    ++instances;
  }
  CHECK(instances >= 12);
}

TEST_CASE("tape replay determinism: same seed, bit-identical losses") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Tensor x = testutil::random_tensor({4, 3}, rng, -1, 1, true);
    Tensor w = testutil::random_tensor({2, 3}, rng, -1, 1, true);
    std::vector<double> losses;
    num::Optimizer opt({num::OptKind::adam, 1e-2});
    for (int i = 0; i < 5; ++i) {
      num::Tape tape;
      Tensor loss = num::mean(num::mul(num::linear(x, w, {}), num::linear(x, w, {})));
      losses.push_back(loss.item());
      tape.backward(loss);
      opt.step({w});
    }
    return losses;
  };
  CHECK(run(5) == run(5));
  CHECK(run(5) != run(6));
}

TEST_CASE("sgd and adam updates") {
  SUBCASE("one sgd step, no momentum") {
    Tensor p = Tensor::scalar(1.0, true);
    p.grad()[0] = 1.0;
    num::Optimizer opt({num::OptKind::sgd_momentum, 0.1, 0.0});
    opt.step({p});
    CHECK(p.item() == doctest::Approx(0.9));
    CHECK(p.grad()[0] == 0.0);  // consumed
  }
  SUBCASE("momentum makes the second identical step larger") {
    Tensor p = Tensor::scalar(1.0, true);
    num::Optimizer opt({num::OptKind::sgd_momentum, 0.1, 0.9});
    p.grad()[0] = 1.0;
    const double before1 = p.item();
    opt.step({p});
    const double step1 = before1 - p.item();
    p.grad()[0] = 1.0;
    const double before2 = p.item();
    opt.step({p});
    const double step2 = before2 - p.item();
    CHECK(step2 > step1);
  }
  SUBCASE("adam with zero grad leaves the parameter unchanged") {
    Tensor p = Tensor::scalar(0.7, true);
    p.grad();  // zero-initialized
    num::Optimizer opt({num::OptKind::adam, 1e-2});
    opt.step({p});
    CHECK(p.item() == doctest::Approx(0.7));
  }
  SUBCASE("lr must be positive") {
    CHECK_THROWS_AS(num::Optimizer({num::OptKind::adam, 0.0}), Error);
  }
}

TEST_CASE("shape errors are detected") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 2});
  CHECK_THROWS_AS(num::add(a, b), DimError);
  CHECK_THROWS_AS(num::matmul(a, a), DimError);
  CHECK_THROWS_AS(num::channel_shuffle(Tensor::zeros({1, 3, 2, 2}), 2), DimError);
}

TEST_CASE("channel_shuffle applies the (g, c/g) transpose permutation") {
  // 4 channels, groups=2: input channel order 0,1,2,3 -> output 0,2,1,3
  Tensor x = Tensor::from_data({1, 4, 1, 1}, {10, 11, 12, 13});
  Tensor y = num::channel_shuffle(x, 2);
  CHECK(y.data() == std::vector<double>{10, 12, 11, 13});
}
