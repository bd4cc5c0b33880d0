#include <gtest/gtest.h>

#include <cmath>

#include "convrnnt/errors.hpp"
#include "convrnnt/tensor.hpp"
#include "oracles.hpp"

using namespace convrnnt;

namespace {

// Checks every element gradient of `x` for the scalar built by `loss`.
void expect_gradients(Tensor& x, const std::function<Tensor()>& loss, double tol, double h = 1e-6) {
  x.set_requires_grad(true);
  x.zero_grad();
  loss().backward();
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());
  NoGradGuard guard;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double numeric = oracle::central_difference(x, i, [&] { return loss().item(); }, h);
    EXPECT_LT(oracle::rel_error(analytic[i], numeric), tol) << "element " << i;
  }
}

}  // namespace

TEST(Tensor, MatmulIdentityAndHandValues) {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor b({2, 2}, {5, 6, 7, 8});
  const Tensor c = matmul(eye, b);
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{5, 6, 7, 8}));
  const Tensor d = matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}));
  EXPECT_EQ(d.item(), 11.0);
}

TEST(Tensor, MatmulShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Tensor, MatmulGradientMatchesFiniteDifferences) {
  CounterRng rng(3);
  Tensor a = oracle::random_tensor({3, 3}, rng);
  const Tensor b = oracle::random_tensor({3, 3}, rng);
  expect_gradients(a, [&] { return sum(matmul(a, b)); }, 1e-6);
}

TEST(Tensor, LinearMatchesMatmulAndGradients) {
  CounterRng rng(4);
  Tensor x = oracle::random_tensor({4, 3}, rng);
  Tensor w = oracle::random_tensor({5, 3}, rng);
  Tensor b = oracle::random_tensor({5}, rng);
  const Tensor y = linear(x, w, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t o = 0; o < 5; ++o) {
      double acc = b.at(o);
      for (std::size_t k = 0; k < 3; ++k) acc += x.at(i, k) * w.at(o, k);
      EXPECT_NEAR(y.at(i, o), acc, 1e-12);
    }
  const Tensor r = oracle::random_tensor({4, 5}, rng);
  const auto loss = [&] { return sum(mul(linear(x, w, b), r)); };
  expect_gradients(x, loss, 1e-6);
  expect_gradients(w, loss, 1e-6);
  expect_gradients(b, loss, 1e-6);
}

TEST(Tensor, Conv1dShiftSum) {
  const Tensor x = pad_left_time(Tensor({1, 3}, {1, 2, 3}), 1);
  const Tensor y = conv1d(x, Tensor({1, 1, 2}, {1, 1}));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{1, 3, 5}));
}

TEST(Tensor, Conv1dPointwiseIdentity) {
  CounterRng rng(5);
  const Tensor x = oracle::random_tensor({3, 7}, rng);
  Tensor w({3, 3, 1});
  for (std::size_t c = 0; c < 3; ++c) w.mutable_data()[c * 3 + c] = 1.0;
  EXPECT_TRUE(oracle::bitwise_equal(conv1d(x, w).data(), x.data()));
}

TEST(Tensor, DepthwiseDilatedConvMatchesLoop) {
  CounterRng rng(6);
  Tensor x({4, 20});
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t t = 0; t < 20; ++t) x.mutable_data()[c * 20 + t] = 0.5 * t - static_cast<double>(c);
  Tensor w = oracle::random_tensor({4, 1, 3}, rng);
  const Tensor y = conv1d(x, w, 2, 4);
  EXPECT_LE(oracle::max_abs_diff(y.data(), oracle::conv1d(x, w, 2, 4)), 1e-12);
  const Tensor r = oracle::random_tensor(y.shape(), rng);
  expect_gradients(x, [&] { return sum(mul(conv1d(x, w, 2, 4), r)); }, 1e-6);
  expect_gradients(w, [&] { return sum(mul(conv1d(x, w, 2, 4), r)); }, 1e-6);
}

TEST(Tensor, GroupedConvMatchesLoop) {
  CounterRng rng(7);
  const Tensor x = oracle::random_tensor({4, 9}, rng);
  const Tensor w = oracle::random_tensor({6, 2, 2}, rng);
  EXPECT_LE(oracle::max_abs_diff(conv1d(x, w, 3, 2).data(), oracle::conv1d(x, w, 3, 2)), 1e-12);
}

TEST(Tensor, Conv2dOnesAndDelta) {
  const Tensor ones = conv2d(Tensor({1, 3, 3}, 1.0), Tensor({1, 1, 2, 2}, 1.0));
  EXPECT_EQ(ones.shape(), (Shape{1, 2, 2}));
  for (double v : ones.data()) EXPECT_EQ(v, 4.0);

  CounterRng rng(8);
  const Tensor x = oracle::random_tensor({1, 4, 5}, rng);
  Tensor delta({1, 1, 2, 2});
  delta.mutable_data()[0] = 1.0;
  const Tensor y = conv2d(x, delta);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t f = 0; f < 4; ++f) EXPECT_EQ(y.data()[t * 4 + f], x.data()[t * 5 + f]);
}

TEST(Tensor, Conv2dMatchesLoopWithGradients) {
  CounterRng rng(9);
  Tensor x = oracle::random_tensor({2, 5, 4}, rng);
  Tensor w = oracle::random_tensor({3, 2, 2, 3}, rng);
  EXPECT_LE(oracle::max_abs_diff(conv2d(x, w).data(), oracle::conv2d(x, w)), 1e-12);
  const Tensor r = oracle::random_tensor({3, 4, 2}, rng);
  expect_gradients(x, [&] { return sum(mul(conv2d(x, w), r)); }, 1e-6);
  expect_gradients(w, [&] { return sum(mul(conv2d(x, w), r)); }, 1e-6);
}

TEST(Tensor, ElementwiseValues) {
  EXPECT_EQ(swish(Tensor::scalar(0.0)).item(), 0.0);
  EXPECT_NEAR(logsumexp_last_axis(Tensor({2}, {0.0, 0.0})).item(), std::log(2.0), 1e-15);
  EXPECT_NEAR(sigmoid(Tensor::scalar(0.0)).item(), 0.5, 0.0);
  const Tensor s = softmax_last_axis(Tensor({1, 3}, {1000.0, 1000.0, 1000.0}));
  for (double v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Tensor, SoftmaxAndActivationGradients) {
  CounterRng rng(10);
  Tensor x = oracle::random_tensor({5}, rng, -2.0, 2.0);
  const Tensor r = oracle::random_tensor({5}, rng);
  expect_gradients(x, [&] { return sum(mul(softmax_last_axis(x), r)); }, 1e-6);
  expect_gradients(x, [&] { return sum(mul(log_softmax_last_axis(x), r)); }, 1e-6);
  expect_gradients(x, [&] { return sum(mul(swish(x), r)); }, 1e-6);
  expect_gradients(x, [&] { return sum(mul(tanh(x), r)); }, 1e-6);
  expect_gradients(x, [&] { return sum(mul(sigmoid(x), r)); }, 1e-6);
  expect_gradients(x, [&] { return logsumexp_last_axis(x); }, 1e-6);
}

TEST(Tensor, ShapeOpGradients) {
  CounterRng rng(11);
  Tensor x = oracle::random_tensor({3, 4}, rng);
  const Tensor r = oracle::random_tensor({4, 3}, rng);
  expect_gradients(x, [&] { return sum(mul(transpose01(x), r)); }, 1e-6);
  const Tensor r2 = oracle::random_tensor({3, 2}, rng);
  expect_gradients(x, [&] { return sum(mul(slice(x, 1, 1, 3), r2)); }, 1e-6);
  const Tensor r3 = oracle::random_tensor({3, 7}, rng);
  expect_gradients(x, [&] { return sum(mul(pad_left_time(x, 3), r3)); }, 1e-6);
  expect_gradients(x, [&] {
    const Tensor parts[] = {x, scale(x, 2.0)};
    return sum_squares(concat(parts, 0));
  }, 1e-6);
}

TEST(Tensor, CausalRunningMean) {
  const Tensor z({3, 1}, {2, 4, 6});
  const Tensor m = causal_running_mean(z);
  EXPECT_EQ(std::vector<double>(m.data().begin(), m.data().end()), (std::vector<double>{2, 3, 4}));

  const Tensor c = causal_running_mean(Tensor({6, 2}, 1.75));
  for (double v : c.data()) EXPECT_EQ(v, 1.75);

  CounterRng rng(12);
  Tensor r = oracle::random_tensor({50, 3}, rng);
  const Tensor out = causal_running_mean(r);
  for (std::size_t i = 0; i < 50; ++i)
    for (std::size_t d = 0; d < 3; ++d) {
      double s = 0.0;
      for (std::size_t j = 0; j <= i; ++j) s += r.at(j, d);
      EXPECT_NEAR(out.at(i, d), s / static_cast<double>(i + 1), 1e-12);
    }
  const Tensor w = oracle::random_tensor({50, 3}, rng);
  expect_gradients(r, [&] { return sum(mul(causal_running_mean(r), w)); }, 1e-6);
}

TEST(Tensor, BatchNormModes) {
  RunningStats identity = RunningStats::identity(1);
  const Tensor gamma({1}, 1.0), beta({1}, 0.0);
  CounterRng rng(13);
  const Tensor x = oracle::random_tensor({1, 6}, rng);
  // Identity up to the 1/sqrt(1 + eps) factor.
  EXPECT_LE(oracle::max_abs_diff(batchnorm_time(x, gamma, beta, identity, false).data(), x.data()), 1e-5);

  RunningStats stats = RunningStats::identity(1);
  const Tensor flat = batchnorm_time(Tensor({1, 3}, 2.0), gamma, beta, stats, true);
  for (double v : flat.data()) EXPECT_EQ(v, 0.0);

  RunningStats s2 = RunningStats::identity(3);
  const Tensor b3({3}, {0.5, -1.0, 2.0});
  const Tensor y = batchnorm_time(oracle::random_tensor({3, 40}, rng, -3.0, 5.0), Tensor({3}, 1.3), b3, s2, true);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0.0;
    for (std::size_t t = 0; t < 40; ++t) m += y.at(c, t);
    EXPECT_NEAR(m / 40.0, b3.at(c), 1e-8);
  }
}

TEST(Tensor, BatchNormTrainingGradient) {
  CounterRng rng(14);
  Tensor x = oracle::random_tensor({2, 7}, rng);
  Tensor gamma = oracle::random_tensor({2}, rng, 0.5, 1.5);
  Tensor beta = oracle::random_tensor({2}, rng);
  const Tensor r = oracle::random_tensor({2, 7}, rng);
  const auto loss = [&] {
    RunningStats s = RunningStats::identity(2);
    return sum(mul(batchnorm_time(x, gamma, beta, s, true), r));
  };
  expect_gradients(x, loss, 1e-5);
  expect_gradients(gamma, loss, 1e-6);
  expect_gradients(beta, loss, 1e-6);
}

TEST(Tensor, BackwardReachesSharedInputsOnce) {
  Tensor x = Tensor::scalar(3.0);
  x.set_requires_grad(true);
  // y = x·x + x; dy/dx = 2x + 1
  const Tensor y = add(mul(x, x), x);
  y.backward();
  EXPECT_EQ(x.grad()[0], 7.0);
}

TEST(Tensor, NoGradGuardSkipsRecording) {
  Tensor x = Tensor::scalar(2.0);
  x.set_requires_grad(true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(mul(x, x).requires_grad());
  }
  EXPECT_TRUE(mul(x, x).requires_grad());
}

TEST(Tensor, EmbeddingAndGridAdd) {
  Tensor table({3, 2}, {0, 1, 2, 3, 4, 5});
  const int ids[] = {2, 0, 2};
  const Tensor e = embedding(table, ids);
  EXPECT_EQ(std::vector<double>(e.data().begin(), e.data().end()), (std::vector<double>{4, 5, 0, 1, 4, 5}));
  const Tensor g = grid_add(Tensor({2, 1}, {1, 2}), Tensor({3, 1}, {10, 20, 30}));
  EXPECT_EQ(g.shape(), (Shape{2, 3, 1}));
  EXPECT_EQ(g.data()[5], 32.0);

  CounterRng rng(15);
  Tensor a = oracle::random_tensor({2, 3}, rng);
  Tensor b = oracle::random_tensor({4, 3}, rng);
  const Tensor r = oracle::random_tensor({2, 4, 3}, rng);
  expect_gradients(a, [&] { return sum(mul(grid_add(a, b), r)); }, 1e-6);
  expect_gradients(b, [&] { return sum(mul(grid_add(a, b), r)); }, 1e-6);
  expect_gradients(table, [&] { return sum_squares(embedding(table, ids)); }, 1e-6);
}
