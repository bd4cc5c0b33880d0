#include <gtest/gtest.h>

#include "convrnnt/global_encoder.hpp"
#include "convrnnt/local_encoder.hpp"
#include "oracles.hpp"

using namespace convrnnt;

namespace {

const ForwardContext kEval{};

LocalEncoderConfig small_local() {
  LocalEncoderConfig cfg;
  cfg.channels = {4, 4, 3, 3};
  cfg.in_channels = 3;
  cfg.freq = 8;
  return cfg;
}

void fill(Tensor& t, double v) {
  for (double& x : t.mutable_data()) x = v;
}

void fill_positive(Tensor& t, CounterRng& rng) {
  for (double& x : t.mutable_data()) x = rng.uniform(0.05, 0.2);
}

// Makes every weight positive and the SE gate a constant 0.5, so the block is
// a monotone function of its input and any input change reaches every frame
// the convolutions can see.
void disable_se_and_make_positive(GlobalBlock& b, CounterRng& rng) {
  for (Tensor* t : {&b.pw1_weight(), &b.pw1_bias(), &b.dw_weight(), &b.dw_bias(), &b.pw2_weight(), &b.pw2_bias()}) {
    fill_positive(*t, rng);
  }
  for (Tensor* t : {&b.se().w1, &b.se().b1, &b.se().w2, &b.se().b2}) fill(*t, 0.0);
}

// Number of output frames at or after t0 that differ when input frame t0 is bumped.
template <typename F>
std::size_t impulse_support(F&& forward, Tensor x, std::size_t t0) {
  const Tensor base = forward(x);
  const std::size_t d = x.dim(1);
  for (std::size_t k = 0; k < d; ++k) x.mutable_data()[t0 * d + k] += 1.0;
  const Tensor bumped = forward(x);
  const std::size_t od = base.dim(1);
  std::size_t first = base.dim(0), last = 0, count = 0;
  for (std::size_t t = 0; t < base.dim(0); ++t) {
    bool changed = false;
    for (std::size_t k = 0; k < od; ++k) changed |= base.at(t, k) != bumped.at(t, k);
    if (changed) {
      first = std::min(first, t);
      last = t;
      ++count;
    }
  }
  EXPECT_EQ(first, t0) << "output before the impulse changed";
  // A single dilated block touches every d-th frame; report the span.
  return count == 0 ? 0 : last - first + 1;
}

// Perturbs frame t0 and checks rows t < t0 are bitwise unchanged.
template <typename F>
void expect_causal(F&& forward, const Tensor& x, std::size_t t0, CounterRng& rng) {
  const Tensor base = forward(x);
  Tensor y = x.clone();
  for (std::size_t t = t0; t < x.dim(0); ++t)
    for (std::size_t k = 0; k < x.dim(1); ++k) y.mutable_data()[t * x.dim(1) + k] += rng.uniform(-2.0, 2.0);
  const Tensor moved = forward(y);
  const std::size_t od = base.dim(1);
  EXPECT_TRUE(oracle::bitwise_equal(base.data().subspan(0, t0 * od), moved.data().subspan(0, t0 * od)));
  EXPECT_FALSE(oracle::bitwise_equal(base.data(), moved.data()));
}

}  // namespace

TEST(LocalEncoder, ZeroInputZeroBiasGivesZeros) {
  CounterRng init(1);
  LocalEncoder enc(small_local(), init);
  for (auto& b : enc.biases()) fill(b, 0.0);
  const Tensor y = enc.forward(Tensor({9, 24}));
  EXPECT_EQ(y.shape(), (Shape{9, 3 * 8}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LocalEncoder, SingleFrameInput) {
  CounterRng init(2);
  LocalEncoder enc(small_local(), init);
  CounterRng rng(3);
  const Tensor x = oracle::random_tensor({1, 24}, rng);
  const Tensor y = enc.forward(x);
  EXPECT_EQ(y.shape(), (Shape{1, 24}));
  // The single output frame equals the first frame of a longer run.
  Tensor longer_in = oracle::random_tensor({5, 24}, rng);
  std::copy(x.data().begin(), x.data().end(), longer_in.mutable_data().begin());
  const Tensor longer = enc.forward(longer_in);
  EXPECT_LE(oracle::max_abs_diff(y.data(), longer.data().subspan(0, 24)), 1e-12);
}

TEST(LocalEncoder, FutureFramesDoNotLeak) {
  CounterRng init(4);
  LocalEncoder enc(small_local(), init);
  CounterRng rng(5);
  const Tensor x = oracle::random_tensor({12, 24}, rng);
  expect_causal([&](const Tensor& v) { return enc.forward(v); }, x, 7, rng);
}

TEST(LocalEncoder, ReceptiveFieldIsSeventeenFrames) {
  CounterRng init(6);
  LocalEncoder enc(small_local(), init);
  CounterRng rng(7);
  for (auto& w : enc.weights()) fill_positive(w, rng);
  for (auto& b : enc.biases()) fill_positive(b, rng);
  Tensor x({40, 24});
  fill_positive(x, rng);
  EXPECT_EQ(impulse_support([&](const Tensor& v) { return enc.forward(v); }, x, 6), 17u);
}

TEST(LocalEncoder, ParameterCount) {
  const auto cfg = small_local();
  CounterRng init(8);
  LocalEncoder enc(cfg, init);
  TensorList params;
  enc.collect("local", params);
  EXPECT_EQ(count_scalars(params), LocalEncoder::parameter_count(cfg));
  EXPECT_EQ(LocalEncoder::parameter_count(cfg), (3 * 4 + 4 * 4 + 4 * 3 + 3 * 3) * 25 + 4 + 4 + 3 + 3);
}

TEST(SqueezeExcite, ZeroWeightsHalveInput) {
  CounterRng rng(9);
  const Tensor z = oracle::random_tensor({11, 6}, rng);
  const SEWeights w{Tensor({8, 6}), Tensor({8}), Tensor({6, 8}), Tensor({6})};
  const Tensor y = squeeze_excite(z, w);
  for (std::size_t i = 0; i < z.numel(); ++i) EXPECT_EQ(y.data()[i], 0.5 * z.data()[i]);
  const Tensor result = squeeze_excite(Tensor({4, 6}), w);
  for (double v : result.data()) EXPECT_EQ(v, 0.0);
}

TEST(SqueezeExcite, OnlyPastFramesGateTheOutput) {
  CounterRng rng(10);
  const SEWeights w{oracle::random_tensor({8, 6}, rng), oracle::random_tensor({8}, rng),
                    oracle::random_tensor({6, 8}, rng), oracle::random_tensor({6}, rng)};
  const Tensor z = oracle::random_tensor({16, 6}, rng);
  expect_causal([&](const Tensor& v) { return squeeze_excite(v, w); }, z, 9, rng);
}

TEST(GlobalBlock, ZeroWeightsAreIdentityInEval) {
  GlobalEncoderConfig cfg;
  CounterRng init(11);
  GlobalBlock block(16, 2, cfg, init);
  for (Tensor* t : {&block.pw1_weight(), &block.pw1_bias(), &block.dw_weight(), &block.dw_bias(),
                    &block.pw2_weight(), &block.pw2_bias(), &block.se().w1, &block.se().b1, &block.se().w2,
                    &block.se().b2}) {
    fill(*t, 0.0);
  }
  CounterRng rng(12);
  const Tensor x = oracle::random_tensor({13, 16}, rng);
  EXPECT_TRUE(oracle::bitwise_equal(block.forward(x, kEval).data(), x.data()));
}

TEST(GlobalBlock, FutureFramesDoNotLeak) {
  GlobalEncoderConfig cfg;
  CounterRng init(13);
  GlobalBlock block(16, 4, cfg, init);
  CounterRng rng(14);
  const Tensor x = oracle::random_tensor({30, 16}, rng);
  for (std::size_t t0 : {1u, 9u, 29u}) {
    expect_causal([&](const Tensor& v) { return block.forward(v, kEval); }, x, t0, rng);
  }
}

TEST(GlobalBlock, ImpulseSupportMatchesDilation) {
  GlobalEncoderConfig cfg;
  for (std::size_t i = 1; i <= 6; ++i) {
    CounterRng init(15 + i);
    GlobalBlock block(8, cfg.dilation(i - 1), cfg, init);
    CounterRng rng(30 + i);
    disable_se_and_make_positive(block, rng);
    Tensor x({200, 8});
    fill_positive(x, rng);
    const std::size_t support = impulse_support([&](const Tensor& v) { return block.forward(v, kEval); }, x, 3);
    EXPECT_EQ(support, 1 + (cfg.dw_kernel - 1) * (std::size_t{1} << i)) << "block " << i;
  }
}

TEST(GlobalBlock, RaggedBatchMatchesSingleInEval) {
  GlobalEncoderConfig cfg;
  CounterRng init(40);
  GlobalBlock block(12, 2, cfg, init);
  CounterRng rng(41);
  const std::vector<Tensor> xs = {oracle::random_tensor({7, 12}, rng), oracle::random_tensor({3, 12}, rng),
                                  oracle::random_tensor({11, 12}, rng)};
  const auto batched = block.forward(xs, kEval);
  for (std::size_t b = 0; b < xs.size(); ++b) {
    // BLAS may block the concatenated product differently; allow rounding.
    EXPECT_LE(oracle::max_abs_diff(batched[b].data(), block.forward(xs[b], kEval).data()), 1e-12);
  }
}

TEST(GlobalEncoder, ZeroInputZeroBiasGivesZeros) {
  GlobalEncoderConfig cfg;
  CounterRng init(50);
  GlobalEncoder enc(16, 16, cfg, init);
  for (auto& b : enc.blocks()) {
    fill(b.pw1_bias(), 0.0);
    fill(b.dw_bias(), 0.0);
    fill(b.pw2_bias(), 0.0);
  }
  const Tensor result = enc.forward(Tensor({10, 16}), kEval);
  for (double v : result.data()) EXPECT_EQ(v, 0.0);
}

TEST(GlobalEncoder, StackIsCausal) {
  GlobalEncoderConfig cfg;
  CounterRng init(51);
  GlobalEncoder enc(10, 16, cfg, init);
  EXPECT_TRUE(enc.has_bridge());
  CounterRng rng(52);
  const Tensor x = oracle::random_tensor({40, 10}, rng);
  for (std::size_t t0 : {0u, 5u, 39u}) {
    expect_causal([&](const Tensor& v) { return enc.forward(v, kEval); }, x, t0, rng);
  }
}

TEST(GlobalEncoder, SixBlockReceptiveFieldIs253) {
  GlobalEncoderConfig cfg;
  CounterRng init(53);
  GlobalEncoder enc(8, 8, cfg, init);
  ASSERT_EQ(enc.blocks().size(), 6u);
  CounterRng rng(54);
  for (auto& b : enc.blocks()) disable_se_and_make_positive(b, rng);
  Tensor x({300, 8});
  fill_positive(x, rng);
  EXPECT_EQ(impulse_support([&](const Tensor& v) { return enc.forward(v, kEval); }, x, 10), 253u);
}

TEST(GlobalEncoder, ParameterCount) {
  GlobalEncoderConfig cfg;
  CounterRng init(55);
  GlobalEncoder enc(16, 16, cfg, init);
  TensorList params;
  enc.collect("global", params);
  EXPECT_EQ(count_scalars(params), GlobalEncoder::parameter_count(16, cfg));
  // pw1 + dw + pw2 + SE + two BN affine pairs, per block.
  const std::size_t inner = 32, se = 8;
  const std::size_t per_block =
      (inner * 16 + inner) + (inner * 3 + inner) + (16 * inner + 16) + (se * 16 + se + 16 * se + 16) + 4 * inner;
  EXPECT_EQ(GlobalEncoder::parameter_count(16, cfg), 6 * per_block);
}
