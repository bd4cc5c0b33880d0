#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "convrnnt/decoder.hpp"
#include "oracles.hpp"
#include "test_models.hpp"

using namespace convrnnt;

namespace {

// Scores come from a function of (t, emitted prefix).
struct TableScorer {
  using State = std::vector<int>;
  std::function<std::vector<double>(std::size_t, const State&)> fn;

  State initial() const { return {}; }
  std::vector<double> log_probs(std::size_t t, const State& s) const { return fn(t, s); }
  void emit(State& s, int token) const { s.push_back(token); }
};

std::vector<double> log_normalize(std::vector<double> logits) {
  double m = logits[0];
  for (double v : logits) m = std::max(m, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  for (double& v : logits) v = v - m - std::log(z);
  return logits;
}

}  // namespace

TEST(GreedyDecoder, AlwaysBlankGivesEmptyHypothesis) {
  const TableScorer scorer{[](std::size_t t, const std::vector<int>&) {
    return log_normalize({2.0 + static_cast<double>(t), 0.5, -1.0, 0.0});
  }};
  GreedyDecoder<TableScorer> dec(scorer);
  dec.advance(0, 5);
  EXPECT_TRUE(dec.hypothesis().tokens.empty());
  double expected = 0.0;
  for (std::size_t t = 0; t < 5; ++t) expected += scorer.fn(t, {})[0];
  EXPECT_DOUBLE_EQ(dec.hypothesis().score, expected);
}

TEST(GreedyDecoder, EmitsThenClosesFrame) {
  // T=1: token 3 first, blank once 3 has been emitted.
  const TableScorer scorer{[](std::size_t, const std::vector<int>& s) {
    return s.empty() ? log_normalize({0.0, 0.0, 0.0, 5.0}) : log_normalize({5.0, 0.0, 0.0, 0.0});
  }};
  GreedyDecoder<TableScorer> dec(scorer);
  dec.advance(0, 1);
  EXPECT_EQ(dec.hypothesis().tokens, (std::vector<int>{3}));
  EXPECT_DOUBLE_EQ(dec.hypothesis().score, scorer.fn(0, {})[3] + scorer.fn(0, {3})[0]);
}

TEST(GreedyDecoder, TiesGoToLowestId) {
  const TableScorer scorer{[](std::size_t, const std::vector<int>& s) {
    return s.empty() ? std::vector<double>{-2.0, -1.0, -1.0} : std::vector<double>{-0.1, -3.0, -3.0};
  }};
  GreedyDecoder<TableScorer> dec(scorer);
  dec.advance(0, 1);
  EXPECT_EQ(dec.hypothesis().tokens, (std::vector<int>{1}));
  EXPECT_EQ(argmax_lowest(std::vector<double>{1.0, 1.0}), 0);
}

TEST(GreedyDecoder, SymbolCapForcesBlank) {
  const TableScorer scorer{[](std::size_t, const std::vector<int>&) { return log_normalize({0.0, 4.0}); }};
  GreedyDecoder<TableScorer> dec(scorer, {3, 0});
  dec.advance(0, 2);
  EXPECT_EQ(dec.hypothesis().tokens, (std::vector<int>{1, 1, 1, 1, 1, 1}));
  const auto lp = log_normalize({0.0, 4.0});
  EXPECT_DOUBLE_EQ(dec.hypothesis().score, 2 * (3 * lp[1] + lp[0]));
  EXPECT_THROW(GreedyDecoder<TableScorer>(scorer, {0, 0}), ConfigError);
}

TEST(GreedyDecoder, ChunkedAdvanceMatchesWholeSequence) {
  CounterRng rng(1);
  std::vector<std::vector<double>> noise(40);
  for (auto& n : noise) n = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  const TableScorer scorer{[&](std::size_t t, const std::vector<int>& s) {
    auto v = noise[(t * 7 + s.size() * 3) % noise.size()];
    v[0] += 0.3 * static_cast<double>(s.size() % 3);
    return log_normalize(v);
  }};
  GreedyDecoder<TableScorer> whole(scorer);
  whole.advance(0, 12);
  GreedyDecoder<TableScorer> chunked(scorer);
  for (std::size_t t = 0; t < 12; t += 5) chunked.advance(t, std::min<std::size_t>(t + 5, 12));
  EXPECT_EQ(whole.hypothesis(), chunked.hypothesis());
}

TEST(GreedyDecoder, ModelPrefixIsCausal) {
  ConvRnnt model(testing_models::tiny_model(), 2);
  CounterRng rng(3);
  const Tensor x = oracle::random_tensor({32, 24}, rng, -2.0, 2.0);
  const Tensor enc = model.encode(x, {});
  Tensor y = x.clone();
  for (std::size_t k = 0; k < 24; ++k) y.mutable_data()[20 * 24 + k] += 3.0;
  const Tensor enc_y = model.encode(y, {});
  ModelScorer sa(model, enc), sb(model, enc_y);
  GreedyDecoder<ModelScorer> da(sa), db(sb);
  da.advance(0, 20);
  db.advance(0, 20);
  EXPECT_EQ(da.hypothesis(), db.hypothesis());
  EXPECT_TRUE(oracle::bitwise_equal(da.state().pred.data(), db.state().pred.data()));
}

TEST(GreedyDecoder, ModelDecodeMatchesManualArgmax) {
  ConvRnnt model(testing_models::tiny_model(), 4);
  CounterRng rng(5);
  const Tensor enc = model.encode(oracle::random_tensor({6, 24}, rng), {});
  const Hypothesis h = greedy_decode(model, enc);
  // Recompute with the full label encoder on the decoded prefix.
  std::vector<int> prefix;
  double score = 0.0;
  for (std::size_t t = 0; t < 6; ++t) {
    for (std::size_t n = 0;; ++n) {
      NoGradGuard guard;
      const Tensor pred = model.predict(prefix, {});
      const Tensor row = slice(pred, 0, prefix.size(), prefix.size() + 1);
      const Tensor lp = log_softmax_last_axis(model.joint(slice(enc, 0, t, t + 1), row));
      const int best = argmax_lowest(lp.data());
      if (best == 0 || n == 10) {
        score += lp.data()[0];
        break;
      }
      score += lp.data()[static_cast<std::size_t>(best)];
      prefix.push_back(best);
    }
  }
  EXPECT_EQ(h.tokens, prefix);
  EXPECT_NEAR(h.score, score, 1e-10);
}
