#pragma once

// Greedy transducer search. The search is written against a Scorer concept so
// tests can drive it with hand-built distributions:
//   typename Scorer::State;
//   State initial() const;
//   std::vector<double> log_probs(std::size_t t, const State&) const;  // over V+1
//   void emit(State&, int token) const;

#include <cstddef>
#include <span>
#include <vector>

#include "convrnnt/errors.hpp"
#include "convrnnt/transducer.hpp"

namespace convrnnt {

struct Hypothesis {
  std::vector<int> tokens;
  double score = 0.0;  // sum of the log-probabilities of every chosen symbol

  bool operator==(const Hypothesis&) const = default;
};

struct DecodeOptions {
  std::size_t max_symbols_per_frame = 10;
  int blank_id = 0;
};

// Index of the largest entry; ties go to the lowest index.
inline int argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < values.size(); ++k) {
    if (values[k] > values[best]) best = k;
  }
  return static_cast<int>(best);
}

template <typename Scorer>
class GreedyDecoder {
 public:
  explicit GreedyDecoder(const Scorer& scorer, DecodeOptions opts = {})
      : scorer_(scorer), opts_(opts), state_(scorer.initial()) {
    if (opts_.max_symbols_per_frame == 0) throw ConfigError("max_symbols_per_frame must be >= 1");
  }

  // Consumes frames [begin, end). Calls must cover consecutive ranges.
  void advance(std::size_t begin, std::size_t end) {
    for (std::size_t t = begin; t < end; ++t) {
      std::size_t emitted = 0;
      for (;;) {
        const std::vector<double> lp = scorer_.log_probs(t, state_);
        const int best = argmax_lowest(lp);
        if (best == opts_.blank_id || emitted == opts_.max_symbols_per_frame) {
          // At the cap the frame is closed with a blank regardless of the argmax.
          hyp_.score += lp[static_cast<std::size_t>(opts_.blank_id)];
          break;
        }
        hyp_.score += lp[static_cast<std::size_t>(best)];
        hyp_.tokens.push_back(best);
        scorer_.emit(state_, best);
        ++emitted;
      }
    }
  }

  const Hypothesis& hypothesis() const { return hyp_; }
  const typename Scorer::State& state() const { return state_; }

 private:
  const Scorer& scorer_;
  DecodeOptions opts_;
  typename Scorer::State state_;
  Hypothesis hyp_;
};

// Scores frames of a precomputed encoder output with the model's label
// encoder and joint network. Never records autodiff graphs.
class ModelScorer {
 public:
  struct State {
    LabelEncoder::State label;
    Tensor pred;  // [1×P] label-encoder output for the current prefix
  };

  ModelScorer(const ConvRnnt& model, Tensor enc) : model_(model), enc_(std::move(enc)) {}

  State initial() const;
  std::vector<double> log_probs(std::size_t t, const State& state) const;
  void emit(State& state, int token) const;
  std::size_t frames() const { return enc_.dim(0); }

 private:
  const ConvRnnt& model_;
  Tensor enc_;
};

Hypothesis greedy_decode(const ConvRnnt& model, const Tensor& enc, DecodeOptions opts = {});

}  // namespace convrnnt
