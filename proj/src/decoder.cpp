#include "convrnnt/decoder.hpp"

#include <vector>

namespace convrnnt {

ModelScorer::State ModelScorer::initial() const {
  NoGradGuard no_grad;
  State s{model_.label_encoder().initial_state(), {}};
  s.pred = model_.label_encoder().step(s.label, std::nullopt);
  return s;
}

std::vector<double> ModelScorer::log_probs(std::size_t t, const State& state) const {
  NoGradGuard no_grad;
  const Tensor logits = model_.joint(slice(enc_, 0, t, t + 1), state.pred);
  const Tensor lp = log_softmax_last_axis(logits);
  return {lp.data().begin(), lp.data().end()};
}

void ModelScorer::emit(State& state, int token) const {
  NoGradGuard no_grad;
  state.pred = model_.label_encoder().step(state.label, token);
}

Hypothesis greedy_decode(const ConvRnnt& model, const Tensor& enc, DecodeOptions opts) {
  opts.blank_id = model.config().transducer.blank_id;
  ModelScorer scorer(model, enc);
  GreedyDecoder<ModelScorer> decoder(scorer, opts);
  decoder.advance(0, scorer.frames());
  return decoder.hypothesis();
}

}  // namespace convrnnt
