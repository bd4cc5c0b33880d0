#pragma once

// RNN-T alignment loss over the T×(U+1) trellis, computed in the log domain.
// Horizontal moves (t→t+1) emit blank; vertical moves (u→u+1) emit y_{u+1}.

#include <cstddef>
#include <span>
#include <vector>

#include "convrnnt/tensor.hpp"

namespace convrnnt {

// Stand-in for -inf: absorbing under log_add and never produces NaN.
inline constexpr double kLogZero = -1e30;

double log_add(double a, double b);

struct AlignmentLattice {
  std::size_t frames = 0;  // T
  std::size_t labels = 0;  // U
  std::vector<double> log_blank;  // [T×(U+1)]
  std::vector<double> log_label;  // [T×U], log p(y_{u+1} | t, u)
  std::vector<double> alpha;      // [T×(U+1)]
  std::vector<double> beta;       // [T×(U+1)]

  std::size_t at(std::size_t t, std::size_t u) const { return t * (labels + 1) + u; }
  // log P(y | x) from the forward variables.
  double forward_log_likelihood() const;
  // log P(y | x) from the backward variables (β(0,0)).
  double backward_log_likelihood() const { return beta[0]; }
};

struct LossResult {
  double nll = 0.0;
  std::vector<double> grad_logits;  // d nll / d logits, [T×(U+1)×(V+1)]
};

// log_probs: log-softmax output [T×(U+1)×(V+1)]. labels exclude blank.
AlignmentLattice build_lattice(const Tensor& log_probs, std::span<const int> labels, int blank_id);

// Loss and its gradient w.r.t. the raw logits that produced log_probs:
// d nll/d logit(t,u,k) = p_k(t,u)·γ(t,u) − γ_k(t,u) with γ the posterior
// occupancy of node (t,u) and γ_k that of leaving it with symbol k.
LossResult rnnt_forward(const Tensor& log_probs, std::span<const int> labels, int blank_id);

// Autodiff entry point: applies log-softmax to logits and returns the scalar
// nll, whose backward uses the occupancy gradient above.
Tensor rnnt_loss(const Tensor& logits, std::span<const int> labels, int blank_id);

}  // namespace convrnnt
