#include "convrnnt/rnnt_loss.hpp"

#include <cmath>
#include <memory>
#include <string>
#include <utility>

#include "convrnnt/errors.hpp"

namespace convrnnt {

double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b <= kLogZero) return a;
  return a + std::log1p(std::exp(b - a));
}

double AlignmentLattice::forward_log_likelihood() const {
  const std::size_t last = at(frames - 1, labels);
  return alpha[last] + log_blank[last];
}

namespace {

void check_inputs(const Tensor& log_probs, std::span<const int> labels, int blank_id) {
  if (log_probs.rank() != 3) {
    throw DimensionError("rnnt: expected [T×(U+1)×(V+1)], got " + shape_str(log_probs.shape()));
  }
  if (log_probs.dim(0) == 0) throw DimensionError("rnnt: need at least one frame");
  if (log_probs.dim(1) != labels.size() + 1) {
    throw DimensionError("rnnt: lattice has " + std::to_string(log_probs.dim(1)) +
                         " label positions for " + std::to_string(labels.size()) + " labels");
  }
  const auto v1 = static_cast<int>(log_probs.dim(2));
  if (blank_id < 0 || blank_id >= v1) throw InputError("rnnt: blank id out of range");
  for (int y : labels) {
    if (y < 0 || y >= v1 || y == blank_id) {
      throw InputError("rnnt: label id " + std::to_string(y) + " invalid");
    }
  }
}

}  // namespace

AlignmentLattice build_lattice(const Tensor& log_probs, std::span<const int> labels, int blank_id) {
  check_inputs(log_probs, labels, blank_id);
  AlignmentLattice lat;
  const std::size_t T = log_probs.dim(0), U = labels.size(), V1 = log_probs.dim(2);
  lat.frames = T;
  lat.labels = U;
  const auto lp = log_probs.data();
  lat.log_blank.resize(T * (U + 1));
  lat.log_label.resize(T * U);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= U; ++u) {
      const double* row = lp.data() + (t * (U + 1) + u) * V1;
      lat.log_blank[lat.at(t, u)] = row[blank_id];
      if (u < U) lat.log_label[t * U + u] = row[labels[u]];
    }
  }

  lat.alpha.assign(T * (U + 1), kLogZero);
  lat.alpha[0] = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) continue;
      double a = kLogZero;
      if (t > 0) a = lat.alpha[lat.at(t - 1, u)] + lat.log_blank[lat.at(t - 1, u)];
      if (u > 0) a = log_add(a, lat.alpha[lat.at(t, u - 1)] + lat.log_label[t * U + u - 1]);
      lat.alpha[lat.at(t, u)] = a;
    }
  }

  lat.beta.assign(T * (U + 1), kLogZero);
  for (std::size_t t = T; t-- > 0;) {
    for (std::size_t u = U + 1; u-- > 0;) {
      double b = kLogZero;
      if (t == T - 1 && u == U) {
        b = lat.log_blank[lat.at(t, u)];
      } else {
        if (t + 1 < T) b = lat.beta[lat.at(t + 1, u)] + lat.log_blank[lat.at(t, u)];
        if (u < U) b = log_add(b, lat.beta[lat.at(t, u + 1)] + lat.log_label[t * U + u]);
      }
      lat.beta[lat.at(t, u)] = b;
    }
  }
  return lat;
}

LossResult rnnt_forward(const Tensor& log_probs, std::span<const int> labels, int blank_id) {
  const AlignmentLattice lat = build_lattice(log_probs, labels, blank_id);
  const std::size_t T = lat.frames, U = lat.labels, V1 = log_probs.dim(2);
  const double ll = lat.forward_log_likelihood();

  LossResult r;
  r.nll = -ll;
  r.grad_logits.assign(log_probs.numel(), 0.0);
  const auto lp = log_probs.data();
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= U; ++u) {
      const std::size_t node = lat.at(t, u);
      const double alpha = lat.alpha[node];
      const double occupancy = std::exp(alpha + lat.beta[node] - ll);
      double blank_term;
      if (t + 1 < T) {
        blank_term = std::exp(alpha + lat.log_blank[node] + lat.beta[lat.at(t + 1, u)] - ll);
      } else {
        blank_term = u == U ? std::exp(alpha + lat.log_blank[node] - ll) : 0.0;
      }
      const double label_term =
          u < U ? std::exp(alpha + lat.log_label[t * U + u] + lat.beta[lat.at(t, u + 1)] - ll) : 0.0;

      const std::size_t base = node * V1;
      for (std::size_t k = 0; k < V1; ++k) {
        r.grad_logits[base + k] = std::exp(lp[base + k]) * occupancy;
      }
      r.grad_logits[base + blank_id] -= blank_term;
      if (u < U) r.grad_logits[base + labels[u]] -= label_term;
    }
  }
  return r;
}

Tensor rnnt_loss(const Tensor& logits, std::span<const int> labels, int blank_id) {
  Tensor log_probs;
  {
    NoGradGuard no_grad;
    log_probs = log_softmax_last_axis(logits);
  }
  LossResult result = rnnt_forward(log_probs, labels, blank_id);

  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = {1};
  impl->data = {result.nll};
  if (grad_enabled() && logits.requires_grad()) {
    auto node = std::make_shared<detail::Node>();
    node->op = "rnnt_loss";
    node->inputs.push_back(logits.impl());
    node->backward = [li = logits.impl(), g = std::move(result.grad_logits)](
                         const detail::TensorImpl& out) {
      const double scale_out = out.grad[0];
      auto& gl = li->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gl[i] += scale_out * g[i];
    };
    impl->node = std::move(node);
    impl->requires_grad = true;
  }
  return Tensor::from_impl(std::move(impl));
}

}  // namespace convrnnt
