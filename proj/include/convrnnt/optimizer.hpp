#pragma once

#include <cstdint>

#include "convrnnt/config.hpp"
#include "convrnnt/nn.hpp"

namespace convrnnt {

// peak · min(step/warmup, sqrt(warmup/step)); step ≥ 1.
double lr_at(std::uint64_t step, const OptimizerConfig& cfg);

// Adam with bias correction, driven by lr_at. Parameters are updated in place.
class Adam {
 public:
  Adam() = default;
  Adam(TensorList params, const OptimizerConfig& cfg);

  // Applies one update from the accumulated gradients and returns the lr used.
  double step();
  void zero_grad();
  // L2 norm of the current gradients (missing gradients count as zero).
  double grad_norm() const;

  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t steps) { steps_ = steps; }
  const TensorList& params() const { return params_; }
  TensorList& first_moments() { return m_; }
  TensorList& second_moments() { return v_; }
  const TensorList& first_moments() const { return m_; }
  const TensorList& second_moments() const { return v_; }

 private:
  OptimizerConfig cfg_;
  TensorList params_;
  TensorList m_;
  TensorList v_;
  std::uint64_t steps_ = 0;
};

}  // namespace convrnnt
