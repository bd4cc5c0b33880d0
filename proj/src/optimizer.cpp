#include "convrnnt/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "convrnnt/errors.hpp"

namespace convrnnt {

double lr_at(std::uint64_t step, const OptimizerConfig& cfg) {
  if (step == 0) throw ConfigError("lr_at: step must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(cfg.warmup_steps);
  return cfg.peak_lr * std::min(s / w, std::sqrt(w / s));
}

Adam::Adam(TensorList params, const OptimizerConfig& cfg) : cfg_(cfg), params_(std::move(params)) {
  for (const auto& p : params_) {
    m_.push_back({p.name, Tensor(p.tensor.shape())});
    v_.push_back({p.name, Tensor(p.tensor.shape())});
  }
}

double Adam::step() {
  ++steps_;
  const double lr = lr_at(steps_, cfg_);
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].tensor;
    if (!p.has_grad()) continue;  // never reached by the loss this step: moments unchanged
    const auto g = p.grad();
    auto w = p.mutable_data();
    auto m = m_[i].tensor.mutable_data();
    auto v = v_[i].tensor.mutable_data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.epsilon);
    }
  }
  return lr;
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double Adam::grad_norm() const {
  double acc = 0.0;
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) acc += g * g;
  }
  return std::sqrt(acc);
}

}  // namespace convrnnt
