#include "convrnnt/nn.hpp"

#include <cmath>

#include "convrnnt/errors.hpp"

namespace convrnnt {

std::size_t count_scalars(const TensorList& tensors) {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.tensor.numel();
  return n;
}

CounterRng& ForwardContext::dropout_rng() const {
  if (!rng) throw ConfigError("training forward pass requires a dropout RNG");
  return *rng;
}

Tensor uniform_parameter(Shape shape, double bound, CounterRng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  t.set_requires_grad(true);
  return t;
}

Tensor constant_parameter(Shape shape, double value) {
  Tensor t(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

Linear::Linear(std::size_t in, std::size_t out, CounterRng& rng, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = uniform_parameter({out, in}, bound, rng);
  if (with_bias) bias_ = uniform_parameter({out}, bound, rng);
}

void Linear::collect(const std::string& prefix, TensorList& out) const {
  out.push_back({prefix + ".weight", weight_});
  if (bias_.defined()) out.push_back({prefix + ".bias", bias_});
}

BatchNorm::BatchNorm(std::size_t channels)
    : gamma_(constant_parameter({channels}, 1.0)),
      beta_(constant_parameter({channels}, 0.0)),
      stats_(RunningStats::identity(channels)) {}

std::vector<Tensor> BatchNorm::forward(const std::vector<Tensor>& xs, bool training) {
  if (xs.size() == 1) return {forward(xs[0], training)};
  const Tensor joined = batchnorm_time(concat(xs, 1), gamma_, beta_, stats_, training);
  std::vector<Tensor> parts;
  parts.reserve(xs.size());
  std::size_t offset = 0;
  for (const Tensor& x : xs) {
    parts.push_back(slice(joined, 1, offset, offset + x.dim(1)));
    offset += x.dim(1);
  }
  return parts;
}

void BatchNorm::collect(const std::string& prefix, TensorList& out) const {
  out.push_back({prefix + ".gamma", gamma_});
  out.push_back({prefix + ".beta", beta_});
}

void BatchNorm::collect_buffers(const std::string& prefix, TensorList& out) const {
  out.push_back({prefix + ".running_mean", stats_.mean});
  out.push_back({prefix + ".running_var", stats_.var});
}

}  // namespace convrnnt
