#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "convrnnt/rng.hpp"
#include "convrnnt/tensor.hpp"

namespace convrnnt {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Ordered (name, tensor) list; order is the serialization and optimizer order.
using TensorList = std::vector<NamedTensor>;

std::size_t count_scalars(const TensorList& tensors);

// Per-forward switches and the stream that feeds dropout.
struct ForwardContext {
  bool training = false;
  CounterRng* rng = nullptr;

  CounterRng& dropout_rng() const;
};

// Trainable tensor filled from uniform(-bound, bound).
Tensor uniform_parameter(Shape shape, double bound, CounterRng& rng);
Tensor constant_parameter(Shape shape, double value);

// y = x·Wᵀ + b with W [out×in]; init uniform(±1/√in).
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, CounterRng& rng, bool with_bias = true);

  Tensor forward(const Tensor& x) const { return linear(x, weight_, bias_); }
  void collect(const std::string& prefix, TensorList& out) const;

  std::size_t in_features() const { return weight_.dim(1); }
  std::size_t out_features() const { return weight_.dim(0); }
  static std::size_t parameter_count(std::size_t in, std::size_t out, bool with_bias = true) {
    return in * out + (with_bias ? out : 0);
  }

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
};

// Learnable affine + running statistics for batchnorm_time.
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels);

  Tensor forward(const Tensor& x, bool training) { return batchnorm_time(x, gamma_, beta_, stats_, training); }
  // Normalizes a ragged batch of [C×T_b] jointly over all valid frames.
  std::vector<Tensor> forward(const std::vector<Tensor>& xs, bool training);

  void collect(const std::string& prefix, TensorList& out) const;
  void collect_buffers(const std::string& prefix, TensorList& out) const;

  Tensor& gamma() { return gamma_; }
  Tensor& beta() { return beta_; }
  RunningStats& stats() { return stats_; }

 private:
  Tensor gamma_;
  Tensor beta_;
  RunningStats stats_;
};

}  // namespace convrnnt
