#pragma once

#include <cstddef>
#include <vector>

#include "convrnnt/nn.hpp"

namespace convrnnt {

struct LocalEncoderConfig {
  bool enabled = true;
  std::vector<std::size_t> channels{100, 100, 64, 64};
  std::size_t kernel_t = 5;
  std::size_t kernel_f = 5;
  // Each input frame is read as in_channels × freq (3 stacked frames × 64 bands).
  std::size_t in_channels = 3;
  std::size_t freq = 64;

  std::size_t output_dim() const { return channels.empty() ? 0 : channels.back() * freq; }
  void validate() const;
};

// Stack of causal 2-D convolutions with ReLU over (time × frequency). Time is
// left-padded by k_t-1 zeros; frequency uses symmetric same padding, so the
// output keeps T frames of channels.back()·freq values.
class LocalEncoder {
 public:
  LocalEncoder() = default;
  LocalEncoder(const LocalEncoderConfig& cfg, CounterRng& init_rng);

  // x [T×(in_channels·freq)] → [T×output_dim()]
  Tensor forward(const Tensor& x) const;

  std::size_t output_dim() const { return cfg_.output_dim(); }
  const LocalEncoderConfig& config() const { return cfg_; }
  void collect(const std::string& prefix, TensorList& out) const;
  static std::size_t parameter_count(const LocalEncoderConfig& cfg);

  std::vector<Tensor>& weights() { return weights_; }
  std::vector<Tensor>& biases() { return biases_; }

 private:
  LocalEncoderConfig cfg_;
  std::vector<Tensor> weights_;  // [C_out×C_in×k_t×k_f]
  std::vector<Tensor> biases_;   // [C_out]
};

}  // namespace convrnnt
