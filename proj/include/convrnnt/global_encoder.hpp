#pragma once

#include <cstddef>
#include <vector>

#include "convrnnt/nn.hpp"

namespace convrnnt {

struct GlobalEncoderConfig {
  bool enabled = true;
  std::size_t n_blocks = 6;
  std::size_t expansion = 2;
  std::size_t dw_kernel = 3;
  std::size_t se_divisor = 8;
  std::size_t se_min = 8;
  double dropout = 0.1;
  // Block i (1-based) uses dilation 2^i; when false, 2^(i-1).
  bool one_based_dilation = true;

  std::size_t dilation(std::size_t block_index) const {
    return std::size_t{1} << (one_based_dilation ? block_index + 1 : block_index);
  }
  std::size_t se_bottleneck(std::size_t width) const {
    return std::max(width / se_divisor, se_min);
  }
  void validate() const;
};

// Squeeze-and-excitation weights: gate = sigmoid(W1·relu(W2·m + b2) + b1).
struct SEWeights {
  Tensor w2;  // [bottleneck×D]
  Tensor b2;  // [bottleneck]
  Tensor w1;  // [D×bottleneck]
  Tensor b1;  // [D]
};

// z_i ⊗ sigmoid(W1 relu(W2 · mean(z_1..z_i))), row-wise over z [T×D].
Tensor squeeze_excite(const Tensor& z, const SEWeights& w);

// Residual block: PW(D→eD) → ReLU → BN → causal dilated depthwise → ReLU → BN
// → PW(eD→D) → SE → dropout → + x.
class GlobalBlock {
 public:
  GlobalBlock() = default;
  GlobalBlock(std::size_t width, std::size_t dilation, const GlobalEncoderConfig& cfg,
              CounterRng& init_rng);

  // Ragged batch of [T_b×D]; batch norm statistics are shared across the batch.
  std::vector<Tensor> forward(const std::vector<Tensor>& xs, const ForwardContext& ctx) const;
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;

  std::size_t dilation() const { return dilation_; }
  void collect(const std::string& prefix, TensorList& out) const;
  void collect_buffers(const std::string& prefix, TensorList& out) const;
  static std::size_t parameter_count(std::size_t width, const GlobalEncoderConfig& cfg);

  Tensor& pw1_weight() { return pw1_weight_; }
  Tensor& pw1_bias() { return pw1_bias_; }
  Tensor& dw_weight() { return dw_weight_; }
  Tensor& dw_bias() { return dw_bias_; }
  Tensor& pw2_weight() { return pw2_weight_; }
  Tensor& pw2_bias() { return pw2_bias_; }
  SEWeights& se() { return se_; }
  BatchNorm& bn1() { return bn1_; }
  BatchNorm& bn2() { return bn2_; }

 private:
  std::size_t width_ = 0;
  std::size_t inner_ = 0;
  std::size_t dilation_ = 1;
  std::size_t dw_kernel_ = 3;
  double dropout_ = 0.0;
  Tensor pw1_weight_, pw1_bias_;  // [eD×D×1], [eD]
  Tensor dw_weight_, dw_bias_;    // [eD×1×k], [eD]
  Tensor pw2_weight_, pw2_bias_;  // [D×eD×1], [D]
  mutable BatchNorm bn1_, bn2_;
  SEWeights se_;
};

// Stack of GlobalBlocks with dilations 2, 4, ..., 2^n. When the incoming
// feature width differs from the block width, a linear bridge maps it first.
class GlobalEncoder {
 public:
  GlobalEncoder() = default;
  GlobalEncoder(std::size_t input_dim, std::size_t width, const GlobalEncoderConfig& cfg,
                CounterRng& init_rng);

  std::vector<Tensor> forward(const std::vector<Tensor>& xs, const ForwardContext& ctx) const;
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;

  std::size_t width() const { return width_; }
  bool has_bridge() const { return bridge_.weight().defined(); }
  std::vector<GlobalBlock>& blocks() { return blocks_; }
  const std::vector<GlobalBlock>& blocks() const { return blocks_; }

  // Blocks only (the bridge is reported separately).
  void collect(const std::string& prefix, TensorList& out) const;
  void collect_bridge(const std::string& prefix, TensorList& out) const;
  void collect_buffers(const std::string& prefix, TensorList& out) const;
  static std::size_t parameter_count(std::size_t width, const GlobalEncoderConfig& cfg);

 private:
  std::size_t width_ = 0;
  mutable Linear bridge_;
  std::vector<GlobalBlock> blocks_;
};

}  // namespace convrnnt
