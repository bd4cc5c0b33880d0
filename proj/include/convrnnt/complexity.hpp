#pragma once

// Closed-form FLOP counts for the encoder families compared in the
// complexity study. All arithmetic is exact 64-bit integer math; overflow
// throws std::overflow_error instead of wrapping.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "convrnnt/transducer.hpp"

namespace convrnnt {

using Flops = std::uint64_t;

// Product of all factors, or std::overflow_error.
Flops checked_product(std::initializer_list<std::uint64_t> factors);
Flops checked_sum(Flops a, Flops b);

// 4·C_i·k²·C_o·W·H
Flops conv_flops(std::uint64_t c_in, std::uint64_t k, std::uint64_t c_out, std::uint64_t w,
                 std::uint64_t h);
// Rectangular-kernel form, k² → k_t·k_f.
Flops conv_flops(std::uint64_t c_in, std::uint64_t k_t, std::uint64_t k_f, std::uint64_t c_out,
                 std::uint64_t w, std::uint64_t h);
// 8·l·s·(I+d)·d
Flops lstm_flops(std::uint64_t layers, std::uint64_t seq, std::uint64_t input, std::uint64_t hidden);
// 8·n·d² (Q,K,V,O projections) + 4·n²·d (scores and weighted sum). The head
// count does not change the total.
Flops attention_flops(std::uint64_t n, std::uint64_t d, std::uint64_t heads);
// 4·n·d·d_ff
Flops ffn_flops(std::uint64_t n, std::uint64_t d, std::uint64_t d_ff);
// 2·n·in·out
Flops linear_flops(std::uint64_t n, std::uint64_t in, std::uint64_t out);

struct LayerFlops {
  std::string name;
  Flops flops = 0;
};

struct FlopsReport {
  std::string model;
  std::uint64_t sequence_length = 0;
  std::vector<LayerFlops> per_layer;
  Flops total = 0;

  void add(std::string name, Flops flops);
  double gflops() const { return static_cast<double>(total) / 1e9; }
};

// Conformer encoder used as the comparison baseline.
struct ConformerConfig {
  std::uint64_t input_dim = 192;
  std::uint64_t subsample_channels = 256;  // two 3×3 stride-2 conv2d layers
  std::uint64_t layers = 14;
  std::uint64_t d_model = 256;
  std::uint64_t heads = 4;
  std::uint64_t d_ff = 1024;
  std::uint64_t conv_kernel = 31;
};

// Full ConvRNN-T acoustic path (frontends + LSTM stack) at n input frames.
FlopsReport convrnnt_flops(const ModelConfig& cfg, std::uint64_t n);
FlopsReport conformer_flops(const ConformerConfig& cfg, std::uint64_t n);

// Built-in full-size presets: "convrnnt" or "conformer"; otherwise ConfigError.
FlopsReport encoder_flops(const std::string& model, std::uint64_t n);

// "start:stop:step" (inclusive stop) or a single length.
std::vector<std::uint64_t> parse_length_range(const std::string& spec);

// CSV with header `length,gflops,model`, one row per (model, length).
void write_flops_csv(std::ostream& os, std::span<const FlopsReport> reports);

}  // namespace convrnnt
