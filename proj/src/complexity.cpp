#include "convrnnt/complexity.hpp"

#include <iomanip>
#include <ostream>
#include <stdexcept>

#include "convrnnt/config.hpp"
#include "convrnnt/errors.hpp"

namespace convrnnt {

Flops checked_product(std::initializer_list<std::uint64_t> factors) {
  Flops acc = 1;
  for (std::uint64_t f : factors) {
    if (__builtin_mul_overflow(acc, f, &acc)) throw std::overflow_error("FLOP count overflows 64 bits");
  }
  return acc;
}

Flops checked_sum(Flops a, Flops b) {
  Flops out = 0;
  if (__builtin_add_overflow(a, b, &out)) throw std::overflow_error("FLOP count overflows 64 bits");
  return out;
}

Flops conv_flops(std::uint64_t c_in, std::uint64_t k, std::uint64_t c_out, std::uint64_t w, std::uint64_t h) {
  return checked_product({4, c_in, k, k, c_out, w, h});
}

Flops conv_flops(std::uint64_t c_in, std::uint64_t k_t, std::uint64_t k_f, std::uint64_t c_out, std::uint64_t w,
                 std::uint64_t h) {
  return checked_product({4, c_in, k_t, k_f, c_out, w, h});
}

Flops lstm_flops(std::uint64_t layers, std::uint64_t seq, std::uint64_t input, std::uint64_t hidden) {
  return checked_product({8, layers, seq, checked_sum(input, hidden), hidden});
}

Flops attention_flops(std::uint64_t n, std::uint64_t d, std::uint64_t heads) {
  if (heads == 0 || d % heads != 0) throw ConfigError("attention: d must be divisible by heads");
  return checked_sum(checked_product({8, n, d, d}), checked_product({4, n, n, d}));
}

Flops ffn_flops(std::uint64_t n, std::uint64_t d, std::uint64_t d_ff) { return checked_product({4, n, d, d_ff}); }

Flops linear_flops(std::uint64_t n, std::uint64_t in, std::uint64_t out) { return checked_product({2, n, in, out}); }

void FlopsReport::add(std::string name, Flops flops) {
  total = checked_sum(total, flops);
  per_layer.push_back({std::move(name), flops});
}

FlopsReport convrnnt_flops(const ModelConfig& cfg, std::uint64_t n) {
  cfg.validate();
  FlopsReport r{"convrnnt", n, {}, 0};
  const std::uint64_t d = cfg.input_dim();
  if (cfg.local.enabled) {
    std::uint64_t c_in = cfg.local.in_channels;
    for (std::size_t l = 0; l < cfg.local.channels.size(); ++l) {
      const std::uint64_t c_out = cfg.local.channels[l];
      r.add("local.conv" + std::to_string(l),
            conv_flops(c_in, cfg.local.kernel_t, cfg.local.kernel_f, c_out, n, cfg.local.freq));
      c_in = c_out;
    }
  }
  if (cfg.global.enabled) {
    const std::uint64_t g_in = cfg.local.enabled ? cfg.local.output_dim() : d;
    if (g_in != d) r.add("global.bridge", linear_flops(n, g_in, d));
    const std::uint64_t inner = cfg.global.expansion * d;
    const std::uint64_t se = cfg.global.se_bottleneck(d);
    for (std::size_t b = 0; b < cfg.global.n_blocks; ++b) {
      const std::string p = "global.block" + std::to_string(b);
      r.add(p + ".pw1", conv_flops(d, 1, inner, n, 1));
      // Depthwise filters are counted with the generic formula (C_i = channels).
      r.add(p + ".dw", conv_flops(inner, cfg.global.dw_kernel, inner, n, 1));
      r.add(p + ".pw2", conv_flops(inner, 1, d, n, 1));
      r.add(p + ".se", checked_sum(linear_flops(n, d, se), linear_flops(n, se, d)));
    }
  }
  const std::uint64_t fused = (cfg.local.enabled ? cfg.local.output_dim() : 0) + (cfg.global.enabled ? d : 0);
  r.add("fuse", linear_flops(n, fused, d));
  std::uint64_t in = d;
  const auto& t = cfg.transducer;
  for (std::size_t l = 0; l < t.enc_layers; ++l) {
    r.add("encoder.lstm" + std::to_string(l), lstm_flops(1, n, in, t.enc_hidden));
    r.add("encoder.proj" + std::to_string(l), linear_flops(n, t.enc_hidden, t.proj_dim));
    in = t.proj_dim;
  }
  return r;
}

FlopsReport conformer_flops(const ConformerConfig& cfg, std::uint64_t n) {
  FlopsReport r{"conformer", n, {}, 0};
  // Two 3×3 stride-2 conv2d layers over (time × feature); output sizes ceil(x/2).
  const auto half = [](std::uint64_t x) { return (x + 1) / 2; };
  const std::uint64_t t1 = half(n), f1 = half(cfg.input_dim);
  const std::uint64_t t2 = half(t1), f2 = half(f1);
  const std::uint64_t c = cfg.subsample_channels;
  r.add("subsample.conv0", conv_flops(1, 3, c, t1, f1));
  r.add("subsample.conv1", conv_flops(c, 3, c, t2, f2));
  r.add("subsample.linear", linear_flops(t2, c * f2, cfg.d_model));
  const std::uint64_t m = t2, d = cfg.d_model;
  for (std::uint64_t l = 0; l < cfg.layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    r.add(p + ".ffn1", ffn_flops(m, d, cfg.d_ff));
    r.add(p + ".mha", attention_flops(m, d, cfg.heads));
    r.add(p + ".conv.pw1", conv_flops(d, 1, 2 * d, m, 1));
    r.add(p + ".conv.dw", conv_flops(d, cfg.conv_kernel, d, m, 1));
    r.add(p + ".conv.pw2", conv_flops(d, 1, d, m, 1));
    r.add(p + ".ffn2", ffn_flops(m, d, cfg.d_ff));
  }
  return r;
}

FlopsReport encoder_flops(const std::string& model, std::uint64_t n) {
  if (model == "convrnnt") return convrnnt_flops(full_model_config(), n);
  if (model == "conformer") return conformer_flops(ConformerConfig{}, n);
  throw ConfigError("unknown model '" + model + "' (expected convrnnt or conformer)");
}

std::vector<std::uint64_t> parse_length_range(const std::string& spec) {
  std::vector<std::uint64_t> parts;
  std::size_t pos = 0;
  try {
    while (true) {
      const auto colon = spec.find(':', pos);
      parts.push_back(std::stoull(spec.substr(pos, colon - pos)));
      if (colon == std::string::npos) break;
      pos = colon + 1;
    }
  } catch (const std::logic_error&) {
    throw ConfigError("bad length range '" + spec + "'");
  }
  if (parts.size() == 1) parts = {parts[0], parts[0], 1};
  if (parts.size() != 3 || parts[2] == 0 || parts[0] == 0 || parts[0] > parts[1]) {
    throw ConfigError("length range must be start:stop:step with 0 < start <= stop, step > 0");
  }
  std::vector<std::uint64_t> out;
  for (std::uint64_t v = parts[0]; v <= parts[1]; v += parts[2]) out.push_back(v);
  return out;
}

void write_flops_csv(std::ostream& os, std::span<const FlopsReport> reports) {
  os << "length,gflops,model\n";
  for (const auto& r : reports) {
    os << r.sequence_length << ',' << std::setprecision(12) << r.gflops() << ',' << r.model << '\n';
  }
}

}  // namespace convrnnt
