#include "convrnnt/local_encoder.hpp"

#include <cmath>

#include "convrnnt/errors.hpp"

namespace convrnnt {

void LocalEncoderConfig::validate() const {
  if (channels.empty()) throw ConfigError("local encoder: at least one layer required");
  if (kernel_t == 0 || kernel_f == 0) throw ConfigError("local encoder: kernel sizes must be positive");
  if (kernel_f % 2 == 0) throw ConfigError("local encoder: frequency kernel must be odd for same padding");
  if (freq < kernel_f) {
    throw ConfigError("local encoder: frequency dimension " + std::to_string(freq) +
                      " smaller than kernel " + std::to_string(kernel_f));
  }
  for (std::size_t c : channels) {
    if (c == 0) throw ConfigError("local encoder: channel counts must be positive");
  }
}

LocalEncoder::LocalEncoder(const LocalEncoderConfig& cfg, CounterRng& init_rng) : cfg_(cfg) {
  cfg_.validate();
  std::size_t c_in = cfg_.in_channels;
  for (std::size_t c_out : cfg_.channels) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(c_in * cfg_.kernel_t * cfg_.kernel_f));
    weights_.push_back(uniform_parameter({c_out, c_in, cfg_.kernel_t, cfg_.kernel_f}, bound, init_rng));
    biases_.push_back(uniform_parameter({c_out}, bound, init_rng));
    c_in = c_out;
  }
}

Tensor LocalEncoder::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != cfg_.in_channels * cfg_.freq) {
    throw DimensionError("local encoder: expected [T×" + std::to_string(cfg_.in_channels * cfg_.freq) +
                         "], got " + shape_str(x.shape()));
  }
  const std::size_t t_len = x.dim(0);
  const std::size_t f_pad = (cfg_.kernel_f - 1) / 2;
  // [T×C×F] → [C×T×F]
  Tensor h = transpose01(reshape(x, {t_len, cfg_.in_channels, cfg_.freq}));
  for (std::size_t layer = 0; layer < weights_.size(); ++layer) {
    h = pad(pad_left_time(h, cfg_.kernel_t - 1), 2, f_pad, f_pad);
    h = relu(add_channel_bias(conv2d(h, weights_[layer]), biases_[layer]));
  }
  return reshape(transpose01(h), {t_len, output_dim()});
}

void LocalEncoder::collect(const std::string& prefix, TensorList& out) const {
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    out.push_back({prefix + ".conv" + std::to_string(i) + ".weight", weights_[i]});
    out.push_back({prefix + ".conv" + std::to_string(i) + ".bias", biases_[i]});
  }
}

std::size_t LocalEncoder::parameter_count(const LocalEncoderConfig& cfg) {
  std::size_t n = 0, c_in = cfg.in_channels;
  for (std::size_t c_out : cfg.channels) {
    n += c_out * c_in * cfg.kernel_t * cfg.kernel_f + c_out;
    c_in = c_out;
  }
  return n;
}

}  // namespace convrnnt
