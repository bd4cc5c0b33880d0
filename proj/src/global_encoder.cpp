#include "convrnnt/global_encoder.hpp"

#include <cmath>

#include "convrnnt/errors.hpp"

namespace convrnnt {

void GlobalEncoderConfig::validate() const {
  if (expansion == 0 || dw_kernel == 0 || se_divisor == 0) {
    throw ConfigError("global encoder: expansion, kernel and SE divisor must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("global encoder: dropout outside [0, 1)");
}

Tensor squeeze_excite(const Tensor& z, const SEWeights& w) {
  const Tensor context = causal_running_mean(z);
  const Tensor gate = sigmoid(linear(relu(linear(context, w.w2, w.b2)), w.w1, w.b1));
  return mul(z, gate);
}

GlobalBlock::GlobalBlock(std::size_t width, std::size_t dilation, const GlobalEncoderConfig& cfg,
                         CounterRng& init_rng)
    : width_(width),
      inner_(width * cfg.expansion),
      dilation_(dilation),
      dw_kernel_(cfg.dw_kernel),
      dropout_(cfg.dropout),
      bn1_(width * cfg.expansion),
      bn2_(width * cfg.expansion) {
  auto bound = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  pw1_weight_ = uniform_parameter({inner_, width_, 1}, bound(width_), init_rng);
  pw1_bias_ = uniform_parameter({inner_}, bound(width_), init_rng);
  dw_weight_ = uniform_parameter({inner_, 1, dw_kernel_}, bound(dw_kernel_), init_rng);
  dw_bias_ = uniform_parameter({inner_}, bound(dw_kernel_), init_rng);
  pw2_weight_ = uniform_parameter({width_, inner_, 1}, bound(inner_), init_rng);
  pw2_bias_ = uniform_parameter({width_}, bound(inner_), init_rng);
  const std::size_t bottleneck = cfg.se_bottleneck(width_);
  se_.w2 = uniform_parameter({bottleneck, width_}, bound(width_), init_rng);
  se_.b2 = uniform_parameter({bottleneck}, bound(width_), init_rng);
  se_.w1 = uniform_parameter({width_, bottleneck}, bound(bottleneck), init_rng);
  se_.b1 = uniform_parameter({width_}, bound(bottleneck), init_rng);
}

std::vector<Tensor> GlobalBlock::forward(const std::vector<Tensor>& xs, const ForwardContext& ctx) const {
  for (const Tensor& x : xs) {
    if (x.rank() != 2 || x.dim(1) != width_) {
      throw DimensionError("global block: expected [T×" + std::to_string(width_) + "], got " +
                           shape_str(x.shape()));
    }
  }
  // Pointwise convolutions and batch norm see every frame independently, so
  // the ragged batch runs through them as one [ΣT×C] matrix; only the
  // depthwise filter and SE need per-utterance boundaries.
  const Tensor x_all = xs.size() == 1 ? xs[0] : concat(xs, 0);
  Tensor h = transpose01(relu(linear(x_all, reshape(pw1_weight_, {inner_, width_}), pw1_bias_)));
  h = bn1_.forward(h, ctx.training);

  const std::size_t left = (dw_kernel_ - 1) * dilation_;
  std::vector<Tensor> parts;
  parts.reserve(xs.size());
  std::size_t offset = 0;
  for (const Tensor& x : xs) {
    const Tensor v = xs.size() == 1 ? h : slice(h, 1, offset, offset + x.dim(0));
    parts.push_back(relu(add_channel_bias(conv1d(pad_left_time(v, left), dw_weight_, dilation_, inner_), dw_bias_)));
    offset += x.dim(0);
  }
  h = parts.size() == 1 ? parts[0] : concat(parts, 1);
  h = bn2_.forward(h, ctx.training);
  const Tensor z_all = linear(transpose01(h), reshape(pw2_weight_, {width_, inner_}), pw2_bias_);

  std::vector<Tensor> out;
  out.reserve(xs.size());
  offset = 0;
  for (const Tensor& x : xs) {
    Tensor z = xs.size() == 1 ? z_all : slice(z_all, 0, offset, offset + x.dim(0));
    offset += x.dim(0);
    z = squeeze_excite(z, se_);
    if (ctx.training) z = dropout(z, dropout_, true, ctx.dropout_rng());
    out.push_back(add(x, z));
  }
  return out;
}

Tensor GlobalBlock::forward(const Tensor& x, const ForwardContext& ctx) const {
  return forward(std::vector<Tensor>{x}, ctx)[0];
}

void GlobalBlock::collect(const std::string& prefix, TensorList& out) const {
  out.push_back({prefix + ".pw1.weight", pw1_weight_});
  out.push_back({prefix + ".pw1.bias", pw1_bias_});
  bn1_.collect(prefix + ".bn1", out);
  out.push_back({prefix + ".dw.weight", dw_weight_});
  out.push_back({prefix + ".dw.bias", dw_bias_});
  bn2_.collect(prefix + ".bn2", out);
  out.push_back({prefix + ".pw2.weight", pw2_weight_});
  out.push_back({prefix + ".pw2.bias", pw2_bias_});
  out.push_back({prefix + ".se.w2", se_.w2});
  out.push_back({prefix + ".se.b2", se_.b2});
  out.push_back({prefix + ".se.w1", se_.w1});
  out.push_back({prefix + ".se.b1", se_.b1});
}

void GlobalBlock::collect_buffers(const std::string& prefix, TensorList& out) const {
  bn1_.collect_buffers(prefix + ".bn1", out);
  bn2_.collect_buffers(prefix + ".bn2", out);
}

std::size_t GlobalBlock::parameter_count(std::size_t width, const GlobalEncoderConfig& cfg) {
  const std::size_t inner = width * cfg.expansion;
  const std::size_t se = cfg.se_bottleneck(width);
  return (inner * width + inner) + 2 * inner + (inner * cfg.dw_kernel + inner) + 2 * inner +
         (width * inner + width) + (se * width + se) + (width * se + width);
}

GlobalEncoder::GlobalEncoder(std::size_t input_dim, std::size_t width, const GlobalEncoderConfig& cfg,
                             CounterRng& init_rng)
    : width_(width) {
  cfg.validate();
  if (input_dim != width) bridge_ = Linear(input_dim, width, init_rng);
  for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
    blocks_.emplace_back(width, cfg.dilation(i), cfg, init_rng);
  }
}

std::vector<Tensor> GlobalEncoder::forward(const std::vector<Tensor>& xs, const ForwardContext& ctx) const {
  std::vector<Tensor> h = xs;
  if (has_bridge()) {
    for (Tensor& v : h) v = bridge_.forward(v);
  }
  for (const GlobalBlock& block : blocks_) h = block.forward(h, ctx);
  return h;
}

Tensor GlobalEncoder::forward(const Tensor& x, const ForwardContext& ctx) const {
  return forward(std::vector<Tensor>{x}, ctx)[0];
}

void GlobalEncoder::collect(const std::string& prefix, TensorList& out) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
  }
}

void GlobalEncoder::collect_bridge(const std::string& prefix, TensorList& out) const {
  if (has_bridge()) bridge_.collect(prefix, out);
}

void GlobalEncoder::collect_buffers(const std::string& prefix, TensorList& out) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect_buffers(prefix + ".block" + std::to_string(i), out);
  }
}

std::size_t GlobalEncoder::parameter_count(std::size_t width, const GlobalEncoderConfig& cfg) {
  return cfg.n_blocks * GlobalBlock::parameter_count(width, cfg);
}

}  // namespace convrnnt
