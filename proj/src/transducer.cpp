#include "convrnnt/transducer.hpp"

#include <cmath>
#include <string>

#include "convrnnt/errors.hpp"
#include "convrnnt/rnnt_loss.hpp"

namespace convrnnt {

void TransducerConfig::validate() const {
  if (proj_dim == 0 || embed_dim == 0 || joint_dim == 0 || vocab_size == 0) {
    throw ConfigError("transducer dimensions must be positive");
  }
  if (enc_layers > 0 && enc_hidden == 0) throw ConfigError("enc_hidden must be positive");
  if (label_layers > 0 && label_hidden == 0) throw ConfigError("label_hidden must be positive");
  if (blank_id != 0) throw ConfigError("blank_id must be 0 (tokens occupy ids 1..vocab_size)");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(l2 >= 0.0)) throw ConfigError("l2 must be non-negative");
}

void ModelConfig::validate() const {
  features.validate();
  if (!local.enabled && !global.enabled) {
    throw ConfigError("at least one of the local and global encoders must be enabled");
  }
  if (local.enabled) {
    local.validate();
    if (local.in_channels * local.freq != input_dim()) {
      throw ConfigError("local encoder layout " + std::to_string(local.in_channels) + "x" +
                        std::to_string(local.freq) + " does not match input dimension " +
                        std::to_string(input_dim()));
    }
  }
  if (global.enabled) global.validate();
  transducer.validate();
}

// ---- LSTM -----------------------------------------------------------------

LstmLayer::LstmLayer(std::size_t input_dim, std::size_t hidden, std::size_t proj_dim,
                     CounterRng& init_rng)
    : hidden_(hidden) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_ih_ = uniform_parameter({4 * hidden, input_dim}, bound, init_rng);
  w_hh_ = uniform_parameter({4 * hidden, hidden}, bound, init_rng);
  bias_ = constant_parameter({4 * hidden}, 0.0);
  auto b = bias_.mutable_data();
  for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = 1.0;
  proj_ = Linear(hidden, proj_dim, init_rng);
}

LstmLayer::State LstmLayer::zero_state() const {
  return {Tensor({1, hidden_}), Tensor({1, hidden_})};
}

Tensor LstmLayer::cell(const Tensor& gates, State& state) const {
  const std::size_t h = hidden_;
  const Tensor i = sigmoid(slice(gates, 1, 0, h));
  const Tensor f = sigmoid(slice(gates, 1, h, 2 * h));
  const Tensor g = tanh(slice(gates, 1, 2 * h, 3 * h));
  const Tensor o = sigmoid(slice(gates, 1, 3 * h, 4 * h));
  state.c = add(mul(f, state.c), mul(i, g));
  state.h = mul(o, tanh(state.c));
  return state.h;
}

Tensor LstmLayer::step(const Tensor& x, State& state) const {
  return cell(add(linear(x, w_ih_, bias_), linear(state.h, w_hh_)), state);
}

Tensor LstmLayer::run(const Tensor& x, State& state) const {
  const Tensor xw = linear(x, w_ih_, bias_);
  std::vector<Tensor> rows;
  rows.reserve(x.dim(0));
  for (std::size_t t = 0; t < x.dim(0); ++t) {
    rows.push_back(cell(add(slice(xw, 0, t, t + 1), linear(state.h, w_hh_)), state));
  }
  return concat(rows, 0);
}

void LstmLayer::collect(const std::string& prefix, TensorList& out) const {
  out.push_back({prefix + ".w_ih", w_ih_});
  out.push_back({prefix + ".w_hh", w_hh_});
  out.push_back({prefix + ".bias", bias_});
  proj_.collect(prefix + ".proj", out);
}

std::size_t LstmLayer::parameter_count(std::size_t input_dim, std::size_t hidden,
                                       std::size_t proj_dim) {
  return 4 * hidden * (input_dim + hidden + 1) + Linear::parameter_count(hidden, proj_dim);
}

// ---- audio encoder --------------------------------------------------------

AudioEncoder::AudioEncoder(std::size_t input_dim, const TransducerConfig& cfg, CounterRng& init_rng)
    : output_dim_(cfg.enc_layers > 0 ? cfg.proj_dim : input_dim), dropout_(cfg.dropout) {
  std::size_t in = input_dim;
  for (std::size_t l = 0; l < cfg.enc_layers; ++l) {
    layers_.emplace_back(in, cfg.enc_hidden, cfg.proj_dim, init_rng);
    in = cfg.proj_dim;
  }
}

Tensor AudioEncoder::forward(const Tensor& fused, const ForwardContext& ctx) const {
  Tensor x = fused;
  for (const auto& layer : layers_) {
    auto state = layer.zero_state();
    x = layer.project(layer.run(x, state));
    if (ctx.training && dropout_ > 0.0) x = dropout(x, dropout_, true, ctx.dropout_rng());
  }
  return x;
}

void AudioEncoder::collect(const std::string& prefix, TensorList& out) const {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].collect(prefix + ".lstm" + std::to_string(l), out);
  }
}

std::size_t AudioEncoder::parameter_count(std::size_t input_dim, const TransducerConfig& cfg) {
  std::size_t total = 0;
  std::size_t in = input_dim;
  for (std::size_t l = 0; l < cfg.enc_layers; ++l) {
    total += LstmLayer::parameter_count(in, cfg.enc_hidden, cfg.proj_dim);
    in = cfg.proj_dim;
  }
  return total;
}

// ---- label encoder --------------------------------------------------------

LabelEncoder::LabelEncoder(const TransducerConfig& cfg, CounterRng& init_rng)
    : vocab_size_(cfg.vocab_size),
      blank_id_(cfg.blank_id),
      embed_dim_(cfg.embed_dim),
      output_dim_(cfg.label_layers > 0 ? cfg.proj_dim : cfg.embed_dim),
      dropout_(cfg.dropout) {
  embedding_ = uniform_parameter({cfg.output_dim(), cfg.embed_dim}, 1.0, init_rng);
  std::size_t in = cfg.embed_dim;
  for (std::size_t l = 0; l < cfg.label_layers; ++l) {
    layers_.emplace_back(in, cfg.label_hidden, cfg.proj_dim, init_rng);
    in = cfg.proj_dim;
  }
}

void LabelEncoder::check_token(int token) const {
  if (token == blank_id_ || token < 0 || static_cast<std::size_t>(token) > vocab_size_) {
    throw InputError("label token id " + std::to_string(token) + " outside 1.." +
                     std::to_string(vocab_size_));
  }
}

Tensor LabelEncoder::forward(std::span<const int> tokens, const ForwardContext& ctx) const {
  for (int t : tokens) check_token(t);
  Tensor x = Tensor({1, embed_dim_});
  if (!tokens.empty()) {
    const Tensor parts[] = {x, embedding(embedding_, tokens)};
    x = concat(parts, 0);
  }
  for (const auto& layer : layers_) {
    auto state = layer.zero_state();
    x = layer.project(layer.run(x, state));
    if (ctx.training && dropout_ > 0.0) x = dropout(x, dropout_, true, ctx.dropout_rng());
  }
  return x;
}

LabelEncoder::State LabelEncoder::initial_state() const {
  State s;
  for (const auto& layer : layers_) s.layers.push_back(layer.zero_state());
  return s;
}

Tensor LabelEncoder::step(State& state, std::optional<int> token) const {
  Tensor x;
  if (token) {
    check_token(*token);
    const int id = *token;
    x = embedding(embedding_, std::span<const int>(&id, 1));
  } else {
    x = Tensor({1, embed_dim_});
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    x = layers_[l].project(layers_[l].step(x, state.layers[l]));
  }
  return x;
}

void LabelEncoder::collect_embedding(const std::string& prefix, TensorList& out) const {
  out.push_back({prefix + ".embedding", embedding_});
}

void LabelEncoder::collect_layers(const std::string& prefix, TensorList& out) const {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].collect(prefix + ".lstm" + std::to_string(l), out);
  }
}

std::size_t LabelEncoder::embedding_parameter_count(const TransducerConfig& cfg) {
  return cfg.output_dim() * cfg.embed_dim;
}

std::size_t LabelEncoder::layer_parameter_count(const TransducerConfig& cfg) {
  std::size_t total = 0;
  std::size_t in = cfg.embed_dim;
  for (std::size_t l = 0; l < cfg.label_layers; ++l) {
    total += LstmLayer::parameter_count(in, cfg.label_hidden, cfg.proj_dim);
    in = cfg.proj_dim;
  }
  return total;
}

// ---- joint ----------------------------------------------------------------

JointNetwork::JointNetwork(std::size_t enc_dim, std::size_t pred_dim, const TransducerConfig& cfg,
                           CounterRng& init_rng)
    : enc_proj_(enc_dim, cfg.joint_dim, init_rng),
      pred_proj_(pred_dim, cfg.joint_dim, init_rng, false),
      out_(cfg.joint_dim, cfg.output_dim(), init_rng) {}

Tensor JointNetwork::forward(const Tensor& enc, const Tensor& pred) const {
  const std::size_t t = enc.dim(0), u1 = pred.dim(0), j = out_.in_features();
  const Tensor hidden = tanh(grid_add(enc_proj_.forward(enc), pred_proj_.forward(pred)));
  const Tensor logits = out_.forward(reshape(hidden, {t * u1, j}));
  return reshape(logits, {t, u1, out_.out_features()});
}

void JointNetwork::collect(const std::string& prefix, TensorList& out) const {
  enc_proj_.collect(prefix + ".enc_proj", out);
  pred_proj_.collect(prefix + ".pred_proj", out);
  out_.collect(prefix + ".out", out);
}

std::size_t JointNetwork::parameter_count(std::size_t enc_dim, std::size_t pred_dim,
                                          const TransducerConfig& cfg) {
  return Linear::parameter_count(enc_dim, cfg.joint_dim) +
         Linear::parameter_count(pred_dim, cfg.joint_dim, false) +
         Linear::parameter_count(cfg.joint_dim, cfg.output_dim());
}

// ---- full model -----------------------------------------------------------

namespace {

std::size_t local_dim(const ModelConfig& cfg) { return cfg.local.enabled ? cfg.local.output_dim() : 0; }

std::size_t global_input_dim(const ModelConfig& cfg) {
  return cfg.local.enabled ? cfg.local.output_dim() : cfg.input_dim();
}

std::size_t fused_input_dim(const ModelConfig& cfg) {
  return local_dim(cfg) + (cfg.global.enabled ? cfg.input_dim() : 0);
}

std::size_t encoder_output_dim(const ModelConfig& cfg) {
  return cfg.transducer.enc_layers > 0 ? cfg.transducer.proj_dim : cfg.input_dim();
}

std::size_t label_output_dim(const ModelConfig& cfg) {
  return cfg.transducer.label_layers > 0 ? cfg.transducer.proj_dim : cfg.transducer.embed_dim;
}

}  // namespace

ParamGroups count_parameters(const ModelConfig& cfg) {
  cfg.validate();
  ParamGroups g;
  const std::size_t d = cfg.input_dim();
  if (cfg.local.enabled) g.local = LocalEncoder::parameter_count(cfg.local);
  if (cfg.global.enabled) {
    g.global = GlobalEncoder::parameter_count(d, cfg.global);
    if (global_input_dim(cfg) != d) g.fusion += Linear::parameter_count(global_input_dim(cfg), d);
  }
  g.fusion += Linear::parameter_count(fused_input_dim(cfg), d);
  g.lstm_encoder = AudioEncoder::parameter_count(d, cfg.transducer);
  g.joint = JointNetwork::parameter_count(encoder_output_dim(cfg), label_output_dim(cfg), cfg.transducer);
  g.embedding = LabelEncoder::embedding_parameter_count(cfg.transducer);
  g.lstm_decoder = LabelEncoder::layer_parameter_count(cfg.transducer);
  return g;
}

ConvRnnt::ConvRnnt(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  CounterRng rng(init_seed);
  const std::size_t d = cfg_.input_dim();
  if (cfg_.local.enabled) local_ = LocalEncoder(cfg_.local, rng);
  if (cfg_.global.enabled) global_ = GlobalEncoder(global_input_dim(cfg_), d, cfg_.global, rng);
  fuse_ = Linear(fused_input_dim(cfg_), d, rng);
  audio_ = AudioEncoder(d, cfg_.transducer, rng);
  label_ = LabelEncoder(cfg_.transducer, rng);
  joint_ = JointNetwork(audio_.output_dim(), label_.output_dim(), cfg_.transducer, rng);
}

Tensor ConvRnnt::fuse_frontends(const Tensor* local, const Tensor* global_out) const {
  std::vector<Tensor> parts;
  if (local) parts.push_back(*local);
  if (global_out) parts.push_back(*global_out);
  if (parts.empty()) throw ConfigError("fuse_frontends needs at least one input");
  if (parts.size() == 2 && parts[0].dim(0) != parts[1].dim(0)) {
    throw DimensionError("fuse_frontends: local has " + std::to_string(parts[0].dim(0)) +
                         " frames, global has " + std::to_string(parts[1].dim(0)));
  }
  const Tensor joined = parts.size() == 1 ? parts[0] : concat(parts, 1);
  return fuse_.forward(joined);
}

std::vector<Tensor> ConvRnnt::frontend(const std::vector<Tensor>& features,
                                       const ForwardContext& ctx) const {
  std::vector<Tensor> local_out;
  if (cfg_.local.enabled) {
    local_out.reserve(features.size());
    for (const auto& x : features) local_out.push_back(local_.forward(x));
  }
  std::vector<Tensor> global_out;
  if (cfg_.global.enabled) global_out = global_.forward(cfg_.local.enabled ? local_out : features, ctx);
  std::vector<Tensor> fused;
  fused.reserve(features.size());
  for (std::size_t b = 0; b < features.size(); ++b) {
    fused.push_back(fuse_frontends(cfg_.local.enabled ? &local_out[b] : nullptr,
                                   cfg_.global.enabled ? &global_out[b] : nullptr));
  }
  return fused;
}

std::vector<Tensor> ConvRnnt::encode(const std::vector<Tensor>& features,
                                     const ForwardContext& ctx) const {
  auto fused = frontend(features, ctx);
  for (auto& x : fused) x = audio_.forward(x, ctx);
  return fused;
}

Tensor ConvRnnt::encode(const Tensor& features, const ForwardContext& ctx) const {
  return encode(std::vector<Tensor>{features}, ctx).front();
}

Tensor ConvRnnt::utterance_nll(const Tensor& enc, std::span<const int> tokens,
                               const ForwardContext& ctx) const {
  const Tensor pred = label_.forward(tokens, ctx);
  return rnnt_loss(joint_.forward(enc, pred), tokens, cfg_.transducer.blank_id);
}

Tensor ConvRnnt::l2_penalty() const {
  const auto params = parameters();
  std::vector<Tensor> squares;
  squares.reserve(params.size());
  for (const auto& p : params) squares.push_back(reshape(sum_squares(p.tensor), {1}));
  return scale(sum(concat(squares, 0)), cfg_.transducer.l2);
}

TensorList ConvRnnt::parameters() const {
  TensorList out;
  if (cfg_.local.enabled) local_.collect("local", out);
  if (cfg_.global.enabled) {
    global_.collect_bridge("global.bridge", out);
    global_.collect("global", out);
  }
  fuse_.collect("fuse", out);
  audio_.collect("encoder", out);
  label_.collect_embedding("label", out);
  label_.collect_layers("label", out);
  joint_.collect("joint", out);
  return out;
}

TensorList ConvRnnt::buffers() const {
  TensorList out;
  if (cfg_.global.enabled) global_.collect_buffers("global", out);
  return out;
}

ParamGroups ConvRnnt::parameter_groups() const {
  ParamGroups g;
  TensorList list;
  if (cfg_.local.enabled) {
    local_.collect("local", list);
    g.local = count_scalars(list);
  }
  if (cfg_.global.enabled) {
    list.clear();
    global_.collect("global", list);
    g.global = count_scalars(list);
    list.clear();
    global_.collect_bridge("global.bridge", list);
    g.fusion += count_scalars(list);
  }
  list.clear();
  fuse_.collect("fuse", list);
  g.fusion += count_scalars(list);
  list.clear();
  audio_.collect("encoder", list);
  g.lstm_encoder = count_scalars(list);
  list.clear();
  joint_.collect("joint", list);
  g.joint = count_scalars(list);
  list.clear();
  label_.collect_embedding("label", list);
  g.embedding = count_scalars(list);
  list.clear();
  label_.collect_layers("label", list);
  g.lstm_decoder = count_scalars(list);
  return g;
}

}  // namespace convrnnt
