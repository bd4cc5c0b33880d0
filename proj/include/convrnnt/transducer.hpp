#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "convrnnt/features.hpp"
#include "convrnnt/global_encoder.hpp"
#include "convrnnt/local_encoder.hpp"
#include "convrnnt/nn.hpp"

namespace convrnnt {

struct TransducerConfig {
  std::size_t enc_layers = 7;
  std::size_t enc_hidden = 640;
  std::size_t proj_dim = 512;
  std::size_t label_layers = 1;
  std::size_t label_hidden = 640;
  std::size_t embed_dim = 256;
  std::size_t joint_dim = 512;
  std::size_t vocab_size = 2500;  // non-blank tokens; the joint emits vocab_size + 1
  int blank_id = 0;
  double dropout = 0.1;
  double l2 = 1e-6;

  std::size_t output_dim() const { return vocab_size + 1; }
  void validate() const;
};

struct ModelConfig {
  FeatureConfig features;
  LocalEncoderConfig local;
  GlobalEncoderConfig global;
  TransducerConfig transducer;

  std::size_t input_dim() const { return features.output_dim(); }
  void validate() const;
};

// Unidirectional LSTM layer followed by a Swish projection. Gate order in the
// stacked weights is (input, forget, cell, output).
class LstmLayer {
 public:
  struct State {
    Tensor h;  // [1×H]
    Tensor c;  // [1×H]
  };

  LstmLayer() = default;
  LstmLayer(std::size_t input_dim, std::size_t hidden, std::size_t proj_dim, CounterRng& init_rng);

  State zero_state() const;
  // One recurrence step; x [1×I]. Returns the new hidden state h.
  Tensor step(const Tensor& x, State& state) const;
  // Runs the recurrence over x [T×I] from `state` (updated in place); returns [T×H].
  Tensor run(const Tensor& x, State& state) const;
  // swish(P·h + b) applied row-wise.
  Tensor project(const Tensor& h) const { return swish(proj_.forward(h)); }

  std::size_t hidden() const { return hidden_; }
  void collect(const std::string& prefix, TensorList& out) const;
  static std::size_t parameter_count(std::size_t input_dim, std::size_t hidden, std::size_t proj_dim);

  Tensor& w_ih() { return w_ih_; }
  Tensor& w_hh() { return w_hh_; }
  Tensor& bias() { return bias_; }
  Linear& projection() { return proj_; }

 private:
  Tensor cell(const Tensor& gates, State& state) const;

  std::size_t hidden_ = 0;
  Tensor w_ih_;  // [4H×I]
  Tensor w_hh_;  // [4H×H]
  Tensor bias_;  // [4H], forget slice initialized to 1
  Linear proj_;
};

// Acoustic encoder: stacked LstmLayers with per-layer Swish projection and
// dropout. With zero layers it is the identity.
class AudioEncoder {
 public:
  AudioEncoder() = default;
  AudioEncoder(std::size_t input_dim, const TransducerConfig& cfg, CounterRng& init_rng);

  Tensor forward(const Tensor& fused, const ForwardContext& ctx) const;
  std::size_t output_dim() const { return output_dim_; }
  std::vector<LstmLayer>& layers() { return layers_; }
  void collect(const std::string& prefix, TensorList& out) const;
  static std::size_t parameter_count(std::size_t input_dim, const TransducerConfig& cfg);

 private:
  std::size_t output_dim_ = 0;
  double dropout_ = 0.0;
  std::vector<LstmLayer> layers_;
};

// Prediction network: embedding lookup → LstmLayers. Row 0 encodes the start
// state (zero input vector), row u the prefix y_1..y_u.
class LabelEncoder {
 public:
  struct State {
    std::vector<LstmLayer::State> layers;
  };

  LabelEncoder() = default;
  LabelEncoder(const TransducerConfig& cfg, CounterRng& init_rng);

  Tensor forward(std::span<const int> tokens, const ForwardContext& ctx) const;
  State initial_state() const;
  // Advances by one symbol (nullopt = start symbol); returns the output row [1×P].
  Tensor step(State& state, std::optional<int> token) const;

  std::size_t output_dim() const { return output_dim_; }
  Tensor& embedding_table() { return embedding_; }
  std::vector<LstmLayer>& layers() { return layers_; }
  void collect_embedding(const std::string& prefix, TensorList& out) const;
  void collect_layers(const std::string& prefix, TensorList& out) const;
  static std::size_t embedding_parameter_count(const TransducerConfig& cfg);
  static std::size_t layer_parameter_count(const TransducerConfig& cfg);

 private:
  void check_token(int token) const;

  std::size_t vocab_size_ = 0;
  int blank_id_ = 0;
  std::size_t embed_dim_ = 0;
  std::size_t output_dim_ = 0;
  double dropout_ = 0.0;
  Tensor embedding_;  // [(V+1)×E]
  std::vector<LstmLayer> layers_;
};

// Additive joint: logits[t,u] = W_out·tanh(A·enc_t + B·pred_u + b) + b_out.
class JointNetwork {
 public:
  JointNetwork() = default;
  JointNetwork(std::size_t enc_dim, std::size_t pred_dim, const TransducerConfig& cfg,
               CounterRng& init_rng);

  // enc [T×P_e], pred [U1×P_p] → logits [T×U1×(V+1)]
  Tensor forward(const Tensor& enc, const Tensor& pred) const;

  Linear& enc_proj() { return enc_proj_; }
  Linear& pred_proj() { return pred_proj_; }
  Linear& output() { return out_; }
  void collect(const std::string& prefix, TensorList& out) const;
  static std::size_t parameter_count(std::size_t enc_dim, std::size_t pred_dim, const TransducerConfig& cfg);

 private:
  Linear enc_proj_;
  Linear pred_proj_;  // no bias; the shared bias lives in enc_proj_
  Linear out_;
};

// Parameter totals grouped like the usual transducer breakdown.
struct ParamGroups {
  std::size_t local = 0;
  std::size_t global = 0;
  std::size_t fusion = 0;  // bridge + concat projection
  std::size_t lstm_encoder = 0;
  std::size_t joint = 0;
  std::size_t embedding = 0;
  std::size_t lstm_decoder = 0;

  std::size_t frontend() const { return local + global; }
  std::size_t convolution_blocks() const { return local + global + fusion; }
  std::size_t total() const {
    return convolution_blocks() + lstm_encoder + joint + embedding + lstm_decoder;
  }
};

// Analytic parameter count, without allocating the model.
ParamGroups count_parameters(const ModelConfig& cfg);

// Full model: local → global → concat+project → LSTM encoder; label encoder;
// joint network.
class ConvRnnt {
 public:
  ConvRnnt() = default;
  ConvRnnt(const ModelConfig& cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }

  // Frontend outputs fused and projected back to the input dimension.
  Tensor fuse_frontends(const Tensor* local, const Tensor* global_out) const;
  std::vector<Tensor> frontend(const std::vector<Tensor>& features, const ForwardContext& ctx) const;
  std::vector<Tensor> encode(const std::vector<Tensor>& features, const ForwardContext& ctx) const;
  Tensor encode(const Tensor& features, const ForwardContext& ctx) const;
  Tensor predict(std::span<const int> tokens, const ForwardContext& ctx) const {
    return label_.forward(tokens, ctx);
  }
  Tensor joint(const Tensor& enc, const Tensor& pred) const { return joint_.forward(enc, pred); }

  // Summed RNN-T negative log-likelihood of one utterance.
  Tensor utterance_nll(const Tensor& enc, std::span<const int> tokens, const ForwardContext& ctx) const;
  // λ·Σ‖w‖² over every trainable tensor.
  Tensor l2_penalty() const;

  LocalEncoder& local() { return local_; }
  GlobalEncoder& global() { return global_; }
  AudioEncoder& audio_encoder() { return audio_; }
  LabelEncoder& label_encoder() { return label_; }
  const LabelEncoder& label_encoder() const { return label_; }
  JointNetwork& joint_network() { return joint_; }
  Linear& fusion() { return fuse_; }

  TensorList parameters() const;
  TensorList buffers() const;
  ParamGroups parameter_groups() const;

 private:
  ModelConfig cfg_;
  LocalEncoder local_;
  GlobalEncoder global_;
  Linear fuse_;
  AudioEncoder audio_;
  LabelEncoder label_;
  JointNetwork joint_;
};

}  // namespace convrnnt
