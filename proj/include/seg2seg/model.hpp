#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "seg2seg/autodiff.hpp"

namespace seg2seg::model {

// Special ids occupy the bottom of every vocabulary; task symbols are
// shifted up by kFirstSymbol.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kFirstSymbol = 4;

struct ModelConfig {
  int src_vocab = 20;
  int tgt_vocab = 20;
  int d = 32;
  int enc_layers = 2;
  int dec_layers = 2;
  int heads = 4;
  int ffn = 64;
  double dropout = 0.0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::vector<int> to_model_ids(std::span<const int> symbols);
// Specials map to -1.
std::vector<int> to_symbols(std::span<const int> ids);

class Model {
 public:
  Model() = default;
  Model(ModelConfig config, ad::ParamMap params);

  // Random initialisation; identical seeds give identical parameters.
  static Model initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ad::ParamMap& params() { return params_; }
  const ad::ParamMap& params() const { return params_; }

 private:
  ModelConfig config_;
  ad::ParamMap params_;
};

// Shapes every parameter must have for `config`.
ad::ParamMap parameter_shapes(const ModelConfig& config);

// Binds a parameter set into one graph and builds the network pieces on it.
// The parameter map must outlive the graph.
class Forward {
 public:
  Forward(const ModelConfig& config, const ad::ParamMap& params, ad::Graph& graph,
          std::mt19937_64* dropout_rng = nullptr);

  ad::Graph& graph() { return graph_; }
  ad::Var param(const std::string& name);

  // Causal self-attention encoder; row j depends on tokens 0..j only.
  ad::Var encode(std::span<const int> src_ids);
  // alpha_j = sigmoid(FFN(Rep(x_j))), shape [J].
  ad::Var aggregation_head(ad::Var states);
  ad::Var segment_reps(ad::Var p_x, ad::Var states);
  // Decoder input stream: embedding + position for [bos, y_1, ...]. Row i is
  // Rep(y_{i-1}) for the emission head.
  ad::Var target_inputs(std::span<const int> dec_in_ids);
  // beta_ik = sigmoid((Rep(y_{i-1}) W_tgt) . seg_k / sqrt(d)), shape [I, K].
  ad::Var emission_head(ad::Var tgt_inputs, ad::Var seg);
  // Final decoder hidden states [I, d]. Cross-attention weights are
  // softmax(scores) * mapping, renormalised per row; `mapping` is [I, J]
  // (soft in training, binary at inference).
  ad::Var decode_hidden(ad::Var tgt_inputs, ad::Var states, ad::Var mapping);
  // Next-token distributions [I, tgt_vocab].
  ad::Var output(ad::Var hidden);
  ad::Var decode(ad::Var tgt_inputs, ad::Var states, ad::Var mapping);

 private:
  ad::Var attention(const std::string& prefix, ad::Var query_in, ad::Var kv_in,
                    const std::vector<std::uint8_t>* mask, const ad::Var* modulation);
  ad::Var ffn(const std::string& prefix, ad::Var x);
  ad::Var norm(const std::string& prefix, ad::Var x);
  ad::Var drop(ad::Var x);

  const ModelConfig& config_;
  const ad::ParamMap& params_;
  ad::Graph& graph_;
  std::mt19937_64* rng_;
};

Tensor sinusoidal_positions(std::size_t length, std::size_t d);

// Denominator floor for the modulated cross-attention. Rows whose admitted
// mass falls below it sum to less than one; this bounds the gradient that
// reaches masked positions.
inline constexpr double kRenormFloor = 1e-2;

}  // namespace seg2seg::model
