#pragma once

// Toy pre-norm transformer encoder with LoRA sites on every layer's query and
// value projections, plus the single linear head used to adapt a frozen
// face-recognition backbone.
//
// Linear weights are stored d_out × d_in; token activations are seq_len ×
// d_model row matrices, so a projection is X · Wᵀ.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "portraitid/lora.hpp"
#include "portraitid/numerics.hpp"

namespace portraitid {

struct EncoderConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 16;
  std::size_t n_heads = 2;
  std::size_t d_ff = 32;
  std::size_t seq_len = 2;
  std::size_t embed_dim = 16;

  std::size_t head_dim() const noexcept { return d_model / n_heads; }
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

void validate(const EncoderConfig& cfg);

struct EncoderLayer {
  Matrix wq, wk, wv, wo;   // d_model × d_model
  Matrix w1;               // d_ff × d_model
  Matrix w2;               // d_model × d_ff
  Matrix ln1_gain, ln1_bias;  // 1 × d_model
  Matrix ln2_gain, ln2_bias;

  friend bool operator==(const EncoderLayer&, const EncoderLayer&) = default;
};

struct EncoderWeights {
  std::vector<EncoderLayer> layers;
  Matrix final_gain, final_bias;  // 1 × d_model
  Matrix projection;              // embed_dim × d_model

  friend bool operator==(const EncoderWeights&, const EncoderWeights&) = default;
};

void validate(const EncoderConfig& cfg, const EncoderWeights& w);
std::size_t parameter_count(const EncoderConfig& cfg);

/// Projections ~ N(0, 0.02²); layer-norm gains 1 and biases 0.
EncoderWeights init_encoder(const EncoderConfig& cfg, std::uint64_t seed);

/// Reshapes a source vector row-wise into seq_len × d_model tokens, padding
/// with zeros. Vectors longer than seq_len·d_model are rejected.
Matrix tokenize(std::span<const double> vec, const EncoderConfig& cfg);

/// Encoder weights bound to a tape.
struct EncoderVars {
  struct Layer {
    Var wq, wk, wv, wo, w1, w2, ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  };
  std::vector<Layer> layers;
  Var final_gain, final_bias, projection;
};

struct AdapterVars {
  Var a_down, b_up;
  double scale = 1.0;
  LoraTarget target = LoraTarget::kQuery;
  std::size_t layer_index = 0;
};

EncoderVars bind_encoder(Tape& tape, const EncoderWeights& w, bool trainable);
std::vector<AdapterVars> bind_adapters(Tape& tape, const std::vector<LoraAdapter>& adapters,
                                       bool trainable);

/// Records one forward pass and returns the 1 × embed_dim unit embedding.
Var encode_on_tape(Tape& tape, const EncoderConfig& cfg, const EncoderVars& weights,
                   std::span<const AdapterVars> adapters, Var tokens);

/// Unit-norm embedding of a seq_len × d_model token matrix. An empty adapter
/// list runs the base model.
std::vector<double> encode(const EncoderConfig& cfg, const EncoderWeights& weights,
                           const std::vector<LoraAdapter>& adapters, const Matrix& tokens);

struct HeadWeights {
  Matrix w_head;  // d_out × d_in
  Matrix bias;    // 1 × d_out, or empty for no bias

  std::size_t d_in() const noexcept { return w_head.cols(); }
  std::size_t d_out() const noexcept { return w_head.rows(); }
  bool has_bias() const noexcept { return !bias.empty(); }

  friend bool operator==(const HeadWeights&, const HeadWeights&) = default;
};

/// Identity-like initialization (ones on the main diagonal), zero bias.
HeadWeights init_head(std::size_t d_in, std::size_t d_out, bool with_bias = true);

struct HeadVars {
  Var w_head;
  Var bias;
  bool has_bias = false;
};

HeadVars bind_head(Tape& tape, const HeadWeights& head, bool trainable);
Var head_on_tape(Tape& tape, const HeadVars& head, Var backbone_row);

/// normalize(W · v + b).
std::vector<double> head_forward(const HeadWeights& head, std::span<const double> backbone_vec);

std::string serialize_encoder(const EncoderConfig& cfg, const EncoderWeights& w);
std::pair<EncoderConfig, EncoderWeights> parse_encoder(std::string_view text);
std::string serialize_head(const HeadWeights& head);
HeadWeights parse_head(std::string_view text);

}  // namespace portraitid
