#pragma once

// Low-rank adapters on frozen projection matrices.
//
// An adapter contributes ΔW = (alpha / rank) · b_up · a_down to a d_out × d_in
// base weight. b_up starts at zero, so a freshly initialized adapter leaves
// the base model's output untouched.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "portraitid/numerics.hpp"

namespace portraitid {

struct EncoderConfig;

enum class LoraTarget { kQuery, kValue };

std::string_view to_string(LoraTarget target);  // "q" / "v"
LoraTarget parse_lora_target(std::string_view name);

struct LoraAdapter {
  Matrix a_down;  // rank × d_in
  Matrix b_up;    // d_out × rank
  std::size_t rank = 0;
  double alpha = 0.0;
  LoraTarget target = LoraTarget::kQuery;
  std::size_t layer_index = 0;

  std::size_t d_in() const noexcept { return a_down.cols(); }
  std::size_t d_out() const noexcept { return b_up.rows(); }
  double scale() const noexcept { return alpha / static_cast<double>(rank); }

  friend bool operator==(const LoraAdapter&, const LoraAdapter&) = default;
};

void validate(const LoraAdapter& adapter);

/// a_down ~ N(0, 1/d_in), b_up = 0.
LoraAdapter init_adapter(std::size_t d_in, std::size_t d_out, std::size_t rank, double alpha,
                         std::uint64_t seed, LoraTarget target = LoraTarget::kQuery,
                         std::size_t layer_index = 0);

/// The delta (alpha/rank) · b_up · a_down, materialized.
Matrix adapter_delta(const LoraAdapter& adapter);

/// w_base · x + (alpha/rank) · b_up · (a_down · x), with x holding one input per
/// column. ΔW is never formed.
Matrix adapted_forward(const Matrix& w_base, const LoraAdapter& adapter, const Matrix& x);

/// w_base + ΔW, the deployment form of an adapted projection.
Matrix merge(const Matrix& w_base, const LoraAdapter& adapter);

struct ParamCount {
  std::size_t trainable = 0;
  std::size_t encoder_total = 0;
  double ratio = 0.0;  // trainable / encoder_total
};

/// Σ rank·(d_in + d_out) over adapters, checked against the encoder shape.
ParamCount trainable_param_count(const std::vector<LoraAdapter>& adapters,
                                 const EncoderConfig& cfg);

/// One adapter on every layer's query and value projection.
std::vector<LoraAdapter> init_qv_adapters(const EncoderConfig& cfg, std::size_t rank, double alpha,
                                          std::uint64_t seed);

std::string serialize_adapters(const std::vector<LoraAdapter>& adapters, std::size_t n_layers);
std::vector<LoraAdapter> parse_adapters(std::string_view text);
void save_adapters(const std::vector<LoraAdapter>& adapters, std::size_t n_layers,
                   const std::filesystem::path& path);
std::vector<LoraAdapter> load_adapters(const std::filesystem::path& path);

}  // namespace portraitid
