#pragma once

// Run configuration for the command-line pipeline, read from an INI-style
// file of [section] key = value entries.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "portraitid/corpus.hpp"
#include "portraitid/encoder.hpp"
#include "portraitid/training.hpp"

namespace portraitid::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  /// External manifest to ingest; empty means the synth output in the run dir.
  std::filesystem::path manifest;
  std::filesystem::path out_dir = "run";
  SynthConfig synth;
  SplitRatios split;
  std::optional<std::size_t> val_impostor_cap;
  std::optional<std::size_t> test_impostor_cap;
  EncoderConfig encoder;
  TrainConfig train;
  std::string lora_source = "clip";
  LoraConfig lora;
  std::string head_source = "fr";
  std::size_t head_d_out = 0;  // 0 keeps the backbone dimension
  bool head_bias = true;
  /// Fusion systems by display name, e.g. "clip-lora+fr-base".
  std::vector<std::string> fusions{"fr-base+fr-tuned",  "clip-base+fr-base",
                                   "clip-base+fr-tuned", "clip-lora+fr-base",
                                   "clip-lora+fr-tuned", "clip-lora+fr-base+fr-tuned"};
  std::vector<double> far_targets{0.001, 0.01};
  std::uint64_t seed = 7;

  /// Copies the run-wide seed and validation protocol into the components.
  void propagate();
};

/// Rejects inconsistent settings with a message naming the offending field.
void validate(const RunConfig& cfg);

/// Parses INI text over the defaults. Unknown sections or keys are errors.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Every setting in INI form, in a fixed order; parse_config reads it back.
std::string render_config(const RunConfig& cfg);

std::string base_tag(const std::string& source);
std::string lora_tag(const std::string& source);
std::string tuned_tag(const std::string& source);

}  // namespace portraitid::cli
