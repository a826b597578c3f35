#pragma once

// Embedding corpus: records, manifest files, identity-disjoint splits,
// verification pair protocols and a synthetic generator.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace portraitid {

enum class Split { kTrain, kVal, kTest, kUnassigned };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct EmbeddingRecord {
  std::string item_id;
  std::string identity_id;
  Split split = Split::kUnassigned;
  std::map<std::string, std::vector<double>> vectors;  // source_tag -> vector

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

struct Manifest {
  std::vector<EmbeddingRecord> records;
  std::map<std::string, std::size_t> source_dims;
  std::uint64_t seed = 0;

  friend bool operator==(const Manifest&, const Manifest&) = default;

  const EmbeddingRecord* find(std::string_view item_id) const;
  /// Records sorted by item_id (the serialization order).
  void canonicalize();
};

/// Throws ContractError naming the first violated invariant.
void validate(const Manifest& m);

Manifest parse_manifest(std::string_view text);
std::string serialize_manifest(const Manifest& m);
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& m, const std::filesystem::path& path);

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

/// Identities per split: val and test get floor(n·ratio) (at least one each),
/// train takes the remainder.
SplitCounts split_counts(std::size_t n_identities, const SplitRatios& ratios);

/// Assigns whole identities to train/val/test after a seeded shuffle.
Manifest split_by_identity(const Manifest& m, const SplitRatios& ratios, std::uint64_t seed);

enum class PairLabel { kGenuine, kImpostor };

std::string_view to_string(PairLabel label);
PairLabel parse_pair_label(std::string_view name);

struct VerificationPair {
  std::string ref_item;
  std::string probe_item;
  PairLabel label = PairLabel::kGenuine;

  friend bool operator==(const VerificationPair&, const VerificationPair&) = default;
  friend auto operator<=>(const VerificationPair&, const VerificationPair&) = default;
};

/// All genuine pairs in the split plus all (or impostor_cap sampled) impostor
/// pairs. ref_item < probe_item; the list is sorted.
std::vector<VerificationPair> generate_pairs(const Manifest& m, Split split,
                                             std::optional<std::size_t> impostor_cap,
                                             std::uint64_t seed);

/// `ref_item,probe_item,label` with a header line.
std::string serialize_pairs(const std::vector<VerificationPair>& pairs);
std::vector<VerificationPair> parse_pairs(std::string_view text);

struct SynthConfig {
  std::size_t n_identities = 40;
  std::size_t items_per_identity = 6;
  std::map<std::string, std::size_t> dim_per_source{{"clip", 32}, {"fr", 64}};
  double style_noise = 0.4;
  std::map<std::string, double> source_noise{{"clip", 0.3}, {"fr", 0.2}};
  /// Dimension of the subspace holding the per-item style perturbation;
  /// 0 spreads it over the full space.
  std::size_t style_rank = 4;
  std::uint64_t seed = 7;
};

void validate(const SynthConfig& cfg);

/// Per identity a random unit center per source; each item is
/// normalize(center + style_noise·g1 + source_noise[tag]·g2), where the style
/// draw g1 is shared by all sources of an item and g2 is drawn per source.
/// g1 and g2 are isotropic Gaussians with E‖g‖² = 1.
Manifest synth_generate(const SynthConfig& cfg);

}  // namespace portraitid
