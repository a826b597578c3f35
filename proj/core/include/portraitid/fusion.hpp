#pragma once

// Embedding-level fusion: normalize each source, concatenate, renormalize.
//
// Because every block is unit length before concatenation, the cosine of two
// fused vectors is the mean of the per-source cosines, whatever the source
// dimensions are.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "portraitid/corpus.hpp"

namespace portraitid {

struct FusionSpec {
  std::vector<std::string> sources;  // concatenation order
  std::vector<std::size_t> dims;
  /// Per-source block weights. Empty means all ones (plain concatenation).
  std::vector<double> weights;

  /// Manifest tag for the fused vector, e.g. `fused[clip-lora+fr-base]`.
  std::string tag() const;
  /// `clip-lora+fr-base`
  std::string display_name() const;
};

void validate(const FusionSpec& spec);

/// Builds a spec for `a+b+c`, taking dimensions from the manifest header.
FusionSpec fusion_spec_from_name(std::string_view name, const Manifest& m);

std::vector<double> l2_normalize(std::span<const double> v);

std::vector<double> fuse(std::span<const std::vector<double>> vectors, const FusionSpec& spec);

/// Per-source vectors of a record in spec order; throws naming a missing tag.
std::vector<std::vector<double>> gather_sources(const EmbeddingRecord& r, const FusionSpec& spec);

double fused_score(std::span<const std::vector<double>> item_a,
                   std::span<const std::vector<double>> item_b, const FusionSpec& spec);

/// Cosine similarity of two nonzero vectors.
double cosine(std::span<const double> a, std::span<const double> b);

/// Adds the fused vector of every record under spec.tag().
Manifest add_fused_source(const Manifest& m, const FusionSpec& spec);

}  // namespace portraitid
