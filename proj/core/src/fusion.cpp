#include "portraitid/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "portraitid/error.hpp"
#include "portraitid/numerics.hpp"
#include "portraitid/textio.hpp"

namespace portraitid {

std::string FusionSpec::display_name() const {
  std::string out;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (i > 0) out += '+';
    out += sources[i];
  }
  return out;
}

std::string FusionSpec::tag() const { return "fused[" + display_name() + "]"; }

void validate(const FusionSpec& spec) {
  if (spec.sources.empty()) throw ContractError("fusion needs at least one source");
  if (spec.dims.size() != spec.sources.size()) {
    throw ContractError("fusion dims must match sources");
  }
  if (!spec.weights.empty() && spec.weights.size() != spec.sources.size()) {
    throw ContractError("fusion weights must match sources");
  }
  for (double w : spec.weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw ContractError("fusion weights must be positive");
  }
}

FusionSpec fusion_spec_from_name(std::string_view name, const Manifest& m) {
  FusionSpec spec;
  for (auto part : text::split(name, '+')) {
    std::string tag(text::trim(part));
    auto it = m.source_dims.find(tag);
    if (it == m.source_dims.end()) {
      throw ContractError("fusion source '" + tag + "' not present in manifest");
    }
    spec.sources.push_back(tag);
    spec.dims.push_back(it->second);
  }
  validate(spec);
  return spec;
}

std::vector<double> l2_normalize(std::span<const double> v) {
  const double norm = l2_norm(v);
  if (norm == 0.0 || !std::isfinite(norm)) throw ContractError("l2_normalize: zero vector");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= norm;
  return out;
}

std::vector<double> fuse(std::span<const std::vector<double>> vectors, const FusionSpec& spec) {
  validate(spec);
  if (vectors.size() != spec.sources.size()) {
    throw ContractError("fuse: expected " + std::to_string(spec.sources.size()) +
                        " source vectors, got " + std::to_string(vectors.size()));
  }
  std::vector<double> out;
  for (std::size_t s = 0; s < vectors.size(); ++s) {
    if (vectors[s].size() != spec.dims[s]) {
      throw ContractError("fuse: source '" + spec.sources[s] + "' has wrong dimension");
    }
    auto unit = l2_normalize(vectors[s]);
    const double w = spec.weights.empty() ? 1.0 : spec.weights[s];
    for (double x : unit) out.push_back(w * x);
  }
  return l2_normalize(out);
}

std::vector<std::vector<double>> gather_sources(const EmbeddingRecord& r, const FusionSpec& spec) {
  std::vector<std::vector<double>> out;
  for (const auto& tag : spec.sources) {
    auto it = r.vectors.find(tag);
    if (it == r.vectors.end()) {
      throw ContractError("item '" + r.item_id + "' has no source '" + tag + "'");
    }
    out.push_back(it->second);
  }
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) throw ContractError("cosine: zero vector");
  return dot(a, b) / (na * nb);
}

double fused_score(std::span<const std::vector<double>> item_a,
                   std::span<const std::vector<double>> item_b, const FusionSpec& spec) {
  const auto fa = fuse(item_a, spec);
  const auto fb = fuse(item_b, spec);
  return std::clamp(dot(fa, fb), -1.0, 1.0);
}

Manifest add_fused_source(const Manifest& m, const FusionSpec& spec) {
  validate(spec);
  Manifest out = m;
  std::size_t dim = 0;
  for (auto d : spec.dims) dim += d;
  for (auto& r : out.records) r.vectors[spec.tag()] = fuse(gather_sources(r, spec), spec);
  out.source_dims[spec.tag()] = dim;
  return out;
}

}  // namespace portraitid
