#include "portraitid/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "portraitid/error.hpp"
#include "portraitid/textio.hpp"

namespace portraitid {

namespace {

constexpr std::string_view kManifestMagic = "#manifest v1";

bool valid_id(std::string_view id) {
  return !id.empty() && id.find_first_of("\t\n\r,") == std::string_view::npos;
}

bool valid_tag(std::string_view tag) {
  return !tag.empty() && tag.find_first_of("\t\n\r,:= ") == std::string_view::npos;
}

std::string record_label(std::size_t index, const EmbeddingRecord& r) {
  return "record " + std::to_string(index + 1) + " ('" + r.item_id + "')";
}

std::string pad(std::size_t value, std::size_t width) {
  std::string s = std::to_string(value);
  if (s.size() < width) s.insert(0, width - s.size(), '0');
  return s;
}

std::vector<double> random_unit(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    for (double& x : v) x = gauss(rng);
    norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
  } while (norm == 0.0);
  for (double& x : v) x /= norm;
  return v;
}

// dim × rank matrix with orthonormal columns, stored column-major.
std::vector<std::vector<double>> random_orthonormal(std::size_t dim, std::size_t rank,
                                                    std::mt19937_64& rng) {
  std::vector<std::vector<double>> basis;
  while (basis.size() < rank) {
    auto v = random_unit(dim, rng);
    for (const auto& b : basis) {
      double proj = 0.0;
      for (std::size_t i = 0; i < dim; ++i) proj += v[i] * b[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * b[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    for (double& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  return basis;
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kUnassigned: return "unassigned";
  }
  return "unassigned";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  if (name == "unassigned") return Split::kUnassigned;
  throw ContractError("unknown split '" + std::string(name) + "'");
}

const EmbeddingRecord* Manifest::find(std::string_view item_id) const {
  for (const auto& r : records)
    if (r.item_id == item_id) return &r;
  return nullptr;
}

void Manifest::canonicalize() {
  std::sort(records.begin(), records.end(),
            [](const auto& a, const auto& b) { return a.item_id < b.item_id; });
}

void validate(const Manifest& m) {
  for (const auto& [tag, dim] : m.source_dims) {
    if (!valid_tag(tag)) throw ContractError("invalid source tag '" + tag + "'");
    if (dim == 0) throw ContractError("source '" + tag + "' has dimension 0");
  }
  std::unordered_set<std::string> seen;
  std::unordered_map<std::string, Split> identity_split;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    if (!valid_id(r.item_id)) throw ContractError(record_label(i, r) + ": invalid item_id");
    if (!valid_id(r.identity_id)) throw ContractError(record_label(i, r) + ": invalid identity_id");
    if (!seen.insert(r.item_id).second) {
      throw ContractError(record_label(i, r) + ": duplicate item_id");
    }
    if (r.vectors.empty()) throw ContractError(record_label(i, r) + ": no source vectors");
    for (const auto& [tag, vec] : r.vectors) {
      auto it = m.source_dims.find(tag);
      if (it == m.source_dims.end()) {
        throw ContractError(record_label(i, r) + ": source '" + tag + "' not declared in header");
      }
      if (vec.size() != it->second) {
        throw ContractError(record_label(i, r) + ": source '" + tag + "' has dimension " +
                            std::to_string(vec.size()) + ", header declares " +
                            std::to_string(it->second));
      }
      for (double v : vec) {
        if (!std::isfinite(v)) {
          throw ContractError(record_label(i, r) + ": non-finite value in '" + tag + "'");
        }
      }
    }
    if (r.split != Split::kUnassigned) {
      auto [it, inserted] = identity_split.emplace(r.identity_id, r.split);
      if (!inserted && it->second != r.split) {
        throw ContractError("identity '" + r.identity_id + "' appears in more than one split");
      }
    }
  }
}

Manifest parse_manifest(std::string_view text) {
  auto lines = text::split(text, '\n');
  if (lines.empty() || !lines[0].starts_with(kManifestMagic)) {
    throw ParseError("missing '#manifest v1' header", 1);
  }
  Manifest m;
  bool have_sources = false;
  bool have_seed = false;
  for (auto field : text::split(lines[0].substr(kManifestMagic.size()), ' ')) {
    if (field.empty()) continue;
    if (field.starts_with("sources=")) {
      have_sources = true;
      auto list = field.substr(8);
      if (list.empty()) continue;
      for (auto entry : text::split(list, ',')) {
        const auto colon = entry.rfind(':');
        if (colon == std::string_view::npos) throw ParseError("bad source entry", 1);
        std::string tag(entry.substr(0, colon));
        std::size_t dim = 0;
        try {
          dim = static_cast<std::size_t>(text::parse_u64(entry.substr(colon + 1)));
        } catch (const ContractError& e) {
          throw ParseError(e.what(), 1);
        }
        if (!m.source_dims.emplace(tag, dim).second) {
          throw ParseError("duplicate source '" + tag + "'", 1);
        }
      }
    } else if (field.starts_with("seed=")) {
      have_seed = true;
      try {
        m.seed = text::parse_u64(field.substr(5));
      } catch (const ContractError& e) {
        throw ParseError(e.what(), 1);
      }
    } else {
      throw ParseError("unknown header field '" + std::string(field) + "'", 1);
    }
  }
  if (!have_sources || !have_seed) throw ParseError("header needs sources= and seed=", 1);

  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    const auto line = lines[ln];
    if (line.empty()) {
      // Only the terminating newline may produce an empty line.
      if (ln + 1 == lines.size()) break;
      throw ParseError("empty line", ln + 1);
    }
    auto fields = text::split(line, '\t');
    if (fields.size() < 4) throw ParseError("expected at least 4 tab-separated fields", ln + 1);
    EmbeddingRecord r;
    r.item_id = std::string(fields[0]);
    r.identity_id = std::string(fields[1]);
    try {
      r.split = parse_split(fields[2]);
      for (std::size_t f = 3; f < fields.size(); ++f) {
        const auto eq = fields[f].find('=');
        if (eq == std::string_view::npos) throw ContractError("expected <tag>=<values>");
        std::string tag(fields[f].substr(0, eq));
        if (!r.vectors.emplace(tag, text::parse_values(fields[f].substr(eq + 1))).second) {
          throw ContractError("duplicate source '" + tag + "'");
        }
      }
    } catch (const ParseError&) {
      throw;
    } catch (const ContractError& e) {
      throw ParseError(e.what(), ln + 1);
    }
    m.records.push_back(std::move(r));
  }
  try {
    validate(m);
  } catch (const ContractError& e) {
    // Point at the offending record's line when the message names one.
    std::size_t line = 0;
    const std::string what = e.what();
    if (what.starts_with("record ")) {
      line = static_cast<std::size_t>(std::stoul(what.substr(7))) + 1;
    }
    throw ParseError(what, line);
  }
  return m;
}

std::string serialize_manifest(const Manifest& m) {
  validate(m);
  std::string out(kManifestMagic);
  out += " sources=";
  bool first = true;
  for (const auto& [tag, dim] : m.source_dims) {
    if (!first) out += ',';
    first = false;
    out += tag + ':' + std::to_string(dim);
  }
  out += " seed=" + std::to_string(m.seed) + '\n';

  std::vector<const EmbeddingRecord*> order;
  for (const auto& r : m.records) order.push_back(&r);
  std::sort(order.begin(), order.end(),
            [](const auto* a, const auto* b) { return a->item_id < b->item_id; });
  for (const auto* r : order) {
    out += r->item_id;
    out += '\t';
    out += r->identity_id;
    out += '\t';
    out += to_string(r->split);
    for (const auto& [tag, vec] : r->vectors) {
      out += '\t';
      out += tag;
      out += '=';
      out += text::format_values(vec);
    }
    out += '\n';
  }
  return out;
}

Manifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(text::read_file(path));
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  text::write_file(path, serialize_manifest(m));
}

SplitCounts split_counts(std::size_t n, const SplitRatios& ratios) {
  if (!(ratios.train > 0.0 && ratios.val > 0.0 && ratios.test > 0.0)) {
    throw ContractError("split ratios must be positive");
  }
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ContractError("split ratios must sum to 1");
  }
  if (n < 3) {
    throw ContractError("split needs at least 3 identities, got " + std::to_string(n));
  }
  // The epsilon keeps products like 210·0.2 from flooring to 41.
  const auto share = [n](double ratio) {
    const auto k = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio + 1e-9));
    return std::max<std::size_t>(k, 1);
  };
  SplitCounts c;
  c.val = share(ratios.val);
  c.test = share(ratios.test);
  if (c.val + c.test >= n) throw ContractError("split leaves no identities for train");
  c.train = n - c.val - c.test;
  return c;
}

Manifest split_by_identity(const Manifest& m, const SplitRatios& ratios, std::uint64_t seed) {
  std::set<std::string> unique;
  for (const auto& r : m.records) unique.insert(r.identity_id);
  const SplitCounts counts = split_counts(unique.size(), ratios);

  std::vector<std::string> identities(unique.begin(), unique.end());
  std::mt19937_64 rng(seed);
  std::shuffle(identities.begin(), identities.end(), rng);

  std::unordered_map<std::string, Split> assignment;
  for (std::size_t i = 0; i < identities.size(); ++i) {
    Split s = Split::kTest;
    if (i < counts.train) {
      s = Split::kTrain;
    } else if (i < counts.train + counts.val) {
      s = Split::kVal;
    }
    assignment.emplace(identities[i], s);
  }
  Manifest out = m;
  for (auto& r : out.records) r.split = assignment.at(r.identity_id);
  return out;
}

std::string_view to_string(PairLabel label) {
  return label == PairLabel::kGenuine ? "genuine" : "impostor";
}

PairLabel parse_pair_label(std::string_view name) {
  if (name == "genuine") return PairLabel::kGenuine;
  if (name == "impostor") return PairLabel::kImpostor;
  throw ContractError("unknown pair label '" + std::string(name) + "'");
}

std::vector<VerificationPair> generate_pairs(const Manifest& m, Split split,
                                             std::optional<std::size_t> impostor_cap,
                                             std::uint64_t seed) {
  std::vector<const EmbeddingRecord*> items;
  std::set<std::string_view> identities;
  for (const auto& r : m.records) {
    if (r.split != split) continue;
    items.push_back(&r);
    identities.insert(r.identity_id);
  }
  if (items.size() < 2 || identities.size() < 2) {
    throw ContractError("split '" + std::string(to_string(split)) +
                        "' needs at least 2 records and 2 identities for pairs");
  }
  std::sort(items.begin(), items.end(),
            [](const auto* a, const auto* b) { return a->item_id < b->item_id; });

  std::vector<VerificationPair> genuine;
  std::vector<VerificationPair> impostor;
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (std::size_t j = i + 1; j < items.size(); ++j) {
      const bool same = items[i]->identity_id == items[j]->identity_id;
      (same ? genuine : impostor)
          .push_back({items[i]->item_id, items[j]->item_id,
                      same ? PairLabel::kGenuine : PairLabel::kImpostor});
    }
  }
  if (impostor_cap && *impostor_cap < impostor.size()) {
    std::vector<VerificationPair> sampled;
    sampled.reserve(*impostor_cap);
    std::mt19937_64 rng(seed);
    std::sample(impostor.begin(), impostor.end(), std::back_inserter(sampled), *impostor_cap, rng);
    impostor = std::move(sampled);
  }
  genuine.insert(genuine.end(), impostor.begin(), impostor.end());
  std::sort(genuine.begin(), genuine.end(), [](const auto& a, const auto& b) {
    return std::tie(a.ref_item, a.probe_item) < std::tie(b.ref_item, b.probe_item);
  });
  return genuine;
}

std::string serialize_pairs(const std::vector<VerificationPair>& pairs) {
  std::string out = "ref_item,probe_item,label\n";
  for (const auto& p : pairs) {
    out += p.ref_item + ',' + p.probe_item + ',' + std::string(to_string(p.label)) + '\n';
  }
  return out;
}

std::vector<VerificationPair> parse_pairs(std::string_view text) {
  auto lines = text::split(text, '\n');
  if (lines.empty() || lines[0] != "ref_item,probe_item,label") {
    throw ParseError("expected header 'ref_item,probe_item,label'", 1);
  }
  std::vector<VerificationPair> pairs;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty() && ln + 1 == lines.size()) break;
    auto f = text::split(lines[ln], ',');
    if (f.size() != 3) throw ParseError("expected 3 comma-separated fields", ln + 1);
    try {
      pairs.push_back({std::string(f[0]), std::string(f[1]), parse_pair_label(f[2])});
    } catch (const ContractError& e) {
      throw ParseError(e.what(), ln + 1);
    }
  }
  return pairs;
}

void validate(const SynthConfig& cfg) {
  if (cfg.n_identities < 1) throw ContractError("synth: n_identities must be >= 1");
  if (cfg.items_per_identity < 1) throw ContractError("synth: items_per_identity must be >= 1");
  if (cfg.dim_per_source.empty()) throw ContractError("synth: at least one source required");
  for (const auto& [tag, dim] : cfg.dim_per_source) {
    if (!valid_tag(tag)) throw ContractError("synth: invalid source tag '" + tag + "'");
    if (dim < 1) throw ContractError("synth: dimension of '" + tag + "' must be >= 1");
  }
  if (!(cfg.style_noise >= 0.0) || !std::isfinite(cfg.style_noise)) {
    throw ContractError("synth: style_noise must be >= 0");
  }
  for (const auto& [tag, noise] : cfg.source_noise) {
    if (!cfg.dim_per_source.contains(tag)) {
      throw ContractError("synth: source_noise names unknown source '" + tag + "'");
    }
    if (!(noise >= 0.0) || !std::isfinite(noise)) {
      throw ContractError("synth: source_noise for '" + tag + "' must be >= 0");
    }
  }
}

Manifest synth_generate(const SynthConfig& cfg) {
  validate(cfg);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::size_t max_dim = 0;
  for (const auto& [tag, dim] : cfg.dim_per_source) max_dim = std::max(max_dim, dim);

  // Both perturbations are isotropic Gaussians with unit expected squared
  // norm, so noise magnitudes are relative to the unit identity center. The
  // per-item style draw lives in a shared low-rank latent space and is lifted
  // into each source by a fixed orthonormal map.
  std::map<std::string, std::vector<std::vector<double>>> style_basis;
  const std::size_t latent = cfg.style_rank == 0 ? max_dim : cfg.style_rank;
  if (cfg.style_rank > 0) {
    for (const auto& [tag, dim] : cfg.dim_per_source) {
      style_basis.emplace(tag, random_orthonormal(dim, std::min(dim, cfg.style_rank), rng));
    }
  }

  std::vector<std::map<std::string, std::vector<double>>> centers(cfg.n_identities);
  for (auto& per_source : centers) {
    for (const auto& [tag, dim] : cfg.dim_per_source) per_source.emplace(tag, random_unit(dim, rng));
  }

  const std::size_t id_width = std::to_string(cfg.n_identities - 1).size();
  const std::size_t item_width = std::to_string(cfg.items_per_identity - 1).size();

  Manifest m;
  m.seed = cfg.seed;
  m.source_dims = cfg.dim_per_source;
  std::vector<double> z(latent);
  for (std::size_t id = 0; id < cfg.n_identities; ++id) {
    const std::string identity = "s" + pad(id, id_width);
    for (std::size_t item = 0; item < cfg.items_per_identity; ++item) {
      for (double& v : z) v = gauss(rng);
      EmbeddingRecord r;
      r.item_id = identity + "_" + pad(item, item_width);
      r.identity_id = identity;
      for (const auto& [tag, dim] : cfg.dim_per_source) {
        std::vector<double> style(dim, 0.0);
        if (cfg.style_rank == 0) {
          const double unit_scale = 1.0 / std::sqrt(static_cast<double>(dim));
          for (std::size_t i = 0; i < dim; ++i) style[i] = unit_scale * z[i];
        } else {
          const auto& basis = style_basis.at(tag);
          const double lift = 1.0 / std::sqrt(static_cast<double>(basis.size()));
          for (std::size_t k = 0; k < basis.size(); ++k)
            for (std::size_t i = 0; i < dim; ++i) style[i] += lift * z[k] * basis[k][i];
        }
        const auto noise_it = cfg.source_noise.find(tag);
        const double source_noise = noise_it == cfg.source_noise.end() ? 0.0 : noise_it->second;
        const auto& center = centers[id].at(tag);
        const double unit_scale = 1.0 / std::sqrt(static_cast<double>(dim));
        std::vector<double> v(dim);
        double norm = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
          v[i] = center[i] + cfg.style_noise * style[i] + source_noise * unit_scale * gauss(rng);
          norm += v[i] * v[i];
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) throw ContractError("synth: degenerate zero vector");
        for (double& x : v) x /= norm;
        r.vectors.emplace(tag, std::move(v));
      }
      m.records.push_back(std::move(r));
    }
  }
  return m;
}

}  // namespace portraitid
