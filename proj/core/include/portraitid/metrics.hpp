#pragma once

// Verification metrics over genuine/impostor score sets.
//
// Threshold convention: a comparison is accepted when score >= threshold.
// FMR (= FAR) is the share of impostor comparisons accepted, FNMR the share of
// genuine comparisons rejected, TAR = 1 - FNMR.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "portraitid/corpus.hpp"
#include "portraitid/fusion.hpp"

namespace portraitid {

struct ScoreEntry {
  std::string ref_item;
  std::string probe_item;
  PairLabel label = PairLabel::kGenuine;
  double score = 0.0;
};

struct ScoreSet {
  std::vector<ScoreEntry> entries;
  std::size_t n_genuine = 0;
  std::size_t n_impostor = 0;
  /// Hash of the pair list the scores were computed on.
  std::string protocol_hash;

  /// Builds from bare (score, label) entries; item ids are left empty.
  static ScoreSet from_scores(std::span<const double> genuine, std::span<const double> impostor,
                              std::string protocol_hash = {});
};

std::string protocol_hash(const std::vector<VerificationPair>& pairs);

using EmbeddingProvider = std::function<std::vector<double>(const std::string& item_id)>;

/// One cosine score per pair, label copied from the pair.
ScoreSet score_pairs(const std::vector<VerificationPair>& pairs, const EmbeddingProvider& provider);
ScoreSet score_pairs(const std::vector<VerificationPair>& pairs, const Manifest& m,
                     const std::string& source_tag);
ScoreSet score_pairs(const std::vector<VerificationPair>& pairs, const Manifest& m,
                     const FusionSpec& spec);

struct RocPoint {
  double threshold = 0.0;
  double fmr = 0.0;
  double fnmr = 0.0;
  std::size_t false_matches = 0;      // impostors accepted
  std::size_t false_non_matches = 0;  // genuines rejected
};

/// Points ordered by strictly decreasing threshold. The first is a +inf
/// sentinel (nothing accepted); the last accepts everything.
struct RocCurve {
  std::vector<RocPoint> points;
  std::size_t n_genuine = 0;
  std::size_t n_impostor = 0;
};

RocCurve sweep(const ScoreSet& scores);

/// FMR/FNMR crossing, linearly interpolated between the bracketing points.
double eer(const RocCurve& roc);

/// 1 - FNMR at the most permissive threshold whose FMR <= far_target.
double tar_at_far(const RocCurve& roc, double far_target);

struct SystemReport {
  std::string name;
  double eer = 0.0;
  std::vector<std::pair<double, double>> tar_at_far;  // (target, tar)
  std::size_t n_genuine = 0;
  std::size_t n_impostor = 0;
  std::string protocol_hash;
};

inline const std::vector<double> kDefaultFarTargets{0.001, 0.01};

SystemReport evaluate(const std::string& name, const ScoreSet& scores,
                      std::span<const double> far_targets = kDefaultFarTargets);

/// Evaluates every system; refuses systems scored on different protocols.
std::vector<SystemReport> report(const std::vector<std::pair<std::string, ScoreSet>>& systems,
                                 std::span<const double> far_targets = kDefaultFarTargets);

/// One decimal place with a percent sign: 0.099 -> "9.9%".
std::string format_percent(double fraction);

std::string render_table(const std::vector<SystemReport>& rows);
std::string render_report_csv(const std::vector<SystemReport>& rows);
std::string render_scores_csv(const ScoreSet& scores);
std::string render_roc_csv(const RocCurve& roc);
/// Self-contained SVG with a log-scaled FMR axis and one polyline per system.
std::string render_roc_svg(const std::vector<std::pair<std::string, RocCurve>>& curves);

}  // namespace portraitid
