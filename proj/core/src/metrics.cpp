#include "portraitid/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "portraitid/error.hpp"
#include "portraitid/numerics.hpp"
#include "portraitid/textio.hpp"

namespace portraitid {

namespace {

std::string far_label(double target) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "TAR@%g%%FAR", target * 100.0);
  return buf;
}

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

}  // namespace

ScoreSet ScoreSet::from_scores(std::span<const double> genuine, std::span<const double> impostor,
                               std::string protocol_hash) {
  ScoreSet s;
  for (double v : genuine) s.entries.push_back({{}, {}, PairLabel::kGenuine, v});
  for (double v : impostor) s.entries.push_back({{}, {}, PairLabel::kImpostor, v});
  s.n_genuine = genuine.size();
  s.n_impostor = impostor.size();
  s.protocol_hash = std::move(protocol_hash);
  return s;
}

std::string protocol_hash(const std::vector<VerificationPair>& pairs) {
  std::uint64_t h = text::fnv1a("");
  for (const auto& p : pairs) {
    h = text::fnv1a(p.ref_item, h);
    h = text::fnv1a(",", h);
    h = text::fnv1a(p.probe_item, h);
    h = text::fnv1a(",", h);
    h = text::fnv1a(to_string(p.label), h);
    h = text::fnv1a("\n", h);
  }
  return text::hex64(h);
}

ScoreSet score_pairs(const std::vector<VerificationPair>& pairs, const EmbeddingProvider& provider) {
  ScoreSet s;
  s.protocol_hash = protocol_hash(pairs);
  s.entries.reserve(pairs.size());
  for (const auto& p : pairs) {
    const auto a = provider(p.ref_item);
    const auto b = provider(p.probe_item);
    if (a.size() != b.size()) {
      throw ContractError("score_pairs: dimension mismatch for pair " + p.ref_item + "," +
                          p.probe_item);
    }
    s.entries.push_back({p.ref_item, p.probe_item, p.label, cosine(a, b)});
    (p.label == PairLabel::kGenuine ? s.n_genuine : s.n_impostor)++;
  }
  return s;
}

ScoreSet score_pairs(const std::vector<VerificationPair>& pairs, const Manifest& m,
                     const std::string& source_tag) {
  std::map<std::string_view, const EmbeddingRecord*> index;
  for (const auto& r : m.records) index.emplace(r.item_id, &r);
  return score_pairs(pairs, [&](const std::string& item) {
    auto it = index.find(item);
    if (it == index.end()) throw ContractError("score_pairs: unknown item '" + item + "'");
    auto v = it->second->vectors.find(source_tag);
    if (v == it->second->vectors.end()) {
      throw ContractError("score_pairs: item '" + item + "' has no source '" + source_tag + "'");
    }
    return v->second;
  });
}

ScoreSet score_pairs(const std::vector<VerificationPair>& pairs, const Manifest& m,
                     const FusionSpec& spec) {
  std::map<std::string_view, const EmbeddingRecord*> index;
  for (const auto& r : m.records) index.emplace(r.item_id, &r);
  return score_pairs(pairs, [&](const std::string& item) {
    auto it = index.find(item);
    if (it == index.end()) throw ContractError("score_pairs: unknown item '" + item + "'");
    return fuse(gather_sources(*it->second, spec), spec);
  });
}

RocCurve sweep(const ScoreSet& scores) {
  std::vector<std::pair<double, PairLabel>> sorted;
  sorted.reserve(scores.entries.size());
  std::size_t n_gen = 0;
  std::size_t n_imp = 0;
  for (const auto& e : scores.entries) {
    if (!std::isfinite(e.score)) throw ContractError("sweep: non-finite score");
    sorted.emplace_back(e.score, e.label);
    (e.label == PairLabel::kGenuine ? n_gen : n_imp)++;
  }
  if (n_gen == 0 || n_imp == 0) {
    throw ContractError("sweep: need at least one genuine and one impostor score");
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  RocCurve roc;
  roc.n_genuine = n_gen;
  roc.n_impostor = n_imp;
  const auto gen = static_cast<double>(n_gen);
  const auto imp = static_cast<double>(n_imp);
  roc.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0, 0, n_gen});

  std::size_t accepted_gen = 0;
  std::size_t accepted_imp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double t = sorted[i].first;
    while (i < sorted.size() && sorted[i].first == t) {
      (sorted[i].second == PairLabel::kGenuine ? accepted_gen : accepted_imp)++;
      ++i;
    }
    const std::size_t fnm = n_gen - accepted_gen;
    roc.points.push_back({t, static_cast<double>(accepted_imp) / imp,
                          static_cast<double>(fnm) / gen, accepted_imp, fnm});
  }
  return roc;
}

double eer(const RocCurve& roc) {
  if (roc.points.size() < 2) throw ContractError("eer: degenerate ROC curve");
  for (std::size_t i = 0; i < roc.points.size(); ++i) {
    const auto& p = roc.points[i];
    const double d = p.fmr - p.fnmr;
    if (d == 0.0) return p.fmr;
    if (d > 0.0) {
      if (i == 0) return p.fmr;
      const auto& q = roc.points[i - 1];
      const double d_prev = q.fmr - q.fnmr;
      const double w = -d_prev / (d - d_prev);
      return q.fmr + w * (p.fmr - q.fmr);
    }
  }
  throw ContractError("eer: curve never reaches FMR >= FNMR");
}

double tar_at_far(const RocCurve& roc, double far_target) {
  if (!(far_target > 0.0 && far_target < 1.0)) {
    throw ContractError("tar_at_far: target must lie in (0, 1)");
  }
  if (roc.points.empty()) throw ContractError("tar_at_far: empty ROC curve");
  const RocPoint* best = &roc.points.front();
  for (const auto& p : roc.points) {
    if (p.fmr > far_target) break;
    best = &p;
  }
  return 1.0 - best->fnmr;
}

SystemReport evaluate(const std::string& name, const ScoreSet& scores,
                      std::span<const double> far_targets) {
  const RocCurve roc = sweep(scores);
  SystemReport r;
  r.name = name;
  r.eer = eer(roc);
  for (double t : far_targets) r.tar_at_far.emplace_back(t, tar_at_far(roc, t));
  r.n_genuine = roc.n_genuine;
  r.n_impostor = roc.n_impostor;
  r.protocol_hash = scores.protocol_hash;
  return r;
}

std::vector<SystemReport> report(const std::vector<std::pair<std::string, ScoreSet>>& systems,
                                 std::span<const double> far_targets) {
  std::vector<SystemReport> rows;
  for (const auto& [name, scores] : systems) {
    if (!systems.empty() && scores.protocol_hash != systems.front().second.protocol_hash) {
      throw ContractError("report: system '" + name + "' was scored on a different protocol (" +
                          scores.protocol_hash + " vs " + systems.front().second.protocol_hash +
                          ")");
    }
    rows.push_back(evaluate(name, scores, far_targets));
  }
  return rows;
}

std::string format_percent(double fraction) { return fixed(fraction * 100.0, 1) + "%"; }

std::string render_table(const std::vector<SystemReport>& rows) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"System", "EER"};
  if (!rows.empty()) {
    for (const auto& [target, tar] : rows.front().tar_at_far) header.push_back(far_label(target));
  }
  cells.push_back(header);
  for (const auto& r : rows) {
    std::vector<std::string> line{r.name, format_percent(r.eer)};
    for (const auto& [target, tar] : r.tar_at_far) line.push_back(format_percent(tar));
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());

  std::string out;
  const auto emit = [&](const std::vector<std::string>& line) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c == 0) {
        out += line[c] + std::string(width[c] - line[c].size(), ' ');
      } else {
        out += "  " + std::string(width[c] - line[c].size(), ' ') + line[c];
      }
    }
    out += '\n';
  };
  emit(cells.front());
  std::size_t total = 0;
  for (auto w : width) total += w;
  out += std::string(total + 2 * (width.size() - 1), '-') + '\n';
  for (std::size_t i = 1; i < cells.size(); ++i) emit(cells[i]);
  if (!rows.empty()) {
    out += "\npairs: " + std::to_string(rows.front().n_genuine) + " genuine, " +
           std::to_string(rows.front().n_impostor) + " impostor; protocol " +
           rows.front().protocol_hash + '\n';
  }
  return out;
}

std::string render_report_csv(const std::vector<SystemReport>& rows) {
  std::string out = "system,eer";
  if (!rows.empty()) {
    for (const auto& [target, tar] : rows.front().tar_at_far) out += ',' + far_label(target);
  }
  out += ",n_genuine,n_impostor,protocol_hash\n";
  for (const auto& r : rows) {
    out += r.name + ',' + format_percent(r.eer);
    for (const auto& [target, tar] : r.tar_at_far) out += ',' + format_percent(tar);
    out += ',' + std::to_string(r.n_genuine) + ',' + std::to_string(r.n_impostor) + ',' +
           r.protocol_hash + '\n';
  }
  return out;
}

std::string render_scores_csv(const ScoreSet& scores) {
  std::string out = "ref_item,probe_item,label,score\n";
  for (const auto& e : scores.entries) {
    out += e.ref_item + ',' + e.probe_item + ',' + std::string(to_string(e.label)) + ',' +
           text::format_double(e.score) + '\n';
  }
  return out;
}

std::string render_roc_csv(const RocCurve& roc) {
  std::string out = "threshold,fmr,fnmr,tar\n";
  for (const auto& p : roc.points) {
    out += (std::isinf(p.threshold) ? std::string("inf") : text::format_double(p.threshold)) + ',' +
           text::format_double(p.fmr) + ',' + text::format_double(p.fnmr) + ',' +
           text::format_double(1.0 - p.fnmr) + '\n';
  }
  return out;
}

std::string render_roc_svg(const std::vector<std::pair<std::string, RocCurve>>& curves) {
  constexpr double kWidth = 720, kHeight = 480;
  constexpr double kLeft = 70, kRight = 220, kTop = 30, kBottom = 60;
  constexpr double kPlotW = kWidth - kLeft - kRight;
  constexpr double kPlotH = kHeight - kTop - kBottom;
  constexpr double kMinDecade = -4.0;  // FMR axis spans 1e-4 .. 1
  static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

  const auto x_of = [&](double fmr) {
    const double decade = std::clamp(std::log10(std::max(fmr, 1e-12)), kMinDecade, 0.0);
    return kLeft + (decade - kMinDecade) / -kMinDecade * kPlotW;
  };
  const auto y_of = [&](double tar) { return kTop + (1.0 - tar) * kPlotH; };

  std::string out =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"720\" height=\"480\" "
      "viewBox=\"0 0 720 480\" font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect width=\"720\" height=\"480\" fill=\"white\"/>\n";
  for (int decade = static_cast<int>(kMinDecade); decade <= 0; ++decade) {
    const double x = x_of(std::pow(10.0, decade));
    out += "<line x1=\"" + fixed(x, 2) + "\" y1=\"" + fixed(kTop, 2) + "\" x2=\"" + fixed(x, 2) +
           "\" y2=\"" + fixed(kTop + kPlotH, 2) + "\" stroke=\"#dddddd\"/>\n";
    out += "<text x=\"" + fixed(x, 2) + "\" y=\"" + fixed(kTop + kPlotH + 18, 2) +
           "\" text-anchor=\"middle\">1e" + std::to_string(decade) + "</text>\n";
  }
  for (int tick = 0; tick <= 10; tick += 2) {
    const double y = y_of(tick / 10.0);
    out += "<line x1=\"" + fixed(kLeft, 2) + "\" y1=\"" + fixed(y, 2) + "\" x2=\"" +
           fixed(kLeft + kPlotW, 2) + "\" y2=\"" + fixed(y, 2) + "\" stroke=\"#dddddd\"/>\n";
    out += "<text x=\"" + fixed(kLeft - 8, 2) + "\" y=\"" + fixed(y + 4, 2) +
           "\" text-anchor=\"end\">" + fixed(tick / 10.0, 1) + "</text>\n";
  }
  out += "<rect x=\"" + fixed(kLeft, 2) + "\" y=\"" + fixed(kTop, 2) + "\" width=\"" +
         fixed(kPlotW, 2) + "\" height=\"" + fixed(kPlotH, 2) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
  out += "<text x=\"" + fixed(kLeft + kPlotW / 2, 2) + "\" y=\"" + fixed(kHeight - 15, 2) +
         "\" text-anchor=\"middle\">False Match Rate (log scale)</text>\n";
  out += "<text x=\"18\" y=\"" + fixed(kTop + kPlotH / 2, 2) +
         "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " + fixed(kTop + kPlotH / 2, 2) +
         ")\">True Accept Rate</text>\n";

  for (std::size_t i = 0; i < curves.size(); ++i) {
    const std::string color = kColors[i % std::size(kColors)];
    std::string pts;
    for (const auto& p : curves[i].second.points) {
      if (!pts.empty()) pts += ' ';
      pts += fixed(x_of(p.fmr), 2) + ',' + fixed(y_of(1.0 - p.fnmr), 2);
    }
    out += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"" +
           pts + "\"/>\n";
    const double ly = kTop + 10 + 18.0 * static_cast<double>(i);
    const double lx = kLeft + kPlotW + 12;
    out += "<line x1=\"" + fixed(lx, 2) + "\" y1=\"" + fixed(ly, 2) + "\" x2=\"" +
           fixed(lx + 20, 2) + "\" y2=\"" + fixed(ly, 2) + "\" stroke=\"" + color +
           "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + fixed(lx + 26, 2) + "\" y=\"" + fixed(ly + 4, 2) + "\">" +
           curves[i].first + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace portraitid
