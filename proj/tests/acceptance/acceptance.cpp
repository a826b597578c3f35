// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. argv[1] is the directory holding paper.cfg and desk.cfg.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "cli.hpp"
#include "config.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "portraitid/corpus.hpp"
#include "portraitid/encoder.hpp"
#include "portraitid/fusion.hpp"
#include "portraitid/lora.hpp"
#include "portraitid/metrics.hpp"
#include "portraitid/textio.hpp"
#include "portraitid/training.hpp"

using namespace portraitid;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail = what;
    }
  }
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), pattern, a, b, c, d);
  return buf;
}

fs::path configs_dir;

Verdict gradient_correctness() {
  Verdict v;
  Stopwatch clock;
  EncoderConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.seq_len = 4;
  cfg.embed_dim = 16;
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto r = gradcheck::encoder_triplet(cfg, seed);
    v.require(r.loss > 0.0, "hinge inactive for seed " + std::to_string(seed));
    worst = std::max(worst, r.max_relative_error);
    checked += r.n_checked;
  }
  const double t = clock.seconds();
  v.require(worst < 1e-4, fmt("max relative error %.3g >= 1e-4", worst));
  v.require(t < 60.0, fmt("runtime %.1f s >= 60 s", t));
  if (v.pass) {
    v.detail = fmt("%.0f parameters checked, max relative error %.2g, %.1f s", double(checked), worst, t);
  }
  return v;
}

Verdict lora_invariants() {
  Verdict v;
  Stopwatch clock;
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> dim(2, 24);
  double merge_gap = 0.0, tail = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d_in = dim(rng), d_out = dim(rng);
    const std::size_t r = 1 + rng() % std::min(d_in, d_out);
    auto ad = init_adapter(d_in, d_out, r, double(r) * 2.0, rng());
    const Matrix w = oracle::random_matrix(d_out, d_in, rng);
    const Matrix x = oracle::random_matrix(d_in, 5, rng);
    v.require(adapted_forward(w, ad, x) == matmul(w, x), "fresh adapter changed the output");
    v.require(merge(w, ad) == w, "fresh adapter changed the merged weight");
    oracle::perturb(ad, rng, 1.0);
    merge_gap = std::max(merge_gap, max_abs_diff(matmul(merge(w, ad), x), adapted_forward(w, ad, x)));
    const auto sv = oracle::singular_values(subtract(merge(w, ad), w));
    for (std::size_t i = r; i < sv.size(); ++i) tail = std::max(tail, sv[i]);
  }
  v.require(merge_gap < 1e-10, fmt("merge gap %.3g >= 1e-10", merge_gap));
  v.require(tail < 1e-8, fmt("singular value beyond rank %.3g >= 1e-8", tail));

  SynthConfig sc;
  sc.n_identities = 20;
  sc.items_per_identity = 4;
  const Manifest m = split_by_identity(synth_generate(sc), {}, 5);
  const EncoderConfig ec;
  const EncoderWeights base = init_encoder(ec, 5);
  const std::string before = serialize_encoder(ec, base);
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.max_epochs = 3;
  tc.patience = 3;
  tc.monitor = Monitor::kTrainLoss;
  const auto trained = train_lora(m, "clip", tc, ec, base, {4, 4.0});
  v.require(serialize_encoder(ec, base) == before, "base encoder changed during training");
  v.require(trained.adapters != init_qv_adapters(ec, 4, 4.0, tc.seed), "adapters did not train");

  const double t = clock.seconds();
  v.require(t < 10.0, fmt("runtime %.1f s >= 10 s", t));
  if (v.pass) {
    v.detail = fmt("merge gap %.2g, rank tail %.2g, base unchanged after training, %.1f s",
                   merge_gap, tail, t);
  }
  return v;
}

Verdict fusion_algebra() {
  Verdict v;
  std::mt19937_64 rng(31);
  FusionSpec spec;
  spec.sources = {"a", "b", "c"};
  spec.dims = {32, 64, 128};
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  double identity_gap = 0.0, scale_gap = 0.0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::vector<double>> a, b;
    double mean = 0.0;
    for (auto d : spec.dims) {
      a.push_back(oracle::random_vector(d, rng));
      b.push_back(oracle::random_vector(d, rng));
      mean += oracle::plain_cosine(a.back(), b.back()) / 3.0;
    }
    const double s = fused_score(a, b, spec);
    identity_gap = std::max(identity_gap, std::abs(s - mean));
    auto a2 = a;
    auto b2 = b;
    const double ca = scale(rng), cb = scale(rng);
    for (double& x : a2[i % 3]) x *= ca;
    for (double& x : b2[(i + 1) % 3]) x *= cb;
    scale_gap = std::max(scale_gap, std::abs(fused_score(a2, b2, spec) - s));
  }
  v.require(identity_gap <= 1e-12, fmt("mean-of-cosines gap %.3g > 1e-12", identity_gap));
  v.require(scale_gap <= 1e-12, fmt("scale gap %.3g > 1e-12", scale_gap));
  if (v.pass) {
    v.detail = fmt("1000 items, dims 32/64/128, identity gap %.2g, scale gap %.2g", identity_gap,
                   scale_gap);
  }
  return v;
}

Verdict metrics_oracle() {
  Verdict v;
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<std::size_t> size(2, 500);
  double eer_gap = 0.0;
  for (int trial = 0; trial < 100 && v.pass; ++trial) {
    const auto s = oracle::random_scores(size(rng), rng, trial % 2 == 0);
    const auto roc = sweep(s);
    const auto brute = oracle::brute_sweep(s);
    v.require(roc.points.size() == brute.size(), "point count differs");
    for (std::size_t i = 0; v.pass && i < brute.size(); ++i) {
      const auto& p = roc.points[i];
      v.require(p.threshold == brute[i].threshold && p.false_matches == brute[i].false_matches &&
                    p.false_non_matches == brute[i].false_non_matches,
                "sweep counts differ on trial " + std::to_string(trial));
    }
    eer_gap = std::max(eer_gap, std::abs(eer(roc) - oracle::brute_eer(s)));
    for (double t : {0.001, 0.01}) {
      v.require(tar_at_far(roc, t) == oracle::brute_tar(s, t),
                "TAR@FAR differs on trial " + std::to_string(trial));
    }
  }
  v.require(eer_gap <= 1e-9, fmt("EER gap %.3g > 1e-9", eer_gap));

  const auto s = oracle::random_scores(400, rng, true);
  const auto roc = sweep(s);
  std::uniform_real_distribution<double> k(0.2, 4.0), c(-3.0, 3.0);
  for (int i = 0; i < 10; ++i) {
    const double a = k(rng), b = c(rng);
    const std::function<double(double)> transforms[] = {
        [&](double x) { return a * x + b; },
        [&](double x) { return std::exp(a * x) + b; },
        [&](double x) { return std::atan(a * x + b); },
        [&](double x) { return x * x * x + a * x + b; },
        [&](double x) { return std::log1p(a * x + 1.0) + b; }};
    ScoreSet t = s;
    for (auto& e : t.entries) e.score = transforms[i % 5](e.score);
    const auto roc2 = sweep(t);
    v.require(eer(roc2) == eer(roc) && tar_at_far(roc2, 0.001) == tar_at_far(roc, 0.001) &&
                  tar_at_far(roc2, 0.01) == tar_at_far(roc, 0.01),
              "transform " + std::to_string(i) + " changed EER or TAR");
  }
  if (v.pass) v.detail = fmt("100 score sets, EER gap %.2g, 10 transforms", eer_gap);
  return v;
}

struct Candidates {
  std::vector<std::vector<double>> embeddings;
  std::vector<std::string> identities;
};

Candidates candidates(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Candidates c;
  for (std::size_t i = 0; i <= n; ++i) {
    c.embeddings.push_back(oracle::unit(oracle::random_vector(8, rng)));
    c.identities.push_back(i == 0 ? "anchor" : "id" + std::to_string(i));
  }
  return c;
}

// Ranks by counting harder candidates, independently of the library sort.
std::size_t hardness_rank(const Candidates& c, std::size_t j) {
  const double s = oracle::plain_cosine(c.embeddings[0], c.embeddings[j]);
  std::size_t harder = 0;
  for (std::size_t k = 1; k < c.embeddings.size(); ++k) {
    const double t = oracle::plain_cosine(c.embeddings[0], c.embeddings[k]);
    if (k != j && (t > s || (t == s && k < j))) ++harder;
  }
  return harder + 1;
}

Verdict mining_schedule() {
  Verdict v;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto c = candidates(500, 500 + seed);
    std::mt19937_64 rng(seed), again(seed);
    const auto picks = mine_negatives(0, c.embeddings, c.identities, {}, 10, rng);
    v.require(picks == mine_negatives(0, c.embeddings, c.identities, {}, 10, again),
              "not deterministic under seed");
    std::size_t top = 0, next = 0;
    for (auto j : picks) {
      const auto r = hardness_rank(c, j);
      top += r <= 50 ? 1 : 0;
      next += r > 50 && r <= 500 ? 1 : 0;
    }
    v.require(top == 3 && next == 7 && std::set(picks.begin(), picks.end()).size() == 10,
              "500-candidate split was " + std::to_string(top) + "/" + std::to_string(next));
  }
  // 20 candidates: pools shrink to ranks 1-2 and 3-20. The hard share
  // ceil(0.3 * 10) = 3 exceeds the top pool, so both top candidates are
  // selected and the remaining 8 are drawn from ranks 3-20.
  const auto c = candidates(20, 77);
  const auto pools = mining_pools(20, {});
  v.require(pools.top == 2 && pools.next == 18, "20-candidate pools are not 2/18");
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::set<std::size_t> ranks;
    for (auto j : mine_negatives(0, c.embeddings, c.identities, {}, 10, rng)) {
      ranks.insert(hardness_rank(c, j));
    }
    std::size_t in_next = 0;
    for (auto r : ranks) in_next += r >= 3 && r <= 20 ? 1 : 0;
    v.require(ranks.size() == 10 && ranks.contains(1) && ranks.contains(2) && in_next == 8,
              "20-candidate selection differs from hand enumeration");
  }
  if (v.pass) v.detail = "3 of top 50 and 7 of next 450 on 20 seeds; 20-candidate pools 2/18";
  return v;
}

Verdict training_efficacy() {
  Verdict v;
  Stopwatch clock;
  const auto cfg = cli::load_config(configs_dir / "desk.cfg");
  const Manifest m = split_by_identity(synth_generate(cfg.synth), cfg.split, cfg.seed);
  const EncoderWeights base = init_encoder(cfg.encoder, cfg.seed);
  const auto r = train_lora(m, cfg.lora_source, cfg.train, cfg.encoder, base, cfg.lora);
  const double t = clock.seconds();
  const double start = r.history.epochs.front().val_eer;
  const double best = r.history.epochs[r.history.best_epoch].val_eer;
  v.require(start > 0.0, "epoch-0 validation EER is already 0");
  v.require(best <= 0.8 * start, fmt("val EER %.4f -> %.4f is less than 20%% relative", start, best));
  v.require(r.history.best_epoch <= 200, "best epoch beyond 200");
  v.require(t < 600.0, fmt("runtime %.1f s >= 600 s", t));
  if (v.pass) {
    v.detail = fmt("desk.cfg: val EER %.2f%% -> %.2f%% at epoch %.0f, %.1f s", 100 * start,
                   100 * best, double(r.history.best_epoch), t);
  }
  return v;
}

Verdict fusion_efficacy() {
  Verdict v;
  SynthConfig sc;
  sc.style_noise = 0.0;
  sc.dim_per_source = {{"a", 32}, {"b", 32}};
  sc.source_noise = {{"a", 1.5}, {"b", 1.5}};
  const Manifest m = split_by_identity(synth_generate(sc), {}, sc.seed);
  const auto pairs = generate_pairs(m, Split::kTest, std::nullopt, sc.seed);
  const double ea = eer(sweep(score_pairs(pairs, m, std::string("a"))));
  const double eb = eer(sweep(score_pairs(pairs, m, std::string("b"))));
  const double ef = eer(sweep(score_pairs(pairs, m, fusion_spec_from_name("a+b", m))));
  v.require(ef <= std::min(ea, eb) + 0.005, fmt("fused %.4f above best single %.4f + 0.005", ef,
                                                std::min(ea, eb)));
  v.require(ef < std::max(ea, eb), fmt("fused %.4f not below worst single %.4f", ef, std::max(ea, eb)));
  if (v.pass) v.detail = fmt("test EER a %.2f%%, b %.2f%%, fused %.2f%%", 100 * ea, 100 * eb, 100 * ef);
  return v;
}

Verdict early_stopping() {
  Verdict v;
  SynthConfig sc;
  sc.n_identities = 20;
  sc.items_per_identity = 4;
  const Manifest m = split_by_identity(synth_generate(sc), {}, 9);
  const EncoderConfig ec;
  const EncoderWeights base = init_encoder(ec, 9);
  TrainConfig tc;
  tc.learning_rate = 0.0;
  tc.patience = 10;
  const LoraConfig lc{8, 8.0};
  const auto r = train_lora(m, "clip", tc, ec, base, lc);
  v.require(r.history.epochs.size() == tc.patience + 1,
            "ran " + std::to_string(r.history.epochs.size()) + " epochs");
  v.require(r.history.best_epoch == 0, "best epoch is not 0");
  v.require(serialize_adapters(r.adapters, ec.n_layers) ==
                serialize_adapters(init_qv_adapters(ec, lc.rank, lc.alpha, tc.seed), ec.n_layers),
            "returned adapters differ from epoch 0");
  v.require(r.adapters == init_qv_adapters(ec, lc.rank, lc.alpha, tc.seed),
            "returned adapters differ from epoch 0");
  if (v.pass) v.detail = "patience 10: 11 epochs, epoch-0 adapters returned bit-identically";
  return v;
}

Verdict pipeline_reproducibility() {
  Verdict v;
  const fs::path root = fs::temp_directory_path() / ("portraitid_acceptance_" + text::hex64(std::random_device{}()));
  const std::vector<std::string> commands{"synth", "split", "pairs", "train-lora", "train-head",
                                          "embed", "fuse",  "eval",  "roc"};
  for (const char* run : {"a", "b"}) {
    for (const auto& command : commands) {
      std::ostringstream out, err;
      const int code = cli::run_cli({"--config", (configs_dir / "paper.cfg").string(), "--seed", "7",
                                     "--out", (root / run).string(), command},
                                    out, err);
      v.require(code == 0, command + " exited " + std::to_string(code) + ": " + err.str());
    }
  }
  if (v.pass) {
    std::vector<fs::path> compared{"report.txt", "report.csv"};
    for (const auto& e : fs::directory_iterator(root / "a" / "roc")) {
      compared.push_back(fs::path("roc") / e.path().filename());
    }
    for (const auto& p : compared) {
      v.require(fs::exists(root / "b" / p) &&
                    text::read_file(root / "a" / p) == text::read_file(root / "b" / p),
                p.string() + " differs between runs");
    }
    const std::string report = text::read_file(root / "a" / "report.txt");
    for (const char* row : {"clip-base ", "clip-lora ", "fr-base ", "fr-tuned ", "clip-lora+fr-base ",
                            "clip-lora+fr-tuned ", "clip-lora+fr-base+fr-tuned "}) {
      v.require(report.find(std::string("\n") + row) != std::string::npos,
                std::string("report lacks row ") + row);
    }
    if (v.pass) v.detail = std::to_string(compared.size()) + " files byte-identical across two runs";
  }
  fs::remove_all(root);
  return v;
}

Verdict report_formatting() {
  Verdict v;
  const std::string s = format_percent(0.099);
  v.require(s == "9.9%", "0.099 renders as " + s);
  if (v.pass) v.detail = "0.099 -> 9.9%";
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  configs_dir = argc > 1 ? fs::path(argv[1]) : fs::path("configs");
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"LoRA invariants", lora_invariants},
      {"fusion algebra", fusion_algebra},
      {"metrics oracle equivalence", metrics_oracle},
      {"mining schedule", mining_schedule},
      {"training efficacy", training_efficacy},
      {"fusion efficacy", fusion_efficacy},
      {"early stopping", early_stopping},
      {"pipeline reproducibility", pipeline_reproducibility},
      {"report formatting", report_formatting},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += v.pass ? 0 : 1;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << ": " << criteria[i].first
              << " (" << v.detail << ")" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
