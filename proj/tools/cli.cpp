#include "cli.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "config.hpp"
#include "portraitid/corpus.hpp"
#include "portraitid/encoder.hpp"
#include "portraitid/error.hpp"
#include "portraitid/fusion.hpp"
#include "portraitid/lora.hpp"
#include "portraitid/metrics.hpp"
#include "portraitid/textio.hpp"
#include "portraitid/training.hpp"

namespace portraitid::cli {

namespace {

namespace fs = std::filesystem;

constexpr const char* kManifestFile = "manifest.txt";
constexpr const char* kSplitFile = "split.txt";
constexpr const char* kPairsValFile = "pairs_val.csv";
constexpr const char* kPairsTestFile = "pairs_test.csv";
constexpr const char* kEncoderFile = "encoder.ckpt";
constexpr const char* kLoraFile = "lora.ckpt";
constexpr const char* kLoraHistoryFile = "lora_history.csv";
constexpr const char* kHeadFile = "head.ckpt";
constexpr const char* kHeadHistoryFile = "head_history.csv";
constexpr const char* kEmbeddingsFile = "embeddings.txt";
constexpr const char* kFusedFile = "fused.txt";
constexpr const char* kReportFile = "report.txt";
constexpr const char* kReportCsvFile = "report.csv";
constexpr const char* kRocSvgFile = "roc.svg";
constexpr const char* kRunLogFile = "run_log.jsonl";

class Context {
 public:
  Context(RunConfig cfg, std::ostream& out) : cfg_(std::move(cfg)), out_(out) {}

  const RunConfig& cfg() const { return cfg_; }
  std::ostream& out() { return out_; }

  fs::path input(const fs::path& name) const {
    const fs::path p = name.is_absolute() ? name : cfg_.out_dir / name;
    if (!fs::exists(p)) {
      throw MissingInputError("missing input " + p.string() + "; run the upstream command first");
    }
    return p;
  }

  void write(const fs::path& name, std::string_view bytes) {
    const fs::path p = cfg_.out_dir / name;
    text::write_file(p, bytes);
    outputs_[name.generic_string()] = text::hex64(text::fnv1a(bytes));
  }

  const std::map<std::string, std::string>& outputs() const { return outputs_; }

 private:
  RunConfig cfg_;
  std::ostream& out_;
  std::map<std::string, std::string> outputs_;
};

void require_source(const Manifest& m, const std::string& tag, const char* what) {
  if (!m.source_dims.contains(tag)) {
    throw ContractError(std::string(what) + ": source '" + tag + "' not present in manifest");
  }
}

std::vector<VerificationPair> load_pairs(const Context& ctx, const char* name) {
  return parse_pairs(text::read_file(ctx.input(name)));
}

void cmd_synth(Context& ctx) {
  const Manifest m = synth_generate(ctx.cfg().synth);
  ctx.write(kManifestFile, serialize_manifest(m));
  ctx.out() << "synth: " << m.records.size() << " items, " << ctx.cfg().synth.n_identities
            << " identities\n";
}

void cmd_split(Context& ctx) {
  const fs::path source = ctx.cfg().manifest.empty() ? fs::path(kManifestFile) : ctx.cfg().manifest;
  const Manifest m = split_by_identity(load_manifest(ctx.input(source)), ctx.cfg().split,
                                       ctx.cfg().seed);
  ctx.write(kSplitFile, serialize_manifest(m));
  std::map<Split, std::size_t> items;
  for (const auto& r : m.records) ++items[r.split];
  ctx.out() << "split: train " << items[Split::kTrain] << ", val " << items[Split::kVal]
            << ", test " << items[Split::kTest] << " items\n";
}

void cmd_pairs(Context& ctx) {
  const Manifest m = load_manifest(ctx.input(kSplitFile));
  const auto val = generate_pairs(m, Split::kVal, ctx.cfg().val_impostor_cap, ctx.cfg().seed);
  const auto test = generate_pairs(m, Split::kTest, ctx.cfg().test_impostor_cap, ctx.cfg().seed);
  ctx.write(kPairsValFile, serialize_pairs(val));
  ctx.write(kPairsTestFile, serialize_pairs(test));
  ctx.out() << "pairs: val " << val.size() << ", test " << test.size() << "\n";
}

void print_history(Context& ctx, const char* what, const TrainHistory& h) {
  const auto& best = h.epochs.at(h.best_epoch);
  ctx.out() << what << ": " << h.epochs.size() << " epochs, val EER "
            << format_percent(h.epochs.front().val_eer) << " -> " << format_percent(best.val_eer)
            << " (best epoch " << best.epoch << ")\n";
}

void cmd_train_lora(Context& ctx) {
  const auto& cfg = ctx.cfg();
  const Manifest m = load_manifest(ctx.input(kSplitFile));
  require_source(m, cfg.lora_source, "train-lora");
  const EncoderWeights base = init_encoder(cfg.encoder, cfg.seed);
  const auto result = train_lora(m, cfg.lora_source, cfg.train, cfg.encoder, base, cfg.lora);
  ctx.write(kEncoderFile, serialize_encoder(cfg.encoder, base));
  ctx.write(kLoraFile, serialize_adapters(result.adapters, cfg.encoder.n_layers));
  ctx.write(kLoraHistoryFile, render_history_csv(result.history));
  print_history(ctx, "train-lora", result.history);
}

void cmd_train_head(Context& ctx) {
  const auto& cfg = ctx.cfg();
  const Manifest m = load_manifest(ctx.input(kSplitFile));
  require_source(m, cfg.head_source, "train-head");
  const std::size_t d_out = cfg.head_d_out == 0 ? m.source_dims.at(cfg.head_source) : cfg.head_d_out;
  const auto result = train_head(m, cfg.head_source, cfg.train, d_out, cfg.head_bias);
  ctx.write(kHeadFile, serialize_head(result.head));
  ctx.write(kHeadHistoryFile, render_history_csv(result.history));
  print_history(ctx, "train-head", result.history);
}

void cmd_embed(Context& ctx) {
  const auto& cfg = ctx.cfg();
  const Manifest m = load_manifest(ctx.input(kSplitFile));
  require_source(m, cfg.lora_source, "embed");
  require_source(m, cfg.head_source, "embed");
  const auto [enc_cfg, base] = parse_encoder(text::read_file(ctx.input(kEncoderFile)));
  const auto adapters = load_adapters(ctx.input(kLoraFile));
  const HeadWeights head = parse_head(text::read_file(ctx.input(kHeadFile)));

  Manifest out;
  out.seed = m.seed;
  out.source_dims = {{base_tag(cfg.lora_source), enc_cfg.embed_dim},
                     {lora_tag(cfg.lora_source), enc_cfg.embed_dim},
                     {base_tag(cfg.head_source), m.source_dims.at(cfg.head_source)},
                     {tuned_tag(cfg.head_source), head.d_out()}};
  for (const auto& r : m.records) {
    EmbeddingRecord e{r.item_id, r.identity_id, r.split, {}};
    if (auto it = r.vectors.find(cfg.lora_source); it != r.vectors.end()) {
      const Matrix tokens = tokenize(it->second, enc_cfg);
      e.vectors[base_tag(cfg.lora_source)] = encode(enc_cfg, base, {}, tokens);
      e.vectors[lora_tag(cfg.lora_source)] = encode(enc_cfg, base, adapters, tokens);
    }
    if (auto it = r.vectors.find(cfg.head_source); it != r.vectors.end()) {
      e.vectors[base_tag(cfg.head_source)] = it->second;
      e.vectors[tuned_tag(cfg.head_source)] = head_forward(head, it->second);
    }
    if (!e.vectors.empty()) out.records.push_back(std::move(e));
  }
  ctx.write(kEmbeddingsFile, serialize_manifest(out));
  ctx.out() << "embed: " << out.records.size() << " items, " << out.source_dims.size()
            << " systems\n";
}

void cmd_fuse(Context& ctx) {
  Manifest m = load_manifest(ctx.input(kEmbeddingsFile));
  for (const auto& name : ctx.cfg().fusions) {
    m = add_fused_source(m, fusion_spec_from_name(name, m));
  }
  ctx.write(kFusedFile, serialize_manifest(m));
  ctx.out() << "fuse: " << ctx.cfg().fusions.size() << " fused systems\n";
}

std::vector<std::pair<std::string, ScoreSet>> score_systems(const Context& ctx) {
  const auto& cfg = ctx.cfg();
  const Manifest m = load_manifest(ctx.input(kFusedFile));
  const auto pairs = load_pairs(ctx, kPairsTestFile);
  std::vector<std::pair<std::string, std::string>> systems{
      {base_tag(cfg.lora_source), base_tag(cfg.lora_source)},
      {lora_tag(cfg.lora_source), lora_tag(cfg.lora_source)},
      {base_tag(cfg.head_source), base_tag(cfg.head_source)},
      {tuned_tag(cfg.head_source), tuned_tag(cfg.head_source)}};
  for (const auto& name : cfg.fusions) {
    systems.emplace_back(name, fusion_spec_from_name(name, m).tag());
  }
  std::vector<std::pair<std::string, ScoreSet>> scored;
  for (const auto& [name, tag] : systems) {
    if (!m.source_dims.contains(tag)) {
      throw ContractError("system '" + name + "' missing from " + kFusedFile + "; rerun fuse");
    }
    scored.emplace_back(name, score_pairs(pairs, m, tag));
  }
  return scored;
}

void cmd_eval(Context& ctx) {
  const auto systems = score_systems(ctx);
  for (const auto& [name, scores] : systems) {
    ctx.write(fs::path("scores") / (name + ".csv"), render_scores_csv(scores));
  }
  const auto rows = report(systems, ctx.cfg().far_targets);
  const std::string table = render_table(rows);
  ctx.write(kReportFile, table);
  ctx.write(kReportCsvFile, render_report_csv(rows));
  ctx.out() << table;
}

void cmd_roc(Context& ctx) {
  std::vector<std::pair<std::string, RocCurve>> curves;
  for (const auto& [name, scores] : score_systems(ctx)) {
    curves.emplace_back(name, sweep(scores));
    ctx.write(fs::path("roc") / (name + ".csv"), render_roc_csv(curves.back().second));
  }
  ctx.write(kRocSvgFile, render_roc_svg(curves));
  ctx.out() << "roc: " << curves.size() << " curves\n";
}

void append_run_log(const Context& ctx, const std::string& command, double wall_seconds) {
  nlohmann::ordered_json line;
  line["command"] = command;
  line["config_hash"] = text::hex64(text::fnv1a(render_config(ctx.cfg())));
  line["seed"] = ctx.cfg().seed;
  line["wall_time_s"] = wall_seconds;
  line["outputs"] = ctx.outputs();
  const fs::path log = ctx.cfg().out_dir / kRunLogFile;
  std::string existing = fs::exists(log) ? text::read_file(log) : std::string();
  text::write_file(log, existing + line.dump() + "\n");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sitter verification toolkit: LoRA and head adaptation, fusion and evaluation",
               "portraitid"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  app.add_option("--config", config_path, "INI config file (defaults match configs/paper.cfg)");
  app.add_option("--seed", seed, "Seed for every stochastic component");
  app.add_option("--out", out_dir, "Run directory for all artifacts");

  const std::vector<std::pair<std::string, std::pair<std::string, std::function<void(Context&)>>>>
      commands{
          {"synth", {"Generate a synthetic manifest", cmd_synth}},
          {"split", {"Assign identity-disjoint train/val/test splits", cmd_split}},
          {"pairs", {"Write val and test verification protocols", cmd_pairs}},
          {"train-lora", {"Train Q/V LoRA adapters on the toy encoder", cmd_train_lora}},
          {"train-head", {"Train the linear head on backbone vectors", cmd_train_head}},
          {"embed", {"Export base and adapted embeddings", cmd_embed}},
          {"fuse", {"Add normalized-concatenation fusion systems", cmd_fuse}},
          {"eval", {"Score the test protocol and write the report", cmd_eval}},
          {"roc", {"Write ROC CSVs and the ROC plot", cmd_roc}},
      };
  for (const auto& [name, entry] : commands) app.add_subcommand(name, entry.first);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    RunConfig cfg = config_path ? load_config(*config_path) : RunConfig{};
    if (seed) cfg.seed = *seed;
    if (out_dir) cfg.out_dir = *out_dir;
    cfg.propagate();
    validate(cfg);

    Context ctx(std::move(cfg), out);
    const auto start = std::chrono::steady_clock::now();
    for (const auto& [name, entry] : commands) {
      if (name == command) entry.second(ctx);
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    append_run_log(ctx, command, elapsed.count());
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const MissingInputError& e) {
    err << "missing input: " << e.what() << "\n";
    return kExitMissingInput;
  } catch (const ContractError& e) {
    err << "contract violation: " << e.what() << "\n";
    return kExitContract;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace portraitid::cli
