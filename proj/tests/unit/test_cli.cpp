#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "config.hpp"
#include "portraitid/corpus.hpp"
#include "portraitid/textio.hpp"

using namespace portraitid;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("portraitid_cli_" + text::hex64(rd() ^ (std::uint64_t(rd()) << 32)));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

Outcome run_in(const TempDir& dir, const std::string& command, std::vector<std::string> extra = {}) {
  std::vector<std::string> args{"--out", dir.path().string()};
  args.insert(args.end(), extra.begin(), extra.end());
  args.push_back(command);
  return run(args);
}

fs::path write_config(const TempDir& dir, const std::string& text) {
  const fs::path p = dir / "test.cfg";
  text::write_file(p, text);
  return p;
}

const std::vector<std::string> kPipeline{"synth", "split",      "pairs", "train-lora", "train-head",
                                         "embed", "fuse", "eval",  "roc"};

}  // namespace

TEST(CliSynth, DefaultConfigGivesFortyIdentitiesOfSix) {
  TempDir dir;
  const auto r = run_in(dir, "synth");
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  const Manifest m = load_manifest(dir / "manifest.txt");
  std::map<std::string, int> per_identity;
  for (const auto& rec : m.records) ++per_identity[rec.identity_id];
  EXPECT_EQ(per_identity.size(), 40u);
  for (const auto& [id, n] : per_identity) EXPECT_EQ(n, 6) << id;
}

TEST(CliSynth, SameSeedIsByteIdenticalAndSeedFlagOverrides) {
  TempDir a, b, c;
  ASSERT_EQ(run_in(a, "synth").code, 0);
  ASSERT_EQ(run_in(b, "synth").code, 0);
  ASSERT_EQ(run_in(c, "synth", {"--seed", "8"}).code, 0);
  EXPECT_EQ(text::read_file(a / "manifest.txt"), text::read_file(b / "manifest.txt"));
  EXPECT_NE(text::read_file(a / "manifest.txt"), text::read_file(c / "manifest.txt"));
}

TEST(CliConfig, BadRatioSumExitsTwoNamingField) {
  TempDir dir;
  const auto cfg = write_config(dir, "[split]\ntrain = 0.5\nval = 0.2\ntest = 0.2\n");
  const auto r = run_in(dir, "synth", {"--config", cfg.string()});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_NE(r.err.find("split.train"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "manifest.txt"));
}

TEST(CliConfig, UnknownKeyAndBadValueExitTwo) {
  TempDir dir;
  auto r = run_in(dir, "synth", {"--config", write_config(dir, "[train]\nlearnig_rate = 1\n").string()});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_NE(r.err.find("train.learnig_rate"), std::string::npos) << r.err;
  r = run_in(dir, "synth", {"--config", write_config(dir, "[train]\nmargin = wide\n").string()});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_NE(r.err.find("train.margin"), std::string::npos) << r.err;
  r = run_in(dir, "synth", {"--config", (dir / "absent.cfg").string()});
  EXPECT_EQ(r.code, cli::kExitConfig);
}

TEST(CliConfig, FlagErrorsExitTwo) {
  EXPECT_EQ(run({"frobnicate"}).code, cli::kExitConfig);
  EXPECT_EQ(run({}).code, cli::kExitConfig);
  EXPECT_EQ(run({"--seed", "x", "synth"}).code, cli::kExitConfig);
}

TEST(CliConfig, PaperPresetMatchesDefaultsAndRoundTrips) {
  const auto preset = cli::load_config(fs::path(PORTRAITID_CONFIG_DIR) / "paper.cfg");
  cli::RunConfig defaults;
  defaults.lora.alpha = 16.0;
  EXPECT_EQ(cli::render_config(preset), cli::render_config(defaults));
  EXPECT_EQ(preset.train.learning_rate, 1e-5);
  EXPECT_EQ(preset.train.batch_size, 48u);
  EXPECT_EQ(preset.train.patience, 10u);
  EXPECT_EQ(preset.lora.rank, 16u);
  EXPECT_EQ(preset.train.mining.top_pool, 50u);
  const auto text = cli::render_config(preset);
  EXPECT_EQ(cli::render_config(cli::parse_config(text)), text);
  const auto desk = cli::load_config(fs::path(PORTRAITID_CONFIG_DIR) / "desk.cfg");
  EXPECT_EQ(desk.train.learning_rate, 1e-3);
}

TEST(CliPipeline, MissingUpstreamExitsThree) {
  TempDir dir;
  for (const char* command : {"split", "pairs", "train-lora", "embed", "fuse", "eval", "roc"}) {
    const auto r = run_in(dir, command);
    EXPECT_EQ(r.code, cli::kExitMissingInput) << command;
    EXPECT_NE(r.err.find("missing input"), std::string::npos) << r.err;
  }
}

TEST(CliPipeline, FuseWithAbsentTagExitsFourNamingIt) {
  TempDir dir;
  Manifest m;
  m.source_dims = {{"clip-base", 2}, {"fr-base", 2}};
  m.records.push_back({"a", "p", Split::kTest, {{"clip-base", {1, 0}}, {"fr-base", {0, 1}}}});
  save_manifest(m, dir / "embeddings.txt");
  const auto cfg = write_config(dir, "[fusion]\nsystems = clip-base+fr-tuned\n");
  const auto r = run_in(dir, "fuse", {"--config", cfg.string()});
  EXPECT_EQ(r.code, cli::kExitContract);
  EXPECT_NE(r.err.find("fr-tuned"), std::string::npos) << r.err;
}

TEST(CliPipeline, FullRunReportsEverySystemAndEvalIsRepeatable) {
  TempDir dir;
  for (const auto& command : kPipeline) {
    const auto r = run_in(dir, command);
    ASSERT_EQ(r.code, cli::kExitOk) << command << ": " << r.err;
  }
  const std::string report = text::read_file(dir / "report.txt");
  for (const char* row : {"clip-base ", "clip-lora ", "fr-base ", "fr-tuned ", "clip-lora+fr-base ",
                          "clip-lora+fr-tuned ", "clip-lora+fr-base+fr-tuned "}) {
    EXPECT_NE(report.find(std::string("\n") + row), std::string::npos) << row << "\n" << report;
  }
  EXPECT_TRUE(fs::exists(dir / "roc.svg"));
  EXPECT_TRUE(fs::exists(dir / "roc" / "clip-lora+fr-base+fr-tuned.csv"));
  EXPECT_TRUE(fs::exists(dir / "scores" / "fr-tuned.csv"));

  const std::string csv = text::read_file(dir / "report.csv");
  ASSERT_EQ(run_in(dir, "eval").code, 0);
  EXPECT_EQ(text::read_file(dir / "report.txt"), report);
  EXPECT_EQ(text::read_file(dir / "report.csv"), csv);

  const std::string log = text::read_file(dir / "run_log.jsonl");
  std::vector<std::string> logged;
  for (const auto& line : text::split(log, '\n')) {
    if (line.empty()) continue;
    const auto entry = nlohmann::json::parse(line);
    logged.push_back(entry.at("command"));
    EXPECT_EQ(entry.at("seed"), 7);
    EXPECT_EQ(entry.at("config_hash").get<std::string>().size(), 16u);
    EXPECT_GE(entry.at("wall_time_s").get<double>(), 0.0);
    EXPECT_TRUE(entry.at("outputs").is_object());
  }
  auto expected = kPipeline;
  expected.push_back("eval");
  EXPECT_EQ(logged, expected);
  const auto last = nlohmann::json::parse(text::split(log, '\n').at(9));
  EXPECT_EQ(last.at("outputs").at("report.txt"), text::hex64(text::fnv1a(report)));
}
