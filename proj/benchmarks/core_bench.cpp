#include <benchmark/benchmark.h>

#include <random>

#include "portraitid/corpus.hpp"
#include "portraitid/encoder.hpp"
#include "portraitid/fusion.hpp"
#include "portraitid/lora.hpp"
#include "portraitid/metrics.hpp"
#include "portraitid/training.hpp"

using namespace portraitid;

namespace {

std::vector<double> gaussian(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

void BM_EncodeWithAdapters(benchmark::State& state) {
  EncoderConfig cfg;
  const auto w = init_encoder(cfg, 1);
  const auto adapters = init_qv_adapters(cfg, 16, 16.0, 2);
  std::mt19937_64 rng(3);
  const Matrix tokens = tokenize(gaussian(cfg.seq_len * cfg.d_model, rng), cfg);
  for (auto _ : state) benchmark::DoNotOptimize(encode(cfg, w, adapters, tokens));
}
BENCHMARK(BM_EncodeWithAdapters);

void BM_SweepAndEer(benchmark::State& state) {
  std::mt19937_64 rng(4);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> gen(n / 10), imp(n - n / 10);
  for (double& g : gen) g = u(rng) + 0.3;
  for (double& i : imp) i = u(rng);
  const auto scores = ScoreSet::from_scores(gen, imp);
  for (auto _ : state) benchmark::DoNotOptimize(eer(sweep(scores)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_SweepAndEer)->Arg(1000)->Arg(100000);

void BM_FusedScore(benchmark::State& state) {
  std::mt19937_64 rng(5);
  FusionSpec spec;
  spec.sources = {"clip-lora", "fr-base", "fr-tuned"};
  spec.dims = {512, 512, 512};
  std::vector<std::vector<double>> a, b;
  for (auto d : spec.dims) {
    a.push_back(gaussian(d, rng));
    b.push_back(gaussian(d, rng));
  }
  for (auto _ : state) benchmark::DoNotOptimize(fused_score(a, b, spec));
}
BENCHMARK(BM_FusedScore);

void BM_MineNegatives(benchmark::State& state) {
  std::mt19937_64 rng(6);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<std::vector<double>> emb;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) {
    emb.push_back(l2_normalize(gaussian(64, rng)));
    ids.push_back("id" + std::to_string(i / 4));
  }
  for (auto _ : state) benchmark::DoNotOptimize(mine_negatives(0, emb, ids, {}, 10, rng));
}
BENCHMARK(BM_MineNegatives)->Arg(500)->Arg(5000);

}  // namespace
BENCHMARK_MAIN();
