#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "portraitid/error.hpp"
#include "portraitid/fusion.hpp"

using namespace portraitid;

namespace {

FusionSpec spec_for(std::vector<std::size_t> dims) {
  FusionSpec spec;
  for (std::size_t i = 0; i < dims.size(); ++i) spec.sources.push_back("s" + std::to_string(i));
  spec.dims = std::move(dims);
  return spec;
}

std::vector<std::vector<double>> random_item(const FusionSpec& spec, std::mt19937_64& rng) {
  std::vector<std::vector<double>> item;
  for (auto d : spec.dims) item.push_back(oracle::random_vector(d, rng));
  return item;
}

double mean_cosine(const std::vector<std::vector<double>>& a,
                   const std::vector<std::vector<double>>& b) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += oracle::plain_cosine(a[i], b[i]);
  return total / static_cast<double>(a.size());
}

}  // namespace

TEST(L2Normalize, Examples) {
  const auto v = l2_normalize(std::vector<double>{3, 4});
  EXPECT_NEAR(v[0], 0.6, 1e-15);
  EXPECT_NEAR(v[1], 0.8, 1e-15);
  const auto again = l2_normalize(v);
  EXPECT_NEAR(again[0], v[0], 1e-15);
  EXPECT_NEAR(again[1], v[1], 1e-15);
  EXPECT_THROW(l2_normalize(std::vector<double>{0, 0, 0}), ContractError);
}

TEST(Fuse, SingleSourceIsNormalization) {
  std::mt19937_64 rng(1);
  const auto spec = spec_for({7});
  const auto v = oracle::random_vector(7, rng);
  const auto fused = fuse(std::vector<std::vector<double>>{v}, spec);
  const auto unit = l2_normalize(v);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(fused[i], unit[i], 1e-15);
}

TEST(Fuse, BlocksAreScaledByInverseRootK) {
  std::mt19937_64 rng(2);
  const auto spec = spec_for({3, 5, 8, 2});
  const auto item = random_item(spec, rng);
  const auto fused = fuse(item, spec);
  ASSERT_EQ(fused.size(), 18u);
  EXPECT_NEAR(l2_norm(fused), 1.0, 1e-12);
  // Before renormalization the k unit blocks have norm sqrt(k), so each block
  // of the output is its unit vector divided by 2.
  std::size_t offset = 0;
  for (const auto& v : item) {
    const auto u = oracle::unit(v);
    for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(fused[offset + i], u[i] / 2.0, 1e-15);
    offset += u.size();
  }
}

TEST(Fuse, RejectsMissingSourceAndZeroVector) {
  const auto spec = spec_for({2, 2});
  EXPECT_THROW(fuse(std::vector<std::vector<double>>{{1, 0}}, spec), ContractError);
  EXPECT_THROW(fuse(std::vector<std::vector<double>>{{1, 0}, {0, 0}}, spec), ContractError);
  EXPECT_THROW(fuse(std::vector<std::vector<double>>{{1, 0}, {0, 0, 1}}, spec), ContractError);
}

TEST(Fuse, BitIdenticalAcrossCalls) {
  std::mt19937_64 rng(3);
  const auto spec = spec_for({4, 6});
  const auto item = random_item(spec, rng);
  EXPECT_EQ(fuse(item, spec), fuse(item, spec));
}

TEST(FusedScore, Examples) {
  const auto spec = spec_for({2, 2});
  const std::vector<std::vector<double>> a{{1, 0}, {1, 0}}, b{{2, 0}, {0, 3}};
  EXPECT_NEAR(fused_score(a, a, spec), 1.0, 1e-15);
  EXPECT_NEAR(fused_score(a, b, spec), 0.5, 1e-15);
}

TEST(FusedScore, MeanOfCosinesWithUnequalDims) {
  std::mt19937_64 rng(4);
  const auto spec = spec_for({32, 64, 128});
  for (int i = 0; i < 200; ++i) {
    const auto a = random_item(spec, rng);
    const auto b = random_item(spec, rng);
    const double s = fused_score(a, b, spec);
    EXPECT_NEAR(s, mean_cosine(a, b), 1e-12);
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(FusedScore, ScaleInvariance) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  const auto spec = spec_for({5, 9});
  for (int i = 0; i < 100; ++i) {
    const auto a = random_item(spec, rng);
    const auto b = random_item(spec, rng);
    auto a2 = a;
    const double c = scale(rng);
    for (double& x : a2[i % 2]) x *= c;
    EXPECT_NEAR(fused_score(a2, b, spec), fused_score(a, b, spec), 1e-12);
  }
}

TEST(FusedScore, AntipodalItemsScoreMinusOne) {
  const auto spec = spec_for({2, 3});
  const std::vector<std::vector<double>> a{{1, 2}, {0, 0, 1}}, b{{-1, -2}, {0, 0, -4}};
  EXPECT_NEAR(fused_score(a, b, spec), -1.0, 1e-15);
}

TEST(FusionSpec, TagsAndManifestExport) {
  Manifest m;
  m.source_dims = {{"clip-lora", 2}, {"fr-base", 3}};
  m.records.push_back({"i1", "p1", Split::kTest, {{"clip-lora", {3, 4}}, {"fr-base", {0, 0, 2}}}});
  const auto spec = fusion_spec_from_name("clip-lora+fr-base", m);
  EXPECT_EQ(spec.tag(), "fused[clip-lora+fr-base]");
  EXPECT_EQ(spec.display_name(), "clip-lora+fr-base");
  const auto out = add_fused_source(m, spec);
  EXPECT_EQ(out.source_dims.at(spec.tag()), 5u);
  const auto& v = out.records[0].vectors.at(spec.tag());
  const double r = 1.0 / std::sqrt(2.0);
  const std::vector<double> expected{0.6 * r, 0.8 * r, 0, 0, r};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(v[i], expected[i], 1e-15);
}

TEST(FusionSpec, MissingTagIsNamed) {
  Manifest m;
  m.source_dims = {{"a", 2}};
  try {
    fusion_spec_from_name("a+fr-tuned", m);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("fr-tuned"), std::string::npos);
  }
  m.source_dims["b"] = 2;
  m.records.push_back({"i1", "p1", Split::kTest, {{"a", {1, 0}}}});
  try {
    add_fused_source(m, fusion_spec_from_name("a+b", m));
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
  }
}
