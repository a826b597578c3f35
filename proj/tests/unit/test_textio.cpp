#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <limits>
#include <random>

#include "portraitid/error.hpp"
#include "portraitid/textio.hpp"

using namespace portraitid;

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(text::format_double(0.1), "0.1");
  EXPECT_EQ(text::format_double(-2.0), "-2");
  EXPECT_EQ(text::format_double(1e-300), "1e-300");
}

TEST(FormatDouble, RandomBitPatternsRoundTripExactly) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 10000; ++i) {
    const double v = std::bit_cast<double>(rng());
    if (!std::isfinite(v)) continue;
    const double back = text::parse_double(text::format_double(v));
    ASSERT_EQ(std::bit_cast<std::uint64_t>(back), std::bit_cast<std::uint64_t>(v));
  }
}

TEST(ParseDouble, RejectsGarbage) {
  EXPECT_THROW(text::parse_double(""), ContractError);
  EXPECT_THROW(text::parse_double("1.0x"), ContractError);
  EXPECT_THROW(text::parse_double("abc"), ContractError);
  EXPECT_THROW(text::parse_values("1,,2"), ContractError);
  EXPECT_THROW(text::parse_values("1,nan"), ContractError);
}

TEST(ParseValues, SplitsOnCommas) {
  EXPECT_EQ(text::parse_values("1,-2.5,3e2"), (std::vector<double>{1.0, -2.5, 300.0}));
  EXPECT_EQ(text::format_values(std::vector<double>{1.0, -2.5, 300.0}), "1,-2.5,300");
}

TEST(ParseU64, StrictDigits) {
  EXPECT_EQ(text::parse_u64("18446744073709551615"), std::numeric_limits<std::uint64_t>::max());
  EXPECT_THROW(text::parse_u64("-1"), ContractError);
  EXPECT_THROW(text::parse_u64("12 "), ContractError);
}

TEST(Fnv1a, PublishedVectors) {
  EXPECT_EQ(text::fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(text::fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(text::fnv1a("foobar"), 0x85944171f73967e8ULL);
  EXPECT_EQ(text::hex64(0xabcULL), "0000000000000abc");
}

TEST(Split, KeepsEmptyFields) {
  const auto parts = text::split("a,,b", ',');
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_EQ(parts[1], "");
  EXPECT_EQ(text::trim("  x y \t"), "x y");
}
