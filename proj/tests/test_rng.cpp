#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "attnzone/rng.hpp"

using attnzone::Rng;

TEST(Rng, SameSeedSameStream) {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
}

TEST(Rng, UniformIntStaysInClosedRange) {
  Rng rng(1);
  std::set<std::int64_t> seen;
  for (int i = 0; i < 5000; ++i) {
    const auto v = rng.uniform_int(1, 8);
    ASSERT_GE(v, 1);
    ASSERT_LE(v, 8);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 8u);
}

TEST(Rng, IndexIsRoughlyUniform) {
  Rng rng(3);
  std::vector<int> counts(4, 0);
  const int n = 40000;
  for (int i = 0; i < n; ++i) ++counts[rng.index(4)];
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  for (int c : counts) EXPECT_NEAR(c, n / 4.0, 4 * sigma);
}

TEST(Rng, Uniform01InHalfOpenUnitInterval) {
  Rng rng(5);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform01();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, NormalMoments) {
  Rng rng(11);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  const double mean = sum / n;
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(sq / n - mean * mean, 1.0, 0.02);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng rng(9);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  rng.shuffle(std::span(v));
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  std::vector<int> identity(50);
  std::iota(identity.begin(), identity.end(), 0);
  EXPECT_NE(v, identity);
}

TEST(DeriveSeed, DependsOnStageAndSalt) {
  using attnzone::derive_seed;
  EXPECT_EQ(derive_seed(42, "search"), derive_seed(42, "search"));
  EXPECT_NE(derive_seed(42, "search"), derive_seed(42, "agent"));
  EXPECT_NE(derive_seed(42, "search", 1), derive_seed(42, "search", 2));
  EXPECT_NE(derive_seed(42, "search"), derive_seed(43, "search"));
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(attnzone::fnv1a64(std::string_view("")), 0xcbf29ce484222325ULL);
  EXPECT_EQ(attnzone::fnv1a64(std::string_view("a")), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(attnzone::fnv1a64(std::string_view("foobar")), 0x85944171f73967e8ULL);
}
