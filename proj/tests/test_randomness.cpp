#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fpphe/randomness.hpp"

using namespace fpphe;

namespace {

std::vector<double> draws(const PassageTimeField& f, Rate r, int n) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(f.time(Edge{{i % 1000, i / 1000}, i % 2}, r));
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = mean(a), mb = mean(b);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(SeedFieldTest, ZeroDensityHasNoSeeds) {
  SeedField f(0.0, 7);
  for (Coord x = -20; x <= 20; ++x) EXPECT_FALSE(f.is_seed(Site{x, 3}));
}

TEST(SeedFieldTest, OriginNeverSeed) {
  SeedField f(1.0, 7);
  EXPECT_FALSE(f.is_seed(Site{0, 0}));
  EXPECT_TRUE(f.is_seed(Site{0, 1}));
}

TEST(SeedFieldTest, DensityWithinThreeStandardErrors) {
  SeedField f(0.3, 12345);
  std::size_t n = 0, k = 0;
  for (Coord x = -100; x <= 100; ++x)
    for (Coord y = -100; y <= 100; ++y) {
      if (x == 0 && y == 0) continue;
      ++n;
      k += f.is_seed(Site{x, y});
    }
  const double phat = static_cast<double>(k) / static_cast<double>(n);
  const double se = std::sqrt(0.3 * 0.7 / static_cast<double>(n));
  EXPECT_LT(std::abs(phat - 0.3), 3 * se);
}

TEST(SeedFieldTest, ExtraSeed) {
  SeedField f(0.2, 99);
  EXPECT_THROW(f.with_extra_seed(Site{0, 0}), DomainError);
  Site s{3, 4};
  SeedField g = f.with_extra_seed(s);
  EXPECT_TRUE(g.is_seed(s));
  int diffs = 0;
  for (Coord x = -10; x <= 10; ++x)
    for (Coord y = -10; y <= 10; ++y) diffs += f.is_seed(Site{x, y}) != g.is_seed(Site{x, y});
  EXPECT_EQ(diffs, f.is_seed(s) ? 0 : 1);
  SeedField h = g.with_extra_seed(s);
  for (Coord x = -10; x <= 10; ++x) EXPECT_EQ(g.is_seed(Site{x, 4}), h.is_seed(Site{x, 4}));
}

TEST(SeedFieldTest, OrderIndependent) {
  SeedField f(0.5, 4242);
  std::vector<bool> fwd, bwd;
  for (Coord x = -30; x <= 30; ++x) fwd.push_back(f.is_seed(Site{x, -x}));
  for (Coord x = 30; x >= -30; --x) bwd.push_back(f.is_seed(Site{x, -x}));
  std::reverse(bwd.begin(), bwd.end());
  EXPECT_EQ(fwd, bwd);
}

TEST(PassageTimes, MeanRateOne) {
  PassageTimeField f(0.01, 5);
  auto v = draws(f, Rate::one, 100000);
  EXPECT_LT(std::abs(mean(v) - 1.0), 3.0 / std::sqrt(1e5));
}

TEST(PassageTimes, MeanRateLambda) {
  PassageTimeField f(0.01, 5);
  auto v = draws(f, Rate::lambda, 100000);
  EXPECT_LT(std::abs(mean(v) - 100.0), 3.0 * 100.0 / std::sqrt(1e5));
}

TEST(PassageTimes, KolmogorovSmirnovAgainstExponential) {
  PassageTimeField f(1.0, 2024);
  auto v = draws(f, Rate::one, 100000);
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double dmax = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double F = 1.0 - std::exp(-v[i]);
    dmax = std::max({dmax, std::abs(F - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - F)});
  }
  // Asymptotic critical value at significance 0.001.
  EXPECT_LT(dmax, 1.9495 / std::sqrt(n));
}

TEST(PassageTimes, StreamsUncorrelated) {
  PassageTimeField f(1.0, 77);
  SeedField s(0.5, 77);
  auto a = draws(f, Rate::one, 100000);
  auto b = draws(f, Rate::lambda, 100000);
  std::vector<double> c;
  for (int i = 0; i < 100000; ++i) c.push_back(to_unit(keyed_hash(77, StreamTag::seed, Site{i % 1000, i / 1000})));
  EXPECT_LT(std::abs(correlation(a, b)), 0.01);
  EXPECT_LT(std::abs(correlation(a, c)), 0.01);
  EXPECT_LT(std::abs(correlation(b, c)), 0.01);
}

TEST(PassageTimes, DeterministicAndPositive) {
  PassageTimeField f(0.3, 1);
  PassageTimeField g(0.3, 1);
  Edge e{{5, -2}, 1};
  EXPECT_EQ(f.time(e, Rate::one), g.time(e, Rate::one));
  EXPECT_EQ(f.time(e, Rate::lambda), g.time(e, Rate::lambda));
  EXPECT_GT(exponential_from_hash(0, 1.0), 0.0);
  EXPECT_GT(exponential_from_hash(~0ULL, 1.0), 0.0);
  EXPECT_TRUE(std::isfinite(exponential_from_hash(~0ULL, 1.0)));
}

TEST(PassageTimes, Overrides) {
  PassageTimeField f(0.3, 1);
  Edge e = make_edge({0, 0}, {1, 0});
  f.set_override(e, {2.5, 7.0});
  EXPECT_EQ(f.time(e, Rate::one), 2.5);
  EXPECT_EQ(f.time(Site{0, 0}, 0, Rate::lambda), 7.0);
  EXPECT_THROW(f.set_override(e, {0.0, 1.0}), ConfigError);
  EXPECT_THROW(f.set_override(e, {1.0, -1.0}), ConfigError);
  EXPECT_THROW(PassageTimeField(0.0, 1), ConfigError);
}

TEST(PassageTimes, OverrideFileFormat) {
  std::istringstream good("# fpphe-overrides 1\nd 2\n0 0 0 1 1.5 2\n\n# comment\n1 0 0 0 0.25 3\n");
  auto m = parse_overrides(good);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.at(make_edge({0, 0}, {1, 0})).t1, 0.25);
  std::istringstream bad("# fpphe-overrides 1\nd 2\n0 0 0 1 0 2\n");
  EXPECT_THROW(parse_overrides(bad), ConfigError);
  std::istringstream noheader("d 2\n");
  EXPECT_THROW(parse_overrides(noheader), ConfigError);
  std::istringstream notadjacent("# fpphe-overrides 1\nd 2\n0 0 1 1 1 1\n");
  EXPECT_THROW(parse_overrides(notadjacent), DomainError);
}
