#include <gtest/gtest.h>

#include "phladder/sectors.hpp"

using namespace phl;

namespace {
DispersionModel unit() { return DispersionModel::circular(1.0, 0.5); }
}  // namespace

TEST(Sectors, OverlapWithinBounds) {
  ScaleSystem s;
  auto ell = DispersionModel::tabulated(ellipse_profile(1.2, 0.9, 64), 1.0);
  for (const auto& m : {unit(), ell})
    for (int j = 2; j <= 8; ++j) {
      auto sz = build_sectorization(m, s, j);
      EXPECT_GE(sz.overlap, sz.length / 16 - 1e-14) << j;
      EXPECT_LE(sz.overlap, sz.length / 8 + 1e-14) << j;
      EXPECT_NEAR(sz.length, s.sector_length(j), 1e-15);
      EXPECT_NEAR(sz.size() * (sz.length - sz.overlap), m.length(), 1e-10);
    }
}

TEST(Sectors, RejectsCoarseScales) {
  ScaleSystem s;
  EXPECT_THROW(build_sectorization(unit(), s, 0), ScaleError);
  // sector longer than half of a small Fermi circle
  EXPECT_THROW(build_sectorization(DispersionModel::circular(1.0, 0.005), s, 1), ScaleError);
}

TEST(Sectors, EveryPointInOneOrTwoSectors) {
  ScaleSystem s;
  auto sz = build_sectorization(unit(), s, 4);
  for (int i = 0; i < 5000; ++i) {
    double a = sz.curve_length * i / 5000.0;
    auto hit = sectors_at(sz, a);
    EXPECT_GE(hit.size(), 1u);
    EXPECT_LE(hit.size(), 2u);
  }
}

TEST(Sectors, AngularPartitionOfUnity) {
  ScaleSystem s;
  auto ell = DispersionModel::tabulated(ellipse_profile(1.2, 0.9, 64), 1.0);
  for (const auto& m : {unit(), ell}) {
    auto sz = build_sectorization(m, s, 3);
    for (int i = 0; i < 3000; ++i) {
      double a = sz.curve_length * (i + 0.37) / 3000.0;
      double sum = 0;
      for (std::size_t n = 0; n < sz.size(); ++n) sum += sz.angular_weight(n, a);
      EXPECT_NEAR(sum, 1.0, 1e-12) << a;
    }
  }
}

TEST(Sectors, ChiSumsToRadialCutoff) {
  ScaleSystem s;
  auto m = unit();
  auto sz = build_sectorization(m, s, 3);
  Rng rng(8);
  for (int i = 0; i < 500; ++i) {
    double th = uniform(rng, 0, 2 * pi);
    double r = uniform(rng, 0.9, 1.1);
    Momentum k{uniform(rng, -0.05, 0.05), polar(r, th)};
    double sum = 0;
    for (std::size_t n = 0; n < sz.size(); ++n) sum += chi(sz, n, k);
    EXPECT_NEAR(sum, s.extended_value(k.k0, m.e(k.k), 3), 1e-12);
  }
}

TEST(Sectors, ChiVanishesAwayFromSector) {
  ScaleSystem s;
  auto m = unit();
  auto sz = build_sectorization(m, s, 3);
  double far = sz.sectors[0].arc_center + 0.5 * sz.curve_length;
  Momentum k{0.0, m.curve_point(m.theta_of_arc(far))};
  EXPECT_EQ(chi(sz, 0, k), 0.0);
  Momentum c{0.0, sz.sectors[0].center};
  EXPECT_DOUBLE_EQ(chi(sz, 0, c), 1.0);
}

TEST(Geometry, HullAndMinkowski) {
  geom::Polygon sq{{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0.5, 0.5}};
  auto h = geom::convex_hull(sq);
  EXPECT_EQ(h.size(), 4u);
  auto ms = geom::minkowski_sum(h, h);
  EXPECT_EQ(ms.size(), 4u);
  EXPECT_NEAR(geom::distance_to_convex(ms, {1, 1}), 0.0, 1e-15);
  EXPECT_NEAR(geom::distance_to_convex(ms, {3, 1}), 1.0, 1e-15);
  EXPECT_NEAR(geom::distance_to_convex(ms, {3, 3}), std::sqrt(2.0), 1e-15);
}

TEST(Sectors, PairCountsAtZeroTransfer) {
  ScaleSystem s;
  auto sz = build_sectorization(unit(), s, 3);
  auto n = static_cast<std::int64_t>(sz.size());
  // each sector meets itself and its two neighbours
  EXPECT_EQ(count_pairs_with_transfer(sz, {0, 0}, 0.0), 3 * n);
  EXPECT_THROW(count_pairs_with_transfer(sz, {0, 0}, -1.0), DomainError);
}

TEST(Sectors, PairCountsFarTransfer) {
  ScaleSystem s;
  auto sz = build_sectorization(unit(), s, 3);
  EXPECT_EQ(count_pairs_with_transfer(sz, {5, 0}, 0.01), 0);
}

TEST(Sectors, OverlapIntervalShrinksWithWidth) {
  auto m = unit();
  double a = curve_overlap_interval_length(m, {1.2, 0}, 0.05);
  double b = curve_overlap_interval_length(m, {1.2, 0}, 0.0125);
  EXPECT_GT(a, 0.0);
  EXPECT_LT(b, a);
  // transversal crossing: length scales linearly in the width
  EXPECT_NEAR(a / b, 4.0, 0.2);
}
