#include <gtest/gtest.h>

#include "phladder/propagators.hpp"

using namespace phl;

namespace {
DispersionModel unit() { return DispersionModel::circular(1.0, 0.5); }
}  // namespace

TEST(Propagators, PlateauValue) {
  ScaleSystem s;
  Counterterm v;
  for (int j = 1; j <= 6; ++j) {
    double k0 = std::pow(s.M, -j);  // inside the shell plateau
    cplx c = propagator_from_energy(s, v, k0, 0.0, Which::shell(j));
    EXPECT_NEAR(std::abs(c - 1.0 / cplx(0, k0)), 0.0, 1e-12 / k0);
  }
}

TEST(Propagators, OutsideSupportIsZero) {
  ScaleSystem s;
  Counterterm v;
  EXPECT_EQ(propagator_from_energy(s, v, 0.0, 0.0, Which::shell(3)), cplx{});
  EXPECT_EQ(propagator_from_energy(s, v, 1.0, 0.0, Which::shell(3)), cplx{});
  EXPECT_EQ(propagator_from_energy(s, v, 1.0, 0.0, Which::tail(3)), cplx{});
  EXPECT_THROW(propagator_from_energy(s, v, 0.1, 0.0, Which::shell(0)), ScaleError);
}

TEST(Propagators, TailIsSumOfShells) {
  ScaleSystem s;
  Counterterm v;
  Rng rng(2);
  for (int n = 0; n < 500; ++n) {
    double k0 = uniform(rng, -0.2, 0.2), e = uniform(rng, -0.2, 0.2);
    if (k0 == 0.0) continue;
    cplx sum{};
    for (int j = 2; j <= 40; ++j) sum += propagator_from_energy(s, v, k0, e, Which::shell(j));
    cplx tail = propagator_from_energy(s, v, k0, e, Which::tail(2));
    EXPECT_LE(std::abs(sum - tail), 1e-9 * std::max(1.0, std::abs(tail)));
  }
}

TEST(Propagators, CountertermVanishesAtZeroFrequency) {
  ScaleSystem s;
  Counterterm v{0.5, 2, 8};
  EXPECT_EQ(v.value(s, 0.0, 0.01), 0.0);
  EXPECT_NE(v.value(s, 1e-3, 0.0), 0.0);
  EXPECT_TRUE(Counterterm{}.is_zero());
}

TEST(Propagators, SectorizedUsesChi) {
  ScaleSystem s;
  auto m = unit();
  auto sz = build_sectorization(m, s, 3);
  Counterterm v;
  Momentum k{std::pow(s.M, -3), sz.sectors[0].center};
  cplx full = propagator_value(m, s, v, k, Which::shell(3));
  EXPECT_EQ(sectorized_propagator(sz, 0, v, k), full);
  EXPECT_EQ(sectorized_propagator(sz, sz.size() / 2, v, k), cplx{});
}

TEST(Propagators, LatticeIndexing) {
  MomentumLattice lat;
  lat.n = {3, 4, 5};
  for (std::size_t i = 0; i < lat.size(); ++i) {
    auto c = lat.coords(i);
    EXPECT_EQ(lat.index(c[0], c[1], c[2]), i);
  }
  EXPECT_FALSE(lat.inside(3, 0, 0));
  EXPECT_TRUE(lat.inside(2, 3, 4));
}

TEST(Propagators, FourierOfConstantIsDelta) {
  MomentumLattice lat;
  lat.n = {8, 8, 4};
  lat.spacing = {0.1, 0.2, 0.3};
  auto g = build_grid_propagator(lat, [](const Momentum&) { return cplx(1.0); });
  auto p = to_position_space(g);
  double expect = lat.size() * lat.cell_volume() / std::pow(2 * pi, 3);
  EXPECT_NEAR(std::abs(p.values[0]), expect, 1e-12);
  for (std::size_t i = 1; i < p.size(); ++i) EXPECT_LT(std::abs(p.values[i]), 1e-12);
  EXPECT_NEAR(p.spacing[0], 2 * pi / (8 * 0.1), 1e-12);
}

TEST(Propagators, FourierParseval) {
  MomentumLattice lat;
  lat.n = {8, 4, 4};
  Rng rng(1);
  std::vector<cplx> vals(lat.size());
  for (auto& x : vals) x = complex_gaussian(rng);
  GridPropagator g{lat, vals};
  auto p = to_position_space(g);
  double a = 0, b = 0;
  for (auto x : vals) a += std::norm(x);
  for (auto x : p.values) b += std::norm(x);
  double w = lat.cell_volume() / std::pow(2 * pi, 3);
  EXPECT_NEAR(b, w * w * lat.size() * a, 1e-9 * b);
}

TEST(Propagators, SectorLatticeGuards) {
  ScaleSystem s;
  EXPECT_THROW(sector_lattice(unit(), s, 3, {8, 64, 16}), ResolutionError);
  EXPECT_THROW(sector_lattice(unit(), s, 11, {}), ResolutionError);
  auto lat = sector_lattice(unit(), s, 3, {32, 32, 16});
  EXPECT_NEAR(norm(lat.normal), 1.0, 1e-14);
  EXPECT_NEAR(dot(lat.normal, lat.tangent), 0.0, 1e-14);
}

TEST(Propagators, NormScalingSlopes) {
  ScaleSystem s;
  Counterterm v;
  NormGrid grid{96, 96, 32};
  auto l1 = fit_norm_scaling(unit(), s, v, 2, 4, NormKind::L1, {0, 0, 0}, grid);
  EXPECT_NEAR(l1.slope, 1.0, 0.15);
  auto linf = fit_norm_scaling(unit(), s, v, 2, 4, NormKind::Linf, {0, 0, 0}, grid);
  EXPECT_NEAR(linf.slope, -1.0, 0.15);
  ASSERT_EQ(l1.samples.size(), 3u);
  EXPECT_EQ(l1.samples.front().j, 2);
}
