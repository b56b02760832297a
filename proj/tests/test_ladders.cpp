#include <gtest/gtest.h>

#include "phladder/ladders.hpp"

using namespace phl;

namespace {

DispersionModel unit() { return DispersionModel::circular(1.0, 0.5); }

double bubble_diff(const GridBubble& a, const GridBubble& b) {
  double m = 0;
  std::size_t N = a.lat.size();
  for (std::size_t p = 0; p < N; ++p)
    for (std::size_t k = 0; k < N; ++k) m = std::max(m, std::abs(a(p, k) - b(p, k)));
  return m;
}

double bubble_max(const GridBubble& a) {
  double m = 0;
  std::size_t N = a.lat.size();
  for (std::size_t p = 0; p < N; ++p)
    for (std::size_t k = 0; k < N; ++k) m = std::max(m, std::abs(a(p, k)));
  return m;
}

GridBubbleFamily family(int n, double half_width) {
  auto m = unit();
  return {m, ScaleSystem{}, Counterterm{}, ladder_lattice(m, n, half_width)};
}

}  // namespace

TEST(Series, TruncationAndGrades) {
  Series<AbstractKernel4> s(2);
  AbstractKernel4 k(1, 1);
  k(0, 0, 0, 0) = 1.0;
  s.add(1, k);
  s.add(3, k);
  s.add(0, k);
  EXPECT_EQ(s.terms.size(), 1u);
  s.add(1, k);
  EXPECT_EQ((*s.get(1))(0, 0, 0, 0), cplx(2.0));
  EXPECT_EQ(s.get(2), nullptr);
}

TEST(Ladders, AssembleMatchesIndexSum) {
  Rng rng(1);
  const int n = 2;
  std::vector<AbstractKernel4> K;
  std::vector<AbstractProp> P;
  for (int i = 0; i < 3; ++i) K.push_back(AbstractKernel4::random(n, 1, rng));
  for (int i = 0; i < 2; ++i) P.push_back(AbstractProp::random(n, rng));
  auto L = assemble_ladder(K, P);
  EXPECT_EQ(L.grade, 3);
  auto p = [&](int m, int a, int b, int c, int d) { return P[m].v[((a * n + b) * n + c) * n + d]; };
  double worst = 0;
  for (int z1 = 0; z1 < n; ++z1)
    for (int z2 = 0; z2 < n; ++z2)
      for (int z3 = 0; z3 < n; ++z3)
        for (int z4 = 0; z4 < n; ++z4) {
          cplx s{};
          for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b)
              for (int c = 0; c < n; ++c)
                for (int d = 0; d < n; ++d)
                  for (int e = 0; e < n; ++e)
                    for (int f = 0; f < n; ++f)
                      for (int g = 0; g < n; ++g)
                        for (int h = 0; h < n; ++h)
                          s += K[0](z1, z2, a, b) * p(0, a, b, c, d) * K[1](c, d, e, f) *
                               p(1, e, f, g, h) * K[2](g, h, z3, z4);
          worst = std::max(worst, std::abs(s - L(z1, z2, z3, z4)));
        }
  EXPECT_LT(worst, 1e-12);
  EXPECT_THROW(assemble_ladder(K, std::vector<AbstractProp>{}), ShapeError);
}

TEST(Ladders, DoubleBubble) {
  Rng rng(2);
  auto g1 = AbstractKernel4::random(2, 1, rng), g2 = AbstractKernel4::random(2, 1, rng),
       h = AbstractKernel4::random(2, 1, rng);
  auto V = AbstractProp::random(2, rng), W = AbstractProp::random(2, rng);
  auto d = double_bubble(g1, V, g2, W, h);
  auto inner = flip(bullet(g1, V, g2));
  EXPECT_EQ(max_abs_diff(d, bullet(inner, W, h)), 0.0);
  EXPECT_EQ(d.grade, 3);
}

TEST(Ladders, TrivialCases) {
  Rng rng(3);
  auto sys = random_abstract_system(2, 5, 4, rng);
  auto zero = sys;
  zero.F.clear();
  for (const auto& l : compound_ladders_recursive(zero, 5)) EXPECT_TRUE(l.empty());
  auto rec = compound_ladders_recursive(sys, 3);
  EXPECT_TRUE(rec[0].empty());
  EXPECT_TRUE(rec[1].empty());
  EXPECT_TRUE(rec[2].empty());
  EXPECT_FALSE(rec[3].empty());
  auto r1 = sys;
  r1.R = 1;
  for (const auto& l : compound_ladders_recursive(r1, 5)) EXPECT_TRUE(l.empty());
  EXPECT_TRUE(compound_ladder_explicit(r1, single_scale_ladders(r1, 5), 4).empty());
}

TEST(Ladders, LowestGradeIsOneBubble) {
  Rng rng(4);
  auto sys = random_abstract_system(2, 4, 4, rng);
  // L^(3) at grade 2 is F^(2) • C^(2) • F^(2)
  auto L3 = compound_ladders_recursive(sys, 3)[3];
  ASSERT_NE(L3.get(2), nullptr);
  auto want = bullet(sys.F.at(2), sys.single(2), sys.F.at(2));
  EXPECT_LT(max_abs_diff(*L3.get(2), want), 1e-14);
}

TEST(Ladders, AllFormsAgree) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    auto sys = random_abstract_system(3, 5, 4, rng);
    for (int j = 1; j <= 4; ++j) {
      auto rep = check_ladder_identities(sys, j);
      EXPECT_LT(rep.max(), 1e-10 * std::max(1.0, rep.scale)) << "seed " << seed << " j " << j;
    }
  }
}

TEST(Ladders, GradeScalesWithCoupling) {
  Rng rng(5);
  auto sys = random_abstract_system(2, 5, 4, rng);
  auto twice = sys;
  for (auto& [i, f] : twice.F) f *= 2.0;
  auto a = compound_ladder_recursive(sys, 5), b = compound_ladder_recursive(twice, 5);
  ASSERT_FALSE(a.empty());
  for (const auto& [g, k] : a.terms) {
    ASSERT_NE(b.get(g), nullptr);
    EXPECT_LT(max_abs_diff(std::pow(2.0, g) * k, *b.get(g)), 1e-10 * max_abs(*b.get(g))) << g;
  }
}

TEST(Ladders, SpinChannelsMatchExplicitSpin) {
  Rng rng(6);
  auto sp = random_spin_systems(2, 4, 3, rng);
  auto chan = charge_spin_ladder(sp.channel, 4);
  auto expl = compound_ladder_recursive(sp.explicit_spin, 4);
  ASSERT_EQ(chan.terms.size(), expl.terms.size());
  for (const auto& [g, k] : expl.terms) {
    auto d = charge_spin_decompose(k, rng, 1e-9);
    EXPECT_LT(max_abs_diff(d, *chan.get(g)), 1e-12);
    EXPECT_LT(max_abs_diff(charge_spin_extract(k), *chan.get(g)), 1e-12);
  }
}

TEST(GridFamily, WindowIsSumOfSingles) {
  auto fam = family(4, 0.1);
  for (auto [i, j] : {std::pair{2, 2}, {2, 4}, {3, 5}}) {
    GridBubble sum{fam.lat, {}};
    for (int m = i; m <= j; ++m) sum += fam.single(m);
    auto w = fam.window(i, j);
    EXPECT_LT(bubble_diff(w, sum), 1e-12 * bubble_max(w)) << i << "," << j;
  }
  EXPECT_TRUE(fam.window(4, 3).parts.empty());
}

TEST(GridFamily, SplitPartsRecombine) {
  auto fam = family(4, 0.1);
  auto w = fam.window(2, 4);
  auto split = fam.split_window(2, 4, WindowPart::top) + fam.split_window(2, 4, WindowPart::mid) +
               fam.split_window(2, 4, WindowPart::bot);
  EXPECT_LT(bubble_diff(w, split), 1e-12 * bubble_max(w));
  EXPECT_LT(bubble_diff(fam.split_window(2, 4, WindowPart::mid), fam.mid_double_sum(2, 4)),
            1e-12 * bubble_max(w));
}

TEST(GridFamily, OverlapPropagatorsRecombine) {
  auto fam = family(4, 0.1);
  // scale 4 has no nodes inside its support on this lattice
  for (int l = 2; l <= 3; ++l) {
    auto sum = overlap_propagator(fam, l, {0, 0, 0}, true) + overlap_propagator(fam, l, {0, 0, 0}, false);
    EXPECT_LT(bubble_diff(sum, fam.single(l)), 1e-12 * bubble_max(sum));
  }
  EXPECT_THROW(overlap_propagator(fam, 2, {-1, 0, 0}, true), DomainError);
}

TEST(GridFamily, LineMomentOfLinearFunction) {
  auto lat = ladder_lattice(unit(), 5, 0.1);
  std::vector<cplx> f(lat.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = lat.momentum(i).k.y;
  auto d = line_moment(lat, f, {0, 0, 1});
  EXPECT_NEAR(std::abs(d[lat.index(2, 2, 2)] - cplx(0, -1)), 0.0, 1e-12);
  EXPECT_EQ(d[lat.index(0, 0, 0)], cplx{});
}

TEST(GridFamily, LatticeGuards) {
  EXPECT_THROW(ladder_lattice(unit(), 7, 0.1), ResolutionError);
  EXPECT_THROW(ladder_lattice(unit(), 1, 0.1), ResolutionError);
}

TEST(GridLadders, IdentitiesHold) {
  auto fam = family(4, 0.1);
  Rng rng(7);
  std::map<int, GridKernel4> F;
  for (int i = 2; i <= 4; ++i) F.emplace(i, GridKernel4::random(fam.lat, 1, rng, 0.5));
  auto sys = grid_system(fam, F, 3);
  auto rep = check_ladder_identities(sys, 3);
  EXPECT_LT(rep.max(), 1e-10 * std::max(1.0, rep.scale));
}

TEST(InfraredProbe, Guards) {
  ScaleSystem s;
  EXPECT_THROW(infrared_probe(unit(), s, {}, 0.5, Momentum{}, 3, 4, 2), DomainError);
  EXPECT_THROW(infrared_probe(unit(), s, {}, 0.5, Momentum{0, {0.1, 0}}, 3, 4, 3), DomainError);
  EXPECT_THROW(infrared_probe(unit(), s, {}, 0.5, Momentum{0, {0.1, 0}}, 4, 3, 2), ScaleError);
}

TEST(InfraredProbe, ZeroRungGivesZero) {
  ScaleSystem s;
  auto rows = infrared_probe(unit(), s, {}, 0.0, Momentum{0, {0.1, 0}}, 2, 5, 2);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.total, cplx{});
    EXPECT_EQ(r.delta, cplx{});
  }
}

TEST(InfraredProbe, GradeOneIsEmpty) {
  ScaleSystem s;
  auto rows = infrared_probe(unit(), s, {}, 0.5, Momentum{0, {0.1, 0}}, 3, 4, 1);
  for (const auto& r : rows) EXPECT_TRUE(r.grades.empty());
}

TEST(InfraredProbe, CauchyInScale) {
  ScaleSystem s;
  double t = s.sector_length(2);
  auto rows = infrared_probe(unit(), s, {}, 0.5, Momentum{0, {t, 0}}, 3, 5, 2, 1e-6);
  ASSERT_EQ(rows.size(), 3u);
  for (std::size_t i = 2; i < rows.size(); ++i)
    EXPECT_LE(std::abs(rows[i].delta), std::abs(rows[i - 1].delta) + rows[i].error + rows[i - 1].error);
  EXPECT_EQ(rows[0].grades.count(2), 1u);
}

// Frequency and spatial approaches to t = 0 leave different values behind.
TEST(InfraredProbe, DirectionDependence) {
  ScaleSystem s;
  auto m = unit();
  double h = 0.01;
  auto freq = window_bubble(m, s, {}, Momentum{h, {0, 0}}, 2, 4, 1e-6);
  auto space = window_bubble(m, s, {}, Momentum{0, {h, 0}}, 2, 4, 1e-6);
  double d = (freq.value - space.value).real();
  EXPECT_GT(d, 0.5 / (2 * pi));
  EXPECT_LT(d, 1.5 / (2 * pi));
}
