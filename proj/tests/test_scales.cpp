#include <gtest/gtest.h>

#include "phladder/quadrature.hpp"
#include "phladder/scales.hpp"

using namespace phl;

TEST(Scales, PhiPlateauAndSupport) {
  ScaleSystem s;
  EXPECT_EQ(s.phi(0.5), 1.0);
  EXPECT_EQ(s.phi(-1.0), 1.0);
  EXPECT_EQ(s.phi(2.5), 0.0);
  EXPECT_EQ(s.phi(2.0), 0.0);
  double mid = s.phi(1.5);
  EXPECT_GT(mid, 0.0);
  EXPECT_LT(mid, 1.0);
  double prev = 1.0;
  for (int i = 0; i <= 100; ++i) {
    double v = s.phi(1.0 + i / 100.0);
    EXPECT_LE(v, prev);
    prev = v;
  }
}

TEST(Scales, Validation) {
  ScaleSystem s;
  EXPECT_NO_THROW(s.validate());
  s.aleph = 0.7;
  EXPECT_THROW(s.validate(), DomainError);
  s = {};
  s.M = 1.0;
  EXPECT_THROW(s.validate(), DomainError);
  s = {};
  s.r0 = 5;
  EXPECT_THROW(s.validate(), DomainError);
}

TEST(Scales, PartitionOfUnity) {
  ScaleSystem s;
  const int J = 8;
  double lo = std::log(std::pow(s.M, -2.0 * J)), hi = 0.0;
  for (int n = 0; n < 200; ++n) {
    double x = std::exp(lo + (hi - lo) * (n + 0.5) / 200.0);
    EXPECT_NEAR(s.nu_sum(x, 0, J + 2), 1.0, 1e-12) << "x=" << x;
  }
}

TEST(Scales, ShellPlateauAndSupport) {
  ScaleSystem s;
  double M = s.M;
  for (int j = 1; j <= 6; ++j) {
    double Mj = std::pow(M, -j);
    EXPECT_DOUBLE_EQ(s.nu_shell_value(0.0, std::sqrt(2.0 / M) * Mj, j), 1.0);
    EXPECT_DOUBLE_EQ(s.nu_shell_value(0.0, 2 * std::sqrt(2 * M) * Mj, j), 0.0);
    EXPECT_DOUBLE_EQ(s.nu_shell_value(0.0, 0.0, j), 0.0);
    EXPECT_DOUBLE_EQ(s.nu_ge_value(0.0, std::sqrt(M) * Mj, j), 1.0);
    EXPECT_DOUBLE_EQ(s.nu_ge_value(0.0, std::sqrt(2 * M) * Mj, j), 0.0);
    EXPECT_DOUBLE_EQ(s.nu_ge_value(0.0, 0.0, j), 1.0);
  }
}

TEST(Scales, RandomMomentaRespectPlateaus) {
  ScaleSystem s;
  Rng rng(3);
  double M = s.M;
  for (int j = 1; j <= 6; ++j) {
    double Mj = std::pow(M, -j);
    for (int n = 0; n < 1000; ++n) {
      double r = uniform(rng, 0.0, 3 * std::sqrt(2 * M) * Mj);
      double th = uniform(rng, 0, 2 * pi);
      double k0 = r * std::cos(th), e = r * std::sin(th);
      double v = s.nu_shell_value(k0, e, j);
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      if (r >= std::sqrt(2 / M) * Mj && r <= std::sqrt(M) * Mj) {
        EXPECT_DOUBLE_EQ(v, 1.0);
      }
      if (r <= Mj / std::sqrt(M) || r >= std::sqrt(2 * M) * Mj) {
        EXPECT_DOUBLE_EQ(v, 0.0);
      }
    }
  }
}

TEST(Scales, Telescoping) {
  ScaleSystem s;
  Rng rng(4);
  for (int n = 0; n < 2000; ++n) {
    double k0 = uniform(rng, -0.5, 0.5), e = uniform(rng, -0.5, 0.5);
    for (int j = 1; j <= 6; ++j) {
      double d = s.nu_ge_value(k0, e, j) - s.nu_ge_value(k0, e, j + 1);
      EXPECT_NEAR(d, s.nu_shell_value(k0, e, j), 1e-12);
    }
    // finite sum exhausts the support at J = 30
    double sum = 0;
    for (int i = 2; i <= 30; ++i) sum += s.nu_shell_value(k0, e, i);
    EXPECT_NEAR(s.nu_ge_value(k0, e, 2), sum, 1e-12);
  }
}

TEST(Scales, TelescopedSumAgrees) {
  ScaleSystem s;
  for (double x : {1e-6, 3e-4, 0.01, 0.2, 0.9})
    for (int lo = 0; lo <= 3; ++lo)
      for (int hi = lo; hi <= 6; ++hi) EXPECT_NEAR(s.nu_sum(x, lo, hi), s.nu_sum_telescoped(x, lo, hi), 1e-12);
}

TEST(Scales, IntervalCutoff) {
  ScaleSystem s;
  EXPECT_EQ(s.nu0_interval(0.0, 0, 5), 0.0);
  EXPECT_EQ(s.nu0_interval(0.01, 2, 3), 0.0);
  EXPECT_EQ(s.nu0_interval(0.01, 3, 3), 0.0);
  // plateau of the sum over l = 2..4: sqrt(2) M^{-4} <= |k0| <= sqrt(M) M^{-2}
  for (double k0 : {0.03, 0.01, 0.006}) EXPECT_DOUBLE_EQ(s.nu0_interval(k0, 1, 5), 1.0);
}

TEST(Scales, FactorizedCutoff) {
  ScaleSystem s;
  auto m = DispersionModel::circular(1.0, 0.5);
  Vec2 p{1, 0}, k{0, 1};
  EXPECT_EQ(s.factorized_cutoff(m, 0.0, p, k, 1, 5), 0.0);
  EXPECT_DOUBLE_EQ(s.factorized_cutoff(m, 0.01, p, k, 1, 5), 1.0);
  // |e(p)| at the edge of the leading term's support
  double r = std::sqrt(1.0 + 2 * std::sqrt(2 * s.M) * std::pow(s.M, -2));
  EXPECT_EQ(s.factorized_cutoff(m, 0.01, {r, 0}, k, 1, 5), 0.0);
}

TEST(Scales, SectorLength) {
  ScaleSystem s;
  EXPECT_DOUBLE_EQ(s.sector_length(0), 1.0);
  EXPECT_NEAR(s.sector_length(5), std::pow(4.0, -3.0), 1e-15);
}

TEST(Quadrature, ExactOnPolynomials) {
  // 21-point Kronrod is exact through degree 31
  for (int deg = 0; deg <= 20; ++deg) {
    auto f = [deg](double x) { return std::pow(x, deg); };
    auto r = integrate<double>(f, -1.0, 2.0);
    double exact = (std::pow(2.0, deg + 1) - std::pow(-1.0, deg + 1)) / (deg + 1);
    EXPECT_NEAR(r.value, exact, 1e-12 * std::max(1.0, std::abs(exact)));
    EXPECT_TRUE(r.converged);
  }
}

TEST(Quadrature, GaussLegendreWeights) {
  std::vector<double> x, w;
  gauss_legendre(12, x, w);
  double s = 0, s2 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += w[i], s2 += w[i] * x[i] * x[i];
  EXPECT_NEAR(s, 2.0, 1e-14);
  EXPECT_NEAR(s2, 2.0 / 3.0, 1e-14);
}

TEST(Quadrature, RealLineAndBreaks) {
  auto r = integrate_real_line<double>([](double x) { return 1.0 / (1 + x * x); });
  EXPECT_NEAR(r.value, pi, 1e-9);
  auto kink = integrate<double>([](double x) { return std::abs(x - 0.3); }, 0.0, 1.0, {}, {0.3});
  EXPECT_NEAR(kink.value, 0.5 * (0.09 + 0.49), 1e-14);
}

TEST(Quadrature, BudgetExhaustion) {
  QuadOptions o;
  o.max_segments = 3;
  o.abs_tol = o.rel_tol = 1e-15;
  auto f = [](double x) { return std::sin(1.0 / (x + 1e-3)); };
  EXPECT_FALSE(integrate<double>(f, 0.0, 1.0, o).converged);
  o.throw_on_budget = true;
  EXPECT_THROW(integrate<double>(f, 0.0, 1.0, o), BudgetError);
}
