#include <gtest/gtest.h>

#include <sstream>

#include "phladder/kernels.hpp"

using namespace phl;

namespace {

MomentumLattice small_lattice(int n) {
  MomentumLattice lat;
  lat.n = {n, n, n};
  lat.spacing = {0.1, 0.2, 0.3};
  lat.origin = {-0.15, 0.9, -0.3};
  lat.centre = {0, 0};
  return lat;
}

}  // namespace

TEST(AbstractKernel, FlipIsInvolution) {
  Rng rng(1);
  auto K = AbstractKernel4::random(3, 2, rng);
  auto f = flip(K);
  EXPECT_EQ(f(0, 1, 2, 0), -K(0, 2, 1, 0));
  EXPECT_EQ(max_abs_diff(flip(f), K), 0.0);
}

TEST(AbstractKernel, BulletIsAssociative) {
  Rng rng(2);
  auto A = AbstractKernel4::random(3, 1, rng), B = AbstractKernel4::random(3, 1, rng),
       C = AbstractKernel4::random(3, 1, rng);
  auto P = AbstractProp::random(3, rng), Q = AbstractProp::random(3, rng);
  auto left = bullet(bullet(A, P, B), Q, C);
  auto right = bullet(A, P, bullet(B, Q, C));
  EXPECT_LT(max_abs_diff(left, right), 1e-12);
  EXPECT_EQ(left.grade, 3);
}

TEST(AbstractKernel, ShapeChecks) {
  Rng rng(3);
  auto A = AbstractKernel4::random(2, 1, rng);
  auto B = AbstractKernel4::random(3, 1, rng);
  EXPECT_THROW(A + B, ShapeError);
  EXPECT_THROW(mul(A, AbstractProp(3)), ShapeError);
  EXPECT_THROW(AbstractKernel4(0, 1), ShapeError);
}

TEST(AbstractKernel, L1LinfNorm) {
  AbstractKernel4 K(2, 1);
  K(0, 0, 0, 0) = 1.0;
  K(0, 1, 1, 1) = cplx(0, -2.0);
  K(1, 0, 0, 0) = 0.5;
  EXPECT_DOUBLE_EQ(norm_l1_linf(K, 1), 3.0);
  EXPECT_DOUBLE_EQ(norm_l1_linf(K, 2), 2.0);
  EXPECT_DOUBLE_EQ(norm_l1_linf(K), 3.0);
  EXPECT_THROW(norm_l1_linf(K, 5), DomainError);
}

TEST(Spin, ReconstructDecomposeRoundTrip) {
  Rng rng(4);
  ChargeSpinKernel cs{AbstractKernel4::random(2, 1, rng), AbstractKernel4::random(2, 1, rng)};
  auto f = charge_spin_reconstruct(cs);
  EXPECT_LT(spin_independence_residual(f, rng).residual, 1e-12);
  auto back = charge_spin_decompose(f, rng);
  EXPECT_LT(max_abs_diff(back.C, cs.C), 1e-13);
  EXPECT_LT(max_abs_diff(back.S, cs.S), 1e-13);
}

TEST(Spin, FlipRule) {
  Rng rng(5);
  ChargeSpinKernel cs{AbstractKernel4::random(2, 1, rng), AbstractKernel4::random(2, 1, rng)};
  auto lhs = charge_spin_decompose(flip(charge_spin_reconstruct(cs)), rng);
  auto rhs = flip(cs);
  EXPECT_LT(max_abs_diff(lhs.C, rhs.C), 1e-12);
  EXPECT_LT(max_abs_diff(lhs.S, rhs.S), 1e-12);
}

TEST(Spin, ChannelsFactorize) {
  Rng rng(6);
  ChargeSpinKernel H{AbstractKernel4::random(2, 1, rng), AbstractKernel4::random(2, 1, rng)};
  ChargeSpinKernel K{AbstractKernel4::random(2, 1, rng), AbstractKernel4::random(2, 1, rng)};
  auto P = AbstractProp::random(2, rng);
  auto a = channel_product(H, P, K), b = channel_product_explicit(H, P, K, rng);
  EXPECT_LT(max_abs_diff(a.C, b.C), 1e-12);
  EXPECT_LT(max_abs_diff(a.S, b.S), 1e-12);
}

TEST(Spin, RejectsSpinDependentKernel) {
  Rng rng(7);
  auto f = AbstractKernel4::random(4, 1, rng);
  EXPECT_THROW(charge_spin_decompose(f, rng), ChannelError);
  EXPECT_THROW(charge_spin_decompose(AbstractKernel4::random(3, 1, rng), rng), ShapeError);
}

TEST(Spin, HaarMatricesAreUnitary) {
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    auto A = haar_su2(rng);
    cplx det = A[0] * A[3] - A[1] * A[2];
    EXPECT_NEAR(std::abs(det - 1.0), 0.0, 1e-14);
    EXPECT_NEAR(std::norm(A[0]) + std::norm(A[2]), 1.0, 1e-14);
  }
}

TEST(GridKernel, NodeLimit) {
  EXPECT_THROW(GridKernel4(small_lattice(7), 1), ResolutionError);
  EXPECT_NO_THROW(GridKernel4(small_lattice(6), 1));
}

TEST(GridKernel, ConservationLeg) {
  auto lat = small_lattice(3);
  GridKernel4 K(lat, 1);
  std::size_t a = lat.index(1, 2, 0), b = lat.index(0, 0, 1), c = lat.index(2, 1, 2);
  auto d = lat.coords(K.k4(a, b, c));
  EXPECT_EQ(d, (std::array<int, 3>{(0 + 2 - 1 + 3) % 3, (0 + 1 - 2 + 3) % 3, (1 + 2 - 0) % 3}));
}

TEST(GridKernel, BulletAssociative) {
  auto lat = small_lattice(2);
  Rng rng(9);
  auto A = GridKernel4::random(lat, 1, rng), B = GridKernel4::random(lat, 1, rng),
       C = GridKernel4::random(lat, 1, rng);
  std::vector<cplx> x(lat.size()), y(lat.size());
  for (auto& z : x) z = complex_gaussian(rng);
  for (auto& z : y) z = complex_gaussian(rng);
  GridBubble P{lat, {{x, y}}}, Q{lat, {{y, x}}};
  auto l = bullet(bullet(A, P, B), Q, C), r = bullet(A, P, bullet(B, Q, C));
  EXPECT_LT(max_abs_diff(l, r), 1e-10 * max_abs(l));
  EXPECT_EQ(max_abs_diff(flip(flip(A)), A), 0.0);
}

TEST(GridKernel, KappaNorm) {
  auto lat = small_lattice(2);
  GridKernel4 K(lat, 1);
  K(0, 0, 0) = 2.0;
  EXPECT_DOUBLE_EQ(norm_kappa(K, 0, 0), 2.0);
  EXPECT_DOUBLE_EQ(norm_kappa(K, 1, 1), 0.0);
  EXPECT_THROW(norm_kappa(K, 100, 0), DomainError);
}

TEST(Decay, CapsAndLegs) {
  auto lat = small_lattice(3);
  Rng rng(10);
  auto K = GridKernel4::random(lat, 1, rng);
  EXPECT_THROW(differential_decay(K, {{7, 0, 0}, 1, 2}), CapError);
  EXPECT_THROW(differential_decay(K, {{0, 4, 3}, 1, 2}), CapError);
  EXPECT_THROW(differential_decay(K, {{1, 0, 0}, 2, 2}), DomainError);
  EXPECT_THROW(differential_decay(K, {{-1, 0, 0}, 1, 2}), DomainError);
  EXPECT_EQ(max_abs_diff(differential_decay(K, {{0, 0, 0}, 1, 2}), K), 0.0);
}

TEST(Decay, LinearFunctionDerivative) {
  // f = k0 of leg 1: the (1,2) shift moves k1 and k2 together, so D f = i
  auto lat = small_lattice(5);
  auto K = GridKernel4::from_function(lat, 1, [](const Momentum& k1, const Momentum&, const Momentum&) {
    return cplx(k1.k0);
  });
  auto D = differential_decay(K, {{1, 0, 0}, 1, 2});
  auto mid = lat.index(2, 2, 2);
  EXPECT_NEAR(std::abs(D(mid, mid, mid) - cplx(0, 1)), 0.0, 1e-12);
}

TEST(BubbleNorm, ProbeBelowBound) {
  Rng rng(11);
  for (int it = 0; it < 10; ++it) {
    PositionField A, B;
    A.n = B.n = {2, 2, 2};
    A.values.resize(8);
    B.values.resize(8);
    for (auto& x : A.values) x = complex_gaussian(rng);
    for (auto& x : B.values) x = complex_gaussian(rng);
    EXPECT_LE(bubble_norm_probe(A, B, 10, rng), bubble_norm_bound(A, B) * (1 + 1e-12));
  }
}

TEST(BubbleNorm, DeltaFunctionsSaturate) {
  PositionField A, B;
  A.n = B.n = {2, 2, 2};
  A.values.assign(8, cplx{});
  B.values.assign(8, cplx{});
  A.values[0] = 2.0;
  B.values[0] = 3.0;
  EXPECT_DOUBLE_EQ(bubble_norm_bound(A, B), 6.0);
  TIFunction G{{A.n}, std::vector<cplx>(512, cplx{})};
  G.g[0] = 1.0;
  EXPECT_NEAR(bubble_norm_ratio(A, B, G, G), 6.0, 1e-12);
}

TEST(Serialization, AbstractRoundTrip) {
  Rng rng(12);
  auto K = AbstractKernel4::random(3, 2, rng);
  std::stringstream ss;
  write_kernel(ss, K);
  auto back = read_abstract_kernel(ss);
  EXPECT_EQ(back.n, 3);
  EXPECT_EQ(back.grade, 2);
  // complex64 payload
  EXPECT_LT(max_abs_diff(back, K), 1e-6 * max_abs(K));
}

TEST(Serialization, GridRoundTrip) {
  auto lat = small_lattice(2);
  Rng rng(13);
  auto K = GridKernel4::random(lat, 3, rng);
  std::stringstream ss;
  write_kernel(ss, K);
  auto back = read_grid_kernel(ss);
  EXPECT_TRUE(back.lat == lat);
  EXPECT_EQ(back.grade, 3);
  EXPECT_LT(max_abs_diff(back, K), 1e-6 * max_abs(K));
}

TEST(Serialization, LittleEndianLayout) {
  AbstractKernel4 K(1, 1);
  K(0, 0, 0, 0) = cplx(1.0, -2.0);
  std::stringstream ss;
  write_kernel(ss, K);
  std::string s = ss.str();
  ASSERT_EQ(s.size(), 4u + 4 + 4 + 4 + 4 + 8 + 8);
  EXPECT_EQ(s.substr(0, 4), "PHLK");
  EXPECT_EQ(static_cast<unsigned char>(s[4]), 1u);  // version, low byte first
  float re, im;
  std::memcpy(&re, s.data() + 28, 4);
  std::memcpy(&im, s.data() + 32, 4);
  EXPECT_EQ(re, 1.0f);
  EXPECT_EQ(im, -2.0f);
}

TEST(Serialization, RejectsBadInput) {
  std::stringstream junk("not a kernel");
  EXPECT_THROW(read_kernel_header(junk), ShapeError);
  Rng rng(14);
  std::stringstream ss;
  write_kernel(ss, AbstractKernel4::random(2, 1, rng));
  EXPECT_THROW(read_grid_kernel(ss), ShapeError);
  std::string trunc;
  {
    std::stringstream full;
    write_kernel(full, AbstractKernel4::random(2, 1, rng));
    trunc = full.str().substr(0, 40);
  }
  std::stringstream t(trunc);
  EXPECT_THROW(read_abstract_kernel(t), ShapeError);
}
