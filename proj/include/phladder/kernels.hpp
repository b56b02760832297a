#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "core.hpp"
#include "propagators.hpp"

namespace phl {

// ---------------------------------------------------------------------------
// Abstract backend: kernels are n^4 tensors, bubble propagators n^2 x n^2 matrices
// contracting legs (3,4) of the left factor with legs (1,2) of the right one.

struct AbstractKernel4 {
  int n = 0;
  int grade = 0;
  std::vector<cplx> v;

  AbstractKernel4() = default;
  AbstractKernel4(int dim, int g) : n(dim), grade(g), v(static_cast<std::size_t>(dim) * dim * dim * dim) {
    if (dim < 1) throw ShapeError("kernel dimension must be positive");
  }

  static AbstractKernel4 random(int dim, int g, Rng& rng, double scale = 1.0) {
    AbstractKernel4 k(dim, g);
    for (auto& x : k.v) x = scale * complex_gaussian(rng);
    return k;
  }

  std::size_t idx(int a, int b, int c, int d) const {
    return ((static_cast<std::size_t>(a) * n + b) * n + c) * n + d;
  }
  cplx& operator()(int a, int b, int c, int d) { return v[idx(a, b, c, d)]; }
  const cplx& operator()(int a, int b, int c, int d) const { return v[idx(a, b, c, d)]; }
  std::size_t pairs() const { return static_cast<std::size_t>(n) * n; }

  AbstractKernel4& operator+=(const AbstractKernel4& o) {
    if (o.n != n) throw ShapeError("kernel dimensions differ");
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
    return *this;
  }
  AbstractKernel4& operator*=(cplx s) {
    for (auto& x : v) x *= s;
    return *this;
  }
};

inline AbstractKernel4 operator+(AbstractKernel4 a, const AbstractKernel4& b) { return a += b; }
inline AbstractKernel4 operator-(AbstractKernel4 a, const AbstractKernel4& b) {
  if (a.n != b.n) throw ShapeError("kernel dimensions differ");
  for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] -= b.v[i];
  return a;
}
inline AbstractKernel4 operator*(cplx s, AbstractKernel4 a) { return a *= s; }

inline double max_abs_diff(const AbstractKernel4& a, const AbstractKernel4& b) {
  if (a.n != b.n) throw ShapeError("kernel dimensions differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
  return m;
}
inline double max_abs(const AbstractKernel4& a) {
  double m = 0.0;
  for (auto x : a.v) m = std::max(m, std::abs(x));
  return m;
}

// Bubble propagator on the abstract backend, P((c,d),(c',d')).
struct AbstractProp {
  int n = 0;
  std::vector<cplx> v;

  AbstractProp() = default;
  explicit AbstractProp(int dim) : n(dim), v(static_cast<std::size_t>(dim) * dim * dim * dim) {}
  static AbstractProp random(int dim, Rng& rng, double scale = 1.0) {
    AbstractProp p(dim);
    for (auto& x : p.v) x = scale * complex_gaussian(rng);
    return p;
  }
  AbstractProp& operator+=(const AbstractProp& o) {
    if (o.n != n) throw ShapeError("propagator dimensions differ");
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
    return *this;
  }
};
inline AbstractProp operator+(AbstractProp a, const AbstractProp& b) { return a += b; }

namespace detail {
// C = A B for N x N row-major matrices.
inline void matmul(const std::vector<cplx>& A, const std::vector<cplx>& B, std::vector<cplx>& C,
                   std::size_t N) {
  C.assign(N * N, cplx{});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t k = 0; k < N; ++k) {
      cplx a = A[i * N + k];
      if (a == cplx{}) continue;
      const cplx* brow = &B[k * N];
      cplx* crow = &C[i * N];
      for (std::size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
}
}  // namespace detail

// K • P: a kernel whose right legs are the far side of P.
inline AbstractKernel4 mul(const AbstractKernel4& K, const AbstractProp& P) {
  if (K.n != P.n) throw ShapeError("kernel and propagator dimensions differ");
  AbstractKernel4 out(K.n, K.grade);
  detail::matmul(K.v, P.v, out.v, K.pairs());
  return out;
}
// X • H where the bubble propagator is already absorbed into X.
inline AbstractKernel4 compose(const AbstractKernel4& X, const AbstractKernel4& H) {
  if (X.n != H.n) throw ShapeError("kernel dimensions differ");
  AbstractKernel4 out(X.n, X.grade + H.grade);
  detail::matmul(X.v, H.v, out.v, X.pairs());
  return out;
}
inline AbstractKernel4 bullet(const AbstractKernel4& K, const AbstractProp& P,
                              const AbstractKernel4& H) {
  return compose(mul(K, P), H);
}

// K^f(z1,z2,z3,z4) = -K(z1,z3,z2,z4)
inline AbstractKernel4 flip(const AbstractKernel4& K) {
  AbstractKernel4 out(K.n, K.grade);
  for (int a = 0; a < K.n; ++a)
    for (int b = 0; b < K.n; ++b)
      for (int c = 0; c < K.n; ++c)
        for (int d = 0; d < K.n; ++d) out(a, b, c, d) = -K(a, c, b, d);
  return out;
}

// max over the held leg of the sum of |K| over the other three legs.
inline double norm_l1_linf(const AbstractKernel4& K, int hold) {
  if (hold < 1 || hold > 4) throw DomainError("held leg must be 1..4");
  std::vector<double> acc(static_cast<std::size_t>(K.n), 0.0);
  for (int a = 0; a < K.n; ++a)
    for (int b = 0; b < K.n; ++b)
      for (int c = 0; c < K.n; ++c)
        for (int d = 0; d < K.n; ++d) {
          int h = hold == 1 ? a : hold == 2 ? b : hold == 3 ? c : d;
          acc[static_cast<std::size_t>(h)] += std::abs(K(a, b, c, d));
        }
  return *std::max_element(acc.begin(), acc.end());
}
inline double norm_l1_linf(const AbstractKernel4& K) {
  double m = 0.0;
  for (int h = 1; h <= 4; ++h) m = std::max(m, norm_l1_linf(K, h));
  return m;
}

// ---------------------------------------------------------------------------
// Spin. An explicit spin kernel is an AbstractKernel4 of dimension 2n whose leg index
// is 2 z + sigma (sigma = 0 up, 1 down).

using SU2 = std::array<cplx, 4>;  // row-major [[a, -conj b], [b, conj a]]

inline SU2 haar_su2(Rng& rng) {
  double q[4];
  double s = 0.0;
  for (double& x : q) {
    x = gaussian(rng);
    s += x * x;
  }
  s = std::sqrt(s);
  cplx a(q[0] / s, q[1] / s), b(q[2] / s, q[3] / s);
  return {a, -std::conj(b), b, std::conj(a)};
}

// f^A(s1..s4) = sum_t f(t1..t4) A_{t1 s1} conj(A_{t2 s2}) conj(A_{t3 s3}) A_{t4 s4}
inline AbstractKernel4 spin_rotate(const AbstractKernel4& f, const SU2& A) {
  if (f.n % 2 != 0) throw ShapeError("explicit spin kernels have even dimension");
  int n = f.n / 2;
  auto Am = [&](int t, int s) { return A[static_cast<std::size_t>(2 * t + s)]; };
  AbstractKernel4 out(f.n, f.grade);
  for (int z1 = 0; z1 < n; ++z1)
    for (int z2 = 0; z2 < n; ++z2)
      for (int z3 = 0; z3 < n; ++z3)
        for (int z4 = 0; z4 < n; ++z4)
          for (int s1 = 0; s1 < 2; ++s1)
            for (int s2 = 0; s2 < 2; ++s2)
              for (int s3 = 0; s3 < 2; ++s3)
                for (int s4 = 0; s4 < 2; ++s4) {
                  cplx acc{};
                  for (int t1 = 0; t1 < 2; ++t1)
                    for (int t2 = 0; t2 < 2; ++t2)
                      for (int t3 = 0; t3 < 2; ++t3)
                        for (int t4 = 0; t4 < 2; ++t4)
                          acc += f(2 * z1 + t1, 2 * z2 + t2, 2 * z3 + t3, 2 * z4 + t4) *
                                 Am(t1, s1) * std::conj(Am(t2, s2)) * std::conj(Am(t3, s3)) *
                                 Am(t4, s4);
                  out(2 * z1 + s1, 2 * z2 + s2, 2 * z3 + s3, 2 * z4 + s4) = acc;
                }
  return out;
}

struct SpinCheck {
  double residual = 0.0;  // max over trials of max |f - f^A|
  SU2 worst{};
};

inline SpinCheck spin_independence_residual(const AbstractKernel4& f, Rng& rng, int trials = 20) {
  SpinCheck out;
  for (int t = 0; t < trials; ++t) {
    SU2 A = haar_su2(rng);
    double r = max_abs_diff(f, spin_rotate(f, A));
    if (r >= out.residual) {
      out.residual = r;
      out.worst = A;
    }
  }
  return out;
}

struct ChargeSpinKernel {
  AbstractKernel4 C, S;
};

// f = 1/2 f_C d12 d34 + f_S (d13 d24 - 1/2 d12 d34)
inline AbstractKernel4 charge_spin_reconstruct(const ChargeSpinKernel& cs) {
  if (cs.C.n != cs.S.n) throw ShapeError("charge and spin parts differ in shape");
  int n = cs.C.n;
  AbstractKernel4 f(2 * n, cs.C.grade);
  for (int z1 = 0; z1 < n; ++z1)
    for (int z2 = 0; z2 < n; ++z2)
      for (int z3 = 0; z3 < n; ++z3)
        for (int z4 = 0; z4 < n; ++z4) {
          cplx c = cs.C(z1, z2, z3, z4), s = cs.S(z1, z2, z3, z4);
          for (int s1 = 0; s1 < 2; ++s1)
            for (int s2 = 0; s2 < 2; ++s2)
              for (int s3 = 0; s3 < 2; ++s3)
                for (int s4 = 0; s4 < 2; ++s4) {
                  double d1234 = (s1 == s2 && s3 == s4) ? 1.0 : 0.0;
                  double d1324 = (s1 == s3 && s2 == s4) ? 1.0 : 0.0;
                  f(2 * z1 + s1, 2 * z2 + s2, 2 * z3 + s3, 2 * z4 + s4) =
                      0.5 * c * d1234 + s * (d1324 - 0.5 * d1234);
                }
        }
  return f;
}

// f_C = f(up,up,up,up) + f(up,up,dn,dn), f_S = f(up,dn,up,dn); rejects kernels that are
// not invariant under random SU(2) rotations.
inline ChargeSpinKernel charge_spin_decompose(const AbstractKernel4& f, Rng& rng,
                                              double tol = 1e-10, int trials = 20) {
  if (f.n % 2 != 0) throw ShapeError("explicit spin kernels have even dimension");
  auto chk = spin_independence_residual(f, rng, trials);
  double scale = std::max(1.0, max_abs(f));
  if (chk.residual > tol * scale) {
    const SU2& A = chk.worst;
    throw ChannelError("kernel is not spin independent: residual " + std::to_string(chk.residual) +
                       " at A = [[" + std::to_string(A[0].real()) + "+" + std::to_string(A[0].imag()) +
                       "i, ...], [" + std::to_string(A[2].real()) + "+" +
                       std::to_string(A[2].imag()) + "i, ...]]");
  }
  int n = f.n / 2;
  ChargeSpinKernel cs{AbstractKernel4(n, f.grade), AbstractKernel4(n, f.grade)};
  for (int z1 = 0; z1 < n; ++z1)
    for (int z2 = 0; z2 < n; ++z2)
      for (int z3 = 0; z3 < n; ++z3)
        for (int z4 = 0; z4 < n; ++z4) {
          cs.C(z1, z2, z3, z4) = f(2 * z1, 2 * z2, 2 * z3, 2 * z4) +
                                 f(2 * z1, 2 * z2, 2 * z3 + 1, 2 * z4 + 1);
          cs.S(z1, z2, z3, z4) = f(2 * z1, 2 * z2 + 1, 2 * z3, 2 * z4 + 1);
        }
  return cs;
}

// P (x) identity on spins: P((c,s3),(d,s4); (c',s'1),(d',s'2)) = P(c,d,c',d') d_{s3 s'1} d_{s4 s'2}
inline AbstractProp spin_extend(const AbstractProp& P) {
  int n = P.n, m = 2 * n;
  AbstractProp out(m);
  auto at = [&](int a, int b, int c, int d) {
    return ((static_cast<std::size_t>(a) * n + b) * n + c) * n + d;
  };
  auto at2 = [&](int a, int b, int c, int d) {
    return ((static_cast<std::size_t>(a) * m + b) * m + c) * m + d;
  };
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c)
        for (int d = 0; d < n; ++d)
          for (int s = 0; s < 2; ++s)
            for (int t = 0; t < 2; ++t)
              out.v[at2(2 * a + s, 2 * b + t, 2 * c + s, 2 * d + t)] = P.v[at(a, b, c, d)];
  return out;
}

// (K^f)_C = 1/2 (K_C + 3 K_S)^f, (K^f)_S = 1/2 (K_C - K_S)^f
inline ChargeSpinKernel flip(const ChargeSpinKernel& K) {
  return {flip(0.5 * (K.C + 3.0 * K.S)), flip(0.5 * (K.C - K.S))};
}

inline ChargeSpinKernel operator+(const ChargeSpinKernel& a, const ChargeSpinKernel& b) {
  return {a.C + b.C, a.S + b.S};
}

// Channel-factorized product: (H • P • K)_C = H_C • P • K_C and likewise for S.
inline ChargeSpinKernel channel_product(const ChargeSpinKernel& H, const AbstractProp& P,
                                        const ChargeSpinKernel& K) {
  return {bullet(H.C, P, K.C), bullet(H.S, P, K.S)};
}

// Spin-summed product of the explicit forms, decomposed afterwards.
inline ChargeSpinKernel channel_product_explicit(const ChargeSpinKernel& H, const AbstractProp& P,
                                                 const ChargeSpinKernel& K, Rng& rng) {
  auto f = bullet(charge_spin_reconstruct(H), spin_extend(P), charge_spin_reconstruct(K));
  return charge_spin_decompose(f, rng);
}

// ---------------------------------------------------------------------------
// Grid backend: kernels on a periodic momentum lattice, stored on (k1,k2,k3) with
// k4 = k2 + k3 - k1 (lattice index arithmetic modulo the lattice size).

namespace detail {
inline std::size_t lattice_combine(const MomentumLattice& lat, std::size_t a, std::size_t b,
                                   std::size_t c, int sa, int sb, int sc) {
  auto A = lat.coords(a), B = lat.coords(b), C = lat.coords(c);
  int r[3];
  for (int d = 0; d < 3; ++d) {
    int x = sa * A[d] + sb * B[d] + sc * C[d];
    r[d] = ((x % lat.n[d]) + lat.n[d]) % lat.n[d];
  }
  return lat.index(r[0], r[1], r[2]);
}
}  // namespace detail

struct GridKernel4 {
  MomentumLattice lat;
  int grade = 0;
  std::vector<cplx> v;

  GridKernel4() = default;
  GridKernel4(const MomentumLattice& l, int g) : lat(l), grade(g) {
    std::size_t N = l.size();
    if (N > 216) throw ResolutionError("grid kernels are limited to 216 lattice nodes");
    v.assign(N * N * N, cplx{});
  }
  std::size_t N() const { return lat.size(); }
  std::size_t idx(std::size_t k1, std::size_t k2, std::size_t k3) const {
    return (k1 * N() + k2) * N() + k3;
  }
  cplx& operator()(std::size_t k1, std::size_t k2, std::size_t k3) { return v[idx(k1, k2, k3)]; }
  const cplx& operator()(std::size_t k1, std::size_t k2, std::size_t k3) const {
    return v[idx(k1, k2, k3)];
  }
  std::size_t k4(std::size_t k1, std::size_t k2, std::size_t k3) const {
    return detail::lattice_combine(lat, k1, k2, k3, -1, 1, 1);
  }

  template <class F>
  static GridKernel4 from_function(const MomentumLattice& l, int g, const F& f) {
    GridKernel4 K(l, g);
    std::size_t N = K.N();
    parallel_for(N, [&](std::size_t a) {
      Momentum k1 = l.momentum(a);
      for (std::size_t b = 0; b < N; ++b) {
        Momentum k2 = l.momentum(b);
        for (std::size_t c = 0; c < N; ++c) K(a, b, c) = f(k1, k2, l.momentum(c));
      }
    });
    return K;
  }
  static GridKernel4 random(const MomentumLattice& l, int g, Rng& rng, double scale = 1.0) {
    GridKernel4 K(l, g);
    for (auto& x : K.v) x = scale * complex_gaussian(rng);
    return K;
  }

  GridKernel4& operator+=(const GridKernel4& o) {
    if (!(o.lat == lat)) throw ShapeError("kernel lattices differ");
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
    return *this;
  }
  GridKernel4& operator*=(cplx s) {
    for (auto& x : v) x *= s;
    return *this;
  }
};

inline GridKernel4 operator+(GridKernel4 a, const GridKernel4& b) { return a += b; }
inline GridKernel4 operator-(GridKernel4 a, const GridKernel4& b) {
  if (!(a.lat == b.lat)) throw ShapeError("kernel lattices differ");
  for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] -= b.v[i];
  return a;
}
inline GridKernel4 operator*(cplx s, GridKernel4 a) { return a *= s; }

inline double max_abs_diff(const GridKernel4& a, const GridKernel4& b) {
  if (!(a.lat == b.lat)) throw ShapeError("kernel lattices differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
  return m;
}
inline double max_abs(const GridKernel4& a) {
  double m = 0.0;
  for (auto x : a.v) m = std::max(m, std::abs(x));
  return m;
}

// Sum of two-line products A (x) B^t on the lattice: W(p, k) = sum A(p) B(k).
struct GridBubble {
  MomentumLattice lat;
  std::vector<std::pair<std::vector<cplx>, std::vector<cplx>>> parts;

  cplx operator()(std::size_t p, std::size_t k) const {
    cplx s{};
    for (const auto& [A, B] : parts) s += A[p] * B[k];
    return s;
  }
  GridBubble& operator+=(const GridBubble& o) {
    if (!(o.lat == lat)) throw ShapeError("bubble lattices differ");
    parts.insert(parts.end(), o.parts.begin(), o.parts.end());
    return *this;
  }
};
inline GridBubble operator+(GridBubble a, const GridBubble& b) { return a += b; }

inline double loop_weight(const MomentumLattice& lat) {
  return lat.cell_volume() / std::pow(2.0 * pi, 3);
}

// (K • P)(k1,k2,p) = K(k1,k2,p) W(p, p - t), t = k1 - k2.
inline GridKernel4 mul(const GridKernel4& K, const GridBubble& P) {
  if (!(K.lat == P.lat)) throw ShapeError("kernel and bubble lattices differ");
  GridKernel4 out(K.lat, K.grade);
  std::size_t N = K.N();
  parallel_for(N, [&](std::size_t a) {
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t p = 0; p < N; ++p) {
        std::size_t k = detail::lattice_combine(K.lat, p, a, b, 1, -1, 1);
        out(a, b, p) = K(a, b, p) * P(p, k);
      }
  });
  return out;
}

// (X • H)(k1,k2,k3) = w sum_p X(k1,k2,p) H(p, p - t, k3)
inline GridKernel4 compose(const GridKernel4& X, const GridKernel4& H) {
  if (!(X.lat == H.lat)) throw ShapeError("kernel lattices differ");
  GridKernel4 out(X.lat, X.grade + H.grade);
  std::size_t N = X.N();
  double w = loop_weight(X.lat);
  parallel_for(N, [&](std::size_t a) {
    std::vector<cplx> row(N);
    for (std::size_t b = 0; b < N; ++b) {
      std::fill(row.begin(), row.end(), cplx{});
      for (std::size_t p = 0; p < N; ++p) {
        cplx x = X(a, b, p);
        if (x == cplx{}) continue;
        std::size_t k = detail::lattice_combine(X.lat, p, a, b, 1, -1, 1);
        const cplx* h = &H.v[H.idx(p, k, 0)];
        for (std::size_t c = 0; c < N; ++c) row[c] += x * h[c];
      }
      for (std::size_t c = 0; c < N; ++c) out(a, b, c) = w * row[c];
    }
  });
  return out;
}

inline GridKernel4 bullet(const GridKernel4& K, const GridBubble& P, const GridKernel4& H) {
  return compose(mul(K, P), H);
}

// K^f(k1,k2,k3,k4) = -K(k1,k3,k2,k4); k4 is unchanged by the exchange.
inline GridKernel4 flip(const GridKernel4& K) {
  GridKernel4 out(K.lat, K.grade);
  std::size_t N = K.N();
  for (std::size_t a = 0; a < N; ++a)
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t c = 0; c < N; ++c) out(a, b, c) = -K(a, c, b);
  return out;
}

// Discrete L1-Linf norm: max over the held leg's node of the cell-weighted sum of |f|
// over the two remaining free legs.
inline double norm_l1_linf(const GridKernel4& f, int hold) {
  if (hold < 1 || hold > 4) throw DomainError("held leg must be 1..4");
  std::size_t N = f.N();
  std::vector<double> acc(N, 0.0);
  for (std::size_t a = 0; a < N; ++a)
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t c = 0; c < N; ++c) {
        std::size_t h = hold == 1 ? a : hold == 2 ? b : hold == 3 ? c : f.k4(a, b, c);
        acc[h] += std::abs(f(a, b, c));
      }
  double cv = f.lat.cell_volume();
  return cv * cv * *std::max_element(acc.begin(), acc.end());
}
inline double norm_l1_linf(const GridKernel4& f) {
  double m = 0.0;
  for (int h = 1; h <= 4; ++h) m = std::max(m, norm_l1_linf(f, h));
  return m;
}

// kappa-restricted norm with legs 3 and 4 pinned to lattice nodes kappa1, kappa2: the
// remaining legs obey k1 - k2 = kappa1 - kappa2, so the L1-Linf norm is a sup.
inline double norm_kappa(const GridKernel4& f, std::size_t kappa1, std::size_t kappa2) {
  std::size_t N = f.N();
  if (kappa1 >= N || kappa2 >= N) throw DomainError("kappa nodes outside the lattice");
  double m = 0.0;
  for (std::size_t a = 0; a < N; ++a) {
    std::size_t b = detail::lattice_combine(f.lat, a, kappa2, kappa1, 1, 1, -1);
    m = std::max(m, std::abs(f(a, b, kappa1)));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Differential-decay operators on grid kernels.

struct DecaySpec {
  std::array<int, 3> delta{0, 0, 0};
  int mu = 1, mu_prime = 2;
};

namespace detail {
// Shift signs on (k1, k2, k3) moving along the conservation surface for the pair (mu, mu').
inline std::array<int, 3> pair_shift(int mu, int mup) {
  int a = std::min(mu, mup), b = std::max(mu, mup);
  std::array<int, 3> s{0, 0, 0};
  if (a == 1 && b == 2) s = {1, 1, 0};
  else if (a == 1 && b == 3) s = {1, 0, 1};
  else if (a == 1 && b == 4) s = {1, 0, 0};
  else if (a == 2 && b == 3) s = {0, -1, 1};
  else if (a == 2 && b == 4) s = {0, -1, 0};
  else if (a == 3 && b == 4) s = {0, 0, -1};
  if (mu > mup)
    for (int& x : s) x = -x;
  return s;
}

// One first-order application along lattice axis `axis`, centred difference, one cell step.
inline GridKernel4 decay_axis(const GridKernel4& f, std::array<int, 3> shift, int axis) {
  GridKernel4 out(f.lat, f.grade);
  const auto& L = f.lat;
  std::size_t N = f.N();
  double h = L.spacing[static_cast<std::size_t>(axis)];
  auto moved = [&](std::size_t node, int s, int dir, std::size_t& res) {
    if (s == 0) {
      res = node;
      return true;
    }
    auto c = L.coords(node);
    c[static_cast<std::size_t>(axis)] += s * dir;
    if (!L.inside(c[0], c[1], c[2])) return false;
    res = L.index(c[0], c[1], c[2]);
    return true;
  };
  parallel_for(N, [&](std::size_t a) {
    for (std::size_t b = 0; b < N; ++b)
      for (std::size_t c = 0; c < N; ++c) {
        std::size_t ap, bp, cp, am, bm, cm;
        if (!moved(a, shift[0], 1, ap) || !moved(b, shift[1], 1, bp) ||
            !moved(c, shift[2], 1, cp) || !moved(a, shift[0], -1, am) ||
            !moved(b, shift[1], -1, bm) || !moved(c, shift[2], -1, cm))
          continue;
        out(a, b, c) = (f(ap, bp, cp) - f(am, bm, cm)) / (2.0 * h);
      }
  });
  return out;
}
}  // namespace detail

// D^delta_{mu;mu'} f: multiplication by (x_mu - x_mu')^delta realized by centred
// differences along the conservation surface, D = i s d/dh with s = +1 for k0 and -1
// for spatial components. Spatial components are Cartesian; lattice axes may be rotated.
inline GridKernel4 differential_decay(const GridKernel4& f, const DecaySpec& spec, int r0 = 6,
                                      int re = 6) {
  const auto& d = spec.delta;
  if (d[0] < 0 || d[1] < 0 || d[2] < 0) throw DomainError("negative derivative order");
  if (d[0] > r0 || d[1] + d[2] > re) throw CapError("derivative order exceeds the caps r0, re");
  if (spec.mu == spec.mu_prime || spec.mu < 1 || spec.mu > 4 || spec.mu_prime < 1 ||
      spec.mu_prime > 4)
    throw DomainError("leg pair must be two distinct legs in 1..4");
  auto shift = detail::pair_shift(spec.mu, spec.mu_prime);
  GridKernel4 g = f;
  const cplx I(0, 1);
  for (int t = 0; t < d[0]; ++t) g = I * detail::decay_axis(g, shift, 0);
  const auto& L = f.lat;
  for (int comp = 1; comp <= 2; ++comp)
    for (int t = 0; t < d[static_cast<std::size_t>(comp)]; ++t) {
      // d/dk_comp = n_comp d/dxi + t_comp d/deta
      double nc = comp == 1 ? L.normal.x : L.normal.y;
      double tc = comp == 1 ? L.tangent.x : L.tangent.y;
      GridKernel4 acc(L, g.grade);
      if (nc != 0.0) acc += cplx(nc) * detail::decay_axis(g, shift, 1);
      if (tc != 0.0) acc += cplx(tc) * detail::decay_axis(g, shift, 2);
      g = (-I) * acc;
    }
  return g;
}

// ---------------------------------------------------------------------------
// Bubble norm on a periodic position lattice: P(x1,x2,y1,y2) = A(y1 - x1) B(x2 - y2).

struct PositionGroup {
  std::array<int, 3> n{1, 1, 1};
  int size() const { return n[0] * n[1] * n[2]; }
  int sub(int y, int x) const {
    int a = y / (n[1] * n[2]), b = (y / n[2]) % n[1], c = y % n[2];
    int a2 = x / (n[1] * n[2]), b2 = (x / n[2]) % n[1], c2 = x % n[2];
    a = ((a - a2) % n[0] + n[0]) % n[0];
    b = ((b - b2) % n[1] + n[1]) % n[1];
    c = ((c - c2) % n[2] + n[2]) % n[2];
    return (a * n[1] + b) * n[2] + c;
  }
};

// Bound min{|A|_inf |B|_1, |A|_1 |B|_inf} with counting measure.
inline double bubble_norm_bound(const PositionField& A, const PositionField& B) {
  auto l1 = [](const PositionField& f) {
    double s = 0;
    for (auto x : f.values) s += std::abs(x);
    return s;
  };
  auto linf = [](const PositionField& f) {
    double s = 0;
    for (auto x : f.values) s = std::max(s, std::abs(x));
    return s;
  };
  return std::min(linf(A) * l1(B), l1(A) * linf(B));
}

// Translation-invariant four-point function g(x2 - x1, x3 - x1, x4 - x1) on the group.
struct TIFunction {
  PositionGroup grp;
  std::vector<cplx> g;  // size V^3
  cplx operator()(int x1, int x2, int x3, int x4) const {
    std::size_t V = static_cast<std::size_t>(grp.size());
    return g[(static_cast<std::size_t>(grp.sub(x2, x1)) * V + grp.sub(x3, x1)) * V +
             grp.sub(x4, x1)];
  }
};

namespace detail {
// |||f||| for a V^2 x V^2 matrix f((z1,z2),(z3,z4)) of a translation-invariant function.
inline double triple_norm_matrix(const std::vector<cplx>& M, int V) {
  double best = 0.0;
  std::size_t Vs = static_cast<std::size_t>(V);
  for (int hold = 0; hold < 4; ++hold) {
    double s = 0.0;
    for (std::size_t a = 0; a < Vs; ++a)
      for (std::size_t b = 0; b < Vs; ++b)
        for (std::size_t c = 0; c < Vs; ++c)
          for (std::size_t d = 0; d < Vs; ++d) {
            std::size_t h = hold == 0 ? a : hold == 1 ? b : hold == 2 ? c : d;
            if (h != 0) continue;
            s += std::abs(M[(a * Vs + b) * Vs * Vs + c * Vs + d]);
          }
    best = std::max(best, s);
  }
  return best;
}
inline std::vector<cplx> ti_matrix(const TIFunction& f) {
  int V = f.grp.size();
  std::size_t Vs = static_cast<std::size_t>(V);
  std::vector<cplx> M(Vs * Vs * Vs * Vs);
  for (int a = 0; a < V; ++a)
    for (int b = 0; b < V; ++b)
      for (int c = 0; c < V; ++c)
        for (int d = 0; d < V; ++d)
          M[((static_cast<std::size_t>(a) * Vs + b) * Vs + c) * Vs + d] = f(a, b, c, d);
  return M;
}
}  // namespace detail

inline double triple_norm(const TIFunction& f) {
  return detail::triple_norm_matrix(detail::ti_matrix(f), f.grp.size());
}

// Ratio |||G o P o H||| / (|||G||| |||H|||) for one pair (G, H).
inline double bubble_norm_ratio(const PositionField& A, const PositionField& B,
                                const TIFunction& G, const TIFunction& H) {
  PositionGroup grp{A.n};
  if (A.n != B.n || G.grp.n != A.n || H.grp.n != A.n) throw ShapeError("position lattices differ");
  int V = grp.size();
  std::size_t Vs = static_cast<std::size_t>(V), N = Vs * Vs;
  std::vector<cplx> P(N * N);
  for (int x1 = 0; x1 < V; ++x1)
    for (int x2 = 0; x2 < V; ++x2)
      for (int y1 = 0; y1 < V; ++y1)
        for (int y2 = 0; y2 < V; ++y2)
          P[(static_cast<std::size_t>(x1) * Vs + x2) * N + static_cast<std::size_t>(y1) * Vs + y2] =
              A.values[static_cast<std::size_t>(grp.sub(y1, x1))] *
              B.values[static_cast<std::size_t>(grp.sub(x2, y2))];
  auto Gm = detail::ti_matrix(G), Hm = detail::ti_matrix(H);
  std::vector<cplx> GP, GPH;
  detail::matmul(Gm, P, GP, N);
  detail::matmul(GP, Hm, GPH, N);
  double ng = detail::triple_norm_matrix(Gm, V), nh = detail::triple_norm_matrix(Hm, V);
  if (ng == 0.0 || nh == 0.0) return 0.0;
  return detail::triple_norm_matrix(GPH, V) / (ng * nh);
}

inline TIFunction random_ti_function(const PositionGroup& grp, Rng& rng) {
  TIFunction f{grp, {}};
  std::size_t V = static_cast<std::size_t>(grp.size());
  f.g.assign(V * V * V, cplx{});
  // mix dense complex draws with sparse positive ones, which come closer to the sup
  if (uniform(rng) < 0.5) {
    for (auto& x : f.g) x = complex_gaussian(rng);
  } else {
    int k = 1 + static_cast<int>(uniform(rng) * 4);
    for (int i = 0; i < k; ++i)
      f.g[static_cast<std::size_t>(uniform(rng) * static_cast<double>(f.g.size())) % f.g.size()] +=
          uniform(rng, 0.1, 1.0);
  }
  return f;
}

// Lower estimate of the bubble norm: max ratio over random translation-invariant G, H.
inline double bubble_norm_probe(const PositionField& A, const PositionField& B, int trials,
                                Rng& rng) {
  PositionGroup grp{A.n};
  double best = 0.0;
  for (int t = 0; t < trials; ++t) {
    auto G = random_ti_function(grp, rng);
    auto H = random_ti_function(grp, rng);
    best = std::max(best, bubble_norm_ratio(A, B, G, H));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Binary container: "PHLK", u32 version, u32 backend (0 abstract, 1 grid), i32 grade,
// dims, grid descriptor, u64 count, then little-endian complex64 values.

namespace detail {
template <class T>
void put(std::ostream& os, T x) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &x, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}
template <class T>
T get(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw ShapeError("truncated kernel file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T x;
  std::memcpy(&x, buf, sizeof(T));
  return x;
}
inline void put_values(std::ostream& os, const std::vector<cplx>& v) {
  put<std::uint64_t>(os, v.size());
  for (auto z : v) {
    put<float>(os, static_cast<float>(z.real()));
    put<float>(os, static_cast<float>(z.imag()));
  }
}
inline std::vector<cplx> get_values(std::istream& is, std::uint64_t expect) {
  auto n = get<std::uint64_t>(is);
  if (n != expect) throw ShapeError("kernel payload size does not match its header");
  std::vector<cplx> v(n);
  for (auto& z : v) {
    float re = get<float>(is), im = get<float>(is);
    z = cplx(re, im);
  }
  return v;
}
constexpr char kMagic[4] = {'P', 'H', 'L', 'K'};
constexpr std::uint32_t kVersion = 1;
}  // namespace detail

enum class Backend : std::uint32_t { abstract = 0, grid = 1 };

inline void write_kernel(std::ostream& os, const AbstractKernel4& K) {
  os.write(detail::kMagic, 4);
  detail::put<std::uint32_t>(os, detail::kVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(Backend::abstract));
  detail::put<std::int32_t>(os, K.grade);
  detail::put<std::int32_t>(os, K.n);
  detail::put_values(os, K.v);
}

inline void write_kernel(std::ostream& os, const GridKernel4& K) {
  os.write(detail::kMagic, 4);
  detail::put<std::uint32_t>(os, detail::kVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(Backend::grid));
  detail::put<std::int32_t>(os, K.grade);
  for (int d = 0; d < 3; ++d) detail::put<std::int32_t>(os, K.lat.n[static_cast<std::size_t>(d)]);
  for (double x : K.lat.origin) detail::put<double>(os, x);
  for (double x : K.lat.spacing) detail::put<double>(os, x);
  for (Vec2 p : {K.lat.centre, K.lat.normal, K.lat.tangent}) {
    detail::put<double>(os, p.x);
    detail::put<double>(os, p.y);
  }
  detail::put_values(os, K.v);
}

struct KernelHeader {
  Backend backend = Backend::abstract;
  std::int32_t grade = 0;
};

inline KernelHeader read_kernel_header(std::istream& is) {
  char m[4];
  if (!is.read(m, 4) || std::memcmp(m, detail::kMagic, 4) != 0)
    throw ShapeError("not a kernel container");
  auto ver = detail::get<std::uint32_t>(is);
  if (ver != detail::kVersion) throw ShapeError("unsupported kernel container version");
  auto tag = detail::get<std::uint32_t>(is);
  if (tag > 1) throw ShapeError("unknown backend tag in kernel container");
  KernelHeader h;
  h.backend = static_cast<Backend>(tag);
  h.grade = detail::get<std::int32_t>(is);
  return h;
}

inline AbstractKernel4 read_abstract_body(std::istream& is, const KernelHeader& h) {
  auto n = detail::get<std::int32_t>(is);
  if (n < 1 || n > 256) throw ShapeError("bad abstract kernel dimension");
  AbstractKernel4 K(n, h.grade);
  K.v = detail::get_values(is, K.v.size());
  return K;
}

inline GridKernel4 read_grid_body(std::istream& is, const KernelHeader& h) {
  MomentumLattice L;
  for (int d = 0; d < 3; ++d) {
    L.n[static_cast<std::size_t>(d)] = detail::get<std::int32_t>(is);
    if (L.n[static_cast<std::size_t>(d)] < 1) throw ShapeError("bad lattice dimension");
  }
  for (double& x : L.origin) x = detail::get<double>(is);
  for (double& x : L.spacing) x = detail::get<double>(is);
  for (Vec2* p : {&L.centre, &L.normal, &L.tangent}) {
    p->x = detail::get<double>(is);
    p->y = detail::get<double>(is);
  }
  GridKernel4 K(L, h.grade);
  K.v = detail::get_values(is, K.v.size());
  return K;
}

inline AbstractKernel4 read_abstract_kernel(std::istream& is) {
  auto h = read_kernel_header(is);
  if (h.backend != Backend::abstract) throw ShapeError("container holds a grid kernel");
  return read_abstract_body(is, h);
}
inline GridKernel4 read_grid_kernel(std::istream& is) {
  auto h = read_kernel_header(is);
  if (h.backend != Backend::grid) throw ShapeError("container holds an abstract kernel");
  return read_grid_body(is, h);
}

}  // namespace phl
