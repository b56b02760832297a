#pragma once

#include <fftw3.h>

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "core.hpp"
#include "model.hpp"
#include "scales.hpp"
#include "sectors.hpp"

namespace phl {

// v(k) = sum_{i=first}^{last} rho * l_i / M^i * k0 * phi(M^{2i-2}(k0^2 + e^2)).
// Vanishes at k0 = 0; the default (rho = 0) is the zero counterterm.
struct Counterterm {
  double rho = 0.0;
  int first = 2;
  int last = 12;

  bool is_zero() const { return rho == 0.0; }

  double term(const ScaleSystem& s, double k0, double e, int i) const {
    return rho * s.sector_length(i) / s.Mpow(i) * k0 * s.extended_value(k0, e, i);
  }

  double value(const ScaleSystem& s, double k0, double e) const {
    if (is_zero()) return 0.0;
    double v = 0.0;
    for (int i = first; i <= last; ++i) v += term(s, k0, e, i);
    return v;
  }

  double value(const ScaleSystem& s, const DispersionModel& model, const Momentum& k) const {
    return value(s, k.k0, model.e(k.k));
  }

  // e'(k) = e(k) - v(k)
  double e_prime(const ScaleSystem& s, double k0, double e) const { return e - value(s, k0, e); }
};

enum class PropKind { shell, tail };

struct Which {
  PropKind kind = PropKind::shell;
  int j = 1;
  static Which shell(int j) { return {PropKind::shell, j}; }
  static Which tail(int j) { return {PropKind::tail, j}; }
};

// Cutoff-first evaluation: zero wherever the cutoff vanishes, the denominator is
// only formed inside the support.
inline cplx propagator_from_energy(const ScaleSystem& s, const Counterterm& v, double k0, double e,
                                   Which which) {
  if (which.j < 1) throw ScaleError("propagator scale must be at least 1");
  double cut = which.kind == PropKind::shell ? s.nu_shell_value(k0, e, which.j)
                                             : s.nu_ge_value(k0, e, which.j);
  if (cut == 0.0) return 0.0;
  double ep = v.e_prime(s, k0, e);
  cplx den{-ep, k0};
  if (std::abs(den) < 1e-14) throw SingularityError("propagator denominator vanishes inside the cutoff support");
  return cut / den;
}

inline cplx propagator_value(const DispersionModel& model, const ScaleSystem& s,
                             const Counterterm& v, const Momentum& k, Which which) {
  return propagator_from_energy(s, v, k.k0, model.e(k.k), which);
}

// c_s^(j)(k) = C_v^(j)(k) chi_s(k)
inline cplx sectorized_propagator(const Sectorization& sz, std::size_t n, const Counterterm& v,
                                  const Momentum& k) {
  double e = sz.model.e(k.k);
  cplx c = propagator_from_energy(sz.scales, v, k.k0, e, Which::shell(sz.scale));
  if (c == 0.0) return 0.0;
  return c * chi(sz, n, k);
}

// Uniform lattice in (k0, xi, eta) with spatial momentum centre + xi*normal + eta*tangent.
struct MomentumLattice {
  std::array<int, 3> n{1, 1, 1};
  std::array<double, 3> origin{0, 0, 0};   // coordinates of node (0,0,0)
  std::array<double, 3> spacing{1, 1, 1};
  Vec2 centre{0, 0};
  Vec2 normal{1, 0};
  Vec2 tangent{0, 1};

  std::size_t size() const {
    return static_cast<std::size_t>(n[0]) * static_cast<std::size_t>(n[1]) *
           static_cast<std::size_t>(n[2]);
  }
  double cell_volume() const { return spacing[0] * spacing[1] * spacing[2]; }

  std::size_t index(int a, int b, int c) const {
    return (static_cast<std::size_t>(a) * n[1] + static_cast<std::size_t>(b)) * n[2] +
           static_cast<std::size_t>(c);
  }
  std::array<int, 3> coords(std::size_t idx) const {
    int c = static_cast<int>(idx % n[2]);
    idx /= n[2];
    int b = static_cast<int>(idx % n[1]);
    int a = static_cast<int>(idx / n[1]);
    return {a, b, c};
  }
  bool inside(int a, int b, int c) const {
    return a >= 0 && b >= 0 && c >= 0 && a < n[0] && b < n[1] && c < n[2];
  }
  Momentum momentum(int a, int b, int c) const {
    double k0 = origin[0] + spacing[0] * a;
    double xi = origin[1] + spacing[1] * b;
    double eta = origin[2] + spacing[2] * c;
    return {k0, centre + normal * xi + tangent * eta};
  }
  Momentum momentum(std::size_t idx) const {
    auto c = coords(idx);
    return momentum(c[0], c[1], c[2]);
  }
  bool operator==(const MomentumLattice& o) const {
    return n == o.n && origin == o.origin && spacing == o.spacing && centre == o.centre &&
           normal == o.normal && tangent == o.tangent;
  }
};

struct GridPropagator {
  MomentumLattice lattice;
  std::vector<cplx> values;
  int scale_lo = 0;
  int scale_hi = 0;
};

inline GridPropagator build_grid_propagator(const MomentumLattice& lat,
                                            const std::function<cplx(const Momentum&)>& f,
                                            int lo = 0, int hi = 0) {
  GridPropagator g;
  g.lattice = lat;
  g.scale_lo = lo;
  g.scale_hi = hi;
  g.values.resize(lat.size());
  parallel_for(static_cast<std::size_t>(lat.n[0]), [&](std::size_t a) {
    for (int b = 0; b < lat.n[1]; ++b)
      for (int c = 0; c < lat.n[2]; ++c)
        g.values[lat.index(static_cast<int>(a), b, c)] = f(lat.momentum(static_cast<int>(a), b, c));
  });
  return g;
}

// Position-space samples of a momentum grid function: c(x_m) = dk^3/(2pi)^3 sum_k e^{i<k,x_m>_-} c(k)
// at x_m = m * 2pi / (n dk).  Index m is read modulo n, so negative positions wrap.
struct PositionField {
  std::array<int, 3> n{1, 1, 1};
  std::array<double, 3> spacing{1, 1, 1};
  std::vector<cplx> values;

  std::size_t size() const { return values.size(); }
  double cell_volume() const { return spacing[0] * spacing[1] * spacing[2]; }
  double norm_l1() const {
    double s = 0;
    for (const auto& v : values) s += std::abs(v);
    return s * cell_volume();
  }
  double norm_linf() const {
    double s = 0;
    for (const auto& v : values) s = std::max(s, std::abs(v));
    return s;
  }
  // signed lattice coordinate of index i along axis d
  int signed_coord(int d, int i) const { return i < (n[d] + 1) / 2 ? i : i - n[d]; }
};

inline PositionField to_position_space(const GridPropagator& g) {
  const auto& lat = g.lattice;
  PositionField p;
  p.n = lat.n;
  for (int d = 0; d < 3; ++d) p.spacing[d] = 2.0 * pi / (lat.n[d] * lat.spacing[d]);
  std::vector<fftw_complex> buf(lat.size());
  for (std::size_t i = 0; i < lat.size(); ++i) {
    buf[i][0] = g.values[i].real();
    buf[i][1] = g.values[i].imag();
  }
  // one sign for all axes; on the frequency axis this only reflects x0, which no norm sees
  fftw_plan plan = fftw_plan_dft_3d(lat.n[0], lat.n[1], lat.n[2], buf.data(), buf.data(),
                                    FFTW_BACKWARD, FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  double w = lat.cell_volume() / std::pow(2.0 * pi, 3);
  p.values.resize(lat.size());
  for (std::size_t i = 0; i < lat.size(); ++i) p.values[i] = w * cplx(buf[i][0], buf[i][1]);
  return p;
}

enum class NormKind { L1, Linf, x_beta_L1 };

struct ScalingSample {
  int j = 0;
  double norm = 0.0;
};

struct ScalingFit {
  double slope = 0.0;
  std::vector<ScalingSample> samples;
};

struct NormGrid {
  int n0 = 256;
  int n_normal = 256;
  int n_tangent = 64;
};

// Local lattice around the centre of sector 0 of Sigma_j, sized to the support of c_s^(j).
inline MomentumLattice sector_lattice(const DispersionModel& model, const ScaleSystem& s, int j,
                                      const NormGrid& grid) {
  if (grid.n0 < 16 || grid.n_normal < 16 || grid.n_tangent < 8)
    throw ResolutionError("grid too coarse to resolve a shell");
  if (j > 10) throw ResolutionError("scale too fine for double-precision momentum lattices");
  Sectorization sz = build_sectorization(model, s, j);
  Vec2 c = sz.sectors[0].center;
  Vec2 g = model.grad(c);
  double vf = norm(g);
  Vec2 nrm = g / vf;
  Vec2 tan{-nrm.y, nrm.x};
  double cap = std::sqrt(2.0 * s.M) / s.Mpow(j);
  double eta_half = 0.55 * sz.length;
  double kappa = model.is_circular() ? 1.0 / model.kf() : 2.0 * model.curvature(0.0);
  double sag = 0.5 * kappa * eta_half * eta_half;
  double xi_hi = 1.15 * cap / vf;
  double xi_lo = -(xi_hi + 1.1 * sag);
  MomentumLattice lat;
  lat.n = {grid.n0, grid.n_normal, grid.n_tangent};
  lat.spacing = {2.3 * cap / grid.n0, (xi_hi - xi_lo) / grid.n_normal, 2.0 * eta_half / grid.n_tangent};
  lat.origin = {-1.15 * cap + 0.5 * lat.spacing[0], xi_lo + 0.5 * lat.spacing[1],
                -eta_half + 0.5 * lat.spacing[2]};
  lat.centre = c;
  lat.normal = nrm;
  lat.tangent = tan;
  return lat;
}

inline double position_norm(const PositionField& p, NormKind kind, std::array<int, 3> beta) {
  if (kind == NormKind::Linf) return p.norm_linf();
  if (kind == NormKind::L1) return p.norm_l1();
  double s = 0;
  for (int a = 0; a < p.n[0]; ++a)
    for (int b = 0; b < p.n[1]; ++b)
      for (int c = 0; c < p.n[2]; ++c) {
        double w = std::pow(std::abs(p.signed_coord(0, a) * p.spacing[0]), beta[0]) *
                   std::pow(std::abs(p.signed_coord(1, b) * p.spacing[1]), beta[1]) *
                   std::pow(std::abs(p.signed_coord(2, c) * p.spacing[2]), beta[2]);
        s += w * std::abs(p.values[(static_cast<std::size_t>(a) * p.n[1] + b) * p.n[2] + c]);
      }
  return s * p.cell_volume();
}

// Norm of a scale-j momentum function per j, and the least-squares slope of
// log(norm) against j log M.  `source(j, k)` supplies the momentum values.
inline ScalingFit fit_norm_scaling_of(const DispersionModel& model, const ScaleSystem& s,
                                      const std::function<cplx(int, const Momentum&)>& source,
                                      int j_lo, int j_hi, NormKind kind,
                                      std::array<int, 3> beta = {0, 0, 0},
                                      const NormGrid& grid = {}, bool divide_by_sector_length = false) {
  if (j_hi <= j_lo) throw ScaleError("need at least two scales to fit a slope");
  ScalingFit fit;
  std::vector<double> x, y;
  for (int j = j_lo; j <= j_hi; ++j) {
    MomentumLattice lat = sector_lattice(model, s, j, grid);
    GridPropagator g = build_grid_propagator(lat, [&](const Momentum& k) { return source(j, k); }, j, j);
    PositionField p = to_position_space(g);
    double v = position_norm(p, kind, beta);
    if (divide_by_sector_length) v /= s.sector_length(j);
    fit.samples.push_back({j, v});
    x.push_back(j * std::log(s.M));
    y.push_back(std::log(v));
  }
  fit.slope = fit_line(x, y).slope;
  return fit;
}

// Scaling of c_s^(j) for the sector of Sigma_j centred at polar angle 0.
inline ScalingFit fit_norm_scaling(const DispersionModel& model, const ScaleSystem& s,
                                   const Counterterm& v, int j_lo, int j_hi, NormKind kind,
                                   std::array<int, 3> beta = {0, 0, 0}, const NormGrid& grid = {}) {
  std::vector<Sectorization> sz;
  for (int j = j_lo; j <= j_hi; ++j) sz.push_back(build_sectorization(model, s, j));
  auto source = [&](int j, const Momentum& k) {
    return sectorized_propagator(sz[static_cast<std::size_t>(j - j_lo)], 0, v, k);
  };
  return fit_norm_scaling_of(model, s, source, j_lo, j_hi, kind, beta, grid,
                             kind == NormKind::Linf);
}

}  // namespace phl
