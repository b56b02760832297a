#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "core.hpp"
#include "model.hpp"
#include "propagators.hpp"
#include "quadrature.hpp"
#include "scales.hpp"

namespace phl {

struct BubbleResult {
  cplx value{};
  double estimated_error = 0.0;
  std::int64_t evaluations = 0;
};

// Closed-form particle-hole bubble of the circular model, three cases.
inline cplx closed_form_ph_bubble(double t0, double t_norm, double m, double kF) {
  if (t_norm < 0) throw DomainError("|t| must be nonnegative");
  if (t0 == 0.0 && t_norm == 0.0) throw DomainError("bubble has no limit at t = 0");
  if (t_norm == 0.0) return 0.0;
  double base = -m / (2.0 * pi);
  if (t0 == 0.0 && t_norm <= 2.0 * kF) return base;
  double t2 = t_norm * t_norm;
  cplx z(t2 * (t2 - 4.0 * kF * kF) - 4.0 * m * m * t0 * t0, -4.0 * m * t0 * t2);
  return base + m / (2.0 * pi * t2) * std::sqrt(z).real();
}

// Weight u(k, t) restricted to polar angles [theta_lo, theta_hi].
struct BubbleWeight {
  std::function<double(Vec2, Vec2)> f;
  double theta_lo = 0.0;
  double theta_hi = 2.0 * pi;
  bool zero = false;

  double operator()(Vec2 k, Vec2 t) const { return f ? f(k, t) : 1.0; }

  static BubbleWeight one() { return {}; }
  static BubbleWeight none() {
    BubbleWeight w;
    w.zero = true;
    return w;
  }
  // Smooth bump in the polar angle of k (the angle of pi_F(k) for the circle), centred at
  // theta_c with support of width `width` and plateau of half that width.
  static BubbleWeight bump(const ScaleSystem& s, double theta_c, double width) {
    if (!(width > 0 && width < 2.0 * pi)) throw DomainError("bump width must lie in (0, 2 pi)");
    BubbleWeight w;
    double half = 0.5 * width;
    w.f = [s, theta_c, half](Vec2 k, Vec2) {
      double d = std::remainder(std::atan2(k.y, k.x) - theta_c, 2.0 * pi);
      return s.smooth_step(2.0 * (1.0 - std::abs(d) / half));
    };
    w.theta_lo = theta_c - half;
    w.theta_hi = theta_c + half;
    return w;
  }
};

namespace detail {

struct ValErr {
  cplx v{};
  double e = 0.0;
  ValErr& operator+=(const ValErr& o) {
    v += o.v;
    e += o.e;
    return *this;
  }
  ValErr& operator*=(double s) {
    v *= s;
    e *= std::abs(s);
    return *this;
  }
};
inline ValErr operator+(ValErr a, const ValErr& b) { return a += b; }
inline ValErr operator-(ValErr a, const ValErr& b) { return {a.v - b.v, a.e + b.e}; }
inline ValErr operator*(ValErr a, double s) { return a *= s; }
inline double magnitude(const ValErr& x) { return std::abs(x.v); }

struct RadialRange {
  double lo = 0.0, hi = 0.0;
  std::vector<double> breaks;
  bool tail = false;  // also integrate r in [hi, infinity)
};

struct BubbleDomain {
  bool k0_real_line = true;
  double k0_lo = 0.0, k0_hi = 0.0;  // |k0| support when not the whole line
  std::vector<double> k0_breaks;
  double theta_lo = 0.0, theta_hi = 2.0 * pi;
  std::vector<double> theta_breaks;
  std::function<RadialRange(double)> radial;
};

struct EngineOptions {
  double abs_tol = 1e-5;
  double rel_tol = 1e-6;
  std::int64_t outer_segments = 400;
  std::int64_t middle_segments = 300;
  std::int64_t inner_segments = 200;
  bool throw_on_budget = true;
};

// Integral of g(k0, k) d^3k / (2 pi)^3 in polar coordinates for k.
template <class G>
BubbleResult integrate_bubble(const G& g, const BubbleDomain& d, const EngineOptions& o) {
  const double norm3 = std::pow(2.0 * pi, 3);
  const double raw_tol = o.abs_tol * norm3;
  const double span = d.theta_hi - d.theta_lo;
  const double mid_tol = raw_tol / (4.0 * span);
  std::int64_t evals = 0;

  auto inner = [&](Vec2 k, double radial_scale) -> ValErr {
    QuadOptions io;
    io.abs_tol = mid_tol / (4.0 * std::max(radial_scale, 1e-6));
    io.rel_tol = 0.1 * o.rel_tol;
    io.max_segments = o.inner_segments;
    auto f = [&](double k0) { return g(k0, k); };
    QuadResult<cplx> r;
    if (d.k0_real_line) {
      r = integrate_real_line<cplx>(f, io, d.k0_breaks);
    } else {
      std::vector<double> neg, pos;
      for (double b : d.k0_breaks) (b < 0 ? neg : pos).push_back(b);
      auto a = integrate<cplx>(f, -d.k0_hi, -d.k0_lo, io, neg);
      auto b = integrate<cplx>(f, d.k0_lo, d.k0_hi, io, pos);
      r.value = a.value + b.value;
      r.error = a.error + b.error;
      r.evaluations = a.evaluations + b.evaluations;
    }
    evals += r.evaluations;
    return {r.value, r.error};
  };

  auto middle = [&](double theta) -> ValErr {
    RadialRange rr = d.radial(theta);
    Vec2 u = polar(1.0, theta);
    double scale = 0.5 * (rr.hi * rr.hi - rr.lo * rr.lo) + (rr.tail ? rr.hi * rr.hi : 0.0);
    QuadOptions mo;
    mo.abs_tol = mid_tol;
    mo.rel_tol = 0.3 * o.rel_tol;
    mo.max_segments = o.middle_segments;
    ValErr total;
    if (rr.hi > rr.lo) {
      auto f = [&](double r) { return inner(u * r, scale) * r; };
      auto res = integrate<ValErr>(f, rr.lo, rr.hi, mo, rr.breaks);
      total += res.value;
      total.e += res.error;
    }
    if (rr.tail) {
      double h = rr.hi;
      auto f = [&](double sv) {
        double r = h / sv;
        return inner(u * r, scale) * (r * h / (sv * sv));
      };
      auto res = integrate<ValErr>(f, 0.0, 1.0, mo);
      total += res.value;
      total.e += res.error;
    }
    return total;
  };

  QuadOptions oo;
  oo.abs_tol = 0.5 * raw_tol;
  oo.rel_tol = o.rel_tol;
  oo.max_segments = o.outer_segments;
  auto res = integrate<ValErr>(middle, d.theta_lo, d.theta_hi, oo, d.theta_breaks);
  BubbleResult out;
  out.value = res.value.v / norm3;
  out.estimated_error = (res.error + res.value.e) / norm3;
  out.evaluations = evals;
  if (!res.converged && o.throw_on_budget)
    throw BudgetError("bubble quadrature budget exhausted", std::abs(out.value),
                      out.estimated_error);
  return out;
}

// Radii r in (0, rmax) with e(c + r u) = level.
inline std::vector<double> ray_level_roots(const DispersionModel& model, Vec2 c, Vec2 u,
                                           double level, double rmax) {
  std::vector<double> out;
  if (model.is_circular()) {
    double rho2 = 2.0 * model.mass() * (model.mu() + level);
    if (rho2 < 0) return out;
    double b = dot(u, c), disc = b * b - (dot(c, c) - rho2);
    if (disc < 0) return out;
    double s = std::sqrt(disc);
    for (double r : {-b - s, -b + s})
      if (r > 0 && r < rmax) out.push_back(r);
    return out;
  }
  constexpr int n = 512;
  auto f = [&](double r) { return model.e(c + u * r) - level; };
  double prev = f(0.0), step = rmax / n;
  for (int i = 1; i <= n; ++i) {
    double r = step * i, cur = f(r);
    if ((prev < 0) != (cur < 0)) {
      double lo = r - step, hi = r, flo = prev;
      for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
        double mid = 0.5 * (lo + hi), fm = f(mid);
        if ((fm < 0) == (flo < 0))
          lo = mid, flo = fm;
        else
          hi = mid;
      }
      out.push_back(0.5 * (lo + hi));
    }
    prev = cur;
  }
  return out;
}

// Polar angles of intersection and tangency points of the circles F - p1 and F - p2,
// where the radial profile of a bubble integrand has kinks.
inline std::vector<double> circle_pair_angles(const DispersionModel& model, Vec2 p1, Vec2 p2,
                                              double lo, double hi) {
  std::vector<double> out;
  if (!model.is_circular()) return out;
  double R = model.kf();
  auto push = [&](double th) {
    double x = lo + DispersionModel::wrap_angle(th - lo);
    if (x > lo && x < hi) out.push_back(x);
  };
  for (Vec2 p : {p1, p2}) {
    double d = norm(p);
    if (d > R) {
      double base = std::atan2(-p.y, -p.x), half = std::asin(R / d);
      push(base - half);
      push(base + half);
    }
  }
  Vec2 c1 = -p1, c2 = -p2, dc = c2 - c1;
  double d = norm(dc);
  if (d > 0 && d < 2.0 * R) {
    Vec2 mid = c1 + dc * 0.5;
    double h = std::sqrt(R * R - 0.25 * d * d);
    Vec2 perp{-dc.y / d, dc.x / d};
    for (Vec2 q : {mid + perp * h, mid - perp * h})
      if (norm(q) > 0) push(std::atan2(q.y, q.x));
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline double radial_cap(const DispersionModel& model, double want) {
  if (model.is_circular()) return want;
  // tabulated dispersions are only defined out to a few Fermi radii
  return std::min(want, 3.0 * model.kf());
}

// |k0| boundaries of the nu(M^{2l} k0^2) pieces for l in [i+1, j-1].
inline std::vector<double> shell_breaks(const ScaleSystem& s, int i, int j) {
  std::vector<double> b;
  for (int l = i + 1; l <= j - 1; ++l)
    for (double f : {1.0 / std::sqrt(s.M), std::sqrt(2.0 / s.M), std::sqrt(s.M),
                     std::sqrt(2.0 * s.M)}) {
      double x = f * s.Mpow(-l);
      b.push_back(x);
      b.push_back(-x);
    }
  return b;
}

}  // namespace detail

struct PhCutoff {
  enum class Kind { none, shells } kind = Kind::none;
  int i = 0, j = 0;
  BubbleWeight u;
  double uv_box = 8.0;  // spatial box radius in units of k_F for the no-cutoff mode

  static PhCutoff none_with_box(double box = 8.0) {
    PhCutoff c;
    c.uv_box = box;
    return c;
  }
  static PhCutoff shells(int i, int j, BubbleWeight u = BubbleWeight::one()) {
    PhCutoff c;
    c.kind = Kind::shells;
    c.i = i;
    c.j = j;
    c.u = std::move(u);
    return c;
  }
};

// int d^3k/(2 pi)^3 C(k + p1) C(k + p2) with C(q) = 1/(i q0 - e'(q)).
inline BubbleResult quad_ph_bubble(const DispersionModel& model, const ScaleSystem& s,
                                   const Counterterm& v, const Momentum& p1, const Momentum& p2,
                                   const PhCutoff& cut, double abs_tol = 1e-5) {
  Vec2 t = p1.k - p2.k;
  double t0 = p1.k0 - p2.k0;
  bool shells = cut.kind == PhCutoff::Kind::shells;
  if (!shells && t0 == 0.0 && norm(t) == 0.0)
    throw DomainError("transfer t = 0 needs the shells cutoff");
  if (shells && (cut.u.zero || cut.j <= cut.i + 1)) return {};

  detail::BubbleDomain d;
  double pmax = std::max(norm(p1.k), norm(p2.k));
  double box = detail::radial_cap(model, cut.uv_box * model.kf());
  if (shells) {
    if (cut.i < -1) throw ScaleError("shell index i must be at least -1");
    d.k0_real_line = false;
    d.k0_lo = s.Mpow(-(cut.j - 1)) / std::sqrt(s.M);
    d.k0_hi = std::sqrt(2.0 * s.M) * s.Mpow(-(cut.i + 1));
    d.k0_breaks = detail::shell_breaks(s, cut.i, cut.j);
    d.theta_lo = cut.u.theta_lo;
    d.theta_hi = cut.u.theta_hi;
  } else if (box < model.kf() + pmax) {
    throw DomainError("UV box does not contain the region where the bubble integrand lives");
  }
  for (double a : {-p1.k0, -p2.k0})
    if (d.k0_real_line || (std::abs(a) > d.k0_lo && std::abs(a) < d.k0_hi)) d.k0_breaks.push_back(a);
  d.theta_breaks = detail::circle_pair_angles(model, p1.k, p2.k, d.theta_lo, d.theta_hi);
  bool tail = shells && model.is_circular();
  d.radial = [&](double th) {
    detail::RadialRange rr;
    rr.hi = box;
    rr.tail = tail;
    Vec2 u = polar(1.0, th);
    for (Vec2 c : {p1.k, p2.k})
      for (double r : detail::ray_level_roots(model, c, u, 0.0, box)) rr.breaks.push_back(r);
    return rr;
  };

  auto g = [&](double k0, Vec2 k) -> cplx {
    double w = 1.0;
    if (shells) {
      w = s.nu0_interval(k0, cut.i, cut.j);
      if (w == 0.0) return 0.0;
      w *= cut.u(k, t);
      if (w == 0.0) return 0.0;
    }
    double q1 = k0 + p1.k0, q2 = k0 + p2.k0;
    double e1 = v.e_prime(s, q1, model.e(k + p1.k));
    double e2 = v.e_prime(s, q2, model.e(k + p2.k));
    return w / (cplx(-e1, q1) * cplx(-e2, q2));
  };
  detail::EngineOptions o;
  o.abs_tol = abs_tol;
  return detail::integrate_bubble(g, d, o);
}

namespace detail {

inline BubbleDomain model_bubble_domain(const DispersionModel& model, const ScaleSystem& s,
                                        Vec2 t, int i, int j, const BubbleWeight& u,
                                        double cap) {
  BubbleDomain d;
  d.k0_real_line = false;
  d.k0_lo = s.Mpow(-(j - 1)) / std::sqrt(s.M);
  d.k0_hi = std::sqrt(2.0 * s.M) * s.Mpow(-(i + 1));
  d.k0_breaks = shell_breaks(s, i, j);
  d.theta_lo = u.theta_lo;
  d.theta_hi = u.theta_hi;
  d.theta_breaks = circle_pair_angles(model, {0, 0}, t, d.theta_lo, d.theta_hi);
  double w = cap, wflat = cap / std::sqrt(2.0);
  d.radial = [&model, t, w, wflat](double th) {
    RadialRange rr;
    auto [lo, hi] = model.annulus_radii(th, w);
    rr.lo = lo;
    rr.hi = hi;
    Vec2 u = polar(1.0, th);
    for (Vec2 c : {Vec2{0, 0}, t})
      for (double lev : {-w, -wflat, 0.0, wflat, w})
        for (double r : ray_level_roots(model, c, u, lev, hi + 1.0))
          if (r > lo && r < hi) rr.breaks.push_back(r);
    std::sort(rr.breaks.begin(), rr.breaks.end());
    return rr;
  };
  return d;
}

}  // namespace detail

// Factorized-cutoff bubble at spatial transfer t (frequency transfer forced to zero):
// int dk nu_0^(i,j)(k0) nu_1(k + t, k) u(k, t) / ([i k0 - e'(k0,k)] [i k0 - e'(k0,k+t)]).
inline BubbleResult model_bubble(const DispersionModel& model, const ScaleSystem& s,
                                 const Counterterm& v, const Momentum& t, int i, int j,
                                 const BubbleWeight& u, double abs_tol = 1e-6) {
  if (!(i < j)) throw ScaleError("model bubble needs i < j");
  if (i < -1) throw ScaleError("shell index i must be at least -1");
  if (u.zero || j <= i + 1) return {};
  double cap = std::sqrt(2.0) * s.Mpow(-(i + 0.5));
  auto d = detail::model_bubble_domain(model, s, t.k, i, j, u, cap);
  auto g = [&](double k0, Vec2 k) -> cplx {
    double w = s.nu0_interval(k0, i, j);
    if (w == 0.0) return 0.0;
    double ek = model.e(k), et = model.e(k + t.k);
    w *= s.nu_tail(ek, i + 1) * s.nu_tail(et, i + 1);
    if (w == 0.0) return 0.0;
    w *= u(k, t.k);
    if (w == 0.0) return 0.0;
    return w / (cplx(-v.e_prime(s, k0, ek), k0) * cplx(-v.e_prime(s, k0, et), k0));
  };
  detail::EngineOptions o;
  o.abs_tol = abs_tol;
  return detail::integrate_bubble(g, d, o);
}

// Spatial-transfer derivative d^alpha_t of B_{i,j}(t) = int dk nu_0^(i,j)(k0) u(k)
// / ([i k0 - e(k)][i k0 - e(k + t)]), differentiated under the integral (|alpha| <= 2).
inline BubbleResult shell_bubble_derivative(const DispersionModel& model, const ScaleSystem& s,
                                            Vec2 t, int i, int j, const BubbleWeight& u,
                                            std::array<int, 2> alpha, double abs_tol = 1e-7) {
  int order = alpha[0] + alpha[1];
  if (alpha[0] < 0 || alpha[1] < 0 || order > 2) throw DomainError("derivative order must be at most 2");
  if (u.zero || j <= i + 1) return {};
  detail::BubbleDomain d;
  d.k0_real_line = false;
  d.k0_lo = s.Mpow(-(j - 1)) / std::sqrt(s.M);
  d.k0_hi = std::sqrt(2.0 * s.M) * s.Mpow(-(i + 1));
  d.k0_breaks = detail::shell_breaks(s, i, j);
  d.theta_lo = u.theta_lo;
  d.theta_hi = u.theta_hi;
  d.theta_breaks = detail::circle_pair_angles(model, {0, 0}, t, d.theta_lo, d.theta_hi);
  double box = detail::radial_cap(model, 8.0 * model.kf());
  bool tail = model.is_circular();
  d.radial = [&](double th) {
    detail::RadialRange rr;
    rr.hi = box;
    rr.tail = tail;
    Vec2 dir = polar(1.0, th);
    for (Vec2 c : {Vec2{0, 0}, t})
      for (double r : detail::ray_level_roots(model, c, dir, 0.0, box)) rr.breaks.push_back(r);
    return rr;
  };
  auto hess = [&](Vec2 q, int a, int b) {
    if (model.is_circular()) return a == b ? 1.0 / model.mass() : 0.0;
    constexpr double h = 1e-5;
    Vec2 eb = b == 0 ? Vec2{h, 0} : Vec2{0, h};
    Vec2 gp = model.grad(q + eb), gm = model.grad(q - eb);
    return ((a == 0 ? gp.x : gp.y) - (a == 0 ? gm.x : gm.y)) / (2.0 * h);
  };
  auto g = [&](double k0, Vec2 k) -> cplx {
    double w = s.nu0_interval(k0, i, j);
    if (w == 0.0) return 0.0;
    w *= u(k, t);
    if (w == 0.0) return 0.0;
    Vec2 q = k + t;
    cplx c1 = 1.0 / cplx(-model.e(k), k0);
    cplx c2 = 1.0 / cplx(-model.e(q), k0);
    cplx dc2 = c2;
    if (order > 0) {
      Vec2 gr = model.grad(q);
      double g0 = gr.x, g1 = gr.y;
      if (order == 1) {
        dc2 = (alpha[0] == 1 ? g0 : g1) * c2 * c2;
      } else {
        int a = alpha[0] == 2 ? 0 : (alpha[1] == 2 ? 1 : 0);
        int b = alpha[1] == 2 ? 1 : (alpha[0] == 2 ? 0 : 1);
        double ga = a == 0 ? g0 : g1, gb = b == 0 ? g0 : g1;
        dc2 = hess(q, a, b) * c2 * c2 + 2.0 * ga * gb * c2 * c2 * c2;
      }
    }
    return w * c1 * dc2;
  };
  detail::EngineOptions o;
  o.abs_tol = abs_tol;
  return detail::integrate_bubble(g, d, o);
}

// Closed form of int_{a<|k0|<=1} dk0 int_{b<|E|<=1} dE [i w k0 - E]^{-2}.
inline double order_limit_bubble(double a, double b, double w) {
  if (!(a > 0 && a < 1 && b > 0 && b < 1)) throw DomainError("a and b must lie in (0,1)");
  if (!(w > 0)) throw DomainError("w must be positive");
  return -(4.0 / w) *
         (std::atan(w) - std::atan(w * a) - std::atan(w / b) + std::atan(w * a / b));
}

// Same integral by nested adaptive quadrature over the four sign quadrants, with
// logarithmic variables |k0| = e^x, |E| = e^y.
inline BubbleResult order_limit_bubble_numeric(double a, double b, double w, double tol = 1e-10) {
  if (!(a > 0 && a < 1 && b > 0 && b < 1)) throw DomainError("a and b must lie in (0,1)");
  if (!(w > 0)) throw DomainError("w must be positive");
  QuadOptions qo;
  qo.abs_tol = tol;
  qo.rel_tol = tol;
  qo.max_segments = 400;
  std::int64_t evals = 0;
  double err = 0.0;
  cplx total = 0.0;
  for (double s0 : {1.0, -1.0})
    for (double se : {1.0, -1.0}) {
      auto outer = [&](double x) {
        double k0 = s0 * std::exp(x);
        auto inner = [&](double y) {
          double E = se * std::exp(y);
          cplx den = cplx(-E, w * k0);
          return std::exp(y) / (den * den);
        };
        // the integrand turns over near |E| = w |k0|
        auto r = integrate<cplx>(inner, std::log(b), 0.0, qo, {std::log(w * std::abs(k0))});
        evals += r.evaluations;
        return r.value * std::exp(x);
      };
      auto r = integrate<cplx>(outer, std::log(a), 0.0, qo, {std::log(b / w)});
      evals += r.evaluations;
      total += r.value;
      err += r.error;
    }
  return {total, err, evals};
}

enum class LimitOrder { a_then_b, b_then_a };

// Iterated limit of B_{a,b} at w: a_then_b sends the inner parameter b to 0 first and
// then a to 0; b_then_a the reverse. Evaluated at a hierarchy of small parameters.
inline double iterated_cutoff_limit(double w, LimitOrder order, bool numeric = false) {
  double inner = numeric ? 1e-9 : 1e-14, outer = numeric ? 1e-4 : 1e-7;
  double a = order == LimitOrder::a_then_b ? outer : inner;
  double b = order == LimitOrder::a_then_b ? inner : outer;
  if (numeric) return order_limit_bubble_numeric(a, b, w).value.real();
  return order_limit_bubble(a, b, w);
}

struct OverlapEstimate {
  double value = 0.0;
  double ci_halfwidth = 0.0;
  std::int64_t hits = 0;
  std::int64_t samples = 0;
};

// Monte Carlo area of {k : |e(k)|, |e(k + p)| <= sqrt(2M)/M^j}, sampling the first
// annulus uniformly (polar angle uniform, r^2 uniform between the annulus radii).
inline OverlapEstimate overlap_volume(const DispersionModel& model, const ScaleSystem& s, Vec2 p,
                                      int j, std::int64_t samples, std::uint64_t seed) {
  if (samples < 10000) throw DomainError("overlap_volume needs at least 1e4 samples");
  double w = std::sqrt(2.0 * s.M) * s.Mpow(-j);
  constexpr std::int64_t batch = 1 << 14;
  std::int64_t nb = (samples + batch - 1) / batch;
  struct Acc {
    double sum = 0, sum2 = 0;
    std::int64_t hits = 0;
  };
  std::vector<Acc> acc(static_cast<std::size_t>(nb));
  parallel_for(static_cast<std::size_t>(nb), [&](std::size_t bi) {
    std::seed_seq sq{seed, static_cast<std::uint64_t>(bi)};
    Rng rng(sq);
    std::int64_t count = std::min<std::int64_t>(batch, samples - static_cast<std::int64_t>(bi) * batch);
    Acc a;
    for (std::int64_t n = 0; n < count; ++n) {
      double th = uniform(rng, 0.0, 2.0 * pi);
      auto [rin, rout] = model.annulus_radii(th, w);
      double r2 = uniform(rng, rin * rin, rout * rout);
      Vec2 k = polar(std::sqrt(r2), th);
      double weight = pi * (rout * rout - rin * rin);
      double val = 0.0;
      if (std::abs(model.e(k)) <= w && std::abs(model.e(k + p)) <= w) {
        val = weight;
        ++a.hits;
      }
      a.sum += val;
      a.sum2 += val * val;
    }
    acc[bi] = a;
  });
  Acc tot;
  for (const auto& a : acc) {
    tot.sum += a.sum;
    tot.sum2 += a.sum2;
    tot.hits += a.hits;
  }
  OverlapEstimate out;
  out.samples = samples;
  out.hits = tot.hits;
  double n = static_cast<double>(samples);
  out.value = tot.sum / n;
  if (tot.hits == 0) {
    auto [rin, rout] = model.annulus_radii(0.0, w);
    out.ci_halfwidth = 3.0 / n * pi * (rout * rout - rin * rin);
    return out;
  }
  double var = std::max(0.0, tot.sum2 / n - out.value * out.value);
  out.ci_halfwidth = 1.96 * std::sqrt(var / n);
  return out;
}

struct OverlapFit {
  std::vector<int> scales;
  std::vector<OverlapEstimate> volumes;
  LineFit fit;
  double slope_upper = 0.0;  // slope + 1.96 stderr
};

// Weighted fit of log vol against j log M.
inline OverlapFit fit_overlap_slope(const DispersionModel& model, const ScaleSystem& s, Vec2 p,
                                    int j_lo, int j_hi, std::int64_t samples, std::uint64_t seed) {
  OverlapFit out;
  std::vector<double> x, y, wt;
  for (int j = j_lo; j <= j_hi; ++j) {
    auto v = overlap_volume(model, s, p, j, samples, seed + static_cast<std::uint64_t>(j));
    out.scales.push_back(j);
    out.volumes.push_back(v);
    if (v.hits == 0) throw DomainError("no overlap hits at some scale; cannot fit a slope");
    double sigma = v.ci_halfwidth / 1.96 / v.value;
    x.push_back(j * std::log(s.M));
    y.push_back(std::log(v.value));
    wt.push_back(1.0 / std::max(sigma * sigma, 1e-300));
  }
  out.fit = fit_line(x, y, wt);
  out.slope_upper = out.fit.slope + 1.96 * out.fit.slope_stderr;
  return out;
}

}  // namespace phl
