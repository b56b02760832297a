#pragma once

#include <cmath>
#include <cstdint>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include "core.hpp"

namespace phl {

struct BudgetError : std::runtime_error {
  double partial_value = 0.0;
  double partial_error = 0.0;
  BudgetError(const std::string& what, double value, double err)
      : std::runtime_error(what), partial_value(value), partial_error(err) {}
};

template <class T>
struct QuadResult {
  T value{};
  double error = 0.0;
  std::int64_t evaluations = 0;
  bool converged = true;
};

namespace detail {

inline double magnitude(double v) { return std::abs(v); }
inline double magnitude(const cplx& v) { return std::abs(v); }

// 21-point Kronrod extension of the 10-point Gauss rule.
inline constexpr double gk21_x[11] = {
    0.995657163025808080735527280689003, 0.973906528517171720077964012084452,
    0.930157491355708226001207180059508, 0.865063366688984510732096688423493,
    0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
    0.562757134668604683339000099272694, 0.433395394129247190799265943165784,
    0.294392862701460198131126603103866, 0.148874338981631210884826001129720,
    0.000000000000000000000000000000000};
inline constexpr double gk21_wk[11] = {
    0.011694638867371874278064396062192, 0.032558162307964727478818972459390,
    0.054755896574351996031381300244580, 0.075039674810919952767043140916190,
    0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
    0.123491976262065851077208606515716, 0.134709217311473325928054001771707,
    0.142775938577060080797094273138717, 0.147739104901338491374841515972068,
    0.149445554002916905664936468389821};
inline constexpr double gk21_wg[5] = {
    0.066671344308688137593568809893332, 0.149451349150580593145776339657697,
    0.219086362515982043995534934228163, 0.269266719309996355091226921569469,
    0.295524224714752870173892994651338};

template <class T>
struct Segment {
  double a, b;
  T value;
  double error;
  bool operator<(const Segment& o) const {
    return error < o.error || (error == o.error && a > o.a);
  }
};

template <class T, class F>
Segment<T> gk21(const F& f, double a, double b) {
  double c = 0.5 * (a + b);
  double h = 0.5 * (b - a);
  T fc = f(c);
  T kron = fc * gk21_wk[10];
  T gauss{};
  for (int i = 0; i < 10; ++i) {
    double dx = h * gk21_x[i];
    T s = f(c - dx) + f(c + dx);
    kron += s * gk21_wk[i];
    if (i % 2 == 1) gauss += s * gk21_wg[i / 2];
  }
  kron *= h;
  gauss *= h;
  using detail::magnitude;
  return {a, b, kron, magnitude(kron - gauss)};
}

}  // namespace detail

struct QuadOptions {
  double abs_tol = 1e-10;
  double rel_tol = 1e-10;
  std::int64_t max_segments = 2000;
  bool throw_on_budget = false;
};

// Globally adaptive Gauss-Kronrod over [a,b], optionally pre-split at breakpoints.
// Subdivision order is fixed (largest error first, ties by position) so results are
// reproducible.
template <class T, class F>
QuadResult<T> integrate(const F& f, double a, double b, const QuadOptions& opt = {},
                        const std::vector<double>& breaks = {}) {
  QuadResult<T> res;
  if (a == b) return res;
  std::vector<double> pts{a};
  for (double x : breaks)
    if (x > std::min(a, b) && x < std::max(a, b)) pts.push_back(x);
  pts.push_back(b);
  if (a < b)
    std::sort(pts.begin(), pts.end());
  else
    std::sort(pts.begin(), pts.end(), std::greater<>());

  std::priority_queue<detail::Segment<T>> heap;
  T total{};
  double err = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    if (pts[i] == pts[i + 1]) continue;
    auto s = detail::gk21<T>(f, pts[i], pts[i + 1]);
    res.evaluations += 21;
    total += s.value;
    err += s.error;
    heap.push(s);
  }
  std::int64_t segments = static_cast<std::int64_t>(heap.size());
  using detail::magnitude;
  while (!heap.empty()) {
    double target = std::max(opt.abs_tol, opt.rel_tol * magnitude(total));
    if (err <= target) break;
    if (segments >= opt.max_segments) {
      res.converged = false;
      break;
    }
    auto top = heap.top();
    heap.pop();
    double mid = 0.5 * (top.a + top.b);
    if (mid == top.a || mid == top.b) {
      res.converged = false;
      break;
    }
    auto l = detail::gk21<T>(f, top.a, mid);
    auto r = detail::gk21<T>(f, mid, top.b);
    res.evaluations += 42;
    total += l.value + r.value - top.value;
    err += l.error + r.error - top.error;
    heap.push(l);
    heap.push(r);
    ++segments;
  }
  // recompute sums from the leaves to shed accumulated rounding
  T sum{};
  double esum = 0.0;
  while (!heap.empty()) {
    sum += heap.top().value;
    esum += heap.top().error;
    heap.pop();
  }
  res.value = sum;
  res.error = esum;
  if (!res.converged && opt.throw_on_budget) {
    throw BudgetError("quadrature budget exhausted", magnitude(sum), esum);
  }
  return res;
}

// Integral over the whole real line through x = tan(u).
template <class T, class F>
QuadResult<T> integrate_real_line(const F& f, const QuadOptions& opt = {},
                                  const std::vector<double>& breaks = {}) {
  auto g = [&](double u) -> T {
    double c = std::cos(u);
    return f(std::tan(u)) * (1.0 / (c * c));
  };
  std::vector<double> ub;
  for (double x : breaks) ub.push_back(std::atan(x));
  return integrate<T>(g, -0.5 * pi, 0.5 * pi, opt, ub);
}

// Gauss-Legendre nodes and weights on [-1,1] by Newton iteration.
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[i] = -z;
    x[n - 1 - i] = z;
    w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
}

}  // namespace phl
