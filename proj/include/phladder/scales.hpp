#pragma once

#include <cmath>

#include "core.hpp"
#include "model.hpp"

namespace phl {

// Scale parameter M, sector exponent aleph, derivative caps and the mollifier.
struct ScaleSystem {
  double M = 4.0;
  double aleph = 0.6;
  int r0 = 6;
  int re = 6;
  double bump_sharpness = 1.0;

  void validate() const {
    if (!(M > 1)) throw DomainError("M must exceed 1");
    if (!(aleph > 0.5 && aleph < 2.0 / 3.0)) throw DomainError("aleph must lie in (1/2, 2/3)");
    if (r0 < 6 || re < 6) throw DomainError("derivative caps r0, re must be at least 6");
    if (!(bump_sharpness > 0)) throw DomainError("bump_sharpness must be positive");
  }

  // Smooth step on [0,1]: 0 at 0, 1 at 1, flat to all orders at both ends.
  double smooth_step(double y) const {
    if (y <= 0.0) return 0.0;
    if (y >= 1.0) return 1.0;
    double a = std::exp(-bump_sharpness / y);
    double b = std::exp(-bump_sharpness / (1.0 - y));
    return a / (a + b);
  }

  // phi = 1 on [-1,1], 0 outside (-2,2), monotone in between.
  double phi(double x) const {
    double ax = std::abs(x);
    if (ax <= 1.0) return 1.0;
    if (ax >= 2.0) return 0.0;
    return smooth_step(2.0 - ax);
  }

  double nu(double x) const {
    if (x <= 0.0) return 0.0;
    return phi(x / M) - phi(M * x);
  }

  double Mpow(double p) const { return std::pow(M, p); }

  double sector_length(int j) const { return std::pow(M, -aleph * j); }

  static double modulus2(double k0, double e) { return k0 * k0 + e * e; }

  // nu^(j)(k) = nu(M^{2j} (k0^2 + e^2)) where e is evaluated by the caller.
  double nu_shell_value(double k0, double e, int j) const {
    return nu(Mpow(2.0 * j) * modulus2(k0, e));
  }
  // nu^(>=j)(k) = phi(M^{2j-1} (k0^2 + e^2))
  double nu_ge_value(double k0, double e, int j) const {
    return phi(Mpow(2.0 * j - 1.0) * modulus2(k0, e));
  }
  // Cutoff of the j-th extended neighbourhood, phi(M^{2j-2} (k0^2 + e^2)).
  double extended_value(double k0, double e, int j) const {
    return phi(Mpow(2.0 * j - 2.0) * modulus2(k0, e));
  }

  double nu_shell(const DispersionModel& model, const Momentum& k, int j) const {
    return nu_shell_value(k.k0, model.e(k.k), j);
  }
  double nu_ge(const DispersionModel& model, const Momentum& k, int j) const {
    return nu_ge_value(k.k0, model.e(k.k), j);
  }

  // Sum_{l=lo}^{hi} nu(M^{2l} x) evaluated term by term.
  double nu_sum(double x, int lo, int hi) const {
    double s = 0.0;
    for (int l = lo; l <= hi; ++l) s += nu(Mpow(2.0 * l) * x);
    return s;
  }
  // Same sum in telescoped form phi(M^{2lo-1} x) - phi(M^{2hi+1} x).
  double nu_sum_telescoped(double x, int lo, int hi) const {
    if (lo > hi || x <= 0.0) return 0.0;
    return phi(Mpow(2.0 * lo - 1.0) * x) - phi(Mpow(2.0 * hi + 1.0) * x);
  }

  // nu_0^(i,j)(k0) = sum_{l=i+1}^{j-1} nu(M^{2l} k0^2); empty (zero) when j <= i+1.
  double nu0_interval(double k0, int i, int j) const { return nu_sum(k0 * k0, i + 1, j - 1); }

  // nu_0^[0,j](k0) = sum_{l=0}^{j} nu(M^{2l} k0^2)
  double nu0_closed(double k0, int j) const { return nu_sum(k0 * k0, 0, j); }

  // Sum_{m >= lo} nu(M^{2m} e^2): the telescoped tail, equal to 1 at e = 0.
  double nu_tail(double e, int lo) const { return phi(Mpow(2.0 * lo - 1.0) * e * e); }

  // nu_0(omega) * nu_1(p, k) for the model bubble.
  double factorized_cutoff(const DispersionModel& model, double omega, Vec2 p, Vec2 k, int i,
                           int j) const {
    double n0 = nu_sum(omega * omega, i + 1, j - 1);
    if (n0 == 0.0) return 0.0;
    return n0 * nu_tail(model.e(p), i + 1) * nu_tail(model.e(k), i + 1);
  }
};

}  // namespace phl
