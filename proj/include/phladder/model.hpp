#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "quadrature.hpp"

namespace phl {

// Dispersion relation e(k) with a strictly convex, star-shaped Fermi curve.
// Circular: e = |k|^2/(2m) - mu.  Tabulated: e = slope * (|k| - kF(theta)) with
// kF(theta) given by trigonometric interpolation of uniform samples.
class DispersionModel {
 public:
  enum class Kind { circular, tabulated };

  static DispersionModel circular(double m, double mu) {
    if (!(m > 0) || !(mu > 0)) throw DomainError("circular model needs m > 0 and mu > 0");
    DispersionModel d;
    d.kind_ = Kind::circular;
    d.m_ = m;
    d.mu_ = mu;
    d.kf_ = std::sqrt(2.0 * m * mu);
    d.length_ = 2.0 * pi * d.kf_;
    d.rmax_ = std::numeric_limits<double>::infinity();
    d.curvature_floor_ = 0.5 / d.kf_;
    return d;
  }

  // samples[i] = kF(theta0 + 2 pi i / n)
  static DispersionModel tabulated(const std::vector<double>& samples, double slope,
                                   double theta0 = 0.0) {
    if (samples.size() < 8) throw DomainError("tabulated model needs at least 8 samples");
    if (!(slope > 0)) throw DomainError("tabulated model needs a positive normal slope");
    for (double r : samples)
      if (!(r > 0)) throw DomainError("tabulated kF must be positive");
    DispersionModel d;
    d.kind_ = Kind::tabulated;
    d.slope_ = slope;
    std::size_t n = samples.size();
    std::size_t nh = n / 2;
    d.a_.assign(nh + 1, 0.0);
    d.b_.assign(nh + 1, 0.0);
    for (std::size_t h = 0; h <= nh; ++h) {
      double sa = 0, sb = 0;
      for (std::size_t i = 0; i < n; ++i) {
        double th = 2.0 * pi * static_cast<double>(i) / static_cast<double>(n);
        sa += samples[i] * std::cos(static_cast<double>(h) * th);
        sb += samples[i] * std::sin(static_cast<double>(h) * th);
      }
      double scale = (h == 0 || (n % 2 == 0 && h == nh)) ? 1.0 / n : 2.0 / n;
      d.a_[h] = sa * scale;
      d.b_[h] = (n % 2 == 0 && h == nh) ? 0.0 : sb * scale;
    }
    d.theta0_ = theta0;
    double rmax = 0, rmin = samples[0];
    for (double r : samples) rmax = std::max(rmax, r), rmin = std::min(rmin, r);
    d.kf_ = 0.5 * (rmax + rmin);
    d.rmax_ = 4.0 * rmax;
    d.build_arc_table();
    double kmin = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 1000; ++i) kmin = std::min(kmin, d.curvature(2.0 * pi * i / 1000.0));
    if (!(kmin > 0)) throw DomainError("tabulated Fermi curve is not strictly convex");
    d.curvature_floor_ = 0.5 * kmin;
    return d;
  }

  // File format: optional '#' comments, a "slope = <value>" line, an optional
  // "theta,kF" header, then rows "theta,kF(theta)" with uniformly spaced theta.
  static DispersionModel load_tabulated(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DomainError("cannot open dispersion table " + path);
    std::vector<double> th, kf;
    double slope = std::numeric_limits<double>::quiet_NaN();
    std::string line;
    while (std::getline(in, line)) {
      auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      if (auto eq = line.find('='); eq != std::string::npos) {
        std::string key = line.substr(0, eq);
        key.erase(0, key.find_first_not_of(" \t"));
        key.erase(key.find_last_not_of(" \t") + 1);
        if (key == "slope" || key == "normal_slope") slope = std::stod(line.substr(eq + 1));
        continue;
      }
      auto comma = line.find(',');
      if (comma == std::string::npos) throw DomainError("malformed row: " + line);
      try {
        th.push_back(std::stod(line.substr(0, comma)));
        kf.push_back(std::stod(line.substr(comma + 1)));
      } catch (const std::invalid_argument&) {
        if (th.empty()) continue;  // header row
        throw DomainError("malformed row: " + line);
      }
    }
    if (std::isnan(slope)) throw DomainError("dispersion table lacks a slope field");
    if (th.size() < 8) throw DomainError("dispersion table too short");
    double dth = 2.0 * pi / static_cast<double>(th.size());
    for (std::size_t i = 0; i < th.size(); ++i)
      if (std::abs(th[i] - th[0] - dth * static_cast<double>(i)) > 1e-6)
        throw DomainError("theta rows must be uniformly spaced over one period");
    return tabulated(kf, slope, th[0]);
  }

  Kind kind() const { return kind_; }
  bool is_circular() const { return kind_ == Kind::circular; }
  double mass() const { return m_; }
  double mu() const { return mu_; }
  // Circular: the Fermi radius.  Tabulated: mean of the extreme radii.
  double kf() const { return kf_; }
  double length() const { return length_; }
  double curvature_floor() const { return curvature_floor_; }
  double tube_halfwidth() const { return tube_; }
  void set_tube_halfwidth(double w) { tube_ = w; }
  // Normal-direction slope |grad e| scale; circular: kF/m.
  double fermi_velocity() const { return is_circular() ? kf_ / m_ : slope_; }

  double e(Vec2 k) const {
    if (is_circular()) return dot(k, k) / (2.0 * m_) - mu_;
    double r = norm(k);
    if (r > rmax_) throw DomainError("momentum outside the tabulated dispersion domain");
    return slope_ * (r - radius(std::atan2(k.y, k.x)));
  }

  Vec2 grad(Vec2 k) const {
    if (is_circular()) return k / m_;
    double r = norm(k);
    if (r > rmax_ || r == 0.0) throw DomainError("gradient outside the tabulated domain");
    double th = std::atan2(k.y, k.x);
    double dr = slope_;
    double dth = -slope_ * radius_d1(th) / r;
    Vec2 er{std::cos(th), std::sin(th)}, et{-std::sin(th), std::cos(th)};
    return er * dr + et * dth;
  }

  // Polar radius of the Fermi curve at angle theta, and its derivatives.
  double radius(double theta) const {
    if (is_circular()) return kf_;
    return series(theta, 0);
  }
  double radius_d1(double theta) const { return is_circular() ? 0.0 : series(theta, 1); }
  double radius_d2(double theta) const { return is_circular() ? 0.0 : series(theta, 2); }

  Vec2 curve_point(double theta) const { return polar(radius(theta), theta); }

  double curvature(double theta) const {
    double r = radius(theta), r1 = radius_d1(theta), r2 = radius_d2(theta);
    return (r * r + 2 * r1 * r1 - r * r2) / std::pow(r * r + r1 * r1, 1.5);
  }

  // Arc length from theta = 0 counterclockwise, in [0, length).
  double arc_of_theta(double theta) const {
    double th = wrap_angle(theta);
    if (is_circular()) return kf_ * th;
    double h = 2.0 * pi / static_cast<double>(arc_table_.size() - 1);
    auto i = std::min<std::size_t>(static_cast<std::size_t>(th / h), arc_table_.size() - 2);
    return arc_table_[i] + arc_piece(h * static_cast<double>(i), th);
  }

  double theta_of_arc(double s) const {
    s = std::fmod(s, length_);
    if (s < 0) s += length_;
    if (is_circular()) return s / kf_;
    auto it = std::upper_bound(arc_table_.begin(), arc_table_.end(), s);
    std::size_t i = std::min<std::size_t>(std::max<std::ptrdiff_t>(it - arc_table_.begin() - 1, 0),
                                          arc_table_.size() - 2);
    double h = 2.0 * pi / static_cast<double>(arc_table_.size() - 1);
    double lo = h * static_cast<double>(i), hi = lo + h;
    double th = lo + h * (s - arc_table_[i]) / (arc_table_[i + 1] - arc_table_[i]);
    for (int it2 = 0; it2 < 50; ++it2) {
      double f = arc_table_[i] + arc_piece(lo, th) - s;
      double step = f / speed(th);
      th = std::clamp(th - step, lo, hi);
      if (std::abs(step) < 1e-15) break;
    }
    return th;
  }

  // Projection pi_F onto the Fermi curve: radial for the circle, Newton descent
  // along grad e otherwise.
  Vec2 project(Vec2 k) const {
    if (norm(k) == 0.0) throw DomainError("projection undefined at k = 0");
    double ek = e(k);
    if (std::abs(ek) > tube_) throw DomainError("momentum outside the projection tube");
    if (is_circular()) return k * (kf_ / norm(k));
    Vec2 p = k;
    for (int it = 0; it < 100; ++it) {
      double ep = e(p);
      if (std::abs(ep) <= 1e-14) break;
      Vec2 g = grad(p);
      p = p - g * (ep / dot(g, g));
    }
    return p;
  }

  // Polar angle of pi_F(k).
  double fermi_angle(Vec2 k) const {
    if (is_circular()) {
      if (norm(k) == 0.0) throw DomainError("projection undefined at k = 0");
      if (std::abs(e(k)) > tube_) throw DomainError("momentum outside the projection tube");
      return wrap_angle(std::atan2(k.y, k.x));
    }
    Vec2 p = project(k);
    return wrap_angle(std::atan2(p.y, p.x));
  }

  // dist(k, F + t) by angular sampling and golden-section refinement.
  double dist_to_translated_curve(Vec2 k, Vec2 t) const {
    Vec2 q = k - t;
    if (is_circular()) return std::abs(norm(q) - kf_);
    constexpr int n = 2048;
    auto d2 = [&](double th) {
      Vec2 d = q - curve_point(th);
      return dot(d, d);
    };
    int best = 0;
    double bestv = d2(0.0);
    for (int i = 1; i < n; ++i) {
      double v = d2(2.0 * pi * i / n);
      if (v < bestv) bestv = v, best = i;
    }
    double a = 2.0 * pi * (best - 1) / n, b = 2.0 * pi * (best + 1) / n;
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = d2(c), fd = d2(d);
    while (b - a > 1e-13) {
      if (fc < fd) {
        b = d, d = c, fd = fc;
        c = b - g * (b - a);
        fc = d2(c);
      } else {
        a = c, c = d, fc = fd;
        d = a + g * (b - a);
        fd = d2(d);
      }
    }
    return std::sqrt(std::min({d2(0.5 * (a + b)), bestv}));
  }

  // Radii r in (0, rmax) with e(c + r u) = 0 along the ray from c in direction u.
  std::vector<double> ray_roots(Vec2 c, Vec2 u, double rmax) const {
    std::vector<double> out;
    if (is_circular()) {
      double b = dot(u, c), cc = dot(c, c) - kf_ * kf_;
      double disc = b * b - cc;
      if (disc < 0) return out;
      double s = std::sqrt(disc);
      for (double r : {-b - s, -b + s})
        if (r > 0 && r < rmax) out.push_back(r);
      return out;
    }
    constexpr int n = 512;
    auto f = [&](double r) { return e(c + u * r); };
    double prev = f(0.0);
    double step = rmax / n;
    for (int i = 1; i <= n; ++i) {
      double r = step * i;
      double cur = f(r);
      if ((prev < 0) != (cur < 0)) {
        double lo = r - step, hi = r, flo = prev;
        for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
          double mid = 0.5 * (lo + hi);
          double fm = f(mid);
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

  // Radial extent of {|e| <= w} along the polar ray at angle theta.
  std::pair<double, double> annulus_radii(double theta, double w) const {
    if (is_circular()) {
      double lo = 2.0 * m_ * (mu_ - w);
      double hi = 2.0 * m_ * (mu_ + w);
      return {lo > 0 ? std::sqrt(lo) : 0.0, std::sqrt(hi)};
    }
    double r = radius(theta);
    return {std::max(0.0, r - w / slope_), r + w / slope_};
  }

  static double wrap_angle(double th) {
    th = std::fmod(th, 2.0 * pi);
    if (th < 0) th += 2.0 * pi;
    if (th >= 2.0 * pi) th = 0.0;
    return th;
  }

 private:
  double series(double theta, int deriv) const {
    double th = theta - theta0_;
    double s = deriv == 0 ? a_[0] : 0.0;
    for (std::size_t h = 1; h < a_.size(); ++h) {
      double hh = static_cast<double>(h);
      double c = std::cos(hh * th), sn = std::sin(hh * th);
      switch (deriv) {
        case 0: s += a_[h] * c + b_[h] * sn; break;
        case 1: s += hh * (-a_[h] * sn + b_[h] * c); break;
        default: s += -hh * hh * (a_[h] * c + b_[h] * sn); break;
      }
    }
    return s;
  }

  double speed(double theta) const {
    double r = radius(theta), r1 = radius_d1(theta);
    return std::sqrt(r * r + r1 * r1);
  }

  double arc_piece(double a, double b) const {
    static thread_local std::vector<double> x, w;
    if (x.empty()) gauss_legendre(12, x, w);
    double c = 0.5 * (a + b), h = 0.5 * (b - a), s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += w[i] * speed(c + h * x[i]);
    return s * h;
  }

  void build_arc_table() {
    constexpr int n = 4096;
    arc_table_.assign(n + 1, 0.0);
    double h = 2.0 * pi / n;
    for (int i = 0; i < n; ++i) arc_table_[i + 1] = arc_table_[i] + arc_piece(h * i, h * (i + 1));
    length_ = arc_table_[n];
  }

  Kind kind_ = Kind::circular;
  double m_ = 1.0, mu_ = 0.5, kf_ = 1.0, slope_ = 1.0;
  double length_ = 2.0 * pi;
  double rmax_ = 0.0;
  double curvature_floor_ = 0.5;
  double tube_ = std::sqrt(8.0) / 4.0;  // first-neighbourhood cap sqrt(2M)/M at M = 4
  double theta0_ = 0.0;
  std::vector<double> a_, b_, arc_table_;
};

// Elliptical profile kF(theta) = 1 / sqrt(cos^2/a^2 + sin^2/b^2) sampled uniformly.
inline std::vector<double> ellipse_profile(double a, double b, int n) {
  std::vector<double> r(n);
  for (int i = 0; i < n; ++i) {
    double th = 2.0 * pi * i / n;
    double c = std::cos(th), s = std::sin(th);
    r[i] = 1.0 / std::sqrt(c * c / (a * a) + s * s / (b * b));
  }
  return r;
}

}  // namespace phl
