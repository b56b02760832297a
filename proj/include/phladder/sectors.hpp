#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "core.hpp"
#include "model.hpp"
#include "scales.hpp"

namespace phl {

// Arc coordinates are arc length along F measured from polar angle 0.
struct Sector {
  int scale = 0;
  double arc_start = 0.0;  // may exceed length(F); read modulo length(F)
  double arc_length = 0.0;
  double arc_center = 0.0;
  Vec2 center;
};

struct Sectorization {
  int scale = 0;
  double length = 0.0;   // sector length l_j
  double overlap = 0.0;  // arc length shared by neighbours
  double curve_length = 0.0;
  std::vector<Sector> sectors;
  DispersionModel model;
  ScaleSystem scales;

  std::size_t size() const { return sectors.size(); }

  // Signed arc offset of arc coordinate a from the centre of sector n, in (-L/2, L/2].
  double offset(std::size_t n, double a) const {
    double d = std::fmod(a - sectors[n].arc_center, curve_length);
    if (d > 0.5 * curve_length) d -= curve_length;
    if (d <= -0.5 * curve_length) d += curve_length;
    return d;
  }

  bool contains_arc(std::size_t n, double a) const {
    return std::abs(offset(n, a)) <= 0.5 * length;
  }

  // Angular factor of chi_s: 1 on the single-cover part of the arc, complementary
  // smooth steps across each overlap.
  double angular_weight(std::size_t n, double a) const {
    double d = offset(n, a);
    double half = 0.5 * length;
    double ad = std::abs(d);
    if (ad >= half) return 0.0;
    if (ad <= half - overlap) return 1.0;
    double u = (half - ad) / overlap;  // 1 at the inner edge of the overlap, 0 at the tip
    if (d > 0) return scales.smooth_step(u);
    // on the left overlap use the complement of the neighbour's step so the two sum to 1
    return 1.0 - scales.smooth_step(1.0 - u);
  }
};

inline Sectorization build_sectorization(const DispersionModel& model, const ScaleSystem& s,
                                         int j) {
  if (j < 1) throw ScaleError("sectorization scale must be at least 1");
  double L = model.length();
  double l = s.sector_length(j);
  if (l > 0.5 * L) throw ScaleError("sector length exceeds half the Fermi curve length");
  // neighbour overlap l - L/N must lie in [l/16, l/8]
  double nlo = 16.0 * L / (15.0 * l), nhi = 8.0 * L / (7.0 * l);
  auto lo = static_cast<std::int64_t>(std::ceil(nlo - 1e-12));
  auto hi = static_cast<std::int64_t>(std::floor(nhi + 1e-12));
  if (lo > hi) throw ScaleError("no sector count satisfies the overlap constraints at this scale");
  double target = 12.0 * L / (11.0 * l);
  std::int64_t n = std::clamp<std::int64_t>(std::llround(target), lo, hi);

  Sectorization sz;
  sz.scale = j;
  sz.length = l;
  sz.curve_length = L;
  sz.overlap = l - L / static_cast<double>(n);
  sz.model = model;
  sz.scales = s;
  sz.sectors.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    Sector& sec = sz.sectors[static_cast<std::size_t>(i)];
    sec.scale = j;
    sec.arc_center = L * static_cast<double>(i) / static_cast<double>(n);
    sec.arc_start = sec.arc_center - 0.5 * l;
    if (sec.arc_start < 0) sec.arc_start += L;
    sec.arc_length = l;
    sec.center = model.curve_point(model.theta_of_arc(sec.arc_center));
  }
  return sz;
}

// chi_s(k): angular weight of pi_F(k) times the j-th extended neighbourhood cutoff.
inline double chi(const Sectorization& sz, std::size_t n, const Momentum& k) {
  double e = sz.model.e(k.k);
  double radial = sz.scales.extended_value(k.k0, e, sz.scale);
  if (radial == 0.0) return 0.0;
  double a = sz.model.arc_of_theta(sz.model.fermi_angle(k.k));
  return sz.sectors.size() == 0 ? 0.0 : sz.angular_weight(n, a) * radial;
}

// Indices of sectors whose arc contains arc coordinate a.
inline std::vector<std::size_t> sectors_at(const Sectorization& sz, double a) {
  std::vector<std::size_t> out;
  std::size_t n = sz.size();
  double step = sz.curve_length / static_cast<double>(n);
  auto guess = static_cast<std::int64_t>(std::llround(a / step));
  for (std::int64_t d = -2; d <= 2; ++d) {
    auto idx = static_cast<std::size_t>(((guess + d) % static_cast<std::int64_t>(n) + n) % n);
    if (sz.contains_arc(idx, a) && std::find(out.begin(), out.end(), idx) == out.end())
      out.push_back(idx);
  }
  return out;
}

namespace geom {

using Polygon = std::vector<Vec2>;

// Convex hull, counterclockwise, no repeated end point.
inline Polygon convex_hull(Polygon pts) {
  std::sort(pts.begin(), pts.end(),
            [](Vec2 a, Vec2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  if (pts.size() < 3) return pts;
  Polygon h(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(h[k - 1] - h[k - 2], pts[i] - h[k - 2]) <= 0) --k;
    h[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(h[k - 1] - h[k - 2], pts[i] - h[k - 2]) <= 0) --k;
    h[k++] = pts[i];
  }
  h.resize(k - 1);
  return h;
}

inline std::size_t lowest_vertex(const Polygon& p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i].y < p[best].y || (p[i].y == p[best].y && p[i].x < p[best].x)) best = i;
  return best;
}

// Minkowski sum of two convex counterclockwise polygons by edge merging.
inline Polygon minkowski_sum(const Polygon& a, const Polygon& b) {
  std::size_t ia = lowest_vertex(a), ib = lowest_vertex(b);
  std::size_t na = a.size(), nb = b.size();
  Polygon out;
  out.reserve(na + nb);
  std::size_t i = 0, j = 0;
  while (i < na || j < nb) {
    out.push_back(a[(ia + i) % na] + b[(ib + j) % nb]);
    Vec2 ea = a[(ia + i + 1) % na] - a[(ia + i) % na];
    Vec2 eb = b[(ib + j + 1) % nb] - b[(ib + j) % nb];
    double c = cross(ea, eb);
    if (j >= nb || (i < na && c > 0))
      ++i;
    else if (i >= na || c < 0)
      ++j;
    else
      ++i, ++j;
  }
  return out;
}

inline double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  Vec2 ab = b - a;
  double len2 = dot(ab, ab);
  double t = len2 > 0 ? std::clamp(dot(p - a, ab) / len2, 0.0, 1.0) : 0.0;
  return norm(p - (a + ab * t));
}

// Distance from p to a convex counterclockwise polygon (0 inside).
inline double distance_to_convex(const Polygon& poly, Vec2 p) {
  std::size_t n = poly.size();
  if (n == 0) return std::numeric_limits<double>::infinity();
  if (n == 1) return norm(p - poly[0]);
  bool inside = n >= 3;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    Vec2 a = poly[i], b = poly[(i + 1) % n];
    if (cross(b - a, p - a) < 0) inside = false;
    best = std::min(best, point_segment_distance(p, a, b));
  }
  return inside ? 0.0 : best;
}

}  // namespace geom

// Convex hull of the k0 = 0 slice of sector n: boundary points along the arc on
// the curves |e| = w, w the cap of the scale's neighbourhood.
inline geom::Polygon sector_hull(const Sectorization& sz, std::size_t n, int samples = 64) {
  const auto& model = sz.model;
  double w = std::sqrt(2.0 * sz.scales.M) / sz.scales.Mpow(sz.scale);
  int per_side = samples / 2;
  geom::Polygon pts;
  pts.reserve(static_cast<std::size_t>(samples));
  const Sector& s = sz.sectors[n];
  for (int i = 0; i < per_side; ++i) {
    double a = s.arc_start + s.arc_length * i / (per_side - 1);
    double th = model.theta_of_arc(a);
    Vec2 p = model.curve_point(th);
    if (model.is_circular()) {
      auto [rin, rout] = model.annulus_radii(th, w);
      pts.push_back(polar(rin, th));
      pts.push_back(polar(rout, th));
    } else {
      Vec2 g = model.grad(p);
      double gn = norm(g);
      pts.push_back(p - g * (w / (gn * gn)));
      pts.push_back(p + g * (w / (gn * gn)));
    }
  }
  return geom::convex_hull(pts);
}

// Number of pairs (s1, s2) whose difference set (k0 = 0 slice) meets the disc D(tau, eps).
inline std::int64_t count_pairs_with_transfer(const Sectorization& sz, Vec2 tau, double eps) {
  if (eps < 0) throw DomainError("eps must be nonnegative");
  std::size_t n = sz.size();
  std::vector<geom::Polygon> hull(n), neg(n);
  std::vector<Vec2> centre(n);
  std::vector<double> radius(n);
  for (std::size_t i = 0; i < n; ++i) {
    hull[i] = sector_hull(sz, i);
    Vec2 c{0, 0};
    for (Vec2 p : hull[i]) c = c + p;
    c = c / static_cast<double>(hull[i].size());
    centre[i] = c;
    double r = 0;
    for (Vec2 p : hull[i]) r = std::max(r, norm(p - c));
    radius[i] = r;
    for (Vec2 p : hull[i]) neg[i].push_back(-p);
  }
  std::vector<std::int64_t> per(n, 0);
  parallel_for(n, [&](std::size_t a) {
    std::int64_t cnt = 0;
    for (std::size_t b = 0; b < n; ++b) {
      if (norm(centre[a] - centre[b] - tau) > radius[a] + radius[b] + eps + 1e-12) continue;
      auto diff = geom::minkowski_sum(hull[a], neg[b]);
      if (geom::distance_to_convex(diff, tau) <= eps) ++cnt;
    }
    per[a] = cnt;
  });
  std::int64_t total = 0;
  for (auto c : per) total += c;
  return total;
}

// Arc length of {k in F : dist(k, F + tau) <= width}, by scanning plus bisection.
inline double curve_overlap_interval_length(const DispersionModel& model, Vec2 tau, double width) {
  if (!(width > 0)) throw DomainError("width must be positive");
  constexpr int n = 10000;
  double L = model.length();
  auto inside = [&](double a) {
    return model.dist_to_translated_curve(model.curve_point(model.theta_of_arc(a)), tau) <= width;
  };
  auto edge = [&](double a, double b, bool ina) {
    for (int it = 0; it < 60; ++it) {
      double mid = 0.5 * (a + b);
      if (inside(mid) == ina)
        a = mid;
      else
        b = mid;
    }
    return 0.5 * (a + b);
  };
  double h = L / n;
  std::vector<char> flag(n);
  for (int i = 0; i < n; ++i) flag[i] = inside(h * i);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    bool a = flag[i], b = flag[(i + 1) % n];
    double s0 = h * i, s1 = h * (i + 1);
    if (a && b)
      total += h;
    else if (a != b) {
      double x = edge(s0, s1, a);
      total += a ? (x - s0) : (s1 - x);
    }
  }
  return total;
}

}  // namespace phl
