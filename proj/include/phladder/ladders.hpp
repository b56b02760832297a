#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <vector>

#include "bubbles.hpp"
#include "core.hpp"
#include "kernels.hpp"
#include "model.hpp"
#include "propagators.hpp"
#include "quadrature.hpp"
#include "scales.hpp"

namespace phl {

// ---------------------------------------------------------------------------
// Graded series: grade = number of rungs (one power of the coupling per rung),
// truncated above R.

template <class K>
struct Series {
  int R = 4;
  std::map<int, K> terms;

  Series() = default;
  explicit Series(int r) : R(r) {}

  bool empty() const { return terms.empty(); }
  void add(int g, const K& k) {
    if (g < 1 || g > R) return;
    auto it = terms.find(g);
    if (it == terms.end())
      terms.emplace(g, k);
    else
      it->second = it->second + k;
  }
  void add(const Series& o) {
    for (const auto& [g, k] : o.terms) add(g, k);
  }
  const K* get(int g) const {
    auto it = terms.find(g);
    return it == terms.end() ? nullptr : &it->second;
  }
};

template <class K>
Series<K> operator+(Series<K> a, const Series<K>& b) {
  a.R = std::min(a.R, b.R);
  a.add(b);
  return a;
}

template <class K>
Series<K> flip(const Series<K>& s) {
  Series<K> out(s.R);
  for (const auto& [g, k] : s.terms) out.terms.emplace(g, flip(k));
  return out;
}

// X • P • Y truncated at grade R.
template <class K, class P>
Series<K> chain(const Series<K>& X, const P& p, const Series<K>& Y) {
  Series<K> out(std::min(X.R, Y.R));
  if (X.empty() || Y.empty()) return out;
  int gy_min = Y.terms.begin()->first;
  for (const auto& [gx, kx] : X.terms) {
    if (gx + gy_min > out.R) break;
    K xp = mul(kx, p);
    for (const auto& [gy, ky] : Y.terms) {
      if (gx + gy > out.R) break;
      out.add(gx + gy, compose(xp, ky));
    }
  }
  return out;
}

inline double max_abs_diff(const ChargeSpinKernel& a, const ChargeSpinKernel& b) {
  return std::max(max_abs_diff(a.C, b.C), max_abs_diff(a.S, b.S));
}
inline double max_abs(const ChargeSpinKernel& a) { return std::max(max_abs(a.C), max_abs(a.S)); }
inline ChargeSpinKernel mul(const ChargeSpinKernel& K, const AbstractProp& P) {
  return {mul(K.C, P), mul(K.S, P)};
}
inline ChargeSpinKernel compose(const ChargeSpinKernel& X, const ChargeSpinKernel& H) {
  return {compose(X.C, H.C), compose(X.S, H.S)};
}

// Max elementwise difference over all grades (a missing grade counts as zero).
template <class K>
double series_diff(const Series<K>& a, const Series<K>& b) {
  double m = 0.0;
  for (const auto& [g, k] : a.terms) {
    const K* o = b.get(g);
    m = std::max(m, o ? max_abs_diff(k, *o) : max_abs(k));
  }
  for (const auto& [g, k] : b.terms)
    if (!a.get(g)) m = std::max(m, max_abs(k));
  return m;
}

template <class K>
double series_max(const Series<K>& a) {
  double m = 0.0;
  for (const auto& [g, k] : a.terms) m = std::max(m, max_abs(k));
  return m;
}

// Rungs F^(i) (grade 1) and the scale-indexed bubble propagators.
template <class K, class P>
struct LadderSystem {
  std::map<int, K> F;
  std::function<P(int)> single;        // C^(j)
  std::function<P(int, int)> window;   // C^[a,b]
  int R = 4;

  Series<K> rung(int i) const {
    Series<K> s(R);
    auto it = F.find(i);
    if (it != F.end()) s.add(1, it->second);
    return s;
  }
  // sum_{i=2}^{j} F^(i)
  Series<K> rung_sum(int j) const {
    Series<K> s(R);
    for (int i = 2; i <= j; ++i) s.add(rung(i));
    return s;
  }
};

// K1 • P1 • K2 • ... • P_l • K_{l+1}, folded from the left.
template <class K, class P>
K assemble_ladder(const std::vector<K>& rungs, const std::vector<P>& props) {
  if (rungs.empty() || rungs.size() != props.size() + 1)
    throw ShapeError("a ladder needs one more rung than bubble propagators");
  K acc = rungs.front();
  for (std::size_t m = 0; m < props.size(); ++m) acc = bullet(acc, props[m], rungs[m + 1]);
  return acc;
}

// (g1 • V • g2)^f • W • h
template <class K, class P>
K double_bubble(const K& g1, const P& V, const K& g2, const P& W, const K& h) {
  return bullet(flip(bullet(g1, V, g2)), W, h);
}

// Scale recursion: L^(0) = 0, L^(j+1) = L^(j) + sum_{l>=1} X (C^(j) X)^l with X = F + L^(j) + L^(j)f.
// Returns the compound ladders for scales 0..J.
template <class K, class P>
std::vector<Series<K>> compound_ladders_recursive(const LadderSystem<K, P>& sys, int J) {
  std::vector<Series<K>> out(static_cast<std::size_t>(std::max(J, 0) + 1), Series<K>(sys.R));
  for (int j = 0; j < J; ++j) {
    const auto& Lj = out[static_cast<std::size_t>(j)];
    Series<K> X = sys.rung_sum(j) + Lj + flip(Lj);
    Series<K> next = Lj;
    if (!X.empty()) {
      P c = sys.single(j);
      Series<K> term = X;
      for (int l = 1; l < sys.R; ++l) {
        term = chain(term, c, X);
        if (term.empty()) break;
        next.add(term);
      }
    }
    out[static_cast<std::size_t>(j + 1)] = next;
  }
  return out;
}

template <class K, class P>
Series<K> compound_ladder_recursive(const LadderSystem<K, P>& sys, int j) {
  return compound_ladders_recursive(sys, j + 1).back();
}

namespace detail {

// Sum over i_{m} in [2, cap_m] of prefix • P_m • Y^(i_m), depth-first over m.
template <class K, class P>
void rung_chain_dfs(const std::vector<Series<K>>& Y, const std::vector<P>& props,
                    const std::vector<int>& caps_lo, const std::vector<int>& caps_hi,
                    std::size_t m, const Series<K>& prefix, Series<K>& acc) {
  if (prefix.empty()) return;
  if (m == props.size()) {
    acc.add(prefix);
    return;
  }
  for (int i = caps_lo[m + 1]; i <= caps_hi[m + 1]; ++i) {
    const auto& y = Y[static_cast<std::size_t>(i)];
    if (y.empty()) continue;
    rung_chain_dfs(Y, props, caps_lo, caps_hi, m + 1, chain(prefix, props[m], y), acc);
  }
}

}  // namespace detail

// Single-scale ladders, enumerated literally: L^(0..2) = 0 and
// L^(j+1) = sum_l sum' Y^(i1) • C^(j1) • ... • C^(jl) • Y^(i_{l+1}),  Y^(i) = F^(i) + L^(i)f,
// over j_1..j_l >= 0 with max j_m = j and 2 <= i_m <= min{j_{m-1}, j_m}.
template <class K, class P>
std::vector<Series<K>> single_scale_ladders(const LadderSystem<K, P>& sys, int J) {
  std::vector<Series<K>> L(static_cast<std::size_t>(std::max(J, 0) + 1), Series<K>(sys.R));
  std::vector<Series<K>> Y(static_cast<std::size_t>(std::max(J, 0) + 1), Series<K>(sys.R));
  std::map<int, P> cache;
  auto C = [&](int j) -> const P& {
    auto it = cache.find(j);
    if (it == cache.end()) it = cache.emplace(j, sys.single(j)).first;
    return it->second;
  };
  for (int j = 0; j < J; ++j) {
    for (int i = 0; i <= j; ++i) Y[static_cast<std::size_t>(i)] = sys.rung(i) + flip(L[static_cast<std::size_t>(i)]);
    Series<K> acc(sys.R);
    if (j >= 2) {
      for (int l = 1; l + 1 <= sys.R; ++l) {
        std::vector<int> js(static_cast<std::size_t>(l), 0);
        // enumerate (j_1..j_l) in [0, j]^l
        while (true) {
          int mx = *std::max_element(js.begin(), js.end());
          if (mx == j) {
            std::vector<int> lo(static_cast<std::size_t>(l + 1), 2), hi(static_cast<std::size_t>(l + 1));
            bool ok = true;
            for (int m = 0; m <= l; ++m) {
              int left = m == 0 ? js[0] : js[static_cast<std::size_t>(m - 1)];
              int right = m == l ? js[static_cast<std::size_t>(l - 1)] : js[static_cast<std::size_t>(m)];
              hi[static_cast<std::size_t>(m)] = std::min(left, right);
              if (hi[static_cast<std::size_t>(m)] < 2) ok = false;
            }
            if (ok) {
              std::vector<P> props;
              for (int x : js) props.push_back(C(x));
              for (int i1 = lo[0]; i1 <= hi[0]; ++i1) {
                const auto& y = Y[static_cast<std::size_t>(i1)];
                if (!y.empty()) detail::rung_chain_dfs(Y, props, lo, hi, 0, y, acc);
              }
            }
          }
          int pos = 0;
          while (pos < l && ++js[static_cast<std::size_t>(pos)] > j) js[static_cast<std::size_t>(pos++)] = 0;
          if (pos == l) break;
        }
      }
    }
    L[static_cast<std::size_t>(j + 1)] = acc;
  }
  return L;
}

// Window form: sum_l sum_{i_1..i_{l+1} in [2,j]} Y^(i1) • C^[max(i1,i2), j] • ... • Y^(i_{l+1}).
template <class K, class P>
Series<K> compound_ladder_explicit(const LadderSystem<K, P>& sys, const std::vector<Series<K>>& L,
                                   int j) {
  if (static_cast<int>(L.size()) < j + 1) throw ShapeError("need single-scale ladders up to scale j");
  Series<K> acc(sys.R);
  if (j < 2) return acc;
  std::vector<Series<K>> Y(static_cast<std::size_t>(j + 1), Series<K>(sys.R));
  for (int i = 2; i <= j; ++i) Y[static_cast<std::size_t>(i)] = sys.rung(i) + flip(L[static_cast<std::size_t>(i)]);
  std::map<std::pair<int, int>, P> cache;
  auto W = [&](int a) -> const P& {
    auto key = std::make_pair(a, j);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, sys.window(a, j)).first;
    return it->second;
  };
  std::function<void(int, const Series<K>&, int)> dfs = [&](int prev_i, const Series<K>& prefix,
                                                            int props_used) {
    if (prefix.empty()) return;
    if (props_used >= 1) acc.add(prefix);
    if (props_used + 1 >= sys.R) return;
    for (int i = 2; i <= j; ++i) {
      const auto& y = Y[static_cast<std::size_t>(i)];
      if (y.empty()) continue;
      dfs(i, chain(prefix, W(std::max(prev_i, i)), y), props_used + 1);
    }
  };
  for (int i = 2; i <= j; ++i)
    if (!Y[static_cast<std::size_t>(i)].empty()) dfs(i, Y[static_cast<std::size_t>(i)], 0);
  return acc;
}

// Running sums  tilde L^(k) = sum_{i<=k} L^(i).
template <class K>
std::vector<Series<K>> cumulative(const std::vector<Series<K>>& L) {
  std::vector<Series<K>> out;
  Series<K> run(L.empty() ? 4 : L.front().R);
  for (const auto& l : L) {
    run.add(l);
    out.push_back(run);
  }
  return out;
}

struct IdentityReport {
  double recursive_vs_singles = 0.0;    // recursive vs sum of single-scale ladders
  double recursive_vs_windows = 0.0;   // recursive vs explicit window form
  double single_step = 0.0;  // L^(j+1) vs (F + L^(j)f + L^(j)) • C^(j) • (F + L^(j)f + L^(j+1))
  double windows_vs_singles = 0.0;      // explicit window form vs tilde L^(j+1)
  double single_step_cumulative = 0.0;
  double geometric_cumulative = 0.0;
  double scale = 0.0;    // largest entry involved, for relative reporting
  double max() const { return std::max({recursive_vs_singles, recursive_vs_windows, single_step, windows_vs_singles, single_step_cumulative, geometric_cumulative}); }
};

// Every equivalent form of the compound ladder at scale j, compared on L^(j+1).
template <class K, class P>
IdentityReport check_ladder_identities(const LadderSystem<K, P>& sys, int j) {
  IdentityReport rep;
  auto rec = compound_ladders_recursive(sys, j + 1);
  auto L = single_scale_ladders(sys, j + 1);
  auto tilde = cumulative(L);
  const auto& Lj = rec[static_cast<std::size_t>(j)];
  const auto& Lj1 = rec[static_cast<std::size_t>(j + 1)];
  const auto& Lsingle = L[static_cast<std::size_t>(j + 1)];
  rep.recursive_vs_singles = series_diff(Lj1, tilde[static_cast<std::size_t>(j + 1)]);
  auto expl = compound_ladder_explicit(sys, L, j);
  rep.recursive_vs_windows = series_diff(Lj1, expl);
  rep.windows_vs_singles = series_diff(expl, tilde[static_cast<std::size_t>(j + 1)]);
  P c = sys.single(j);
  auto F = sys.rung_sum(j);
  {
    auto left = F + flip(Lj) + Lj;
    auto right = F + flip(Lj) + Lj1;
    rep.single_step = series_diff(Lsingle, chain(left, c, right));
  }
  const auto& Tj = tilde[static_cast<std::size_t>(j)];
  const auto& Tj1 = tilde[static_cast<std::size_t>(j + 1)];
  {
    auto left = F + flip(Tj) + Tj;
    auto right = F + flip(Tj) + Tj1;
    rep.single_step_cumulative = series_diff(Lsingle, chain(left, c, right));
    Series<K> sum(sys.R), term = left;
    for (int l = 1; l < sys.R; ++l) {
      term = chain(term, c, left);
      if (term.empty()) break;
      sum.add(term);
    }
    rep.geometric_cumulative = series_diff(Lsingle, sum);
  }
  rep.scale = std::max({series_max(Lj1), series_max(expl), series_max(Lsingle)});
  return rep;
}

// Abstract backend with random rungs F^(2..J) and random single-scale symbols C^(0..J);
// windows are the sums C^[a,b] = sum_{m=a}^{b} C^(m).
inline LadderSystem<AbstractKernel4, AbstractProp> random_abstract_system(int n, int J, int R,
                                                                          Rng& rng) {
  LadderSystem<AbstractKernel4, AbstractProp> sys;
  sys.R = R;
  double scale = 1.0 / n;
  for (int i = 2; i <= J; ++i) sys.F.emplace(i, AbstractKernel4::random(n, 1, rng, scale));
  auto symbols = std::make_shared<std::vector<AbstractProp>>();
  for (int j = 0; j <= J + 1; ++j) symbols->push_back(AbstractProp::random(n, rng, scale));
  sys.single = [symbols](int j) {
    if (j < 0 || j >= static_cast<int>(symbols->size())) throw ScaleError("bubble scale out of range");
    return (*symbols)[static_cast<std::size_t>(j)];
  };
  sys.window = [symbols, n](int a, int b) {
    AbstractProp p(n);
    for (int m = a; m <= b; ++m) {
      if (m < 0 || m >= static_cast<int>(symbols->size())) throw ScaleError("bubble scale out of range");
      p += (*symbols)[static_cast<std::size_t>(m)];
    }
    return p;
  };
  return sys;
}

// Charge/spin channel system built from the same symbols, and its explicit-spin twin.
struct SpinSystems {
  LadderSystem<ChargeSpinKernel, AbstractProp> channel;
  LadderSystem<AbstractKernel4, AbstractProp> explicit_spin;
};

inline SpinSystems random_spin_systems(int n, int J, int R, Rng& rng) {
  SpinSystems out;
  auto base = random_abstract_system(n, J, R, rng);
  out.channel.R = out.explicit_spin.R = R;
  double scale = 1.0 / n;
  for (int i = 2; i <= J; ++i) {
    ChargeSpinKernel cs{AbstractKernel4::random(n, 1, rng, scale), AbstractKernel4::random(n, 1, rng, scale)};
    out.channel.F.emplace(i, cs);
    out.explicit_spin.F.emplace(i, charge_spin_reconstruct(cs));
  }
  out.channel.single = base.single;
  out.channel.window = base.window;
  auto bs = base.single;
  auto bw = base.window;
  out.explicit_spin.single = [bs](int j) { return spin_extend(bs(j)); };
  out.explicit_spin.window = [bw](int a, int b) { return spin_extend(bw(a, b)); };
  return out;
}

// Compound ladders of the charge/spin channel recursion.
inline Series<ChargeSpinKernel> charge_spin_ladder(
    const LadderSystem<ChargeSpinKernel, AbstractProp>& sys, int j) {
  return compound_ladder_recursive(sys, j);
}

// Reads f_C, f_S off an explicit kernel without an invariance check.
inline ChargeSpinKernel charge_spin_extract(const AbstractKernel4& f) {
  int n = f.n / 2;
  ChargeSpinKernel cs{AbstractKernel4(n, f.grade), AbstractKernel4(n, f.grade)};
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c)
        for (int d = 0; d < n; ++d) {
          cs.C(a, b, c, d) = f(2 * a, 2 * b, 2 * c, 2 * d) + f(2 * a, 2 * b, 2 * c + 1, 2 * d + 1);
          cs.S(a, b, c, d) = f(2 * a, 2 * b + 1, 2 * c, 2 * d + 1);
        }
  return cs;
}

// ---------------------------------------------------------------------------
// Grid bubble propagators.

inline std::vector<cplx> grid_propagator_values(const DispersionModel& model, const ScaleSystem& s,
                                                const Counterterm& v, const MomentumLattice& lat,
                                                Which which) {
  std::vector<cplx> out(lat.size());
  for (std::size_t i = 0; i < lat.size(); ++i) out[i] = propagator_value(model, s, v, lat.momentum(i), which);
  return out;
}

// C(A,B) = A (x) A^t + A (x) B^t + B (x) A^t
inline GridBubble make_bubble_propagator(const MomentumLattice& lat, const std::vector<cplx>& A,
                                         const std::vector<cplx>& B) {
  GridBubble P{lat, {}};
  P.parts.push_back({A, A});
  P.parts.push_back({A, B});
  P.parts.push_back({B, A});
  return P;
}

enum class WindowPart { top, mid, bot };

struct GridBubbleFamily {
  DispersionModel model;
  ScaleSystem s;
  Counterterm v;
  MomentumLattice lat;

  std::vector<cplx> shell(int j) const { return grid_propagator_values(model, s, v, lat, Which::shell(j)); }
  std::vector<cplx> tail(int j) const { return grid_propagator_values(model, s, v, lat, Which::tail(j)); }
  // C^[i,j] = sum_{m=i}^{j} C^(m)
  std::vector<cplx> band(int i, int j) const {
    std::vector<cplx> out(lat.size(), cplx{});
    for (int m = i; m <= j; ++m) {
      auto c = shell(m);
      for (std::size_t k = 0; k < out.size(); ++k) out[k] += c[k];
    }
    return out;
  }

  // C^(j) = C(C^(j), C^(>=j+1))
  GridBubble single(int j) const { return make_bubble_propagator(lat, shell(j), tail(j + 1)); }

  // C^[i,j] = C^(>=i) (x) C^(>=i)t - C^(>=j+1) (x) C^(>=j+1)t; empty when i > j.
  GridBubble window(int i, int j) const {
    GridBubble P{lat, {}};
    if (i > j) return P;
    auto a = tail(i), b = tail(j + 1);
    auto nb = b;
    for (auto& x : nb) x = -x;
    P.parts.push_back({a, a});
    P.parts.push_back({nb, b});
    return P;
  }

  // Split of the window by the scales of the top and bottom lines.
  GridBubble split_window(int i, int j, WindowPart part) const {
    GridBubble P{lat, {}};
    if (i > j) return P;
    auto mid = band(i, j), far = tail(j + 1);
    if (part == WindowPart::top) P.parts.push_back({mid, far});
    if (part == WindowPart::mid) P.parts.push_back({mid, mid});
    if (part == WindowPart::bot) P.parts.push_back({far, mid});
    return P;
  }

  // Direct double sum over (i_t, i_b) in [i,j]^2 of C^(i_t) (x) C^(i_b).
  GridBubble mid_double_sum(int i, int j) const {
    GridBubble P{lat, {}};
    for (int a = i; a <= j; ++a)
      for (int b = i; b <= j; ++b) P.parts.push_back({shell(a), shell(b)});
    return P;
  }
};

// (x - x')^nu applied to one line: i s d/dk per component (s = +1 for k0, -1 spatial),
// centred differences, zero where a neighbour is missing.
inline std::vector<cplx> line_moment(const MomentumLattice& lat, std::vector<cplx> v,
                                     std::array<int, 3> nu) {
  const cplx I(0, 1);
  auto axis_diff = [&](const std::vector<cplx>& f, int axis) {
    std::vector<cplx> out(f.size(), cplx{});
    double h = lat.spacing[static_cast<std::size_t>(axis)];
    for (std::size_t i = 0; i < f.size(); ++i) {
      auto c = lat.coords(i), cp = c, cm = c;
      cp[static_cast<std::size_t>(axis)] += 1;
      cm[static_cast<std::size_t>(axis)] -= 1;
      if (!lat.inside(cp[0], cp[1], cp[2]) || !lat.inside(cm[0], cm[1], cm[2])) continue;
      out[i] = (f[lat.index(cp[0], cp[1], cp[2])] - f[lat.index(cm[0], cm[1], cm[2])]) / (2.0 * h);
    }
    return out;
  };
  for (int t = 0; t < nu[0]; ++t) {
    v = axis_diff(v, 0);
    for (auto& x : v) x *= I;
  }
  for (int comp = 1; comp <= 2; ++comp)
    for (int t = 0; t < nu[static_cast<std::size_t>(comp)]; ++t) {
      double nc = comp == 1 ? lat.normal.x : lat.normal.y;
      double tc = comp == 1 ? lat.tangent.x : lat.tangent.y;
      auto dn = axis_diff(v, 1), dt = axis_diff(v, 2);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = -I * (nc * dn[i] + tc * dt[i]);
    }
  return v;
}

// Overlapping-loop propagators with derivative order nu on the scale-l line:
// up = M^{-|nu| l} sum_{m>=l} D^nu C^(l) (x) C^(m),  dn = M^{-|nu| l} sum_{m>l} C^(m) (x) D^nu C^(l).
inline GridBubble overlap_propagator(const GridBubbleFamily& fam, int l, std::array<int, 3> nu,
                                     bool up) {
  if (nu[0] < 0 || nu[1] < 0 || nu[2] < 0) throw DomainError("negative derivative order");
  int order = nu[0] + nu[1] + nu[2];
  auto line = line_moment(fam.lat, fam.shell(l), nu);
  double w = fam.s.Mpow(-static_cast<double>(order * l));
  for (auto& x : line) x *= w;
  GridBubble P{fam.lat, {}};
  if (up)
    P.parts.push_back({line, fam.tail(l)});
  else
    P.parts.push_back({fam.tail(l + 1), line});
  return P;
}

// Small periodic lattice in (k0, kx, ky) around a Fermi-curve point, for grid ladders.
inline MomentumLattice ladder_lattice(const DispersionModel& model, int n, double half_width) {
  if (n < 2 || n * n * n > 216) throw ResolutionError("ladder lattice needs 2 <= n and n^3 <= 216");
  MomentumLattice lat;
  lat.n = {n, n, n};
  double h = 2.0 * half_width / n;
  lat.spacing = {h, h, h};
  lat.origin = {-half_width + 0.5 * h, -half_width + 0.5 * h, -half_width + 0.5 * h};
  lat.centre = model.curve_point(0.0);
  lat.normal = {1, 0};
  lat.tangent = {0, 1};
  return lat;
}

inline LadderSystem<GridKernel4, GridBubble> grid_system(const GridBubbleFamily& fam,
                                                         std::map<int, GridKernel4> F, int R) {
  LadderSystem<GridKernel4, GridBubble> sys;
  sys.F = std::move(F);
  sys.R = R;
  auto f = std::make_shared<GridBubbleFamily>(fam);
  sys.single = [f](int j) { return f->single(j); };
  sys.window = [f](int a, int b) { return f->window(a, b); };
  return sys;
}

// ---------------------------------------------------------------------------
// Infrared probe: the compound ladder at external momenta for a local rung F^(2) = g
// (all other F^(i) = 0). The grade-2 part of L^(j) is g^2 B^[2,j-1](t) with
// B^[a,b](t) = int dp [C^(>=a)(p) C^(>=a)(p - t) - C^(>=b+1)(p) C^(>=b+1)(p - t)].
// Grade 3 would need the flipped grade-2 ladders at a moving transfer and is not offered.

struct IRProbeRow {
  int j = 0;
  std::map<int, cplx> grades;  // grade -> value of L^(j) at (q, q', t)
  cplx total{};
  cplx delta{};  // total(j) - total(j-1)
  double error = 0.0;
};

// Scalar window bubble B^[a,b](t) by nested quadrature.
inline BubbleResult window_bubble(const DispersionModel& model, const ScaleSystem& s,
                                  const Counterterm& v, const Momentum& t, int a, int b,
                                  double abs_tol = 1e-6) {
  if (a > b) return {};
  if (a < 1) throw ScaleError("window scales start at 1");
  // support of C^(>=a): |i k0 - e| < sqrt(2M) M^{-a}
  double cap = std::sqrt(2.0 * s.M) * s.Mpow(-a);
  detail::BubbleDomain d;
  d.k0_real_line = false;
  double lo0 = std::min(0.0, t.k0) - cap, hi0 = std::max(0.0, t.k0) + cap;
  // k0 support is symmetric handling in the engine; cover [-K, K] with K the larger extent
  double K = std::max(std::abs(lo0), std::abs(hi0));
  d.k0_lo = 0.0;
  d.k0_hi = K;
  for (double x : {t.k0, cap, -cap, t.k0 + cap, t.k0 - cap})
    if (x != 0.0 && std::abs(x) < K) d.k0_breaks.push_back(x);
  d.theta_breaks = detail::circle_pair_angles(model, {0, 0}, -t.k, 0.0, 2.0 * pi);
  if (norm(t.k) > 0) {
    double w = DispersionModel::wrap_angle(std::atan2(-t.k.y, -t.k.x));
    if (w > 0 && w < 2.0 * pi) d.theta_breaks.push_back(w);
  }
  std::sort(d.theta_breaks.begin(), d.theta_breaks.end());
  d.radial = [&model, t, cap, &s, b](double th) {
    detail::RadialRange rr;
    Vec2 u = polar(1.0, th);
    // union of the two annuli |e(p)| <= cap and |e(p - t)| <= cap along the ray
    auto [lo, hi] = model.annulus_radii(th, cap);
    double lo2 = lo, hi2 = hi;
    auto r1 = detail::ray_level_roots(model, -t.k, u, -cap, hi + 2.0 * norm(t.k) + 1.0);
    auto r2 = detail::ray_level_roots(model, -t.k, u, cap, hi + 2.0 * norm(t.k) + 1.0);
    for (double r : r1) lo2 = std::min(lo2, r), hi2 = std::max(hi2, r);
    for (double r : r2) lo2 = std::min(lo2, r), hi2 = std::max(hi2, r);
    rr.lo = std::max(0.0, std::min(lo, lo2));
    rr.hi = std::max(hi, hi2);
    double inner_cap = std::sqrt(2.0 * s.M) * s.Mpow(-(b + 1));
    for (Vec2 c : {Vec2{0, 0}, -t.k})
      for (double lev : {-cap, 0.0, cap, -inner_cap, inner_cap})
        for (double r : detail::ray_level_roots(model, c, u, lev, rr.hi + 1.0))
          if (r > rr.lo && r < rr.hi) rr.breaks.push_back(r);
    std::sort(rr.breaks.begin(), rr.breaks.end());
    return rr;
  };
  auto g = [&](double k0, Vec2 p) -> cplx {
    Momentum Q{k0 - t.k0, p - t.k};
    double ep = model.e(p), eq = model.e(Q.k);
    cplx A = propagator_from_energy(s, v, k0, ep, Which::tail(a));
    if (A == cplx{}) return 0.0;
    cplx B = propagator_from_energy(s, v, Q.k0, eq, Which::tail(a));
    cplx out = A * B;
    cplx A2 = propagator_from_energy(s, v, k0, ep, Which::tail(b + 1));
    if (A2 != cplx{}) out -= A2 * propagator_from_energy(s, v, Q.k0, eq, Which::tail(b + 1));
    return out;
  };
  detail::EngineOptions o;
  o.abs_tol = abs_tol;
  return detail::integrate_bubble(g, d, o);
}

inline std::vector<IRProbeRow> infrared_probe(const DispersionModel& model, const ScaleSystem& s,
                                              const Counterterm& v, cplx g, const Momentum& t,
                                              int j_lo, int j_hi, int R, double abs_tol = 1e-6) {
  if (t.k0 == 0.0 && t.k.x == 0.0 && t.k.y == 0.0)
    throw DomainError("the infrared limit is only claimed for transfer t != 0");
  if (R < 1) throw DomainError("truncation R must be at least 1");
  if (R > 2) throw DomainError("the infrared probe is implemented up to grade 2");
  if (j_lo < 1 || j_hi < j_lo) throw ScaleError("bad scale range");
  std::vector<IRProbeRow> rows;
  for (int j = j_lo; j <= j_hi; ++j) {
    IRProbeRow row;
    row.j = j;
    if (g != cplx{} && R >= 2 && j - 1 >= 2) {
      auto B = window_bubble(model, s, v, t, 2, j - 1, abs_tol);
      row.grades[2] = g * g * B.value;
      row.error = std::abs(g * g) * B.estimated_error;
    }
    for (const auto& [gr, val] : row.grades) row.total += val;
    if (!rows.empty()) row.delta = row.total - rows.back().total;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace phl
