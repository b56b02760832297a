#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace phl {

using cplx = std::complex<double>;

inline constexpr double pi = std::numbers::pi;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator-() const { return {-x, -y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator/(double s) const { return {x / s, y / s}; }
  bool operator==(const Vec2&) const = default;
};

inline Vec2 operator*(double s, Vec2 v) { return v * s; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline Vec2 polar(double r, double theta) { return {r * std::cos(theta), r * std::sin(theta)}; }

// Frequency k0 and spatial momentum k.
struct Momentum {
  double k0 = 0.0;
  Vec2 k;

  Momentum operator+(const Momentum& o) const { return {k0 + o.k0, k + o.k}; }
  Momentum operator-(const Momentum& o) const { return {k0 - o.k0, k - o.k}; }
};

// <k,x>_- = -k0 x0 + k1 x1 + k2 x2
inline double minkowski_pairing(const Momentum& k, const Momentum& x) {
  return -k.k0 * x.k0 + k.k.x * x.k.x + k.k.y * x.k.y;
}

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ScaleError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct SingularityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ChannelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CapError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ResolutionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double a = 0.0, double b = 1.0) {
  return std::uniform_real_distribution<double>(a, b)(rng);
}

inline double gaussian(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

inline cplx complex_gaussian(Rng& rng) {
  double re = gaussian(rng);
  double im = gaussian(rng);
  return {re, im};
}

// Worker count: hardware concurrency, capped by LADDER_RG_THREADS.
inline unsigned thread_count() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("LADDER_RG_THREADS")) {
    char* end = nullptr;
    long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return n;
}

// Runs f(i) for i in [0, n). Each index is handled exactly once, so writing
// results into per-index slots keeps the output independent of thread count.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& f) {
  unsigned workers = std::min<std::size_t>(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) f(i);
    });
  }
  for (auto& t : pool) t.join();
}

// Least-squares slope and intercept of y against x.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y,
                        const std::vector<double>& w = {}) {
  if (x.size() != y.size() || x.size() < 2) throw ShapeError("fit_line needs two or more points");
  double sw = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double wi = w.empty() ? 1.0 : w[i];
    sw += wi;
    sx += wi * x[i];
    sy += wi * y[i];
  }
  double mx = sx / sw, my = sy / sw;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double wi = w.empty() ? 1.0 : w[i];
    sxx += wi * (x[i] - mx) * (x[i] - mx);
    sxy += wi * (x[i] - mx) * (y[i] - my);
  }
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (!w.empty()) {
    // weights are inverse variances
    f.slope_stderr = std::sqrt(1.0 / sxx);
  } else if (x.size() > 2) {
    double rss = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double r = y[i] - f.intercept - f.slope * x[i];
      rss += r * r;
    }
    f.slope_stderr = std::sqrt(rss / static_cast<double>(x.size() - 2) / sxx);
  }
  return f;
}

}  // namespace phl
