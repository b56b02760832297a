#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "phladder/acceptance.hpp"
#include "phladder/bubbles.hpp"
#include "phladder/config.hpp"
#include "phladder/csv.hpp"
#include "phladder/kernels.hpp"
#include "phladder/ladders.hpp"
#include "phladder/propagators.hpp"
#include "phladder/sectors.hpp"

using namespace phl;
using nlohmann::json;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// "a..b" or a single integer
std::pair<int, int> parse_range(const std::string& s) {
  auto dots = s.find("..");
  try {
    std::size_t pos = 0;
    if (dots == std::string::npos) {
      int v = std::stoi(s, &pos);
      if (pos != s.size()) throw UsageError("bad range " + s);
      return {v, v};
    }
    std::string a = s.substr(0, dots), b = s.substr(dots + 2);
    int lo = std::stoi(a, &pos);
    if (pos != a.size()) throw UsageError("bad range " + s);
    int hi = std::stoi(b, &pos);
    if (pos != b.size()) throw UsageError("bad range " + s);
    if (hi < lo) throw UsageError("empty range " + s);
    return {lo, hi};
  } catch (const std::logic_error&) {
    throw UsageError("bad range " + s);
  }
}

// Global options; values given on the command line override the config file.
struct Globals {
  std::string config_path;
  std::optional<double> M, aleph, bump, mass, mu, tol;
  std::optional<int> r0, re;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> dispersion, output;

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    if (M) cfg.scales.M = *M;
    if (aleph) cfg.scales.aleph = *aleph;
    if (bump) cfg.scales.bump_sharpness = *bump;
    if (r0) cfg.scales.r0 = *r0;
    if (re) cfg.scales.re = *re;
    if (mass) cfg.mass = *mass;
    if (mu) cfg.mu = *mu;
    if (tol) cfg.tol = *tol;
    if (seed) cfg.seed = *seed;
    if (dispersion) cfg.dispersion_file = *dispersion;
    if (output) cfg.output = *output;
    try {
      cfg.scales.validate();
    } catch (const DomainError& e) {
      throw UsageError(e.what());
    }
    return cfg;
  }
};

class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary);
      if (!file_) throw UsageError("cannot open output file " + path);
    }
  }
  std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::ofstream file_;
};

std::string num(double x) { return csv_number(x); }
std::string inum(long long x) { return std::to_string(x); }

void add_globals(CLI::App& app, Globals& g) {
  app.add_option("--config", g.config_path, "flat key = value config file")->check(CLI::ExistingFile);
  app.add_option("--M", g.M, "scale parameter M");
  app.add_option("--aleph", g.aleph, "sector exponent");
  app.add_option("--r0", g.r0, "frequency derivative cap");
  app.add_option("--re", g.re, "spatial derivative cap");
  app.add_option("--bump-sharpness", g.bump, "mollifier sharpness");
  app.add_option("--mass", g.mass, "mass of the circular model");
  app.add_option("--mu", g.mu, "chemical potential of the circular model");
  app.add_option("--dispersion", g.dispersion, "tabulated dispersion file")->check(CLI::ExistingFile);
  app.add_option("--output,-o", g.output, "output file (default stdout)");
  app.add_option("--seed", g.seed, "random seed");
  app.add_option("--tol", g.tol, "absolute quadrature tolerance");
}

// ---------------------------------------------------------------------------

struct BubbleArgs {
  double t0 = 0, tx = 0, ty = 0;
  std::string mode = "closed";
  std::optional<int> i, j;
  std::int64_t samples = 100000;
};

int run_bubble(const RunConfig& cfg, const BubbleArgs& a) {
  auto model = cfg.model();
  const auto& s = cfg.scales;
  Counterterm v;
  BubbleResult r;
  if (a.mode == "closed") {
    if (!model.is_circular()) throw UsageError("closed mode needs the circular model");
    r.value = closed_form_ph_bubble(a.t0, std::hypot(a.tx, a.ty), model.mass(), model.kf());
  } else if (a.mode == "quad") {
    Momentum p1{0.5 * a.t0, {0.5 * a.tx, 0.5 * a.ty}}, p2{-0.5 * a.t0, {-0.5 * a.tx, -0.5 * a.ty}};
    PhCutoff cut = PhCutoff::none_with_box();
    if (a.j) cut = PhCutoff::shells(a.i.value_or(0), *a.j);
    r = quad_ph_bubble(model, s, v, p1, p2, cut, cfg.tol);
  } else if (a.mode == "model") {
    if (a.t0 != 0.0) throw UsageError("model mode has zero frequency transfer; drop --t0");
    if (!a.j) throw UsageError("model mode needs --j");
    r = model_bubble(model, s, v, Momentum{0, {a.tx, a.ty}}, a.i.value_or(0), *a.j,
                     BubbleWeight::one(), cfg.tol);
  } else if (a.mode == "b4") {
    // columns t0, tx, ty carry (a, b, w)
    r = order_limit_bubble_numeric(a.t0, a.tx, a.ty, cfg.tol);
  } else {
    if (!a.j) throw UsageError("overlap mode needs --j");
    auto o = overlap_volume(model, s, {a.tx, a.ty}, *a.j, a.samples, cfg.seed);
    r.value = o.value;
    r.estimated_error = o.ci_halfwidth;
    r.evaluations = o.samples;
  }
  Output out(cfg.output);
  CsvWriter w(out.stream(), {"mode", "t0", "tx", "ty", "value_re", "value_im", "err", "evals"});
  w.row({a.mode, num(a.t0), num(a.tx), num(a.ty), num(r.value.real()), num(r.value.imag()),
         num(r.estimated_error), inum(r.evaluations)});
  return 0;
}

struct ModelBubbleArgs {
  double tx = 0, ty = 0;
  int i = 0;
  std::string j = "3..5";
  bool bump = false;
};

int run_model_bubble(const RunConfig& cfg, const ModelBubbleArgs& a) {
  auto model = cfg.model();
  const auto& s = cfg.scales;
  auto [lo, hi] = parse_range(a.j);
  BubbleWeight u = a.bump ? BubbleWeight::bump(s, 0.0, s.sector_length(a.i + 1)) : BubbleWeight::one();
  Output out(cfg.output);
  CsvWriter w(out.stream(), {"i", "j", "tx", "ty", "value_re", "value_im", "err", "delta"});
  std::optional<cplx> prev;
  for (int j = lo; j <= hi; ++j) {
    auto r = model_bubble(model, s, {}, Momentum{0, {a.tx, a.ty}}, a.i, j, u, cfg.tol);
    double delta = prev ? std::abs(r.value - *prev) : 0.0;
    w.row({inum(a.i), inum(j), num(a.tx), num(a.ty), num(r.value.real()), num(r.value.imag()),
           num(r.estimated_error), prev ? num(delta) : ""});
    prev = r.value;
  }
  return 0;
}

struct SectorArgs {
  std::string m = "2..6";
  std::vector<double> tau{1.2, 0.0};
  std::optional<double> eps;
  double delta_F = acceptance::unit_circle_delta_F;
};

int run_sector_count(const RunConfig& cfg, const SectorArgs& a) {
  auto model = cfg.model();
  const auto& s = cfg.scales;
  auto [lo, hi] = parse_range(a.m);
  if (lo < 1) throw UsageError("scales start at 1");
  Output out(cfg.output);
  CsvWriter w(out.stream(), {"m", "l_m", "tau_x", "tau_y", "eps", "N", "bound_rhs"});
  for (int m = lo; m <= hi; ++m) {
    double eps = a.eps.value_or(s.Mpow(-m));
    auto row = acceptance::sector_count_row(model, s, m, {a.tau[0], a.tau[1]}, eps, a.delta_F);
    w.row({inum(m), num(row.l), num(a.tau[0]), num(a.tau[1]), num(eps), inum(row.N), num(row.bound_rhs)});
  }
  return 0;
}

struct ScalingArgs {
  std::string j = "1..4";
  std::string norm = "L1";
  NormGrid grid;
};

int run_propagator_scaling(const RunConfig& cfg, const ScalingArgs& a) {
  auto model = cfg.model();
  auto [lo, hi] = parse_range(a.j);
  if (hi <= lo) throw UsageError("need at least two scales");
  NormKind kind = a.norm == "L1" ? NormKind::L1 : NormKind::Linf;
  auto fit = fit_norm_scaling(model, cfg.scales, {}, lo, hi, kind, {0, 0, 0}, a.grid);
  Output out(cfg.output);
  CsvWriter w(out.stream(), {"j", "norm_value", "fitted_slope"});
  for (const auto& smp : fit.samples) w.row({inum(smp.j), num(smp.norm), num(fit.slope)});
  return 0;
}

struct OverlapArgs {
  double px = 0.5, py = 0.0;
  std::string j = "2..5";
  std::int64_t samples = 1000000;
};

int run_overlap(const RunConfig& cfg, const OverlapArgs& a) {
  auto model = cfg.model();
  auto [lo, hi] = parse_range(a.j);
  if (hi <= lo) throw UsageError("need at least two scales");
  auto fit = fit_overlap_slope(model, cfg.scales, {a.px, a.py}, lo, hi, a.samples, cfg.seed);
  Output out(cfg.output);
  CsvWriter w(out.stream(), {"j", "volume", "ci_halfwidth", "hits", "samples", "fitted_slope", "slope_upper"});
  for (std::size_t k = 0; k < fit.scales.size(); ++k) {
    const auto& v = fit.volumes[k];
    w.row({inum(fit.scales[k]), num(v.value), num(v.ci_halfwidth), inum(v.hits), inum(v.samples),
           num(fit.fit.slope), num(fit.slope_upper)});
  }
  return 0;
}

struct LadderArgs {
  int j = 4;
  int grade = 3;
  std::string backend = "abstract";
  double q0 = 0, qx = 0, qy = 0, t0 = 0, tx = 0, ty = 0;
  int n = 4;  // even, so no node sits on k0 = 0
  double width = 0.1;
  double coupling = 0.5;
};

json cjson(cplx z) { return json::array({z.real(), z.imag()}); }

template <class K>
json ladder_json(const std::vector<Series<K>>& L, int J, const std::function<cplx(const K&)>& at) {
  json out;
  json grades = json::array();
  for (const auto& [g, k] : L[static_cast<std::size_t>(J)].terms)
    grades.push_back({{"grade", g}, {"value", cjson(at(k))}, {"max_abs", max_abs(k)}});
  out["grades"] = grades;
  json table = json::array();
  std::optional<cplx> prev;
  for (int j = 0; j <= J; ++j) {
    cplx total{};
    for (const auto& [g, k] : L[static_cast<std::size_t>(j)].terms) total += at(k);
    json row{{"j", j}, {"value", cjson(total)}};
    if (prev) {
      row["delta"] = cjson(total - *prev);
      row["abs_delta"] = std::abs(total - *prev);
    }
    table.push_back(row);
    prev = total;
  }
  out["cauchy"] = table;
  return out;
}

std::size_t nearest_node(const MomentumLattice& lat, double k0, double xi, double eta) {
  const double x[3] = {k0, xi, eta};
  int c[3];
  for (int d = 0; d < 3; ++d) {
    std::size_t u = static_cast<std::size_t>(d);
    int i = static_cast<int>(std::lround((x[d] - lat.origin[u]) / lat.spacing[u]));
    if (i < 0 || i >= lat.n[u]) throw UsageError("external momentum lies outside the ladder lattice");
    c[d] = i;
  }
  return lat.index(c[0], c[1], c[2]);
}

int run_ladder(const RunConfig& cfg, const LadderArgs& a) {
  if (a.j < 0) throw UsageError("--j must be nonnegative");
  if (a.grade < 1) throw UsageError("--grade must be at least 1");
  json out{{"backend", a.backend}, {"j", a.j}, {"R", a.grade}, {"seed", cfg.seed}};
  if (a.backend == "abstract") {
    Rng rng(cfg.seed);
    auto sys = random_abstract_system(3, std::max(a.j, 2), a.grade, rng);
    auto L = compound_ladders_recursive(sys, a.j);
    std::function<cplx(const AbstractKernel4&)> at = [](const AbstractKernel4& k) { return k(0, 0, 0, 0); };
    out.update(ladder_json(L, a.j, at));
    out["entry"] = json::array({0, 0, 0, 0});
  } else {
    auto model = cfg.model();
    MomentumLattice lat = ladder_lattice(model, a.n, a.width);
    GridBubbleFamily fam{model, cfg.scales, {}, lat};
    cplx g = a.coupling;
    std::map<int, GridKernel4> F;
    F.emplace(2, GridKernel4::from_function(lat, 1, [g](const Momentum&, const Momentum&, const Momentum&) { return g; }));
    auto sys = grid_system(fam, F, a.grade);
    auto L = compound_ladders_recursive(sys, a.j);
    // legs (q + t, q, q' + t) with the fourth leg q'; coordinates (k0, normal, tangent) from the lattice centre
    double qp0 = 0, qpx = 0, qpy = 0;
    std::size_t k1 = nearest_node(lat, a.q0 + a.t0, a.qx + a.tx, a.qy + a.ty);
    std::size_t k2 = nearest_node(lat, a.q0, a.qx, a.qy);
    std::size_t k3 = nearest_node(lat, qp0 + a.t0, qpx + a.tx, qpy + a.ty);
    std::function<cplx(const GridKernel4&)> at = [=](const GridKernel4& k) { return k(k1, k2, k3); };
    out.update(ladder_json(L, a.j, at));
    out["coupling"] = cjson(g);
    out["lattice"] = {{"n", a.n}, {"half_width", a.width}};
  }
  out["q"] = json::array({a.q0, a.qx, a.qy});
  out["t"] = json::array({a.t0, a.tx, a.ty});
  Output o(cfg.output);
  o.stream() << out.dump(2) << "\n";
  return 0;
}

struct VerifyArgs {
  bool quick = false;
  std::vector<int> ids;
};

int run_verify(const VerifyArgs& a) {
  std::vector<int> ids = !a.ids.empty() ? a.ids : a.quick ? quick_criteria() : all_criteria();
  std::vector<std::string> failed;
  std::printf("%-4s %-42s %-10s %8s  %s\n", "id", "criterion", "result", "seconds", "detail");
  for (int id : ids) {
    auto r = run_criterion(id);
    std::printf("%-4d %-42s %-10s %8.1f  %s\n", r.id, r.name.c_str(), verdict_name(r.verdict),
                r.seconds, r.detail.c_str());
    std::fflush(stdout);
    if (r.blocking_failure()) failed.push_back(std::to_string(r.id) + " (" + r.name + ")");
  }
  if (!failed.empty()) {
    std::string msg;
    for (const auto& f : failed) msg += (msg.empty() ? "" : ", ") + f;
    std::fprintf(stderr, "acceptance failed: criterion %s\n", msg.c_str());
    return 1;
  }
  return 0;
}

struct KernelArgs {
  std::string backend = "abstract";
  std::string path;
  int n = 2;
  int grade = 1;
};

int run_kernel_dump(const RunConfig& cfg, const KernelArgs& a) {
  std::ofstream os(a.path, std::ios::binary);
  if (!os) throw UsageError("cannot open " + a.path);
  Rng rng(cfg.seed);
  if (a.backend == "abstract") {
    write_kernel(os, AbstractKernel4::random(a.n, a.grade, rng));
  } else {
    auto model = cfg.model();
    write_kernel(os, GridKernel4::random(ladder_lattice(model, a.n, 0.25), a.grade, rng));
  }
  return 0;
}

int run_kernel_load(const RunConfig& cfg, const KernelArgs& a) {
  std::ifstream is(a.path, std::ios::binary);
  if (!is) throw UsageError("cannot open " + a.path);
  auto h = read_kernel_header(is);
  Output out(cfg.output);
  CsvWriter w(out.stream(), {"backend", "grade", "dims", "count", "max_abs"});
  if (h.backend == Backend::abstract) {
    auto K = read_abstract_body(is, h);
    w.row({"abstract", inum(K.grade), inum(K.n), inum(static_cast<long long>(K.v.size())), num(max_abs(K))});
  } else {
    auto K = read_grid_body(is, h);
    std::string dims = std::to_string(K.lat.n[0]) + "x" + std::to_string(K.lat.n[1]) + "x" +
                       std::to_string(K.lat.n[2]);
    w.row({"grid", inum(K.grade), dims, inum(static_cast<long long>(K.v.size())), num(max_abs(K))});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"particle-hole ladder numerics"};
  app.require_subcommand(1);
  Globals g;
  add_globals(app, g);

  BubbleArgs ba;
  auto* bubble = app.add_subcommand("bubble", "particle-hole bubble at one transfer");
  bubble->add_option("--t0", ba.t0);
  bubble->add_option("--tx", ba.tx);
  bubble->add_option("--ty", ba.ty);
  bubble->add_option("--mode", ba.mode)->check(CLI::IsMember({"closed", "quad", "model", "b4", "overlap"}));
  bubble->add_option("--i", ba.i);
  bubble->add_option("--j", ba.j);
  bubble->add_option("--samples", ba.samples)->check(CLI::Range(std::int64_t{10000}, std::int64_t{100000000}));
  bubble->add_option("--tol", g.tol);
  bubble->add_option("--seed", g.seed);

  ModelBubbleArgs ma;
  auto* mbub = app.add_subcommand("model-bubble", "factorized-cutoff bubble as a sequence in j");
  mbub->add_option("--tx", ma.tx);
  mbub->add_option("--ty", ma.ty);
  mbub->add_option("--i", ma.i);
  mbub->add_option("--j", ma.j, "scale or range a..b");
  mbub->add_flag("--bump", ma.bump, "restrict to an angular bump around polar angle 0");
  mbub->add_option("--tol", g.tol);

  SectorArgs sa;
  auto* sec = app.add_subcommand("sector-count", "sector pairs whose difference meets a disc");
  sec->add_option("--m", sa.m, "scale or range a..b");
  sec->add_option("--tau", sa.tau)->expected(2);
  sec->add_option("--eps", sa.eps, "disc radius (default M^-m)");
  sec->add_option("--delta-F", sa.delta_F, "threshold between the two bound shapes");

  ScalingArgs pa;
  auto* prop = app.add_subcommand("propagator-scaling", "position-space norms of sectorized propagators");
  prop->add_option("--j", pa.j, "range a..b");
  prop->add_option("--norm", pa.norm)->check(CLI::IsMember({"L1", "Linf"}));
  prop->add_option("--n0", pa.grid.n0);
  prop->add_option("--ne", pa.grid.n_normal);
  prop->add_option("--ntheta", pa.grid.n_tangent);

  OverlapArgs oa;
  auto* ov = app.add_subcommand("overlap-volume", "Monte Carlo volume of the overlapping-loop region");
  ov->add_option("--px", oa.px);
  ov->add_option("--py", oa.py);
  ov->add_option("--j", oa.j, "range a..b");
  ov->add_option("--samples", oa.samples)->check(CLI::Range(std::int64_t{10000}, std::int64_t{100000000}));
  ov->add_option("--seed", g.seed);

  LadderArgs la;
  auto* lad = app.add_subcommand("ladder", "compound ladders with a Cauchy table");
  lad->add_option("--j", la.j);
  lad->add_option("--grade", la.grade, "truncation R");
  lad->add_option("--backend", la.backend)->check(CLI::IsMember({"abstract", "grid"}));
  lad->add_option("--seed", g.seed);
  lad->add_option("--q0", la.q0);
  lad->add_option("--qx", la.qx);
  lad->add_option("--qy", la.qy);
  lad->add_option("--t0", la.t0);
  lad->add_option("--tx", la.tx);
  lad->add_option("--ty", la.ty);
  lad->add_option("--n", la.n, "grid nodes per axis");
  lad->add_option("--width", la.width, "grid half width");
  lad->add_option("--coupling", la.coupling, "local rung F^(2)");

  VerifyArgs va;
  auto* ver = app.add_subcommand("verify", "run the acceptance suite");
  ver->add_flag("--quick", va.quick, "trivial and algebraic criteria only");
  ver->add_option("--criterion", va.ids, "criterion ids to run")->check(CLI::Range(0, 10));

  KernelArgs ka;
  auto* ker = app.add_subcommand("kernel", "binary kernel container");
  ker->require_subcommand(1);
  auto* dump = ker->add_subcommand("dump", "write a random kernel");
  dump->add_option("--backend", ka.backend)->check(CLI::IsMember({"abstract", "grid"}));
  dump->add_option("--n", ka.n)->check(CLI::Range(1, 64));
  dump->add_option("--grade", ka.grade);
  dump->add_option("--out", ka.path)->required();
  dump->add_option("--seed", g.seed);
  auto* load = ker->add_subcommand("load", "summarize a kernel container");
  load->add_option("--in", ka.path)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (ver->parsed()) return run_verify(va);
    RunConfig cfg = g.resolve();
    if (bubble->parsed()) return run_bubble(cfg, ba);
    if (mbub->parsed()) return run_model_bubble(cfg, ma);
    if (sec->parsed()) return run_sector_count(cfg, sa);
    if (prop->parsed()) return run_propagator_scaling(cfg, pa);
    if (ov->parsed()) return run_overlap(cfg, oa);
    if (lad->parsed()) return run_ladder(cfg, la);
    if (dump->parsed()) return run_kernel_dump(cfg, ka);
    if (load->parsed()) return run_kernel_load(cfg, ka);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::domain_error& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 2;
}
