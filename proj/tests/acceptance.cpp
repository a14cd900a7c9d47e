// Acceptance suite: one line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "support.hpp"
#include "vman/cli.hpp"
#include "vman/fixtures.hpp"

using namespace vman;

namespace {

const IndexSet kEmpty;
const IndexSet kOne = IndexSet::of({1});
constexpr double kPi = std::numbers::pi;

Expression x(int i) { return Expression::variable(i); }
Expression k(double v) { return Expression::constant(v); }

double bump_value(double t) { return std::fabs(t) < 1.0 ? std::exp(1.0 - 1.0 / (1.0 - t * t)) : 0.0; }

template <class F>
double simpson(F f, double a, double b, int n = 20000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

QuadratureSpec grid(std::int64_t samples) {
  QuadratureSpec q;
  q.sample_count = samples;
  return q;
}

struct Outcome {
  bool passed = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      passed = false;
      detail += (detail.empty() ? "" : "; ") + std::string("FAILED ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

FixedComponent everything(const VirtualComplex& c) {
  FixedComponent all;
  for (IndexSet I : c.chart_indices()) {
    FixedChart f;
    f.region = c.chart(I);
    for (int i = 0; i < c.dim(I); ++i) f.embedding.push_back(x(i));
    all.charts[I] = f;
  }
  return all;
}

VirtualFormFamily line_plane_zeta(const ChartForm& theta) {
  VirtualFormFamily z;
  z.theta[{kEmpty, kOne}] = theta;
  const ChartForm base = ChartForm::top(1, bump(x(0)));
  z.forms[kEmpty] = base;
  z.forms[kOne] = wedge(pullback({x(0)}, 3, base), theta);
  return z;
}

EquivariantForm unit_family() {
  return {{kEmpty, ChartForm::function(1, k(1.0))}, {kOne, ChartForm::function(3, k(1.0))}};
}

// 1. from_cover outputs are virtual manifolds; single-field mutations are caught.
Outcome axiom_suite() {
  Outcome out;
  std::mt19937_64 rng(2024);
  int built = 0, attempts = 0, failing = 0;
  std::vector<VirtualComplex> with_overlaps;
  while (built < 50 && attempts < 500) {
    ++attempts;
    const int dim = 1 + built % 2;
    const int n = 1 + built % 4;
    const auto cover = test::random_cover(rng, dim, n);
    VirtualComplex c;
    try {
      c = from_cover(dim, cover, 0.75);
    } catch (const StructureError&) {
      continue;
    }
    ++built;
    const bool ok = validate_patchable(c, 64).ok() && validate_virtual(c, 64).ok();
    if (!ok) ++failing;
    if (!c.overlaps().empty()) with_overlaps.push_back(std::move(c));
  }
  out.require(built == 50, "built " + std::to_string(built) + " of 50 covers");
  out.require(failing == 0, std::to_string(failing) + " covers failed validation");
  out.note(std::to_string(built) + " covers valid");

  using Mutation = std::function<VirtualComplex(const VirtualComplex&)>;
  const std::vector<std::pair<std::string, Mutation>> mutations{
      {"rank", [](const VirtualComplex& c) { return test::edit_overlap(c, 0, [](Overlap& o) { o.rank += 1; }); }},
      {"projection",
       [](const VirtualComplex& c) {
         return test::edit_overlap(c, 0, [](Overlap& o) { o.projection[0] = o.projection[0] + k(0.05); });
       }},
      {"fiber_param",
       [](const VirtualComplex& c) {
         return test::edit_overlap(c, 0, [](Overlap& o) { o.fiber_param[0] = o.fiber_param[0] * k(1.05); });
       }},
      {"region_in_small",
       [](const VirtualComplex& c) {
         return test::edit_overlap(c, 0, [](Overlap& o) { o.region_in_small = o.region_in_small.homothety(0.8); });
       }},
      {"region_in_big",
       [](const VirtualComplex& c) {
         return test::edit_overlap(c, 0, [](Overlap& o) { o.region_in_big = o.region_in_big.homothety(0.8); });
       }},
  };
  int detected = 0;
  std::string missed;
  for (int m = 0; m < 20; ++m) {
    const VirtualComplex& base = with_overlaps[m % with_overlaps.size()];
    const auto& [name, mutate] = mutations[m % mutations.size()];
    bool caught = false;
    try {
      const VirtualComplex bad = mutate(base);
      caught = !validate_patchable(bad, 64).ok() || !validate_virtual(bad, 64).ok();
    } catch (const StructureError&) {
      caught = true;
    }
    if (caught)
      ++detected;
    else
      missed += " " + name + "#" + std::to_string(m);
  }
  out.require(detected == 20, "mutations missed:" + missed);
  out.note(std::to_string(detected) + "/20 mutations detected");
  return out;
}

// 2. Equivalence is reflexive and symmetric; transitivity on constructed triples.
Outcome equivalence_suite() {
  Outcome out;
  const double tol = 1e-8;
  const VirtualComplex c = fixtures::line_plane();
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto random_point = [&]() {
    if (u(rng) < 0.0) return ChartPoint{kEmpty, {2.0 * u(rng)}};
    return ChartPoint{kOne, {1.5 * u(rng), u(rng), u(rng)}};
  };
  int violations = 0, equivalent_pairs = 0;
  for (int i = 0; i < 1000; ++i) {
    const ChartPoint a = random_point();
    ChartPoint b = random_point();
    if (i % 2 == 0) {
      // equivalent partner through the bundle chart
      const double t = 0.99 * u(rng);
      b = ChartPoint{kEmpty, {t}};
      const ChartPoint lifted{kOne, c.lift(kOne, kEmpty, Point{t}, Point{u(rng), u(rng)})};
      if (!equivalent(c, lifted, b, tol)) ++violations;
      if (!equivalent(c, lifted, lifted, tol)) ++violations;
      if (equivalent(c, lifted, b, tol) != equivalent(c, b, lifted, tol)) ++violations;
      ++equivalent_pairs;
    }
    if (!equivalent(c, a, a, tol)) ++violations;
    if (equivalent(c, a, b, tol) != equivalent(c, b, a, tol)) ++violations;
  }
  int triples = 0;
  for (int i = 0; i < 200; ++i) {
    const double t = 0.99 * u(rng);
    const ChartPoint a{kOne, c.lift(kOne, kEmpty, Point{t}, Point{u(rng), u(rng)})};
    const ChartPoint b{kEmpty, {t}};
    const ChartPoint d{kOne, c.lift(kOne, kEmpty, Point{t}, Point{u(rng), u(rng)})};
    if (!equivalent(c, a, b, tol) || !equivalent(c, b, d, tol)) {
      ++violations;
      continue;
    }
    ++triples;
    if (!equivalent(c, a, d, tol)) ++violations;
  }
  out.require(violations == 0, std::to_string(violations) + " violations");
  out.note("1000 pairs (" + std::to_string(equivalent_pairs) + " constructed equivalent), " + std::to_string(triples) +
           " triples, " + std::to_string(violations) + " violations at tol 1e-8");
  return out;
}

// 3. Inclusion-exclusion and partition of unity against direct quadrature and the Thom isomorphism.
Outcome integration_suite() {
  Outcome out;
  const QuadratureSpec q;
  {
    const VirtualComplex c = fixtures::interval_cover();
    const ChartForm z = ChartForm::top(1, bump((x(0) - k(0.5)) / k(0.45)));
    VirtualFormFamily f;
    for (IndexSet I : c.chart_indices()) f.forms[I] = z;
    const double direct = chart_integral(fixtures::unit_interval().chart(kEmpty), z, q).value;
    const double ie = integrate_incl_excl(c, f, q).value;
    const double pu = integrate_pou(c, f, build_pou(c), q).value;
    out.require(std::fabs(ie - pu) <= 2e-6, "interval |incl_excl - pou| = " + fmt(std::fabs(ie - pu)));
    out.require(std::fabs(ie - direct) <= 1e-6, "interval incl_excl vs direct " + fmt(std::fabs(ie - direct)));
    out.require(std::fabs(pu - direct) <= 1e-6, "interval pou vs direct " + fmt(std::fabs(pu - direct)));
    out.note("interval: |ie-pu| " + fmt(std::fabs(ie - pu)) + ", |ie-direct| " + fmt(std::fabs(ie - direct)) +
             ", |pou-direct| " + fmt(std::fabs(pu - direct)));
  }
  {
    const VirtualComplex c = fixtures::line_plane();
    const double base = simpson(bump_value, -1.0, 1.0);
    const VirtualFormFamily z = line_plane_zeta(thom_form_on(3, {1, 2}, 0.5));
    const double ie = integrate_incl_excl(c, z, q).value;
    const double pu = integrate_pou(c, z, build_pou(c), q).value;
    out.require(std::fabs(ie - base) <= 1e-3, "line-plane incl_excl vs base " + fmt(std::fabs(ie - base)));
    out.require(std::fabs(pu - base) <= 1e-3, "line-plane pou vs base " + fmt(std::fabs(pu - base)));
    out.note("line-plane: |ie-base| " + fmt(std::fabs(ie - base)) + ", |pou-base| " + fmt(std::fabs(pu - base)));
  }
  return out;
}

// 4. Stokes with boundary, and closed manifolds.
Outcome stokes_suite() {
  Outcome out;
  const QuadratureSpec q;
  {
    VirtualFormFamily z;
    z.forms[kEmpty] = ChartForm::function(1, sin(x(0)) + x(0) * x(0));
    const StokesResult s = stokes_check(fixtures::unit_interval(), z, q);
    out.require(s.residual <= 1e-6, "interval residual " + fmt(s.residual));
    const double exact = std::sin(1.0) + 1.0;
    out.require(std::fabs(s.rhs.value - exact) <= 1e-9, "interval boundary value");
    out.note("interval " + fmt(s.residual));
  }
  {
    const VirtualComplex c = fixtures::interval_cover();
    VirtualFormFamily z;
    for (IndexSet I : c.chart_indices()) z.forms[I] = ChartForm::function(1, x(0) * x(0) * x(0));
    const StokesResult s = stokes_check(c, z, q);
    out.require(s.residual <= 1e-6, "interval cover residual " + fmt(s.residual));
    out.note("interval cover " + fmt(s.residual));
  }
  {
    VirtualFormFamily z;
    const ChartForm xdy = x(0) * ChartForm::differential(2, 1);
    z.forms[kEmpty] = pullback({x(0) * cos(x(1)), x(0) * sin(x(1))}, 2, xdy);
    const StokesResult s = stokes_check(fixtures::polar_disk(), z, q);
    out.require(s.residual <= 1e-6, "disk residual " + fmt(s.residual));
    out.require(std::fabs(s.lhs.value - kPi) <= 1e-6, "disk area");
    out.note("disk " + fmt(s.residual));
  }
  {
    VirtualFormFamily z;
    z.forms[kEmpty] = cos(x(0)) * ChartForm::differential(2, 1) + sin(x(1)) * ChartForm::differential(2, 0);
    const StokesResult s = stokes_check(fixtures::torus(), z, q);
    out.require(s.components == 0, "torus has a boundary");
    out.require(std::fabs(s.lhs.value) <= 1e-9, "torus integral of dz " + fmt(s.lhs.value));
    out.note("torus |∫dz| " + fmt(std::fabs(s.lhs.value)));
  }
  return out;
}

// 5. μ_z(a + dc) = μ_z(a) for compactly supported c.
Outcome pairing_suite() {
  Outcome out;
  const VirtualComplex c = fixtures::interval_cover();
  const PartitionOfUnity pou = build_pou(c);
  const QuadratureSpec q;
  VirtualFormFamily one;
  for (IndexSet I : c.chart_indices()) one.forms[I] = ChartForm::function(1, k(1.0));
  const ChartForm a = ChartForm::top(1, cos(x(0)) + x(0));
  FormFamily af;
  for (IndexSet I : c.chart_indices()) af[I] = a;
  const IntegralResult base = pairing_mu(c, af, one, pou, q);
  std::mt19937_64 rng(99);
  double worst = 0.0;
  for (int i = 0; i < 5; ++i) {
    const Expression cf = test::random_expression(rng, 3, 1) * bump((x(0) - k(0.5)) / k(0.45));
    const ChartForm perturbed = a + exterior_derivative(ChartForm::function(1, cf));
    FormFamily pf;
    for (IndexSet I : c.chart_indices()) pf[I] = perturbed;
    const IntegralResult r = pairing_mu(c, pf, one, pou, q);
    const double residual = std::fabs(r.value - base.value);
    const double bound = 2.0 * (r.error + base.error);
    worst = std::max(worst, bound > 0 ? residual / bound : residual);
    out.require(residual <= bound, "perturbation " + std::to_string(i) + ": " + fmt(residual) + " > " + fmt(bound));
  }
  out.note("worst residual/bound " + fmt(worst));
  return out;
}

// 6. Localization: sphere poles, line-plane zero section, trivial action.
Outcome localization_suite() {
  Outcome out;
  const std::vector<double> probes{0.5, 1.0, 2.0};
  {
    const VirtualComplex c = fixtures::sphere();
    const CircleAction act = fixtures::sphere_rotation();
    const VirtualFormFamily zeta{{{kEmpty, ChartForm::function(2, k(1.0))}}, {}};
    const auto r = localize(c, act, fixtures::sphere_alpha(), zeta, fixed_locus(c, act, fixtures::sphere_poles()),
                            build_pou(c), grid(400000), probes);
    out.require(r.probes.size() == 3 && r.max_residual() <= 1e-2, "sphere residual " + fmt(r.max_residual()));
    out.note("sphere " + fmt(r.max_residual()));
  }
  {
    const VirtualComplex c = fixtures::line_plane();
    const CircleAction act = fixtures::line_plane_rotation();
    const VirtualFormFamily zeta = line_plane_zeta(equivariant_thom_form_on(3, {1, 2}, {1}, 0.6));
    const auto r = localize(c, act, unit_family(), zeta, fixed_locus(c, act, {fixtures::line_plane_zero_section()}),
                            build_pou(c), grid(1000000), probes);
    out.require(r.probes.size() == 3 && r.max_residual() <= 1e-2, "line-plane residual " + fmt(r.max_residual()));
    out.note("line-plane " + fmt(r.max_residual()));
  }
  {
    const VirtualComplex c = fixtures::line_plane();
    const CircleAction act = trivial_action(c);
    const auto r = localize(c, act, unit_family(), line_plane_zeta(thom_form_on(3, {1, 2}, 0.5)),
                            fixed_locus(c, act, {everything(c)}), build_pou(c), grid(1000000), probes);
    double worst = 0.0;
    for (const auto& p : r.probes) {
      const double bound = p.lhs.error + p.rhs.error;
      worst = std::max(worst, p.residual);
      out.require(p.residual <= bound,
                  "trivial action u=" + fmt(p.u) + ": " + fmt(p.residual) + " > quadrature error " + fmt(bound));
    }
    out.note("trivial action " + fmt(worst));
  }
  return out;
}

std::vector<StabilizationDatum> with_radius(std::vector<StabilizationDatum> s, double r) {
  for (auto& d : s) {
    d.radius = r;
    d.cutoff = stabilization_cutoff(d.center, r);
  }
  return s;
}

std::vector<StabilizationDatum> rotated(std::vector<StabilizationDatum> s, double angle) {
  const double c = std::cos(angle), sn = std::sin(angle);
  for (auto& d : s)
    for (auto& col : d.columns) col = {c * col[0] - sn * col[1], sn * col[0] + c * col[1]};
  return s;
}

// Signed count of the zeros of a perturbed map, each found in closed form.
double signed_count(const FredholmSystem& sys, const std::vector<Point>& zeros) {
  double n = 0.0;
  for (const auto& z : zeros) n += linearization(sys, z).determinant() > 0 ? 1.0 : -1.0;
  return n;
}

// 7. Fredholm invariants against zero-count oracles, and independence of choices.
Outcome fredholm_suite() {
  Outcome out;
  const ChartForm one = ChartForm::function(2, k(1.0));
  struct Case {
    std::string name;
    FredholmSystem sys;
    std::vector<StabilizationDatum> stab;
    double oracle;
    QuadratureSpec q;
  };
  std::vector<Case> cases;
  {
    const FredholmSystem torus = fixtures::torus_system();
    std::vector<Point> zeros;
    for (double a : {0.0, kPi})
      for (double b : {0.0, kPi}) zeros.push_back({a, b});
    cases.push_back({"torus", torus, build_stabilization_system(torus, zeros, {1.0, 1.0, 1.0, 1.0}),
                     signed_count(torus, zeros), grid(40000)});
  }
  {
    // (x0² - ε, x1): zeros at (±√ε, 0)
    const double eps = 0.04;
    FredholmSystem perturbed = fixtures::fold_system();
    perturbed.section[0] = perturbed.section[0] - k(eps);
    const double r = std::sqrt(eps);
    const FredholmSystem fold = fixtures::fold_system();
    cases.push_back({"fold", fold, build_stabilization_system(fold, {{0, 0}}, {0.8}),
                     signed_count(perturbed, {{r, 0}, {-r, 0}}), grid(40000)});
  }
  {
    // z² - ε: zeros at ±√ε on the real axis
    const double eps = 0.09;
    FredholmSystem perturbed = fixtures::z_squared_system();
    perturbed.section[0] = perturbed.section[0] - k(eps);
    const double r = std::sqrt(eps);
    const FredholmSystem zsq = fixtures::z_squared_system();
    cases.push_back({"z^2", zsq, build_stabilization_system(zsq, {{0, 0}}, {0.8}),
                     signed_count(perturbed, {{r, 0}, {-r, 0}}), grid(200000)});
  }
  for (const auto& cs : cases) {
    const InvariantResult phi = invariant(cs.sys, cs.stab, one, cs.q);
    const double gap = std::fabs(phi.value.value - cs.oracle);
    out.require(gap <= 0.05, cs.name + " Φ = " + fmt(phi.value.value) + " vs " + fmt(cs.oracle));
    out.note(cs.name + " Φ " + fmt(phi.value.value) + " (oracle " + fmt(cs.oracle) + ")");
  }
  // Three stabilizations of z²: the cokernel choice, a rotated obstruction basis, a smaller radius.
  const Case& z = cases.back();
  const std::vector<std::vector<StabilizationDatum>> alternatives{rotated(z.stab, 0.7), with_radius(z.stab, 0.6)};
  double worst = 0.0;
  for (std::size_t i = 0; i < alternatives.size(); ++i) {
    const IndependenceResult r = check_independence(z.sys, z.stab, alternatives[i], one, z.q, {}, 11 + i);
    const double bound = 3.0 * std::max(r.phi_a.error, r.phi_b.error);
    const double rbound = 3.0 * std::max(r.phi_a.error, r.phi_a_radii.error);
    worst = std::max({worst, r.residual / bound, r.radius_residual / rbound});
    out.require(r.residual <= bound, "independence " + std::to_string(i) + ": " + fmt(r.residual) + " > " + fmt(bound));
    out.require(r.radius_residual <= rbound,
                "Thom radius " + std::to_string(i) + ": " + fmt(r.radius_residual) + " > " + fmt(rbound));
  }
  out.note("z^2 independence worst residual/bound " + fmt(worst));
  return out;
}

// 8. Equivariant Fredholm invariant of the identity section.
Outcome equivariant_fredholm() {
  Outcome out;
  const FredholmSystem sys = fixtures::identity_system();
  const auto stab = build_stabilization_system(sys, {{0, 0}}, {0.8});
  const auto r = invariant_equivariant(sys, fixtures::disk_rotation(1), stab, ChartForm::function(2, k(1.0)), {{0, 0}},
                                       grid(40000), {0.5, 1.0, 2.0});
  for (const auto& p : r.probes) {
    out.require(std::fabs(p.lhs.value - 1.0) <= 1e-2, "Φ_G(u=" + fmt(p.u) + ") = " + fmt(p.lhs.value));
    out.require(p.residual <= 1e-2, "residual " + fmt(p.residual));
  }
  out.note("Φ_G " + fmt(r.probes.front().lhs.value) + ", max residual " + fmt(r.max_residual()));
  return out;
}

std::string read(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 9. Same scene, seed and method give identical reports for 1, 2 and 8 workers.
Outcome determinism() {
  Outcome out;
  struct Job {
    std::string scene, command;
    QuadratureMethod method;
    std::int64_t samples;
  };
  const std::vector<Job> jobs{
      {"line_plane.json", "integrate", QuadratureMethod::Grid, 200000},
      {"line_plane.json", "integrate", QuadratureMethod::MonteCarlo, 100000},
      {"interval_cover.json", "pair", QuadratureMethod::MonteCarlo, 100000},
      {"sphere_rotation.json", "localize", QuadratureMethod::Grid, 100000},
      {"fredholm_disk_identity.json", "fredholm", QuadratureMethod::Grid, 20000},
  };
  int compared = 0;
  for (const auto& job : jobs) {
    const std::string text = read(VMAN_SOURCE_DIR "/scenes/" + job.scene);
    const Scene scene = parse_scene(text);
    std::string reference;
    for (int workers : {1, 2, 8, 1}) {
      RunOptions opt;
      opt.method = job.method;
      opt.samples = job.samples;
      opt.seed = 5;
      opt.workers = workers;
      const std::string json = run(job.command, scene, fnv1a_hex(text), opt).json(false);
      if (reference.empty()) {
        reference = json;
        continue;
      }
      ++compared;
      out.require(json == reference, job.scene + " " + job.command + " differs with " + std::to_string(workers) +
                                         " workers");
    }
  }
  out.note(std::to_string(compared) + " reports compared byte for byte");
  return out;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
    double budget;  // seconds
  };
  const std::vector<Criterion> criteria{
      {1, "axiom suite", axiom_suite, 30},
      {2, "equivalence relation", equivalence_suite, 0},
      {3, "integration consistency", integration_suite, 60},
      {4, "Stokes", stokes_suite, 0},
      {5, "pairing well-definedness", pairing_suite, 0},
      {6, "localization", localization_suite, 120},
      {7, "Fredholm invariants", fredholm_suite, 300},
      {8, "equivariant Fredholm", equivariant_fredholm, 0},
      {9, "determinism", determinism, 0},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget > 0) o.require(seconds <= c.budget, "runtime " + fmt(seconds) + " s > " + fmt(c.budget) + " s");
    if (!o.passed) ++failed;
    std::printf("[%s] criterion %d %s: %s (%.1f s)\n", o.passed ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                seconds);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
