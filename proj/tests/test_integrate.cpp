#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

#include "doctest.h"
#include "support.hpp"
#include "vman/fixtures.hpp"
#include "vman/integrate.hpp"

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

VirtualFormFamily interval_family() {
  const ChartForm z = ChartForm::top(1, bump((x(0) - k(0.5)) / k(0.45)));
  VirtualFormFamily f;
  f.forms[kEmpty] = z;
  f.forms[kOne] = z;
  return f;
}

VirtualFormFamily line_plane_family(double radius = 0.5) {
  VirtualFormFamily z;
  z.theta[{kEmpty, kOne}] = thom_form_on(3, {1, 2}, radius);
  const ChartForm base = ChartForm::top(1, bump(x(0)));
  z.forms[kEmpty] = base;
  z.forms[kOne] = wedge(pullback({x(0)}, 3, base), z.theta.at({kEmpty, kOne}));
  return z;
}

// Charts [0,0.6] and [0.4,1] glued by the identity on their overlap.
VirtualComplex two_intervals() {
  VirtualComplex c(1);
  c.set_chart(kEmpty, ChartRegion({0.0}, {0.6}).set_face(0, false, FaceKind::Boundary));
  c.set_chart(kOne, ChartRegion({0.4}, {1.0}).set_face(0, true, FaceKind::Boundary));
  c.add_overlap(identity_overlap(kEmpty, kOne, ChartRegion({0.4}, {0.6})));
  return c;
}

}  // namespace

TEST_CASE("chart integrals") {
  QuadratureSpec q;
  CHECK(chart_integral(ChartRegion({0.0}, {1.0}), ChartForm::top(1, k(1.0)), q).value ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(chart_integral(ChartRegion({0.0}, {1.0}), ChartForm(1), q).value == 0.0);

  ChartRegion disk({-1.0, -1.0}, {1.0, 1.0});
  disk.add_constraint(expr("x0^2 + x1^2 - 1"));
  q.points_per_axis = 2000;
  CHECK(std::fabs(chart_integral(disk, ChartForm::top(2, k(1.0)), q).value - kPi) < 1e-3);

  CHECK_THROWS_AS(chart_integral(disk, ChartForm::differential(2, 0), q), StructureError);
}

TEST_CASE("grid and Monte Carlo agree within their error estimates") {
  ChartRegion disk({-1.0, -1.0}, {1.0, 1.0});
  disk.add_constraint(expr("x0^2 + x1^2 - 1"));
  const ChartForm w = ChartForm::top(2, exp(x(0)) * cos(x(1)));
  QuadratureSpec grid;
  QuadratureSpec mc;
  mc.method = QuadratureMethod::MonteCarlo;
  mc.sample_count = 400000;
  const IntegralResult a = chart_integral(disk, w, grid);
  const IntegralResult b = chart_integral(disk, w, mc);
  CHECK(b.error > 0.0);
  CHECK(std::fabs(a.value - b.value) <= 4.0 * (a.error + b.error));
}

TEST_CASE("results are identical across worker counts") {
  ChartRegion disk({-1.0, -1.0}, {1.0, 1.0});
  disk.add_constraint(expr("x0^2 + x1^2 - 1"));
  const ChartForm w = ChartForm::top(2, sin(x(0) * k(3.0)) + x(1) * x(1));
  for (QuadratureMethod m : {QuadratureMethod::Grid, QuadratureMethod::MonteCarlo}) {
    QuadratureSpec q;
    q.method = m;
    q.workers = 1;
    const IntegralResult ref = chart_integral(disk, w, q);
    for (int workers : {2, 8}) {
      q.workers = workers;
      const IntegralResult r = chart_integral(disk, w, q);
      CHECK(std::memcmp(&r.value, &ref.value, sizeof(double)) == 0);
      CHECK(std::memcmp(&r.error, &ref.error, sizeof(double)) == 0);
    }
  }
}

TEST_CASE("partition of unity") {
  SUBCASE("single chart") {
    const VirtualComplex c = fixtures::unit_interval();
    const PartitionOfUnity pou = build_pou(c);
    const double p[] = {0.3};
    CHECK(pou.weight(kEmpty, p) == 1.0);
  }
  SUBCASE("interval cover sums to one") {
    const VirtualComplex c = fixtures::interval_cover();
    const PartitionOfUnity pou = build_pou(c);
    CHECK(pou.bumps().size() == 2);
    CHECK(pou_residual(c, pou, 10000) <= 1e-10);
  }
  SUBCASE("line-plane sums to one") {
    const VirtualComplex c = fixtures::line_plane();
    const std::vector<bool> fiber = fiber_axes(c, kOne);
    CHECK(fiber == std::vector<bool>{false, true, true});
    const PartitionOfUnity pou = build_pou(c);
    CHECK(pou_residual(c, pou, 4000) <= 1e-10);
  }
  SUBCASE("shrinking opens a gap in the middle") {
    const VirtualComplex c = two_intervals();
    CHECK_NOTHROW(build_pou(c, 0.9));
    try {
      build_pou(c, 0.2);
      FAIL("expected a cover gap");
    } catch (const CoverGapError& e) {
      REQUIRE(e.witness().size() == 1);
      CHECK(std::fabs(e.witness()[0] - 0.5) <= 0.02);
    }
  }
}

TEST_CASE("integration on the interval cover") {
  const VirtualComplex c = fixtures::interval_cover();
  const VirtualFormFamily z = interval_family();
  const double direct = simpson([](double t) { return bump_value((t - 0.5) / 0.45); }, 0.0, 1.0);
  const QuadratureSpec q;
  const IntegralResult ie = integrate_incl_excl(c, z, q);
  const IntegralResult pu = integrate_pou(c, z, build_pou(c), q);
  CHECK(std::fabs(ie.value - direct) <= 1e-6);
  CHECK(std::fabs(pu.value - direct) <= 1e-6);
  CHECK(std::fabs(ie.value - pu.value) <= 2e-6);

  VirtualFormFamily zero;
  zero.forms[kEmpty] = ChartForm(1);
  zero.forms[kOne] = ChartForm(1);
  CHECK(integrate_incl_excl(c, zero, q).value == 0.0);
}

TEST_CASE("single chart with unit weight equals the chart integral") {
  const VirtualComplex c = fixtures::unit_interval();
  VirtualFormFamily z;
  z.forms[kEmpty] = ChartForm::top(1, sin(x(0)));
  const QuadratureSpec q;
  const double direct = chart_integral(c.chart(kEmpty), z.forms[kEmpty], q).value;
  CHECK(integrate_pou(c, z, build_pou(c), q).value == direct);
  CHECK(integrate_incl_excl(c, z, q).value == direct);
}

TEST_CASE("integration on the line-plane fixture matches the base integral") {
  const VirtualComplex c = fixtures::line_plane();
  const double base = simpson([](double t) { return bump_value(t); }, -1.0, 1.0);
  const QuadratureSpec q;
  const VirtualFormFamily z = line_plane_family();
  const IntegralResult ie = integrate_incl_excl(c, z, q);
  const IntegralResult pu = integrate_pou(c, z, build_pou(c), q);
  CHECK(std::fabs(ie.value - base) <= 1e-3);
  CHECK(std::fabs(pu.value - base) <= 1e-3);

  SUBCASE("independent of the Thom radius") {
    const IntegralResult narrow = integrate_pou(c, line_plane_family(0.3), build_pou(c), q);
    CHECK(std::fabs(narrow.value - pu.value) <= 2.0 * std::max(q.tol, narrow.error + pu.error));
  }
  SUBCASE("overlap consistency") {
    const ChartRegion v_base({-0.5}, {0.5});
    const ChartRegion v_fiber({-0.5, -1.0, -1.0}, {0.5, 1.0, 1.0});
    const double lhs = chart_integral(v_base, z.forms.at(kEmpty), q).value;
    const double rhs = chart_integral(v_fiber, z.forms.at(kOne), q).value;
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-4));
  }
  SUBCASE("non-compact support is rejected") {
    VirtualFormFamily bad = z;
    bad.forms[kOne] = ChartForm::top(3, k(1.0));
    CHECK_THROWS_AS(integrate_incl_excl(c, bad, q), SupportError);
  }
}

TEST_CASE("Stokes") {
  QuadratureSpec q;
  SUBCASE("interval") {
    VirtualFormFamily z;
    const Expression f = sin(x(0)) + x(0) * x(0);
    z.forms[kEmpty] = ChartForm::function(1, f);
    const StokesResult s = stokes_check(fixtures::unit_interval(), z, q);
    CHECK(s.components == 2);
    CHECK(s.rhs.value == doctest::Approx(std::sin(1.0) + 1.0).epsilon(1e-12));
    CHECK(s.residual <= 1e-8);
  }
  SUBCASE("disk: x dy in polar coordinates") {
    VirtualFormFamily z;
    const ChartForm xdy = x(0) * ChartForm::differential(2, 1);
    z.forms[kEmpty] = pullback({x(0) * cos(x(1)), x(0) * sin(x(1))}, 2, xdy);
    const StokesResult s = stokes_check(fixtures::polar_disk(), z, q);
    CHECK(s.lhs.value == doctest::Approx(kPi).epsilon(1e-6));
    CHECK(s.residual <= 1e-6);
  }
  SUBCASE("torus has no boundary term") {
    VirtualFormFamily z;
    z.forms[kEmpty] = cos(x(0)) * ChartForm::differential(2, 1);
    const StokesResult s = stokes_check(fixtures::torus(), z, q);
    CHECK(s.components == 0);
    CHECK(s.rhs.value == 0.0);
    CHECK(std::fabs(s.lhs.value) <= 1e-9);
  }
  SUBCASE("line-plane with interior support") {
    const VirtualComplex c = fixtures::line_plane();
    VirtualFormFamily z;
    z.theta[{kEmpty, kOne}] = thom_form_on(3, {1, 2}, 0.5);
    const ChartForm g = ChartForm::function(1, bump(x(0) * k(1.2)) * sin(x(0) * k(3.0)));
    z.forms[kEmpty] = g;
    z.forms[kOne] = wedge(pullback({x(0)}, 3, g), z.theta.at({kEmpty, kOne}));
    q.sample_count = 4000000;
    const StokesResult s = stokes_check(c, z, q);
    CHECK(s.components == 2);
    CHECK(std::fabs(s.rhs.value) <= 1e-12);
    CHECK(s.residual <= 1e-6);
  }
}

TEST_CASE("pairing") {
  const VirtualComplex c = fixtures::interval_cover();
  const PartitionOfUnity pou = build_pou(c);
  QuadratureSpec q;
  VirtualFormFamily one;
  one.forms[kEmpty] = ChartForm::function(1, k(1.0));
  one.forms[kOne] = ChartForm::function(1, k(1.0));

  SUBCASE("unit pairing is the integral") {
    VirtualFormFamily z = interval_family();
    FormFamily unit{{kEmpty, ChartForm::function(1, k(1.0))}, {kOne, ChartForm::function(1, k(1.0))}};
    CHECK(pairing_mu(c, unit, z, pou, q).value == doctest::Approx(integrate_pou(c, z, pou, q).value));
  }
  SUBCASE("zero pre-form") {
    FormFamily zero{{kEmpty, ChartForm(1)}, {kOne, ChartForm(1)}};
    CHECK(pairing_mu(c, zero, one, pou, q).value == 0.0);
  }
  SUBCASE("property: exact perturbations do not change the pairing") {
    std::mt19937_64 rng(31);
    const ChartForm a = ChartForm::top(1, cos(x(0)) + x(0));
    const FormFamily af{{kEmpty, a}, {kOne, a}};
    const IntegralResult base = pairing_mu(c, af, one, pou, q);
    for (int i = 0; i < 5; ++i) {
      const Expression cfun = test::random_expression(rng, 3, 1) * bump((x(0) - k(0.5)) / k(0.45));
      const ChartForm perturbed = a + exterior_derivative(ChartForm::function(1, cfun));
      const FormFamily pf{{kEmpty, perturbed}, {kOne, perturbed}};
      const IntegralResult r = pairing_mu(c, pf, one, pou, q);
      CHECK(r.warnings.empty());
      CHECK(std::fabs(r.value - base.value) <= 2.0 * (r.error + base.error));
    }
  }
  SUBCASE("degree mismatch") {
    FormFamily twoform{{kEmpty, ChartForm::top(1, k(1.0))}, {kOne, ChartForm::top(1, k(1.0))}};
    CHECK_THROWS_AS(pairing_mu(c, twoform, interval_family(), pou, q), StructureError);
  }
}
