#include <cmath>
#include <random>

#include "doctest.h"
#include "support.hpp"
#include "vman/fixtures.hpp"
#include "vman/forms.hpp"

using namespace vman;

namespace {

const IndexSet kEmpty;
const IndexSet kOne = IndexSet::of({1});

Expression x(int i) { return Expression::variable(i); }
Expression k(double v) { return Expression::constant(v); }

ChartForm random_form(std::mt19937_64& rng, int dim, int degree) {
  ChartForm f(dim);
  for (Monomial m = 0; m < (1u << dim); ++m)
    if (monomial_degree(m) == degree && rng() % 3 != 0) f.add(m, test::random_expression(rng, 3, dim));
  return f;
}

double max_coefficient(const ChartForm& f, const double* p) {
  double worst = 0.0;
  for (const auto& [m, e] : f.terms()) worst = std::max(worst, std::fabs(f.value(m, p)));
  return worst;
}

double max_difference(const ChartForm& a, const ChartForm& b, const double* p) { return max_coefficient(a - b, p); }

TransitionData line_plane_theta(double scale = 1.0) {
  TransitionData theta;
  theta[{kEmpty, kOne}] = k(scale) * thom_form_on(3, {1, 2}, 0.5);
  return theta;
}

VirtualFormFamily pushed_family() {
  VirtualFormFamily z;
  z.theta = line_plane_theta();
  const ChartForm base = ChartForm::top(1, bump(x(0)));
  z.forms[kEmpty] = base;
  z.forms[kOne] = wedge(pullback({x(0)}, 3, base), z.theta.at({kEmpty, kOne}));
  return z;
}

}  // namespace

TEST_CASE("monomial helpers") {
  CHECK(monomial_degree(monomial_of({0, 2})) == 2);
  CHECK(wedge_sign(monomial_of({1}), monomial_of({0})) == -1);
  CHECK(wedge_sign(monomial_of({0}), monomial_of({1})) == 1);
  CHECK(wedge_sign(monomial_of({0, 2}), monomial_of({1})) == -1);
  CHECK(wedge_sign(monomial_of({1}), monomial_of({1})) == 0);
  CHECK(monomial_label(monomial_of({0, 2})) == "02");
  CHECK(monomial_from_label("013") == monomial_of({0, 1, 3}));
  CHECK(monomial_from_label("(12)") == monomial_of({12}));
  CHECK_THROWS_AS(monomial_from_label("10"), StructureError);
}

TEST_CASE("pullback of x dx along t -> t^2") {
  const ChartForm w = x(0) * ChartForm::differential(1, 0);
  const ChartForm pulled = pullback({pow(x(0), k(2.0))}, 1, w);
  const double t[] = {0.7};
  CHECK(pulled.value(monomial_of({0}), t) == doctest::Approx(2.0 * 0.7 * 0.7 * 0.7));
  const double h = 1e-6;
  const double fd = 0.7 * 0.7 * (std::pow(0.7 + h, 2) - std::pow(0.7 - h, 2)) / (2 * h);
  CHECK(pulled.value(monomial_of({0}), t) == doctest::Approx(fd).epsilon(1e-8));
}

TEST_CASE("pullback of a 2-form picks up the Jacobian determinant") {
  // Polar coordinates: dx∧dy = r dr∧dθ.
  const ChartForm area = ChartForm::top(2, k(1.0));
  const ChartForm pulled = pullback({x(0) * cos(x(1)), x(0) * sin(x(1))}, 2, area);
  const double p[] = {0.8, 1.1};
  CHECK(pulled.value(top_monomial(2), p) == doctest::Approx(0.8));
}

TEST_CASE("wedge product") {
  const ChartForm a = ChartForm::differential(3, 0) + k(2.0) * ChartForm::differential(3, 1);
  const ChartForm b = k(3.0) * ChartForm::differential(3, 0) + ChartForm::differential(3, 2);
  const ChartForm ab = wedge(a, b);
  const double p[] = {0.0, 0.0, 0.0};
  // (a∧b)_{ij} = a_i b_j - a_j b_i
  const double av[] = {1, 2, 0};
  const double bv[] = {3, 0, 1};
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j)
      CHECK(ab.value(monomial_of({i, j}), p) == doctest::Approx(av[i] * bv[j] - av[j] * bv[i]));
  CHECK(max_difference(wedge(b, a), -ab, p) == 0.0);
  CHECK(wedge(a, a).is_zero());
}

TEST_CASE("interior product") {
  const ChartForm area = ChartForm::top(2, k(1.0));
  const double p[] = {0.0, 0.0};
  const ChartForm along0 = interior({k(1.0), k(0.0)}, area);
  const ChartForm along1 = interior({k(0.0), k(1.0)}, area);
  CHECK(along0.value(monomial_of({1}), p) == 1.0);
  CHECK(along1.value(monomial_of({0}), p) == -1.0);
}

TEST_CASE("exterior derivative against finite differences") {
  const Expression f = sin(x(0) * x(2)) + x(1) * x(1);
  const ChartForm w = f * ChartForm::differential(3, 1);
  const ChartForm dw = exterior_derivative(w);
  const double p[] = {0.3, -0.4, 0.9};
  const double h = 1e-6;
  auto fd = [&](int axis) {
    double a[] = {p[0], p[1], p[2]};
    double b[] = {p[0], p[1], p[2]};
    a[axis] += h;
    b[axis] -= h;
    return (f.evaluate(a) - f.evaluate(b)) / (2 * h);
  };
  CHECK(dw.value(monomial_of({0, 1}), p) == doctest::Approx(fd(0)).epsilon(1e-7));
  CHECK(dw.value(monomial_of({1, 2}), p) == doctest::Approx(-fd(2)).epsilon(1e-7));
  CHECK(dw.value(monomial_of({0, 2}), p) == 0.0);
}

TEST_CASE("property: d squared vanishes") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const int degree = static_cast<int>(rng() % 3);
    const ChartForm w = random_form(rng, 3, degree);
    const ChartForm ddw = exterior_derivative(exterior_derivative(w));
    for (int s = 0; s < 3; ++s) {
      const double p[] = {u(rng), u(rng), u(rng)};
      CHECK(max_coefficient(ddw, p) < 1e-9);
    }
  }
}

TEST_CASE("property: pullback is a ring morphism commuting with d") {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  for (int i = 0; i < 30; ++i) {
    const std::vector<Expression> map{test::random_expression(rng, 2, 2), test::random_expression(rng, 2, 2),
                                      test::random_expression(rng, 2, 2)};
    const ChartForm a = random_form(rng, 3, 1);
    const ChartForm b = random_form(rng, 3, 1);
    const ChartForm lhs = pullback(map, 2, wedge(a, b));
    const ChartForm rhs = wedge(pullback(map, 2, a), pullback(map, 2, b));
    const ChartForm dl = pullback(map, 2, exterior_derivative(a));
    const ChartForm dr = exterior_derivative(pullback(map, 2, a));
    const double p[] = {u(rng), u(rng)};
    CHECK(max_difference(lhs, rhs, p) < 1e-9);
    CHECK(max_difference(dl, dr, p) < 1e-9);
  }
}

TEST_CASE("Thom forms integrate to one") {
  for (int rank = 1; rank <= 4; ++rank) {
    const double r = 0.7;
    const CompiledExpression density(thom_form(rank, r).coefficient(top_monomial(rank)));
    const int n = rank <= 2 ? 400 : (rank == 3 ? 100 : 48);
    const double h = 2 * r / n;
    std::vector<int> idx(rank, 0);
    double v[4];
    double sum = 0.0;
    while (true) {
      for (int j = 0; j < rank; ++j) v[j] = -r + (idx[j] + 0.5) * h;
      sum += density(v);
      int j = 0;
      while (j < rank && ++idx[j] == n) idx[j++] = 0;
      if (j == rank) break;
    }
    CHECK_MESSAGE(std::fabs(sum * std::pow(h, rank) - 1.0) < 1e-6, "rank ", rank);
  }
}

TEST_CASE("Thom form on the plane against Monte Carlo") {
  const double r = 1.3;
  const CompiledExpression density(thom_form(2, r).coefficient(top_monomial(2)));
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-r, r);
  const int n = 1000000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v[] = {u(rng), u(rng)};
    sum += density(v);
  }
  CHECK(std::fabs(sum / n * 4 * r * r - 1.0) < 1e-3);
}

TEST_CASE("transition data on the line-plane fixture") {
  const VirtualComplex c = fixtures::line_plane();
  CHECK(overlap_orientation(c, c.overlaps()[0]) == 1);
  const ValidationReport good = validate_transition_data(c, line_plane_theta());
  CHECK(good.ok());
  CHECK(good.warnings().empty());

  const TransitionData doubled = line_plane_theta(2.0);
  const ValidationReport bad = validate_transition_data(c, doubled);
  CHECK_FALSE(bad.ok());
  CHECK(fiber_integral(c, c.overlaps()[0], doubled.at({kEmpty, kOne}), {0.2}) == doctest::Approx(2.0).epsilon(1e-6));

  CHECK_FALSE(validate_transition_data(c, {}).ok());
}

TEST_CASE("form families") {
  const VirtualComplex c = fixtures::line_plane();
  FormFamily a;
  a[kEmpty] = ChartForm::function(1, sin(x(0)));
  a[kOne] = ChartForm::function(3, sin(x(0)));
  CHECK(validate_form_family(c, a).ok());
  a[kOne] = ChartForm::function(3, sin(x(0)) + k(1e-3) * x(1));
  CHECK_FALSE(validate_form_family(c, a).ok());
}

TEST_CASE("virtual forms on the line-plane fixture") {
  const VirtualComplex c = fixtures::line_plane();
  SUBCASE("pushed family passes and has compact interior support") {
    const VirtualFormFamily z = pushed_family();
    const ValidationReport r = validate_virtual_form(c, z);
    CHECK(r.ok());
    CHECK(z.virtual_degree() == 1);
    const SupportFlags s = support_flags(c, z.forms);
    CHECK_FALSE(s.empty);
    CHECK(s.compact);
    CHECK(s.interior);
  }
  SUBCASE("perturbed family fails") {
    VirtualFormFamily z = pushed_family();
    z.forms[kOne] = z.forms[kOne] + ChartForm::term(3, top_monomial(3), k(1e-4) * bump(x(0)));
    CHECK_FALSE(validate_virtual_form(c, z).ok());
  }
  SUBCASE("zero family passes with empty support") {
    VirtualFormFamily z;
    z.theta = line_plane_theta();
    z.forms[kEmpty] = ChartForm(1);
    z.forms[kOne] = ChartForm(3);
    const ValidationReport r = validate_virtual_form(c, z);
    CHECK(r.ok());
    CHECK(support_flags(c, z.forms).empty);
  }
  SUBCASE("non-compact family is flagged") {
    VirtualFormFamily z;
    z.theta = line_plane_theta();
    const ChartForm base = ChartForm::top(1, k(1.0));
    z.forms[kEmpty] = base;
    z.forms[kOne] = wedge(pullback({x(0)}, 3, base), z.theta.at({kEmpty, kOne}));
    CHECK(validate_virtual_form(c, z).ok());
    const SupportFlags s = support_flags(c, z.forms);
    CHECK_FALSE(s.compact);
    CHECK_FALSE(s.witness.empty());
  }
  SUBCASE("d and products preserve compatibility") {
    const VirtualFormFamily z = pushed_family();
    CHECK(validate_virtual_form(c, exterior_derivative(z)).ok());
    FormFamily a;
    a[kEmpty] = ChartForm::function(1, cos(x(0)));
    a[kOne] = ChartForm::function(3, cos(x(0)));
    CHECK(validate_virtual_form(c, wedge(a, z)).ok());
  }
}

TEST_CASE("cocycle on a product complex") {
  // Two independent stabilizations of the line: X_{12} = X × R² with
  // Θ_{12,∅} = Θ_1 ∧ Θ_2.
  VirtualComplex c(2);
  const IndexSet two = IndexSet::of({2});
  const IndexSet both = IndexSet::of({1, 2});
  c.set_chart(kEmpty, ChartRegion({-2.0}, {2.0}, FaceKind::Boundary));
  c.set_chart(kOne, ChartRegion({-1.5, -1.0}, {1.5, 1.0}, FaceKind::Free));
  c.set_chart(two, ChartRegion({-1.5, -1.0}, {1.5, 1.0}, FaceKind::Free));
  c.set_chart(both, ChartRegion({-1.5, -1.0, -1.0}, {1.5, 1.0, 1.0}, FaceKind::Free));
  auto make = [&](IndexSet small, IndexSet big, std::vector<Expression> proj, std::vector<Expression> fiber) {
    Overlap o;
    o.small = small;
    o.big = big;
    const int ds = c.dim(small);
    const int db = c.dim(big);
    o.region_in_small = ChartRegion(std::vector<double>(ds, -1.0), std::vector<double>(ds, 1.0));
    o.region_in_big = ChartRegion(std::vector<double>(db, -1.0), std::vector<double>(db, 1.0));
    o.rank = db - ds;
    o.projection = std::move(proj);
    o.fiber_param = std::move(fiber);
    c.add_overlap(std::move(o));
  };
  make(kEmpty, kOne, {x(0)}, {x(0), x(1)});
  make(kEmpty, two, {x(0)}, {x(0), x(1)});
  make(kEmpty, both, {x(0)}, {x(0), x(1), x(2)});
  make(kOne, both, {x(0), x(1)}, {x(0), x(1), x(2)});
  make(two, both, {x(0), x(2)}, {x(0), x(2), x(1)});

  TransitionData theta;
  theta[{kEmpty, kOne}] = thom_form_on(2, {1}, 0.5);
  theta[{kEmpty, two}] = thom_form_on(2, {1}, 0.5);
  theta[{kOne, both}] = thom_form_on(3, {2}, 0.5);
  theta[{two, both}] = thom_form_on(3, {1}, 0.5);
  theta[{kEmpty, both}] = wedge(thom_form_on(3, {1}, 0.5), thom_form_on(3, {2}, 0.5));
  const ValidationReport r = validate_transition_data(c, theta);
  for (const auto& check : r.checks()) CHECK_MESSAGE(check.passed, check.name, ": ", check.detail);
  CHECK(r.find("cocycle {1}|{2}") != nullptr);
  CHECK(r.warnings().size() == 4);

  // The radial rank-2 form is normalized but not the product.
  theta[{kEmpty, both}] = thom_form_on(3, {1, 2}, 0.5);
  CHECK_FALSE(validate_transition_data(c, theta).ok());

  theta[{kEmpty, both}] = wedge(thom_form_on(3, {2}, 0.5), thom_form_on(3, {1}, 0.5));
  const ValidationReport flipped = validate_transition_data(c, theta);
  const CheckResult* cocycle = flipped.find("cocycle {1}|{2}");
  REQUIRE(cocycle != nullptr);
  CHECK_FALSE(cocycle->passed);
}
