#include <random>

#include "doctest.h"
#include "support.hpp"
#include "vman/complex.hpp"
#include "vman/fixtures.hpp"

using namespace vman;

namespace {

const IndexSet kEmpty;
const IndexSet kOne = IndexSet::of({1});

std::string failures(const ValidationReport& r) {
  std::string s;
  for (const auto& c : r.checks())
    if (!c.passed) s += c.name + ": " + c.detail + "\n";
  return s;
}

}  // namespace

TEST_CASE("index sets") {
  const IndexSet a = IndexSet::of({1, 3});
  const IndexSet b = IndexSet::of({3, 4});
  CHECK((a | b) == IndexSet::of({1, 3, 4}));
  CHECK((a & b) == IndexSet::of({3}));
  CHECK((a - b) == IndexSet::of({1}));
  CHECK(IndexSet().subset_of(a));
  CHECK(a.str() == "{1,3}");
  CHECK(IndexSet::parse("{1,3}") == a);
  CHECK(subsets_of(a).size() == 4);
  CHECK(subsets_of(a).front().empty());
  CHECK_THROWS_AS(IndexSet::of({16}), StructureError);
}

TEST_CASE("interval cover construction") {
  const VirtualComplex c = fixtures::interval_cover();
  CHECK(c.chart_indices().size() == 2);
  CHECK(c.overlaps().size() == 1);
  CHECK(c.overlaps()[0].rank == 0);
  const double inside_empty[] = {0.45};
  const double outside_empty[] = {0.5};
  CHECK(c.chart(kEmpty).contains(inside_empty));
  CHECK_FALSE(c.chart(kEmpty).contains(outside_empty));
  const double edge[] = {0.41};
  CHECK(c.chart(kOne).contains(edge));

  const ValidationReport p = validate_patchable(c);
  CHECK_MESSAGE(p.ok(), failures(p));
  for (const char* axiom : {"P1", "P2", "P3", "P4", "P5"})
    CHECK(p.find(std::string(axiom) + " {}|{1}") != nullptr);
  const ValidationReport v = validate_virtual(c);
  CHECK_MESSAGE(v.ok(), failures(v));
}

TEST_CASE("single chart passes vacuously") {
  VirtualComplex c(0);
  c.set_chart(kEmpty, ChartRegion({0.0}, {1.0}));
  CHECK(validate_patchable(c).ok());
  CHECK(validate_patchable(c).checks().empty());
  const VirtualComplex only = from_cover(1, {ChartRegion({0.0}, {1.0})}, 0.75);
  CHECK(only.chart_indices().size() == 1);
  CHECK(only.overlaps().empty());
}

TEST_CASE("shrinking an overlap's small region breaks P4") {
  const VirtualComplex c = fixtures::interval_cover();
  const VirtualComplex bad =
      test::edit_overlap(c, 0, [](Overlap& o) { o.region_in_small = o.region_in_small.homothety(0.9); });
  const ValidationReport r = validate_patchable(bad);
  const CheckResult* p4 = r.find("P4 {}|{1}");
  REQUIRE(p4 != nullptr);
  CHECK_FALSE(p4->passed);
}

TEST_CASE("line-plane fixture is a virtual manifold") {
  const VirtualComplex c = fixtures::line_plane();
  const ValidationReport p = validate_patchable(c);
  CHECK_MESSAGE(p.ok(), failures(p));
  const ValidationReport v = validate_virtual(c);
  CHECK_MESSAGE(v.ok(), failures(v));
}

TEST_CASE("declared rank contradicting dimensions is reported") {
  const VirtualComplex bad = test::edit_overlap(fixtures::line_plane(), 0, [](Overlap& o) { o.rank = 3; });
  const ValidationReport v = validate_virtual(bad);
  const CheckResult* r = v.find("rank {}->{1}");
  REQUIRE(r != nullptr);
  CHECK_FALSE(r->passed);
}

TEST_CASE("structural errors") {
  VirtualComplex c(1);
  c.set_chart(kEmpty, ChartRegion({0.0}, {1.0}));
  CHECK_THROWS_AS(c.add_overlap(identity_overlap(kEmpty, kOne, ChartRegion({0.0}, {1.0}))), StructureError);
  CHECK_THROWS_AS(from_cover(1, {ChartRegion({0.2}, {0.4}), ChartRegion({0.0}, {1.0})}, 0.9), StructureError);
}

TEST_CASE("equivalence and support on the line-plane fixture") {
  const VirtualComplex c = fixtures::line_plane();
  const ChartPoint base{kEmpty, {0.3}};
  CHECK(equivalent(c, base, base));
  CHECK(equivalent(c, base, ChartPoint{kOne, {0.3, 0.2, -0.1}}));
  CHECK_FALSE(equivalent(c, ChartPoint{kEmpty, {1.7}}, ChartPoint{kOne, {0.3, 0.0, 0.0}}));

  CHECK(support(c, base).chart == kEmpty);
  const ChartPoint s = support(c, ChartPoint{kOne, {0.3, 0.0, 0.0}});
  CHECK(s.chart == kEmpty);
  CHECK(s.x[0] == doctest::Approx(0.3));
  CHECK(support(c, ChartPoint{kOne, {1.2, 0.1, 0.0}}).chart == kOne);
}

TEST_CASE("property: equivalence is reflexive, symmetric and transitive") {
  const VirtualComplex c = fixtures::line_plane();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto random_point = [&]() {
    if (u(rng) < 0.0) return ChartPoint{kEmpty, {2.0 * u(rng)}};
    return ChartPoint{kOne, {1.5 * u(rng), u(rng), u(rng)}};
  };
  for (int i = 0; i < 300; ++i) {
    const ChartPoint a = random_point();
    const ChartPoint b = (i % 3 == 0) ? ChartPoint{kOne, {a.x[0], u(rng), u(rng)}} : random_point();
    CHECK(equivalent(c, a, a));
    CHECK(equivalent(c, a, b) == equivalent(c, b, a));
  }
  for (int i = 0; i < 100; ++i) {
    const double x = 0.95 * u(rng);
    const ChartPoint a{kOne, {x, u(rng), u(rng)}};
    const ChartPoint b{kEmpty, {x}};
    const ChartPoint d{kOne, {x, u(rng), u(rng)}};
    REQUIRE(equivalent(c, a, b));
    REQUIRE(equivalent(c, b, d));
    CHECK(equivalent(c, a, d, 3e-8));
    const ChartPoint s = support(c, a);
    CHECK(support(c, s).chart == s.chart);
  }
}

TEST_CASE("property: random covers of the square are patchable") {
  std::mt19937_64 rng(5);
  int built = 0;
  for (int attempt = 0; built < 8 && attempt < 100; ++attempt) {
    const auto cover = test::random_cover(rng, 2, 3);
    VirtualComplex c;
    try {
      c = from_cover(2, cover, 0.75);
    } catch (const StructureError&) {
      continue;
    }
    ++built;
    const ValidationReport p = validate_patchable(c, 64);
    CHECK_MESSAGE(p.ok(), failures(p));
    CHECK(validate_virtual(c, 64).ok());
  }
  CHECK(built == 8);
}

TEST_CASE("boundaries") {
  SUBCASE("interval") {
    const auto parts = boundary(fixtures::unit_interval());
    REQUIRE(parts.size() == 2);
    CHECK(parts[0].complex.virtual_dim() == 0);
    int sum = 0;
    for (const auto& p : parts) sum += p.charts.at(kEmpty).orientation;
    CHECK(sum == 0);
  }
  SUBCASE("interval cover") {
    const auto parts = boundary(fixtures::interval_cover());
    REQUIRE(parts.size() == 2);
    CHECK(parts[0].charts.at(kEmpty).original == kEmpty);
    CHECK(parts[0].charts.at(kEmpty).orientation == -1);
    CHECK(parts[1].charts.at(kEmpty).original == kOne);
    CHECK(parts[1].charts.at(kEmpty).orientation == 1);
  }
  SUBCASE("torus has none") { CHECK(boundary(fixtures::torus()).empty()); }
  SUBCASE("line-plane: two points, fiber chart contributes nothing") {
    const auto parts = boundary(fixtures::line_plane());
    REQUIRE(parts.size() == 2);
    for (const auto& p : parts) {
      CHECK(p.charts.size() == 1);
      CHECK(p.charts.at(kEmpty).original == kEmpty);
    }
  }
  SUBCASE("polar disk: one circle") {
    const auto parts = boundary(fixtures::polar_disk());
    REQUIRE(parts.size() == 1);
    const ChartRegion& circle = parts[0].complex.chart(kEmpty);
    CHECK(circle.dim() == 1);
    CHECK(circle.periodic(0));
    CHECK(parts[0].charts.at(kEmpty).orientation == 1);
  }
  SUBCASE("parametrized constraint face") {
    VirtualComplex c(0);
    ChartRegion disk({-1.0, -1.0}, {1.0, 1.0});
    FaceParametrization circle{{cos(Expression::variable(0)), sin(Expression::variable(0))},
                               {0.0},
                               {2 * 3.141592653589793},
                               {true}};
    disk.add_constraint(expr("x0^2 + x1^2 - 1"), FaceKind::Boundary, circle);
    c.set_chart(kEmpty, disk);
    const auto parts = boundary(c);
    REQUIRE(parts.size() == 1);
    CHECK(parts[0].charts.at(kEmpty).orientation == 1);
  }
}
