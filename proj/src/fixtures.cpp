#include "vman/fixtures.hpp"

#include <numbers>

namespace vman::fixtures {

std::vector<ChartRegion> interval_cover_regions() {
  ChartRegion u0({0.0}, {0.6});
  u0.set_face(0, false, FaceKind::Boundary);
  ChartRegion u1({0.4}, {1.0});
  u1.set_face(0, true, FaceKind::Boundary);
  return {u0, u1};
}

VirtualComplex interval_cover() { return from_cover(1, interval_cover_regions(), 0.75); }

VirtualComplex line_plane() {
  VirtualComplex c(1);
  c.set_chart(IndexSet(), ChartRegion({-2.0}, {2.0}, FaceKind::Boundary));
  c.set_chart(IndexSet::of({1}), ChartRegion({-1.5, -1.0, -1.0}, {1.5, 1.0, 1.0}, FaceKind::Free));
  Overlap o;
  o.small = IndexSet();
  o.big = IndexSet::of({1});
  o.region_in_small = ChartRegion({-1.0}, {1.0});
  o.region_in_big = ChartRegion({-1.0, -1.0, -1.0}, {1.0, 1.0, 1.0});
  o.region_in_big.set_face(1, false, FaceKind::Free).set_face(1, true, FaceKind::Free);
  o.region_in_big.set_face(2, false, FaceKind::Free).set_face(2, true, FaceKind::Free);
  o.rank = 2;
  o.projection = {Expression::variable(0)};
  o.fiber_param = {Expression::variable(0), Expression::variable(1), Expression::variable(2)};
  c.add_overlap(std::move(o));
  return c;
}

VirtualComplex unit_interval() {
  VirtualComplex c(0);
  c.set_chart(IndexSet(), ChartRegion({0.0}, {1.0}, FaceKind::Boundary));
  return c;
}

VirtualComplex polar_disk() {
  VirtualComplex c(0);
  ChartRegion r({0.0, 0.0}, {1.0, 2.0 * std::numbers::pi});
  r.set_periodic(1);
  r.set_face(0, false, FaceKind::Singular).set_face(0, true, FaceKind::Boundary);
  c.set_chart(IndexSet(), std::move(r));
  return c;
}

ChartRegion torus_region() {
  const double pi = std::numbers::pi;
  ChartRegion r({-pi / 2, -pi / 2}, {3 * pi / 2, 3 * pi / 2});
  r.set_periodic(0).set_periodic(1);
  return r;
}

VirtualComplex torus() {
  VirtualComplex c(0);
  c.set_chart(IndexSet(), torus_region());
  return c;
}

VirtualComplex sphere() {
  VirtualComplex c(0);
  ChartRegion r({0.0, 0.0}, {std::numbers::pi, 2.0 * std::numbers::pi}, FaceKind::Singular);
  r.set_periodic(1);
  c.set_chart(IndexSet(), std::move(r));
  return c;
}

}  // namespace vman::fixtures
