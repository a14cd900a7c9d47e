#pragma once

#include <functional>
#include <random>

#include "vman/complex.hpp"

namespace vman::test {

/// Copy of `c` with overlap number `which` passed through `edit`.
inline VirtualComplex edit_overlap(const VirtualComplex& c, std::size_t which, const std::function<void(Overlap&)>& edit) {
  VirtualComplex out(c.n());
  for (IndexSet I : c.chart_indices()) out.set_chart(I, c.chart(I));
  for (std::size_t k = 0; k < c.overlaps().size(); ++k) {
    Overlap o = c.overlaps()[k];
    if (k == which) edit(o);
    out.add_overlap(std::move(o));
  }
  return out;
}

/// Copy of `c` with chart I replaced.
inline VirtualComplex edit_chart(const VirtualComplex& c, IndexSet I, const std::function<void(ChartRegion&)>& edit) {
  VirtualComplex out(c.n());
  for (IndexSet K : c.chart_indices()) {
    ChartRegion r = c.chart(K);
    if (K == I) edit(r);
    out.set_chart(K, r);
  }
  for (const auto& o : c.overlaps()) out.add_overlap(o);
  return out;
}

/// Random cover of the unit cube: U_i boxes or disks, U_0 the cube minus the
/// closed half-size copies of the U_i (the rings U_i - U_i° then lie in U_0).
inline std::vector<ChartRegion> random_cover(std::mt19937_64& rng, int dim, int n) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ChartRegion> cover{ChartRegion(std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0))};
  cover[0].set_faces(FaceKind::Boundary);
  for (int i = 1; i <= n; ++i) {
    std::vector<double> lo(dim), hi(dim);
    for (int k = 0; k < dim; ++k) {
      const double a = unit(rng);
      const double w = 0.3 + 0.5 * unit(rng);
      lo[k] = std::max(0.0, a - w / 2);
      hi[k] = std::min(1.0, a + w / 2);
      if (hi[k] - lo[k] < 0.2) hi[k] = lo[k] + 0.2;
    }
    ChartRegion r(lo, hi);
    if (dim == 2 && i > 0 && unit(rng) < 0.5) {
      const double cx = 0.5 * (lo[0] + hi[0]);
      const double cy = 0.5 * (lo[1] + hi[1]);
      const double rad = 0.5 * std::min(hi[0] - lo[0], hi[1] - lo[1]);
      r = ChartRegion({cx - rad, cy - rad}, {cx + rad, cy + rad});
      r.add_constraint(pow(Expression::variable(0) - Expression::constant(cx), Expression::constant(2.0)) +
                       pow(Expression::variable(1) - Expression::constant(cy), Expression::constant(2.0)) -
                       Expression::constant(rad * rad));
    }
    cover.push_back(r);
  }
  for (int i = 1; i <= n; ++i) cover[0].exclude(cover[i].homothety(0.5));
  return cover;
}

/// Random smooth expression in x0..x{vars-1}.
inline Expression random_expression(std::mt19937_64& rng, int depth, int vars = 3) {
  std::uniform_int_distribution<int> pick(0, depth <= 0 ? 1 : 11);
  std::uniform_int_distribution<int> var(0, vars - 1);
  std::uniform_real_distribution<double> coef(-2.0, 2.0);
  switch (pick(rng)) {
    case 0:
      return Expression::variable(var(rng));
    case 1:
      return Expression::constant(std::round(coef(rng) * 100.0) / 100.0);
    case 2:
      return random_expression(rng, depth - 1, vars) + random_expression(rng, depth - 1, vars);
    case 3:
      return random_expression(rng, depth - 1, vars) - random_expression(rng, depth - 1, vars);
    case 4:
      return random_expression(rng, depth - 1, vars) * random_expression(rng, depth - 1, vars);
    case 5: {
      Expression d = random_expression(rng, depth - 1, vars);
      return random_expression(rng, depth - 1, vars) / (Expression::constant(1.5) + d * d);
    }
    case 6:
      return sin(random_expression(rng, depth - 1, vars));
    case 7:
      return cos(random_expression(rng, depth - 1, vars));
    case 8:
      return Expression::unary(Op::Tanh, random_expression(rng, depth - 1, vars));
    case 9:
      return bump(Expression::constant(0.4) * Expression::unary(Op::Tanh, random_expression(rng, depth - 1, vars)));
    case 10:
      return pow(random_expression(rng, depth - 1, vars), Expression::constant(3.0));
    default: {
      Expression a = random_expression(rng, depth - 1, vars);
      return sqrt(Expression::constant(1.0) + a * a);
    }
  }
}

}  // namespace vman::test
