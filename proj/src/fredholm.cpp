#include "vman/fredholm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "detail.hpp"
#include "vman/fixtures.hpp"

namespace vman {

namespace {

constexpr std::uint64_t kSalt = 0x3c6ef372fe94f82bull;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

Expression var(int i) { return Expression::variable(i); }
Expression num(double v) { return Expression::constant(v); }

std::vector<CompiledExpression> compile(const std::vector<Expression>& es) {
  return {es.begin(), es.end()};
}

Eigen::VectorXd eval_map(const std::vector<CompiledExpression>& f, const double* x) {
  Eigen::VectorXd out(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) out[i] = f[i](x);
  return out;
}

Eigen::MatrixXd jacobian(const std::vector<Expression>& f, int dim, const double* x) {
  Eigen::MatrixXd J(f.size(), dim);
  for (std::size_t i = 0; i < f.size(); ++i)
    for (int j = 0; j < dim; ++j) J(i, j) = CompiledExpression(f[i].derivative(j))(x);
  return J;
}

std::string fmt(const char* format, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, format, a, b);
  return buf;
}

// x - c with periodic axes reduced to the nearest representative.
Point offset(const ChartRegion& base, const Point& x, const Point& c) {
  Point d(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    d[k] = x[k] - c[k];
    if (base.periodic(static_cast<int>(k))) {
      const double p = base.hi(static_cast<int>(k)) - base.lo(static_cast<int>(k));
      d[k] -= p * std::round(d[k] / p);
    }
  }
  return d;
}

double distance(const ChartRegion& base, const Point& x, const Point& c) {
  double s = 0.0;
  for (double v : offset(base, x, c)) s += v * v;
  return std::sqrt(s);
}

ChartRegion ball(const ChartRegion& base, const Point& c, double r) {
  const int n = static_cast<int>(c.size());
  std::vector<double> lo(n), hi(n);
  Expression g = num(-r * r);
  for (int k = 0; k < n; ++k) {
    lo[k] = c[k] - r;
    hi[k] = c[k] + r;
    if (base.periodic(k) && (lo[k] < base.lo(k) || hi[k] > base.hi(k)))
      throw StructureError("stabilization ball at " + format_point(c) + " crosses the periodic seam");
    g = g + (var(k) - num(c[k])) * (var(k) - num(c[k]));
  }
  ChartRegion out(lo, hi);
  out.add_constraint(g);
  return out;
}

// X × [-rho, rho]^k with the constraints of X; fiber faces are free.
ChartRegion with_fibers(const ChartRegion& x, int k, double rho) {
  const int n = x.dim();
  std::vector<double> lo = x.lo(), hi = x.hi();
  for (int a = 0; a < k; ++a) lo.push_back(-rho), hi.push_back(rho);
  ChartRegion out(lo, hi, FaceKind::Free);
  for (int a = 0; a < n; ++a) {
    out.set_face(a, false, x.face(a, false));
    out.set_face(a, true, x.face(a, true));
    if (x.periodic(a)) out.set_periodic(a);
  }
  for (const auto& c : x.constraints()) out.add_constraint(c.g, c.kind);
  return out;
}

ChartForm extend(const ChartForm& f, int dim) {
  ChartForm out(dim);
  for (const auto& [m, e] : f.terms()) out.add(m, e);
  return out;
}

// A form on R^k placed on the given axes of a chart of dimension dim.
ChartForm place(const ChartForm& f, int dim, const std::vector<int>& axes) {
  if (axes.empty()) return ChartForm::function(dim, f.coefficient(0));
  std::vector<Expression> map;
  for (int a : axes) map.push_back(var(a));
  return pullback(map, dim, f);
}

struct Layout {
  int n = 0;
  std::vector<int> ranks;  // per datum

  int rank(IndexSet I) const {
    int k = 0;
    for (int i : I.elements()) k += ranks[i - 1];
    return k;
  }
  // Position of block i among the fiber coordinates of I.
  int offset(IndexSet I, int i) const {
    int k = 0;
    for (int j : I.elements())
      if (j < i) k += ranks[j - 1];
    return k;
  }
  std::vector<int> axes(IndexSet I, int i) const {
    std::vector<int> out;
    for (int t = 0; t < ranks[i - 1]; ++t) out.push_back(n + offset(I, i) + t);
    return out;
  }
};

struct Coverage {
  ValidationReport report;
  Point witness;
};

Coverage verify(const FredholmSystem& sys, const std::vector<StabilizationDatum>& stab, int samples, double tol,
                std::uint64_t seed) {
  Coverage out;
  const int n = sys.dim();
  const int m = sys.rank;
  for (std::size_t i = 0; i < stab.size(); ++i) {
    const auto& s = stab[i];
    const std::string tag = " " + std::to_string(i + 1);
    const int k = s.rank();
    Eigen::MatrixXd E(m, k);
    for (int t = 0; t < k; ++t) {
      if (static_cast<int>(s.columns[t].size()) != m) throw StructureError("obstruction column of wrong length");
      for (int a = 0; a < m; ++a) E(a, t) = s.columns[t][a];
    }
    if (k > 0) {
      const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(E).singularValues();
      out.report.add("columns" + tag, sv[k - 1] > tol * std::max(1.0, sv[0]),
                     fmt("smallest singular value %.3g", sv[k - 1]));
    }
    const CompiledExpression eta(s.cutoff);
    std::mt19937_64 rng(detail::mix_seed(kSalt, seed, i, 1));
    const ChartRegion half = ball(sys.base, s.center, 0.5 * s.radius).intersect(sys.base);
    bool surjective = true;
    bool plateau = true;
    std::string detail;
    for (const auto& x : sample_region(half, samples, rng)) {
      Eigen::MatrixXd L(m, n + k);
      L << linearization(sys, x), E;
      const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(L).singularValues();
      if (m > 0 && sv[m - 1] <= tol * std::max(1.0, sv[0]) && surjective) {
        surjective = false;
        detail = "rank drop at " + format_point(x);
      }
      if (std::fabs(eta(x) - 1.0) > 1e-12) plateau = false;
    }
    out.report.add("surjective" + tag, surjective, detail);
    const ChartRegion outer = ball(sys.base, s.center, s.radius);
    bool outside_zero = true;
    for (const auto& x : sample_region(outer, samples, rng, [&](const double* y) {
           return distance(sys.base, Point(y, y + n), s.center) >= 0.75 * s.radius;
         }))
      if (eta(x) != 0.0) outside_zero = false;
    out.report.add("cutoff" + tag, plateau && outside_zero);
  }

  // Gauss-Newton probes for zeros of S outside the closed half balls.
  const auto S = compile(sys.section);
  auto outside = [&](const double* y) {
    const Point x(y, y + n);
    for (const auto& s : stab)
      if (distance(sys.base, x, s.center) <= 0.5 * s.radius) return false;
    return true;
  };
  std::mt19937_64 rng(detail::mix_seed(kSalt, seed, 0x636f76ull));
  bool covered = true;
  std::string detail;
  for (auto x : sample_region(sys.base, std::max(16, samples / 4), rng, outside)) {
    Eigen::VectorXd f = eval_map(S, x.data());
    for (int it = 0; it < 80 && f.norm() >= tol; ++it) {
      const Eigen::VectorXd step = linearization(sys, x).completeOrthogonalDecomposition().solve(f);
      for (int a = 0; a < n; ++a) x[a] -= step[a];
      sys.base.wrap(x.data());
      f = eval_map(S, x.data());
    }
    if (f.norm() < tol && sys.base.contains(x, 1e-9) && outside(x.data())) {
      covered = false;
      detail = "zero of S at " + format_point(x) + " outside every half ball";
      out.witness = x;
      break;
    }
  }
  out.report.add("coverage", covered, detail);
  return out;
}

std::vector<Expression> stabilized_section(const FredholmSystem& sys, const std::vector<StabilizationDatum>& stab,
                                           const Layout& lay, IndexSet I) {
  std::vector<Expression> F = sys.section;
  for (int i : I.elements()) {
    const auto& s = stab[i - 1];
    const int base = lay.n + lay.offset(I, i);
    for (int a = 0; a < sys.rank; ++a) {
      Expression sum;
      for (int t = 0; t < s.rank(); ++t)
        if (s.columns[t][a] != 0.0) sum = sum + num(s.columns[t][a]) * var(base + t);
      if (!sum.is_zero()) F[a] = F[a] + s.cutoff * sum;
    }
  }
  return F;
}

}  // namespace

Eigen::MatrixXd linearization(const FredholmSystem& sys, const Point& x) {
  return jacobian(sys.section, sys.dim(), x.data());
}

std::vector<Point> cokernel_basis(const Eigen::MatrixXd& L, double threshold) {
  const int m = static_cast<int>(L.rows());
  if (m == 0) return {};
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(L, Eigen::ComputeFullU);
  const Eigen::VectorXd& sv = svd.singularValues();
  int rank = 0;
  const double cut = sv.size() > 0 ? threshold * sv[0] : 0.0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv[i] > cut) ++rank;
  std::vector<Point> out;
  for (int c = rank; c < m; ++c) {
    Point v(m);
    for (int a = 0; a < m; ++a) v[a] = svd.matrixU()(a, c);
    out.push_back(std::move(v));
  }
  return out;
}

Expression stabilization_cutoff(const Point& center, double radius) {
  Expression r2;
  for (std::size_t k = 0; k < center.size(); ++k) {
    const Expression d = var(static_cast<int>(k)) - num(center[k]);
    r2 = r2 + d * d;
  }
  return smooth_step_down((num(16.0 / (radius * radius)) * r2 - num(4.0)) / num(5.0));
}

ValidationReport verify_stabilization(const FredholmSystem& sys, const std::vector<StabilizationDatum>& stab,
                                      int samples, double tol, std::uint64_t seed) {
  return verify(sys, stab, samples, tol, seed).report;
}

std::vector<StabilizationDatum> build_stabilization_system(const FredholmSystem& sys, const std::vector<Point>& centers,
                                                           const std::vector<double>& radii, double threshold,
                                                           int samples, std::uint64_t seed) {
  if (centers.size() != radii.size()) throw StructureError("one radius per stabilization center");
  if (static_cast<int>(sys.section.size()) != sys.rank) throw StructureError("section length differs from the rank");
  std::vector<StabilizationDatum> out;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    if (static_cast<int>(centers[i].size()) != sys.dim()) throw StructureError("center of wrong dimension");
    if (!(radii[i] > 0.0)) throw StructureError("stabilization radius must be positive");
    StabilizationDatum s;
    s.center = centers[i];
    s.radius = radii[i];
    s.cutoff = stabilization_cutoff(s.center, s.radius);
    s.columns = cokernel_basis(linearization(sys, s.center), threshold);
    out.push_back(std::move(s));
  }
  const Coverage check = verify(sys, out, samples, 1e-8, seed);
  if (const CheckResult* f = check.report.first_failure())
    throw StabilizationError("stabilization check '" + f->name + "' failed: " + f->detail, check.witness);
  return out;
}

ChartForm VirtualNeighborhoodSystem::obstruction_form(IndexSet I) const {
  const int dim = ambient.dim(I);
  ChartForm out = ChartForm::function(dim, num(1.0));
  int axis = base_dim;
  for (int len : block_ranks.at(I)) {
    std::vector<int> axes;
    for (int t = 0; t < len; ++t) axes.push_back(axis++);
    if (!axes.empty()) out = wedge(out, thom_form_on(dim, axes, options.thom_radius));
  }
  return out;
}

VirtualNeighborhoodSystem build_virtual_neighborhoods(const FredholmSystem& sys,
                                                      const std::vector<StabilizationDatum>& stab,
                                                      const NeighborhoodOptions& options) {
  if (!(options.fiber_extent > options.thom_radius))
    throw StructureError("fiber extent must exceed the Thom radius");
  const int n = sys.dim();
  Layout lay;
  lay.n = n;
  std::vector<ChartRegion> cover{sys.base};
  for (const auto& s : stab) {
    lay.ranks.push_back(s.rank());
    cover.push_back(sys.base.intersect(ball(sys.base, s.center, s.radius)));
  }

  VirtualNeighborhoodSystem w;
  w.options = options;
  w.base_dim = n;
  w.rank = sys.rank;
  w.base = from_cover(n, cover, options.shrink);
  w.ambient = VirtualComplex(w.base.n());
  const double rho = options.fiber_extent;

  for (IndexSet I : w.base.chart_indices()) {
    const int k = lay.rank(I);
    w.ambient.set_chart(I, with_fibers(w.base.chart(I), k, rho));
    for (int i : I.elements()) {
      w.blocks[I].push_back(i - 1);
      w.block_ranks[I].push_back(lay.ranks[i - 1]);
    }
    w.blocks[I];
    w.block_ranks[I];  // present even for I = ∅
    w.obstruction.rank[I] = k;
    std::vector<Expression> sigma;
    ChartForm lambda = ChartForm::function(k, num(1.0));
    for (int i : I.elements()) {
      std::vector<int> axes;
      for (int t = 0; t < lay.ranks[i - 1]; ++t) {
        axes.push_back(lay.offset(I, i) + t);
        sigma.push_back(var(n + lay.offset(I, i) + t));
      }
      if (!axes.empty()) lambda = wedge(lambda, thom_form_on(k, axes, options.thom_radius));
    }
    w.sigma[I] = std::move(sigma);
    w.obstruction_thom[I] = std::move(lambda);
    w.stabilized[I] = stabilized_section(sys, stab, lay, I);
  }

  for (const Overlap& o : w.base.overlaps()) {
    const IndexSet I = o.small, J = o.big;
    const int kI = lay.rank(I), kJ = lay.rank(J);
    const IndexSet D = J - I;
    Overlap y;
    y.small = I;
    y.big = J;
    y.region_in_small = with_fibers(o.region_in_small, kI, rho);
    y.region_in_big = with_fibers(o.region_in_big, kJ, rho);
    y.rank = kJ - kI;
    for (int a = 0; a < n; ++a) y.projection.push_back(var(a)), y.fiber_param.push_back(var(a));
    std::vector<int> order;
    for (int j : J.elements()) {
      for (int t = 0; t < lay.ranks[j - 1]; ++t) {
        if (I.contains(j)) {
          y.fiber_param.push_back(var(n + lay.offset(I, j) + t));
          order.push_back(kJ - kI + lay.offset(I, j) + t);
        } else {
          y.fiber_param.push_back(var(n + kI + lay.offset(D, j) + t));
          order.push_back(lay.offset(D, j) + t);
        }
      }
    }
    for (int i : I.elements())
      for (int t = 0; t < lay.ranks[i - 1]; ++t) y.projection.push_back(var(n + lay.offset(J, i) + t));
    if (y.rank > 0) {
      ChartForm theta = ChartForm::function(n + kJ, num(1.0));
      for (int j : D.elements())
        if (lay.ranks[j - 1] > 0) theta = wedge(theta, thom_form_on(n + kJ, lay.axes(J, j), options.thom_radius));
      w.theta[{I, J}] = std::move(theta);
    }
    w.obstruction.order[{I, J}] = std::move(order);
    w.ambient.add_overlap(std::move(y));
  }
  return w;
}

ValidationReport validate_neighborhoods(const VirtualNeighborhoodSystem& w, int samples, std::uint64_t seed) {
  ValidationReport report;
  report.merge(validate_virtual(w.ambient, samples, 1e-8, seed));
  report.merge(validate_transition_data(w.ambient, w.theta, samples, 1e-8, seed));
  report.merge(validate_virtual_bundle(w.ambient, w.obstruction, w.sigma, w.obstruction_thom, w.theta, samples,
                                       1e-8, seed));
  return report;
}

InvariantResult invariant(const VirtualNeighborhoodSystem& w, const ChartForm& a, const QuadratureSpec& q) {
  const int d = w.base_dim - w.rank;
  if (a.dim() != w.base_dim) throw StructureError("form lives on a chart of the wrong dimension");
  if (!a.is_zero() && a.degree() != d)
    throw StructureError("degree mismatch: the index is " + std::to_string(d) + ", the form has degree " +
                         std::to_string(a.degree()));
  InvariantResult out;
  if (!a.is_zero()) {
    const CompiledForm da(exterior_derivative(a));
    std::vector<double> vals(da.monomials().size());
    std::mt19937_64 rng(detail::mix_seed(kSalt, q.seed, 0x636c6full));
    double defect = 0.0;
    for (const auto& x : sample_region(w.base.chart(IndexSet()), 64, rng)) {
      da.evaluate(x.data(), 0.0, vals.data());
      for (double v : vals) defect = std::max(defect, std::fabs(v));
    }
    if (defect > 1e-8) out.warnings.push_back(fmt("form is not closed (|da| = %.3g)", defect));
  }
  const ChartForm lambda = w.rank > 0 ? thom_form(w.rank, w.options.section_radius) : ChartForm::function(0, num(1.0));
  VirtualFormFamily z;
  z.theta = w.theta;
  for (IndexSet I : w.ambient.chart_indices()) {
    const int dim = w.ambient.dim(I);
    z.forms[I] = wedge(pullback(w.stabilized.at(I), dim, lambda), wedge(extend(a, dim), w.obstruction_form(I)));
  }
  try {
    out.value = integrate_incl_excl(w.ambient, z, q);
  } catch (const SupportError& e) {
    throw SupportError(std::string(e.what()) + "; reduce the section Thom radius or the stabilization radii");
  }
  out.warnings.insert(out.warnings.end(), out.value.warnings.begin(), out.value.warnings.end());
  return out;
}

InvariantResult invariant(const FredholmSystem& sys, const std::vector<StabilizationDatum>& stab, const ChartForm& a,
                          const QuadratureSpec& q, const NeighborhoodOptions& options) {
  return invariant(build_virtual_neighborhoods(sys, stab, options), a, q);
}

IndependenceResult check_independence(const FredholmSystem& sys, const std::vector<StabilizationDatum>& a_stab,
                                      const std::vector<StabilizationDatum>& b_stab, const ChartForm& a,
                                      const QuadratureSpec& q, const NeighborhoodOptions& options,
                                      std::uint64_t seed) {
  IndependenceResult r;
  r.phi_a = invariant(sys, a_stab, a, q, options).value;
  r.phi_b = invariant(sys, b_stab, a, q, options).value;
  std::mt19937_64 rng(detail::mix_seed(kSalt, seed, 0x726164ull));
  std::uniform_real_distribution<double> factor(0.6, 1.0);
  NeighborhoodOptions redrawn = options;
  redrawn.thom_radius *= factor(rng);
  redrawn.section_radius *= factor(rng);
  r.phi_a_radii = invariant(sys, a_stab, a, q, redrawn).value;
  r.residual = std::fabs(r.phi_a.value - r.phi_b.value);
  r.radius_residual = std::fabs(r.phi_a.value - r.phi_a_radii.value);
  return r;
}

ChartForm equivariant_thom_form(const Eigen::MatrixXd& generator, double radius) {
  const int k = static_cast<int>(generator.rows());
  if (k == 0) return ChartForm::function(0, num(1.0));
  Eigen::RealSchur<Eigen::MatrixXd> schur(generator);
  const Eigen::MatrixXd& T = schur.matrixT();
  const Eigen::MatrixXd& U = schur.matrixU();
  const double scale = std::max(1.0, generator.norm());
  ChartForm y = ChartForm::function(k, num(1.0));
  for (int i = 0; i < k;) {
    if (i + 1 < k && std::fabs(T(i + 1, i)) > 1e-12 * scale) {
      const double wt = T(i + 1, i);
      if (std::fabs(wt - std::round(wt)) > 1e-8 * scale)
        throw StructureError(fmt("rotation weight %.12g is not an integer", wt));
      y = wedge(y, equivariant_thom_form_on(k, {i, i + 1}, {static_cast<int>(std::lround(wt))}, radius));
      i += 2;
    } else {
      y = wedge(y, thom_form_on(k, {i}, radius));
      ++i;
    }
  }
  std::vector<Expression> map(k);
  for (int i = 0; i < k; ++i) {
    Expression e;
    for (int j = 0; j < k; ++j)
      if (U(j, i) != 0.0) e = e + num(U(j, i)) * var(j);
    map[i] = e;
  }
  ChartForm out = pullback(map, k, y);
  return U.determinant() < 0 ? -out : out;
}

double EquivariantInvariantResult::max_residual() const {
  double m = 0.0;
  for (const auto& p : probes) m = std::max(m, p.residual);
  return m;
}

namespace {

Eigen::MatrixXd flow_generator(const std::vector<Expression>& flow, int dim) {
  Point zero(dim + 1, 0.0);
  Eigen::MatrixXd B(dim, dim);
  for (int a = 0; a < dim; ++a) {
    const Expression dt = flow[a].derivative(dim);
    for (int b = 0; b < dim; ++b) B(a, b) = CompiledExpression(dt.derivative(b))(zero.data());
  }
  return B;
}

Point flow_at(const std::vector<CompiledExpression>& flow, const double* x, int dim, double theta) {
  Point y(x, x + dim);
  y.push_back(theta);
  Point out(flow.size());
  for (std::size_t i = 0; i < flow.size(); ++i) out[i] = flow[i](y.data());
  return out;
}

void require_equivariant(const FredholmSystem& sys, const FredholmAction& act,
                         const std::vector<StabilizationDatum>& stab, std::uint64_t seed) {
  const int n = sys.dim(), m = sys.rank;
  if (static_cast<int>(act.base_flow.size()) != n || static_cast<int>(act.fiber_flow.size()) != m)
    throw StructureError("action has the wrong number of components");
  const auto a = compile(act.base_flow);
  const auto rho = compile(act.fiber_flow);
  const auto S = compile(sys.section);
  std::mt19937_64 rng(detail::mix_seed(kSalt, seed, 0x657175ull));
  std::uniform_real_distribution<double> angle(0.0, kTwoPi);
  const double tol = 1e-8;
  for (const auto& x : sample_region(sys.base, 64, rng)) {
    const double th = angle(rng);
    const Point gx = flow_at(a, x.data(), n, th);
    const Eigen::VectorXd lhs = eval_map(S, gx.data());
    const Eigen::VectorXd sx = eval_map(S, x.data());
    const Point rhs = flow_at(rho, sx.data(), m, th);
    for (int i = 0; i < m; ++i)
      if (!detail::close(lhs[i], rhs[i], tol))
        throw StructureError("section is not equivariant at " + format_point(x) + fmt(", angle %.6g", th));
  }
  for (std::size_t i = 0; i < stab.size(); ++i) {
    const auto& s = stab[i];
    const std::string tag = "stabilization " + std::to_string(i + 1);
    for (double th : {0.7, 2.1, 4.4})
      if (distance(sys.base, flow_at(a, s.center.data(), n, th), s.center) > tol)
        throw StructureError(tag + " is centered at a point the action moves");
    const CompiledExpression eta(s.cutoff);
    for (const auto& x : sample_region(ball(sys.base, s.center, s.radius), 32, rng)) {
      const Point gx = flow_at(a, x.data(), n, angle(rng));
      if (std::fabs(eta(gx) - eta(x)) > tol) throw StructureError(tag + " has a cutoff that is not invariant");
    }
    const int k = s.rank();
    if (k == 0) continue;
    Eigen::MatrixXd E(m, k);
    for (int t = 0; t < k; ++t)
      for (int b = 0; b < m; ++b) E(b, t) = s.columns[t][b];
    const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(E).householderQ() * Eigen::MatrixXd::Identity(m, k);
    for (double th : {0.7, 2.1, 4.4})
      for (int t = 0; t < k; ++t) {
        const Point g = flow_at(rho, s.columns[t].data(), m, th);
        const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(g.data(), m);
        if ((v - Q * (Q.transpose() * v)).norm() > tol * std::max(1.0, v.norm()))
          throw StructureError(tag + " has an obstruction space that is not invariant");
      }
  }
}

}  // namespace

EquivariantInvariantResult invariant_equivariant(const FredholmSystem& sys, const FredholmAction& act,
                                                 const std::vector<StabilizationDatum>& stab,
                                                 const ChartForm& alpha, const std::vector<Point>& fixed,
                                                 const QuadratureSpec& q, const std::vector<double>& u_probes,
                                                 const NeighborhoodOptions& options) {
  const int n = sys.dim(), m = sys.rank;
  require_equivariant(sys, act, stab, q.seed);
  const VirtualNeighborhoodSystem w = build_virtual_neighborhoods(sys, stab, options);
  if (alpha.dim() != n) throw StructureError("form lives on a chart of the wrong dimension");

  const Eigen::MatrixXd B = flow_generator(act.fiber_flow, m);
  std::vector<Eigen::MatrixXd> E(stab.size());
  std::vector<ChartForm> block_thom(stab.size());
  // Generator of the action on O_i in the coordinates of its columns.
  auto restricted = [&](std::size_t i) -> Eigen::MatrixXd {
    if (E[i].cols() == 0) return Eigen::MatrixXd(0, 0);
    return E[i].completeOrthogonalDecomposition().solve(B * E[i]);
  };
  for (std::size_t i = 0; i < stab.size(); ++i) {
    const int k = stab[i].rank();
    E[i].resize(m, k);
    for (int t = 0; t < k; ++t)
      for (int b = 0; b < m; ++b) E[i](b, t) = stab[i].columns[t][b];
    block_thom[i] = equivariant_thom_form(restricted(i), options.thom_radius);
  }
  const ChartForm lambda = equivariant_thom_form(B, options.section_radius);

  auto obstruction_form = [&](IndexSet I, int dim) {
    ChartForm out = ChartForm::function(dim, num(1.0));
    int axis = n;
    for (int i : w.blocks.at(I)) {
      std::vector<int> axes;
      for (int t = 0; t < stab[i].rank(); ++t) axes.push_back(axis++);
      if (!axes.empty()) out = wedge(out, place(block_thom[i], dim, axes));
    }
    return out;
  };

  VirtualFormFamily z;
  for (IndexSet I : w.ambient.chart_indices()) {
    const int dim = w.ambient.dim(I);
    z.forms[I] = wedge(pullback(w.stabilized.at(I), dim, lambda), wedge(extend(alpha, dim), obstruction_form(I, dim)));
  }
  for (const auto& [key, unused] : w.theta) {
    const auto [I, J] = key;
    const int dim = w.ambient.dim(J);
    ChartForm t = ChartForm::function(dim, num(1.0));
    int axis = n;
    for (int i : w.blocks.at(J)) {
      std::vector<int> axes;
      for (int s = 0; s < stab[i].rank(); ++s) axes.push_back(axis++);
      if (!axes.empty() && !I.contains(i + 1)) t = wedge(t, place(block_thom[i], dim, axes));
    }
    z.theta[key] = t;
  }

  // Fixed points of W: zeros of S fixed by the action, with o = 0.
  EquivariantInvariantResult result;
  struct Contribution {
    ChartForm zero_part;  // (α ∧ Θ_G) at the point, as a 0-form in u
    Point y;
    int m_p = 0;
    double euler = 0.0;   // sign · ∏|w|
  };
  std::vector<Contribution> terms;
  const auto S = compile(sys.section);
  const auto flow = compile(act.base_flow);
  std::vector<Expression> V(n);
  {
    std::vector<Expression> at_zero;
    for (int a = 0; a < n; ++a) at_zero.push_back(var(a));
    at_zero.push_back(num(0.0));
    for (int a = 0; a < n; ++a) V[a] = act.base_flow[a].derivative(n).substitute(at_zero);
  }
  for (const Point& x : fixed) {
    if (static_cast<int>(x.size()) != n) throw StructureError("fixed point of wrong dimension");
    if (eval_map(S, x.data()).norm() > 1e-8) continue;
    for (double th : {0.9, 3.3})
      if (distance(sys.base, flow_at(flow, x.data(), n, th), x) > 1e-8)
        throw StructureError("point " + format_point(x) + " is not fixed by the action");
    IndexSet chart;
    bool found = false;
    for (IndexSet I : w.ambient.chart_indices()) {
      Point y = x;
      y.resize(w.ambient.dim(I), 0.0);
      if (w.ambient.chart(I).contains(y, 0.0)) chart = I, found = true;
    }
    if (!found) throw StructureError("fixed point " + format_point(x) + " lies in no chart");
    const int dim = w.ambient.dim(chart);
    Point y = x;
    y.resize(dim, 0.0);
    const Eigen::MatrixXd DF = jacobian(w.stabilized.at(chart), dim, y.data());
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(DF, Eigen::ComputeFullV);
    if (m > 0 && svd.singularValues()[m - 1] < 1e-8 * std::max(1.0, svd.singularValues()[0]))
      throw StructureError("W is not cut out transversally at " + format_point(x));
    const Eigen::MatrixXd K = svd.matrixV().rightCols(dim - m);
    Eigen::MatrixXd CK(dim, dim);
    CK << DF.completeOrthogonalDecomposition().pseudoInverse(), K;
    const int orientation = CK.determinant() < 0 ? -1 : 1;

    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(dim, dim);
    A.topLeftCorner(n, n) = jacobian(V, n, x.data());
    int axis = n;
    for (int i : w.blocks.at(chart)) {
      const int k = stab[i].rank();
      if (k > 0) A.block(axis, axis, k, k) = restricted(i);
      axis += k;
    }
    const Eigen::MatrixXd AK = K.transpose() * A * K;
    if ((A * K - K * AK).norm() > 1e-8 * std::max(1.0, A.norm()))
      throw StructureError("tangent space of W at " + format_point(x) + " is not invariant");
    const NormalWeights nw = detail::schur_weights(AK);
    if ((dim - m) % 2 != 0 || std::any_of(nw.magnitudes.begin(), nw.magnitudes.end(), [](double v) { return v < 1e-8; }))
      throw StructureError("fixed point " + format_point(x) + " is not isolated in W");
    Contribution c;
    c.y = y;
    c.m_p = (dim - m) / 2;
    c.euler = orientation * nw.sign;
    for (double v : nw.magnitudes) c.euler *= v;
    c.zero_part = ChartForm::function(dim, wedge(extend(alpha, dim), obstruction_form(chart, dim)).coefficient(0));
    terms.push_back(std::move(c));
    result.fixed_points.push_back(x);
  }

  for (double u : u_probes) {
    if (u == 0.0) throw std::invalid_argument("localization needs u != 0");
    EquivariantInvariantProbe p;
    p.u = u;
    p.lhs = integrate_incl_excl(w.ambient, z, q, u);
    for (const auto& c : terms)
      p.rhs += std::pow(kTwoPi, c.m_p) * c.zero_part.value(0, c.y.data(), u) / (c.euler * std::pow(u, c.m_p));
    p.residual = std::fabs(p.lhs.value - p.rhs);
    result.probes.push_back(std::move(p));
  }
  return result;
}

namespace fixtures {

FredholmSystem torus_system() {
  FredholmSystem s;
  s.base = vman::fixtures::torus_region();
  s.rank = 2;
  s.section = {sin(var(0)), sin(var(1))};
  return s;
}

ChartRegion unit_disk() {
  ChartRegion r({-1.0, -1.0}, {1.0, 1.0}, FaceKind::Free);
  r.add_constraint(var(0) * var(0) + var(1) * var(1) - num(1.0), FaceKind::Free);
  return r;
}

FredholmSystem fold_system() {
  return {unit_disk(), 2, {var(0) * var(0), var(1)}};
}

FredholmSystem z_squared_system() {
  return {unit_disk(), 2, {var(0) * var(0) - var(1) * var(1), num(2.0) * var(0) * var(1)}};
}

FredholmSystem identity_system() { return {unit_disk(), 2, {var(0), var(1)}}; }

FredholmAction disk_rotation(int fiber_weight) {
  const Expression th = var(2);
  const Expression wt = num(fiber_weight) * var(2);
  return {{cos(th) * var(0) - sin(th) * var(1), sin(th) * var(0) + cos(th) * var(1)},
          {cos(wt) * var(0) - sin(wt) * var(1), sin(wt) * var(0) + cos(wt) * var(1)}};
}

}  // namespace fixtures

}  // namespace vman
