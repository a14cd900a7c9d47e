#include "vman/equivariant.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "detail.hpp"

namespace vman {

namespace {

constexpr std::uint64_t kSalt = 0xbb67ae8584caa73bull;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::vector<Expression> identity_map(int dim) {
  std::vector<Expression> m;
  for (int i = 0; i < dim; ++i) m.push_back(Expression::variable(i));
  return m;
}

bool is_identity(const std::vector<Expression>& map, int dim) {
  if (static_cast<int>(map.size()) != dim) return false;
  for (int i = 0; i < dim; ++i)
    if (map[i].op() != Op::Var || map[i].variable_index() != i) return false;
  return true;
}

std::vector<CompiledExpression> compile(const std::vector<Expression>& es) {
  std::vector<CompiledExpression> out;
  out.reserve(es.size());
  for (const auto& e : es) out.emplace_back(e);
  return out;
}

Point eval_map(const std::vector<CompiledExpression>& f, const double* x) {
  Point out(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) out[i] = f[i](x);
  return out;
}

Eigen::MatrixXd jacobian(const std::vector<Expression>& f, int dim, const double* x) {
  Eigen::MatrixXd J(f.size(), dim);
  for (std::size_t i = 0; i < f.size(); ++i)
    for (int j = 0; j < dim; ++j) J(i, j) = CompiledExpression(f[i].derivative(j))(x);
  return J;
}

double sup_norm(const Point& v) {
  double m = 0.0;
  for (double a : v) m = std::max(m, std::fabs(a));
  return m;
}

std::string fmt(const char* format, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, format, a, b);
  return buf;
}

// Form inverse of e = e0 + n with n nilpotent: Σ_k (-1)^k n^k / e0^{k+1}.
ChartForm form_inverse(const ChartForm& e) {
  const Expression e0 = e.coefficient(0);
  const ChartForm n = e - ChartForm::function(e.dim(), e0);
  const Expression inv = Expression::constant(1.0) / e0;
  ChartForm term = ChartForm::function(e.dim(), inv);
  ChartForm sum = term;
  for (int k = 1; k <= e.dim() / 2 + 1 && !n.is_zero(); ++k) {
    term = -(inv * wedge(term, n));
    if (term.is_zero()) break;
    sum = sum + term;
  }
  return sum;
}

// Distance from chart point x to a declared fixed chart, by Gauss-Newton in t.
double distance_to(const ChartRegion& chart, const FixedChart& f, const double* x, std::mt19937_64& rng) {
  const int fd = f.region.dim();
  const auto emb = compile(f.embedding);
  if (fd == 0) return region_distance(chart, eval_map(emb, nullptr).data(), x);
  double best = std::numeric_limits<double>::infinity();
  Point tbest;
  for (const auto& t : sample_region(f.region, 32, rng)) {
    const double d = region_distance(chart, eval_map(emb, t.data()).data(), x);
    if (d < best) best = d, tbest = t;
  }
  if (tbest.empty()) return best;
  Eigen::VectorXd t = Eigen::Map<Eigen::VectorXd>(tbest.data(), fd);
  const int d = chart.dim();
  for (int it = 0; it < 30; ++it) {
    const Point y = eval_map(emb, t.data());
    Eigen::VectorXd r(d);
    for (int i = 0; i < d; ++i) r[i] = y[i] - x[i];
    if (r.norm() < 1e-13) break;
    t -= jacobian(f.embedding, fd, t.data()).completeOrthogonalDecomposition().solve(r);
  }
  return std::min(best, region_distance(chart, eval_map(emb, t.data()).data(), x));
}

}  // namespace

NormalWeights detail::schur_weights(const Eigen::MatrixXd& A) {
  NormalWeights out;
  const int n = static_cast<int>(A.rows());
  if (n == 0) return out;
  Eigen::RealSchur<Eigen::MatrixXd> schur(A);
  const Eigen::MatrixXd& T = schur.matrixT();
  const double scale = std::max(1.0, A.norm());
  int sign = schur.matrixU().determinant() < 0 ? -1 : 1;
  for (int i = 0; i < n;) {
    if (i + 1 < n && std::fabs(T(i + 1, i)) > 1e-12 * scale) {
      out.magnitudes.push_back(std::sqrt(std::fabs(T(i, i + 1) * T(i + 1, i))));
      if (T(i + 1, i) < 0) sign = -sign;
      i += 2;
    } else {
      out.magnitudes.push_back(0.0);
      ++i;
    }
  }
  std::sort(out.magnitudes.begin(), out.magnitudes.end(), std::greater<>());
  out.sign = sign;
  return out;
}

std::vector<Expression> CircleAction::vector_field(IndexSet I) const {
  const auto& f = flow.at(I);
  const int d = static_cast<int>(f.size());
  std::vector<Expression> subst = identity_map(d);
  subst.push_back(Expression::constant(0.0));
  std::vector<Expression> V;
  for (const auto& e : f) V.push_back(e.derivative(d).substitute(subst));
  return V;
}

std::vector<Expression> CircleAction::at_angle(IndexSet I, double theta) const {
  const auto& f = flow.at(I);
  std::vector<Expression> subst = identity_map(static_cast<int>(f.size()));
  subst.push_back(Expression::constant(theta));
  std::vector<Expression> out;
  for (const auto& e : f) out.push_back(e.substitute(subst));
  return out;
}

CircleAction trivial_action(const VirtualComplex& c) {
  CircleAction act;
  for (IndexSet I : c.chart_indices()) act.flow[I] = identity_map(c.dim(I));
  return act;
}

ValidationReport validate_action(const VirtualComplex& c, const CircleAction& act, int samples, double tol,
                                 std::uint64_t seed) {
  ValidationReport report;
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  std::map<IndexSet, std::vector<CompiledExpression>> flows;
  for (IndexSet I : c.chart_indices()) {
    const int d = c.dim(I);
    auto it = act.flow.find(I);
    if (it == act.flow.end() || static_cast<int>(it->second.size()) != d) {
      report.add("flow " + I.str(), false, "expected " + std::to_string(d) + " flow components");
      continue;
    }
    if (d + 1 > kMaxVariables) {
      report.add("flow " + I.str(), false, "chart too large for a flow variable");
      continue;
    }
    flows[I] = compile(it->second);
  }
  if (!report.ok()) return report;

  auto run = [&](IndexSet I, const double* x, double theta) {
    const int d = c.dim(I);
    double buf[kMaxVariables + 1];
    std::copy(x, x + d, buf);
    buf[d] = theta;
    Point y = eval_map(flows.at(I), buf);
    c.chart(I).wrap(y.data());
    return y;
  };

  for (IndexSet I : c.chart_indices()) {
    const ChartRegion& r = c.chart(I);
    std::mt19937_64 rng(detail::mix_seed(kSalt, seed, I.bits()));
    std::string identity, group, period;
    for (const auto& x : sample_region(r, samples, rng)) {
      const double t1 = angle(rng), t2 = angle(rng);
      if (identity.empty()) {
        const double e = region_distance(r, run(I, x.data(), 0.0).data(), x.data());
        if (e > tol) identity = fmt("a(0,x) moved by %.3g", e) + " at " + format_point(x);
      }
      if (period.empty()) {
        const double e = region_distance(r, run(I, x.data(), kTwoPi).data(), x.data());
        if (e > tol * 100.0) period = fmt("a(2π,x) moved by %.3g", e) + " at " + format_point(x);
      }
      if (group.empty()) {
        const Point a = run(I, run(I, x.data(), t2).data(), t1);
        const Point b = run(I, x.data(), t1 + t2);
        const double e = region_distance(r, a.data(), b.data());
        if (e > tol * 100.0)
          group = fmt("a(θ1,a(θ2,x)) - a(θ1+θ2,x) = %.3g", e) + fmt(" at θ1 = %.4g, θ2 = %.4g", t1, t2) + " x = " +
                  format_point(x);
      }
    }
    report.add("identity " + I.str(), identity.empty(), identity);
    report.add("group law " + I.str(), group.empty(), group);
    report.add("period " + I.str(), period.empty(), period);
  }

  for (const auto& o : c.overlaps()) {
    std::mt19937_64 rng(detail::mix_seed(kSalt, seed, o.small.bits(), o.big.bits()));
    std::string bad;
    for (const auto& y : sample_region(o.region_in_big, samples, rng)) {
      const double theta = angle(rng);
      const Point lhs = c.project(o.big, o.small, run(o.big, y.data(), theta));
      Point rhs = run(o.small, c.project(o.big, o.small, y).data(), theta);
      Point l = lhs;
      c.chart(o.small).wrap(l.data());
      const double e = region_distance(c.chart(o.small), l.data(), rhs.data());
      if (e > tol * 100.0) {
        bad = fmt("φ(a(θ,y)) - a(θ,φ(y)) = %.3g at θ = %.4g", e, theta) + ", y = " + format_point(y);
        break;
      }
    }
    report.add("equivariance " + o.small.str() + "->" + o.big.str(), bad.empty(), bad);
  }
  return report;
}

ChartForm cartan_d(const ChartForm& a, const std::vector<Expression>& field) {
  return exterior_derivative(a) - Expression::u() * interior(field, a);
}

EquivariantForm cartan_d(const EquivariantForm& a, const CircleAction& act) {
  EquivariantForm out;
  for (const auto& [I, f] : a) {
    if (!act.flow.count(I)) throw StructureError("action has no flow on " + I.str());
    out[I] = cartan_d(f, act.vector_field(I));
  }
  return out;
}

int equivariant_degree(const ChartForm& a, int samples, std::uint64_t seed) {
  int degree = -2;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double u0 = 0.7;
  for (const auto& [m, coef] : a.terms()) {
    const CompiledExpression f(coef);
    int power = -1;
    bool seen = false;
    for (int s = 0; s < samples; ++s) {
      Point x(std::max(1, a.dim()));
      for (auto& v : x) v = unit(rng);
      const double c1 = f(x.data(), u0);
      const double c2 = f(x.data(), 2.0 * u0);
      if (std::fabs(c1) < 1e-12 && std::fabs(c2) < 1e-12) continue;
      if (std::fabs(c1) < 1e-12) return -1;
      const double k = std::log2(c2 / c1);
      if (!(k > -1e-6) || std::fabs(k - std::round(k)) > 1e-6) return -1;
      const int ki = static_cast<int>(std::lround(k));
      if (seen && ki != power) return -1;
      power = ki;
      seen = true;
    }
    if (!seen) continue;
    const int total = monomial_degree(m) + 2 * power;
    if (degree != -2 && total != degree) return -1;
    degree = total;
  }
  return degree == -2 ? 0 : degree;
}

double cartan_defect(const VirtualComplex& c, const EquivariantForm& a, const CircleAction& act, double u,
                     int samples, std::uint64_t seed) {
  const EquivariantForm dg = cartan_d(a, act);
  double worst = 0.0;
  for (const auto& [I, f] : dg) {
    if (!c.has_chart(I)) continue;
    const CompiledForm cf(f);
    std::vector<double> out(cf.monomials().size());
    std::mt19937_64 rng(detail::mix_seed(kSalt, seed, I.bits(), 7));
    for (const auto& x : sample_region(c.chart(I), samples, rng)) {
      cf.evaluate(x.data(), u, out.data());
      for (double v : out) worst = std::max(worst, std::fabs(v));
    }
  }
  return worst;
}

ChartForm equivariant_thom_form_on(int dim, const std::vector<int>& axes, const std::vector<int>& weights,
                                   double radius) {
  if (axes.size() != 2 * weights.size()) throw StructureError("equivariant Thom form needs two axes per weight");
  const Expression R2 = Expression::constant(radius * radius);
  const Expression G = bump(Expression::variable(0) / R2);
  const Expression dG = G.derivative(0);
  const Expression c = Expression::constant(1.0 / kTwoPi);
  ChartForm out = ChartForm::function(dim, Expression::constant(1.0));
  for (std::size_t j = 0; j < weights.size(); ++j) {
    const Expression va = Expression::variable(axes[2 * j]);
    const Expression vb = Expression::variable(axes[2 * j + 1]);
    const std::vector<Expression> s{va * va + vb * vb};
    const ChartForm plane = wedge(ChartForm::differential(dim, axes[2 * j]), ChartForm::differential(dim, axes[2 * j + 1]));
    const ChartForm factor = (c * Expression::constant(-2.0) * dG.substitute(s)) * plane +
                             ChartForm::function(dim, c * Expression::constant(weights[j]) * Expression::u() * G.substitute(s));
    out = wedge(out, factor);
  }
  return out;
}

ChartForm equivariant_euler(const FixedChart& f) {
  if (f.euler) return *f.euler;
  double product = 1.0;
  for (int w : f.weights) {
    if (w == 0) throw FixedLocusError("zero normal weight");
    product *= w;
  }
  Expression e = Expression::constant(product);
  for (std::size_t i = 0; i < f.weights.size(); ++i) e = e * Expression::u();
  return ChartForm::function(f.region.dim(), e);
}

NormalWeights linearized_weights(const VirtualComplex& c, const CircleAction& act, IndexSet I, const FixedChart& f,
                                 const Point& t, std::uint64_t seed) {
  const ChartRegion& chart = c.chart(I);
  const int d = chart.dim();
  const int fd = f.region.dim();
  const int m2 = f.normal_rank();
  const std::vector<Expression> V = act.vector_field(I);
  const Point xs = eval_map(compile(f.embedding), t.data());

  if (!f.normal_coords.empty()) {
    if (static_cast<int>(f.normal_coords.size()) != m2)
      throw FixedLocusError("normal coordinates on " + I.str() + " need " + std::to_string(m2) + " components");
    const auto nu = compile(f.normal_coords);
    const auto field = compile(V);
    std::vector<CompiledExpression> dnu;
    for (const auto& e : f.normal_coords)
      for (int j = 0; j < d; ++j) dnu.emplace_back(e.derivative(j));
    double scale = 1.0;
    for (int a = 0; a < d; ++a) scale = std::max(scale, chart.hi(a) - chart.lo(a));
    const double delta = 1e-4 * scale;
    const Point y0 = eval_map(nu, xs.data());
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const int want = 6 * std::max(1, m2);
    Eigen::MatrixXd Y(want, m2), Z(want, m2);
    int got = 0;
    int orientation = 0;
    for (int tries = 0; tries < 200 * want && got < want; ++tries) {
      Point x = xs;
      for (auto& v : x) v += delta * unit(rng);
      if (!chart.contains(x, 0.0)) continue;
      const Point y = eval_map(nu, x.data());
      const Point v = eval_map(field, x.data());
      Eigen::MatrixXd D(m2, d);
      for (int a = 0; a < m2; ++a)
        for (int j = 0; j < d; ++j) D(a, j) = dnu[a * d + j](x.data());
      const Eigen::VectorXd z = D * Eigen::Map<const Eigen::VectorXd>(v.data(), d);
      for (int a = 0; a < m2; ++a) Y(got, a) = y[a] - y0[a], Z(got, a) = z[a];
      if (m2 == d && orientation == 0) orientation = D.determinant() < 0 ? -1 : 1;
      ++got;
    }
    if (got < want) throw FixedLocusError("could not sample around the fixed chart on " + I.str());
    const Eigen::MatrixXd At = Y.colPivHouseholderQr().solve(Z);
    NormalWeights w = detail::schur_weights(At.transpose());
    if (orientation < 0) w.sign = -w.sign;
    return w;
  }

  Eigen::MatrixXd DV = jacobian(V, d, xs.data());
  Eigen::MatrixXd B = Eigen::MatrixXd::Identity(d, d);
  if (fd > 0) {
    const Eigen::MatrixXd T = jacobian(f.embedding, fd, t.data());
    const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(T).householderQ();
    B.leftCols(fd) = T;
    B.rightCols(d - fd) = Q.rightCols(d - fd);
    if (B.determinant() < 0 && d > fd) B.col(fd) = -B.col(fd);
  }
  if (d - fd != m2)
    throw FixedLocusError("normal rank " + std::to_string(m2) + " on " + I.str() + " but codimension " +
                          std::to_string(d - fd));
  const Eigen::MatrixXd M = B.fullPivLu().solve(DV * B);
  return detail::schur_weights(M.bottomRightCorner(m2, m2));
}

ValidationReport verify_fixed_locus(const VirtualComplex& c, const CircleAction& act,
                                    const std::vector<FixedComponent>& fixed, int samples, double tol,
                                    std::uint64_t seed) {
  ValidationReport report;
  for (std::size_t k = 0; k < fixed.size(); ++k) {
    for (const auto& [I, f] : fixed[k].charts) {
      const std::string tag = I.str() + "#" + std::to_string(k);
      if (!c.has_chart(I) || static_cast<int>(f.embedding.size()) != c.dim(I)) {
        report.add("component " + tag, false, "embedding does not match a chart");
        continue;
      }
      if (std::count(f.weights.begin(), f.weights.end(), 0) > 0) {
        report.add("weights " + tag, false, "zero weight");
        continue;
      }
      const ChartRegion& chart = c.chart(I);
      const auto emb = compile(f.embedding);
      const auto V = act.vector_field(I);
      std::vector<CompiledExpression> motion;
      if (f.normal_coords.empty()) {
        motion = compile(V);
      } else {
        for (const auto& e : f.normal_coords) {
          Expression s = Expression::constant(0.0);
          for (int j = 0; j < c.dim(I); ++j) s = s + e.derivative(j) * V[j];
          motion.emplace_back(s);
        }
      }
      std::mt19937_64 rng(detail::mix_seed(kSalt, seed, I.bits(), k + 1));
      const auto ts = sample_region(f.region, std::max(1, samples), rng);
      std::string bad;
      for (const auto& t : ts) {
        const Point x = eval_map(emb, t.data());
        if (!chart.contains(x, 1e-9)) {
          bad = "component leaves the chart at " + format_point(x);
          break;
        }
        const double m = sup_norm(eval_map(motion, x.data()));
        if (m > tol) {
          bad = fmt("|V| = %.3g", m) + " at " + format_point(x);
          break;
        }
      }
      report.add("fixed " + tag, bad.empty(), bad);

      bad.clear();
      std::vector<double> declared;
      int declared_sign = 1;
      for (int w : f.weights) declared.push_back(std::abs(w)), declared_sign *= w < 0 ? -1 : 1;
      std::sort(declared.begin(), declared.end(), std::greater<>());
      try {
        for (std::size_t n = 0; n < std::min<std::size_t>(3, ts.size()) && bad.empty(); ++n) {
          const NormalWeights nw = linearized_weights(c, act, I, f, ts[n], seed + n);
          bool match = nw.magnitudes.size() == declared.size() && nw.sign == declared_sign;
          for (std::size_t i = 0; match && i < declared.size(); ++i)
            match = std::fabs(nw.magnitudes[i] - declared[i]) <= 1e-4 * std::max(1.0, declared[i]);
          if (!match) {
            std::string found;
            for (double m : nw.magnitudes) found += fmt("%.6g ", m);
            bad = "linearization gives |w| = " + found + "with product sign " + std::to_string(nw.sign);
          }
        }
      } catch (const FixedLocusError& e) {
        bad = e.what();
      }
      report.add("weights " + tag, bad.empty(), bad);
    }

    for (const auto& o : c.overlaps()) {
      auto fi = fixed[k].charts.find(o.small);
      auto fj = fixed[k].charts.find(o.big);
      if (fi == fixed[k].charts.end() || fj == fixed[k].charts.end()) continue;
      const std::string tag = o.small.str() + "->" + o.big.str() + "#" + std::to_string(k);
      const int fixed_rank = fj->second.region.dim() - fi->second.region.dim();
      const int moving = o.rank - fixed_rank;
      const bool split = moving >= 0 && fj->second.normal_rank() == fi->second.normal_rank() + moving;
      report.add("split " + tag, split,
                 split ? "" : "normal ranks " + std::to_string(fi->second.normal_rank()) + " and " +
                                  std::to_string(fj->second.normal_rank()) + " do not split a rank " +
                                  std::to_string(o.rank) + " fiber");
      const bool identities = is_identity(fi->second.embedding, c.dim(o.small)) &&
                              is_identity(fj->second.embedding, c.dim(o.big));
      if (fixed_rank != 0 && !identities) {
        report.add("fixed overlap " + tag, false, "fixed charts of different dimension need full-chart embeddings");
        continue;
      }
      if (identities) {
        report.add("fixed overlap " + tag, true);
        continue;
      }
      const ChartRegion in_big = o.region_in_big.pullback(fj->second.region, fj->second.embedding);
      const auto ei = compile(fi->second.embedding);
      const auto ej = compile(fj->second.embedding);
      std::mt19937_64 rng(detail::mix_seed(kSalt, seed, o.small.bits(), o.big.bits()));
      std::string bad;
      for (const auto& t : sample_region(in_big, samples, rng)) {
        const Point lhs = c.project(o.big, o.small, eval_map(ej, t.data()));
        const Point rhs = eval_map(ei, t.data());
        const double e = region_distance(c.chart(o.small), lhs.data(), rhs.data());
        if (e > tol) {
          bad = fmt("φ(emb_J(t)) - emb_I(t) = %.3g", e) + " at t = " + format_point(t);
          break;
        }
      }
      report.add("fixed overlap " + tag, bad.empty(), bad);
    }
  }

  // Probe for undeclared zeros of V.
  for (IndexSet I : c.chart_indices()) {
    const ChartRegion& chart = c.chart(I);
    const int d = chart.dim();
    if (d == 0 || !act.flow.count(I)) continue;
    const auto Vexpr = act.vector_field(I);
    const auto V = compile(Vexpr);
    std::vector<CompiledExpression> DV;
    for (const auto& e : Vexpr)
      for (int j = 0; j < d; ++j) DV.emplace_back(e.derivative(j));
    std::mt19937_64 rng(detail::mix_seed(kSalt, seed, I.bits(), 99));
    std::string bad;
    for (const auto& start : sample_region(chart, samples, rng)) {
      Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(start.data(), d);
      for (int it = 0; it < 30; ++it) {
        Eigen::VectorXd v(d);
        for (int i = 0; i < d; ++i) v[i] = V[i](x.data());
        if (v.norm() < 1e-13) break;
        Eigen::MatrixXd J(d, d);
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < d; ++j) J(i, j) = DV[i * d + j](x.data());
        x -= J.completeOrthogonalDecomposition().solve(v);
        if (!x.allFinite()) break;
      }
      if (!x.allFinite()) continue;
      Point p(x.data(), x.data() + d);
      chart.wrap(p.data());
      if (!chart.contains(p, 1e-9) || sup_norm(eval_map(V, p.data())) > 1e-10) continue;
      bool declared = false;
      for (const auto& comp : fixed) {
        for (const auto& [K, f] : comp.charts) {
          if (K == I) {
            declared = distance_to(chart, f, p.data(), rng) <= 1e-6;
          } else if (auto q = representative(c, I, p.data(), K)) {
            declared = distance_to(c.chart(K), f, q->data(), rng) <= 1e-6;
          }
          if (declared) break;
        }
        if (declared) break;
      }
      if (!declared) {
        bad = "V vanishes at " + format_point(p);
        break;
      }
    }
    report.add("undeclared " + I.str(), bad.empty(), bad);
  }
  return report;
}

std::vector<FixedLocus> fixed_locus(const VirtualComplex& c, const CircleAction& act,
                                    const std::vector<FixedComponent>& fixed, int samples, double tol,
                                    std::uint64_t seed) {
  const ValidationReport report = verify_fixed_locus(c, act, fixed, samples, tol, seed);
  if (const CheckResult* f = report.first_failure()) throw FixedLocusError(f->name + ": " + f->detail);
  std::vector<FixedLocus> out;
  for (const auto& comp : fixed) {
    FixedLocus locus{VirtualComplex(c.n()), comp};
    for (const auto& [I, f] : comp.charts) locus.complex.set_chart(I, f.region);
    for (const auto& o : c.overlaps()) {
      auto fi = comp.charts.find(o.small);
      auto fj = comp.charts.find(o.big);
      if (fi == comp.charts.end() || fj == comp.charts.end()) continue;
      if (is_identity(fi->second.embedding, c.dim(o.small)) && is_identity(fj->second.embedding, c.dim(o.big))) {
        locus.complex.add_overlap(o);
        continue;
      }
      Overlap fo;
      fo.small = o.small;
      fo.big = o.big;
      fo.region_in_small = o.region_in_small.pullback(fi->second.region, fi->second.embedding);
      fo.region_in_big = o.region_in_big.pullback(fj->second.region, fj->second.embedding);
      fo.rank = 0;
      fo.projection = identity_map(fi->second.region.dim());
      fo.fiber_param = identity_map(fi->second.region.dim());
      locus.complex.add_overlap(std::move(fo));
    }
    out.push_back(std::move(locus));
  }
  return out;
}

double LocalizationResult::max_residual() const {
  double m = 0.0;
  for (const auto& p : probes)
    if (!p.rejected) m = std::max(m, p.residual);
  return m;
}

LocalizationResult localize(const VirtualComplex& c, const CircleAction& act, const EquivariantForm& alpha,
                            const VirtualFormFamily& zeta, const std::vector<FixedLocus>& fixed,
                            const PartitionOfUnity& pou, const QuadratureSpec& q, const std::vector<double>& u_probes,
                            double closed_tol) {
  LocalizationResult result;
  for (double u : u_probes) {
    const double defect = cartan_defect(c, alpha, act, u);
    if (defect > closed_tol)
      throw StructureError("alpha is not equivariantly closed: |d_G alpha| = " + std::to_string(defect) +
                           " at u = " + std::to_string(u));
    const double zd = cartan_defect(c, zeta.forms, act, u);
    if (zd > closed_tol) result.report.warn("zeta is not equivariantly closed at u = " + std::to_string(u));
  }

  VirtualFormFamily product{{}, zeta.theta};
  for (IndexSet I : c.chart_indices()) {
    auto a = alpha.find(I);
    auto z = zeta.forms.find(I);
    if (a == alpha.end() || z == zeta.forms.end()) throw StructureError("missing form on " + I.str());
    product.forms[I] = wedge(a->second, z->second);
  }

  bool compatibility_checked = false;
  for (double u : u_probes) {
    LocalizationProbe probe;
    probe.u = u;
    probe.lhs = integrate_pou(c, product, pou, q, u);
    for (std::size_t k = 0; k < fixed.size() && !probe.rejected; ++k) {
      const FixedLocus& L = fixed[k];
      VirtualFormFamily tilde;
      for (const auto& o : L.complex.overlaps())
        if (o.rank > 0) tilde.theta[{o.small, o.big}] = at_u(transition(c, zeta.theta, o.small, o.big), u);
      for (const auto& [I, f] : L.data.charts) {
        const int fd = f.region.dim();
        const ChartForm e = at_u(equivariant_euler(f), u);
        const CompiledExpression e0(e.coefficient(0));
        std::mt19937_64 rng(detail::mix_seed(kSalt, 5, I.bits(), k));
        for (const auto& t : sample_region(f.region, 16, rng))
          if (std::fabs(e0(t.data())) < 1e-12) probe.rejected = true;
        if (probe.rejected) break;
        const ChartForm pulled = at_u(pullback(f.embedding, fd, product.forms.at(I)), u);
        tilde.forms[I] = Expression::constant(std::pow(kTwoPi, f.weights.size())) * wedge(pulled, form_inverse(e));
      }
      if (probe.rejected) break;
      if (!compatibility_checked) {
        ValidationReport r = validate_virtual_form(L.complex, tilde);
        for (const auto& check : r.checks())
          result.report.add("theta-tilde " + check.name + " #" + std::to_string(k), check.passed, check.detail);
      }
      const IntegralResult part = integrate_incl_excl(L.complex, tilde, q, u);
      probe.contributions.push_back(part.value);
      probe.rhs += part;
    }
    if (probe.rejected) {
      result.report.warn("probe u = " + std::to_string(u) + " rejected: e_G vanishes");
    } else {
      compatibility_checked = true;
      probe.residual = std::fabs(probe.lhs.value - probe.rhs.value);
    }
    result.probes.push_back(std::move(probe));
  }
  return result;
}

namespace fixtures {

namespace {
Expression x(int i) { return Expression::variable(i); }
Expression k(double v) { return Expression::constant(v); }
}  // namespace

CircleAction sphere_rotation() {
  CircleAction act;
  act.flow[IndexSet()] = {x(0), x(1) + x(2)};
  return act;
}

std::vector<FixedComponent> sphere_poles() {
  const double pi = std::numbers::pi;
  FixedChart north;
  north.embedding = {k(0.0), k(0.0)};
  north.weights = {1};
  north.normal_coords = {x(0) * cos(x(1)), x(0) * sin(x(1))};
  FixedChart south;
  south.embedding = {k(pi), k(0.0)};
  south.weights = {-1};
  south.normal_coords = {(k(pi) - x(0)) * cos(x(1)), -((k(pi) - x(0)) * sin(x(1)))};
  return {FixedComponent{{{IndexSet(), north}}}, FixedComponent{{{IndexSet(), south}}}};
}

EquivariantForm sphere_alpha() {
  return {{IndexSet(), ChartForm::top(2, sin(x(0))) + ChartForm::function(2, Expression::u() * cos(x(0)))}};
}

CircleAction line_plane_rotation(int weight) {
  CircleAction act;
  const Expression th = k(weight) * x(3);
  act.flow[IndexSet()] = {x(0)};
  act.flow[IndexSet::of({1})] = {x(0), cos(th) * x(1) - sin(th) * x(2), sin(th) * x(1) + cos(th) * x(2)};
  return act;
}

FixedComponent line_plane_zero_section(int weight) {
  FixedComponent comp;
  FixedChart base;
  base.region = ChartRegion({-2.0}, {2.0}, FaceKind::Boundary);
  base.embedding = {x(0)};
  FixedChart zero;
  zero.region = ChartRegion({-1.5}, {1.5}, FaceKind::Free);
  zero.embedding = {x(0), k(0.0), k(0.0)};
  zero.weights = {weight};
  comp.charts[IndexSet()] = base;
  comp.charts[IndexSet::of({1})] = zero;
  return comp;
}

}  // namespace fixtures

}  // namespace vman
