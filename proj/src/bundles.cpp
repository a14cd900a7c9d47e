#include "vman/bundles.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "detail.hpp"

namespace vman {

namespace {

constexpr std::uint64_t kSalt = 0x6a09e667f3bcc909ull;

std::vector<Expression> variables(int first, int count) {
  std::vector<Expression> v;
  for (int i = 0; i < count; ++i) v.push_back(Expression::variable(first + i));
  return v;
}

double max_half_width(const ChartRegion& r) {
  double h = 0.0;
  for (int a = 0; a < r.dim(); ++a) h = std::max(h, 0.5 * (r.hi(a) - r.lo(a)));
  return h;
}

// Θ_{J,I} on the fiber through ψ(x, 0), as a form in v.
ChartForm fiber_restriction(const Overlap& o, int dI, const ChartForm& theta, const Point& x) {
  std::vector<Expression> subst;
  for (int i = 0; i < dI; ++i) subst.push_back(Expression::constant(x[i]));
  for (int j = 0; j < o.rank; ++j) subst.push_back(Expression::variable(j));
  std::vector<Expression> fiber_map;
  for (const auto& e : o.fiber_param) fiber_map.push_back(e.substitute(subst));
  return pullback(fiber_map, o.rank, theta);
}

Eigen::MatrixXd section_jacobian(const std::vector<CompiledExpression>& ds, int r, int d, const double* x) {
  Eigen::MatrixXd J(r, d);
  for (int a = 0; a < r; ++a)
    for (int i = 0; i < d; ++i) J(a, i) = ds[a * d + i](x);
  return J;
}

// Gauss-Newton from sampled starts; warns at zeros where DS drops rank.
void transversality_scan(const ChartRegion& region, const std::vector<Expression>& S, IndexSet I, int starts,
                         std::uint64_t seed, ValidationReport& report) {
  const int r = static_cast<int>(S.size());
  const int d = region.dim();
  if (r == 0 || d == 0) return;
  std::vector<CompiledExpression> s, ds;
  for (const auto& e : S) {
    s.emplace_back(e);
    for (int i = 0; i < d; ++i) ds.emplace_back(e.derivative(i));
  }
  std::mt19937_64 rng(seed);
  for (const auto& start : sample_region(region, starts, rng)) {
    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(start.data(), d);
    Eigen::VectorXd f(r);
    for (int it = 0; it < 40; ++it) {
      for (int a = 0; a < r; ++a) f[a] = s[a](x.data());
      if (f.norm() < 1e-12) break;
      const Eigen::MatrixXd J = section_jacobian(ds, r, d, x.data());
      x -= J.completeOrthogonalDecomposition().solve(f);
      if (!x.allFinite()) break;
    }
    if (!x.allFinite()) continue;
    for (int a = 0; a < r; ++a) f[a] = s[a](x.data());
    if (f.norm() > 1e-10 || !region.contains(x.data(), 1e-9)) continue;
    const Eigen::MatrixXd J = section_jacobian(ds, r, d, x.data());
    const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(J).singularValues();
    const double smin = r <= d ? sv[r - 1] : 0.0;
    if (smin <= 1e-3 * std::max(1.0, sv[0])) {
      report.warn("section on " + I.str() + " is not transverse at " +
                  format_point(std::vector<double>(x.data(), x.data() + d)));
      return;
    }
  }
}

}  // namespace

int VirtualBundle::rank_of(IndexSet I) const {
  auto it = rank.find(I);
  if (it == rank.end()) throw StructureError("bundle has no rank on " + I.str());
  return it->second;
}

std::vector<int> VirtualBundle::fiber_order(IndexSet I, IndexSet J) const {
  auto it = order.find({I, J});
  if (it != order.end()) return it->second;
  std::vector<int> id(rank_of(J));
  std::iota(id.begin(), id.end(), 0);
  return id;
}

int permutation_sign(const std::vector<int>& order) {
  int sign = 1;
  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::size_t j = i + 1; j < order.size(); ++j)
      if (order[i] > order[j]) sign = -sign;
  return sign;
}

ValidationReport validate_virtual_bundle(const VirtualComplex& c, const VirtualBundle& E, const VirtualSection& S,
                                         const ThomFamily& lambda, const TransitionData& theta, int samples,
                                         double tol, std::uint64_t seed) {
  ValidationReport report;
  for (IndexSet I : c.chart_indices()) {
    const std::string tag = I.str();
    auto r = E.rank.find(I);
    if (r == E.rank.end() || r->second < 0) {
      report.add("rank " + tag, false, "missing");
      continue;
    }
    auto s = S.find(I);
    if (s == S.end() || static_cast<int>(s->second.size()) != r->second) {
      report.add("section " + tag, false, "expected " + std::to_string(r->second) + " components");
    }
    auto l = lambda.find(I);
    if (l == lambda.end()) {
      if (r->second > 0) report.add("thom " + tag, false, "missing");
    } else if (l->second.dim() != r->second || (!l->second.is_zero() && l->second.degree() != r->second)) {
      report.add("thom " + tag, false, "expected a form of degree " + std::to_string(r->second));
    }
    if (s != S.end() && static_cast<int>(s->second.size()) == r->second)
      transversality_scan(c.chart(I), s->second, I, 16, detail::mix_seed(kSalt, seed, I.bits()), report);
  }
  if (!report.ok()) return report;

  for (const auto& o : c.overlaps()) {
    const IndexSet I = o.small, J = o.big;
    const std::string tag = I.str() + "->" + J.str();
    const int rI = E.rank_of(I), rJ = E.rank_of(J), k = o.rank;
    if (rJ != rI + k) {
      report.add("rank " + tag, false,
                 "rank " + std::to_string(rJ) + " != " + std::to_string(rI) + " + " + std::to_string(k));
      continue;
    }
    const std::vector<int> order = E.fiber_order(I, J);
    std::vector<int> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> id(rJ);
    std::iota(id.begin(), id.end(), 0);
    if (sorted != id) {
      report.add("rank " + tag, false, "fiber order is not a permutation of 0.." + std::to_string(rJ - 1));
      continue;
    }
    report.add("rank " + tag, true);

    const int dI = c.dim(I);
    std::vector<CompiledExpression> sI, sJ;
    for (const auto& e : S.at(I)) sI.emplace_back(e);
    for (const auto& e : S.at(J)) sJ.emplace_back(e);
    std::mt19937_64 rng(detail::mix_seed(kSalt, seed, I.bits(), J.bits()));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const double spread = std::max(1e-3, max_half_width(c.chart(J)));

    // Section compatibility at lifted points.
    std::string bad;
    int checked = 0;
    const auto xs = sample_region(o.region_in_small, samples, rng);
    for (const auto& x : xs) {
      for (int attempt = 0; attempt < 8 && bad.empty(); ++attempt) {
        Point v(k);
        for (auto& vj : v) vj = unit(rng) * spread * (attempt < 4 ? 0.25 : 1.0);
        const Point y = c.lift(J, I, x, v);
        if (!o.region_in_big.contains(y, 1e-12)) continue;
        std::vector<double> z(v);
        for (const auto& e : sI) z.push_back(e(x.data()));
        for (int a = 0; a < rJ; ++a) {
          const double lhs = sJ[a](y.data());
          const double rhs = z[order[a]];
          if (!detail::close(lhs, rhs, tol)) {
            char buf[200];
            std::snprintf(buf, sizeof buf, "component %d: %.12g vs %.12g at %s", a, lhs, rhs,
                          format_point(y).c_str());
            bad = buf;
          }
        }
        ++checked;
        break;
      }
      if (!bad.empty()) break;
    }
    if (bad.empty() && checked == 0 && !xs.empty()) report.warn("section " + tag + ": no lifted sample in the overlap");
    report.add("section " + tag, bad.empty(), bad);

    // Thom compatibility Λ_J = sign(P)·P*(Θ ∧ Λ_I).
    bad.clear();
    try {
      const ChartForm th = transition(c, theta, I, J);
      auto lI = lambda.find(I);
      auto lJ = lambda.find(J);
      const ChartForm LI = lI != lambda.end() ? lI->second : ChartForm::function(0, Expression::constant(1.0));
      const ChartForm LJ = lJ != lambda.end() ? lJ->second : ChartForm::function(0, Expression::constant(1.0));
      std::vector<int> inv(rJ);
      for (int a = 0; a < rJ; ++a) inv[order[a]] = a;
      std::vector<Expression> z_of_w;
      for (int b = 0; b < rJ; ++b) z_of_w.push_back(Expression::variable(inv[b]));
      const int sign = permutation_sign(order);
      const double w_spread = 1.5 * spread;
      for (std::size_t n = 0; n < std::min<std::size_t>(xs.size(), 3) && bad.empty(); ++n) {
        const ChartForm on_fiber =
            k == 0 ? ChartForm::function(0, Expression::constant(th.value(0, c.zero_lift(J, I, xs[n]).data())))
                   : fiber_restriction(o, dI, th, xs[n]);
        const ChartForm product = wedge(pullback(variables(0, k), rJ, on_fiber), pullback(variables(k, rI), rJ, LI));
        ChartForm expected = pullback(z_of_w, rJ, product);
        if (sign < 0) expected = -expected;
        for (int m = 0; m < samples && bad.empty(); ++m) {
          Point w(rJ);
          const double scale = w_spread * (m % 3 == 0 ? 0.1 : m % 3 == 1 ? 0.4 : 1.0);
          for (auto& wa : w) wa = unit(rng) * scale;
          bad = detail::compare_at(LJ, expected, w.data(), tol);
          if (!bad.empty()) bad += " at w = " + format_point(w);
        }
      }
    } catch (const StructureError& e) {
      bad = e.what();
    }
    report.add("thom " + tag, bad.empty(), bad);
  }
  return report;
}

VirtualFormFamily euler_form(const VirtualComplex& c, const VirtualBundle& E, const VirtualSection& S,
                             const ThomFamily& lambda, const TransitionData& theta) {
  VirtualFormFamily out;
  out.theta = theta;
  for (IndexSet I : c.chart_indices()) {
    const int r = E.rank_of(I);
    const int d = c.dim(I);
    auto s = S.find(I);
    if (s == S.end() || static_cast<int>(s->second.size()) != r)
      throw StructureError("section on " + I.str() + " needs " + std::to_string(r) + " components");
    auto l = lambda.find(I);
    if (l == lambda.end()) {
      if (r != 0) throw StructureError("missing Thom form on " + I.str());
      out.forms[I] = ChartForm::function(d, Expression::constant(1.0));
      continue;
    }
    out.forms[I] = pullback(s->second, d, l->second);
  }
  return out;
}

ThomFamily radial_thom_family(const VirtualBundle& E, double radius) {
  ThomFamily out;
  for (const auto& [I, r] : E.rank)
    out[I] = r == 0 ? ChartForm::function(0, Expression::constant(1.0)) : thom_form(r, radius);
  return out;
}

SplittingResult check_splitting(const VirtualComplex& c, const VirtualBundle& E1, const VirtualBundle& E2,
                                const VirtualSection& S1, const VirtualSection& S2, const ThomFamily& lambda1,
                                const ThomFamily& lambda2, const FormFamily& a, const TransitionData& theta,
                                const PartitionOfUnity& pou, const QuadratureSpec& q) {
  const VirtualFormFamily e1 = euler_form(c, E1, S1, lambda1, theta);
  const VirtualFormFamily e2 = euler_form(c, E2, S2, lambda2, theta);
  VirtualFormFamily z12{{}, theta}, z21{{}, theta};
  for (IndexSet I : c.chart_indices()) {
    auto ai = a.find(I);
    if (ai == a.end()) throw StructureError("form a has no component on " + I.str());
    z12.forms[I] = wedge(wedge(ai->second, e1.forms.at(I)), e2.forms.at(I));
    z21.forms[I] = wedge(wedge(ai->second, e2.forms.at(I)), e1.forms.at(I));
  }
  SplittingResult out;
  out.v0 = integrate_pou(c, z12, pou, q);
  out.v1 = integrate_pou(c, z21, pou, q);
  out.v2 = out.v0;
  const IndexSet first = c.chart_indices().front();
  const int koszul = (E1.rank_of(first) * E2.rank_of(first)) % 2 ? -1 : 1;
  out.r01 = std::fabs(out.v0.value - koszul * out.v1.value);
  out.r02 = std::fabs(out.v0.value - out.v2.value);
  out.r12 = std::fabs(koszul * out.v1.value - out.v2.value);
  return out;
}

}  // namespace vman
