#include "vman/forms.hpp"

#include "detail.hpp"

#include <Eigen/Dense>
#include <array>
#include <bit>
#include <cmath>
#include <mutex>
#include <numbers>

namespace vman {

using detail::close;
using detail::compare_at;

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t h = seed ^ 0x51ed270b27a4e1c3ull;
  for (std::uint64_t v : {a, b}) {
    h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h *= 0x94d049bb133111ebull;
    h ^= h >> 29;
  }
  return h;
}

Expression squared_norm(const std::vector<int>& axes) {
  Expression s = Expression::constant(0.0);
  for (int a : axes) s = s + pow(Expression::variable(a), Expression::constant(2.0));
  return s;
}

}  // namespace

int monomial_degree(Monomial m) { return std::popcount(m); }

Monomial monomial_of(std::initializer_list<int> axes) {
  Monomial m = 0;
  for (int a : axes) m |= 1u << a;
  return m;
}

int wedge_sign(Monomial a, Monomial b) {
  if (a & b) return 0;
  int swaps = 0;
  for (Monomial rest = b; rest; rest &= rest - 1) {
    const int j = std::countr_zero(rest);
    const Monomial above = j >= 31 ? 0u : ~((2u << j) - 1u);
    swaps += std::popcount(a & above);
  }
  return (swaps & 1) ? -1 : 1;
}

std::string monomial_label(Monomial m) {
  std::string s;
  for (int k = 0; k < 32; ++k)
    if (m & (1u << k)) {
      if (k >= 10) {
        s += "(" + std::to_string(k) + ")";
      } else {
        s += static_cast<char>('0' + k);
      }
    }
  return s;
}

Monomial monomial_from_label(const std::string& label) {
  Monomial m = 0;
  int last = -1;
  for (std::size_t i = 0; i < label.size(); ++i) {
    int axis;
    if (label[i] == '(') {
      const auto close_at = label.find(')', i);
      if (close_at == std::string::npos) throw StructureError("bad monomial label '" + label + "'");
      axis = std::stoi(label.substr(i + 1, close_at - i - 1));
      i = close_at;
    } else if (label[i] >= '0' && label[i] <= '9') {
      axis = label[i] - '0';
    } else {
      throw StructureError("bad monomial label '" + label + "'");
    }
    if (axis <= last || axis >= kMaxVariables)
      throw StructureError("monomial label '" + label + "' must list increasing axes below 16");
    last = axis;
    m |= 1u << axis;
  }
  return m;
}

ChartForm ChartForm::function(int dim, const Expression& f) { return term(dim, 0, f); }

ChartForm ChartForm::differential(int dim, int axis) { return term(dim, 1u << axis, Expression::constant(1.0)); }

ChartForm ChartForm::top(int dim, const Expression& f) { return term(dim, top_monomial(dim), f); }

ChartForm ChartForm::term(int dim, Monomial m, const Expression& f) {
  if (dim < 32 && (m >> dim) != 0) throw StructureError("monomial exceeds chart dimension");
  ChartForm out(dim);
  out.add(m, f);
  return out;
}

int ChartForm::degree() const {
  int d = -2;
  for (const auto& [m, e] : terms_) {
    const int k = monomial_degree(m);
    if (d == -2) {
      d = k;
    } else if (d != k) {
      return -1;
    }
  }
  return d == -2 ? 0 : d;
}

bool ChartForm::uses_u() const {
  for (const auto& [m, e] : terms_)
    if (e.uses_u()) return true;
  return false;
}

Expression ChartForm::coefficient(Monomial m) const {
  auto it = terms_.find(m);
  return it == terms_.end() ? Expression::constant(0.0) : it->second;
}

ChartForm ChartForm::component(int k) const {
  ChartForm out(dim_);
  for (const auto& [m, e] : terms_)
    if (monomial_degree(m) == k) out.terms_.emplace(m, e);
  return out;
}

ChartForm& ChartForm::add(Monomial m, const Expression& f) {
  if (dim_ < 32 && (m >> dim_) != 0) throw StructureError("monomial exceeds chart dimension");
  if (f.is_zero()) return *this;
  auto it = terms_.find(m);
  if (it == terms_.end()) {
    terms_.emplace(m, f);
  } else {
    it->second = it->second + f;
    if (it->second.is_zero()) terms_.erase(it);
  }
  return *this;
}

double ChartForm::value(Monomial m, const double* x, double u) const {
  auto it = terms_.find(m);
  if (it == terms_.end()) return 0.0;
  return it->second.evaluate(std::span<const double>(x, static_cast<std::size_t>(dim_)), u);
}

std::string ChartForm::str() const {
  if (terms_.empty()) return "0";
  std::string s;
  for (const auto& [m, e] : terms_) {
    if (!s.empty()) s += " + ";
    s += "(" + e.str() + ")";
    if (m) s += " d" + monomial_label(m);
  }
  return s;
}

ChartForm operator+(const ChartForm& a, const ChartForm& b) {
  ChartForm out = a;
  out.dim_ = std::max(a.dim_, b.dim_);
  for (const auto& [m, e] : b.terms_) out.add(m, e);
  return out;
}

ChartForm operator-(const ChartForm& a) {
  ChartForm out(a.dim_);
  for (const auto& [m, e] : a.terms_) out.terms_.emplace(m, -e);
  return out;
}

ChartForm operator-(const ChartForm& a, const ChartForm& b) { return a + (-b); }

ChartForm operator*(const Expression& f, const ChartForm& a) {
  ChartForm out(a.dim_);
  if (f.is_zero()) return out;
  for (const auto& [m, e] : a.terms_) out.add(m, f * e);
  return out;
}

ChartForm wedge(const ChartForm& a, const ChartForm& b) {
  ChartForm out(std::max(a.dim(), b.dim()));
  for (const auto& [ma, ea] : a.terms()) {
    for (const auto& [mb, eb] : b.terms()) {
      const int s = wedge_sign(ma, mb);
      if (s == 0) continue;
      out.add(ma | mb, s > 0 ? ea * eb : -(ea * eb));
    }
  }
  return out;
}

ChartForm exterior_derivative(const ChartForm& a) {
  ChartForm out(a.dim());
  for (const auto& [m, e] : a.terms()) {
    for (int k = 0; k < a.dim(); ++k) {
      if (m & (1u << k)) continue;
      const Expression dk = e.derivative(k);
      if (dk.is_zero()) continue;
      const int below = std::popcount(m & ((1u << k) - 1u));
      out.add(m | (1u << k), (below & 1) ? -dk : dk);
    }
  }
  return out;
}

ChartForm pullback(const std::vector<Expression>& map, int source_dim, const ChartForm& target) {
  if (static_cast<int>(map.size()) != target.dim()) throw StructureError("pullback map arity differs from form dimension");
  std::vector<ChartForm> dmap;
  dmap.reserve(map.size());
  for (const auto& component : map) {
    ChartForm d(source_dim);
    for (int j = 0; j < source_dim; ++j) d.add(1u << j, component.derivative(j));
    dmap.push_back(std::move(d));
  }
  ChartForm out(source_dim);
  for (const auto& [m, e] : target.terms()) {
    ChartForm acc = ChartForm::function(source_dim, e.substitute(map));
    for (Monomial rest = m; rest && !acc.is_zero(); rest &= rest - 1) acc = wedge(acc, dmap[std::countr_zero(rest)]);
    out = out + acc;
  }
  return out;
}

ChartForm interior(const std::vector<Expression>& field, const ChartForm& a) {
  if (static_cast<int>(field.size()) != a.dim()) throw StructureError("vector field arity differs from form dimension");
  ChartForm out(a.dim());
  for (const auto& [m, e] : a.terms()) {
    int p = 0;
    for (Monomial rest = m; rest; rest &= rest - 1, ++p) {
      const int axis = std::countr_zero(rest);
      const Expression term = field[axis] * e;
      out.add(m & ~(1u << axis), (p & 1) ? -term : term);
    }
  }
  return out;
}

ChartForm at_u(const ChartForm& a, double u) {
  ChartForm out(a.dim());
  const Expression uc = Expression::constant(u);
  for (const auto& [m, e] : a.terms()) out.add(m, e.substitute_u(uc));
  return out;
}

double bump_mass(int rank) {
  if (rank < 1 || rank > kMaxVariables) throw StructureError("Thom rank must lie in 1..16");
  static std::array<double, kMaxVariables + 1> cache{};
  static std::array<std::once_flag, kMaxVariables + 1> once;
  std::call_once(once[rank], [rank] {
    // ∫_{R^k} bump(|v|²) dv = |S^{k-1}| ∫_0^1 bump(ρ²) ρ^{k-1} dρ, midpoint rule.
    const int n = 200000;
    const double h = 1.0 / n;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      const double rho = (i + 0.5) * h;
      const double t = rho * rho;
      sum += std::exp(1.0 - 1.0 / (1.0 - t * t)) * std::pow(rho, rank - 1);
    }
    const double sphere = 2.0 * std::pow(std::numbers::pi, 0.5 * rank) / std::tgamma(0.5 * rank);
    cache[rank] = sphere * sum * h;
  });
  return cache[rank];
}

ChartForm thom_form_on(int dim, const std::vector<int>& axes, double radius) {
  const int k = static_cast<int>(axes.size());
  if (k < 1) throw StructureError("Thom form needs rank >= 1");
  if (!(radius > 0.0)) throw StructureError("Thom radius must be positive");
  const double c = 1.0 / (std::pow(radius, k) * bump_mass(k));
  const Expression profile =
      Expression::constant(c) * bump(squared_norm(axes) / Expression::constant(radius * radius));
  ChartForm f = ChartForm::function(dim, profile);
  for (int a : axes) f = wedge(f, ChartForm::differential(dim, a));
  return f;
}

ChartForm thom_form(int rank, double radius) {
  std::vector<int> axes(rank);
  for (int i = 0; i < rank; ++i) axes[i] = i;
  return thom_form_on(rank, axes, radius);
}

CompiledForm::CompiledForm(const ChartForm& f) {
  for (const auto& [m, e] : f.terms()) {
    monomials_.push_back(m);
    coefficients_.emplace_back(e);
  }
}

void CompiledForm::evaluate(const double* x, double u, double* out) const {
  for (std::size_t i = 0; i < coefficients_.size(); ++i) out[i] = coefficients_[i](x, u);
}

double CompiledForm::value(Monomial m, const double* x, double u) const {
  for (std::size_t i = 0; i < monomials_.size(); ++i)
    if (monomials_[i] == m) return coefficients_[i](x, u);
  return 0.0;
}

int VirtualFormFamily::virtual_degree() const {
  auto it = forms.find(IndexSet());
  return it == forms.end() ? -1 : it->second.degree();
}

int overlap_orientation(const VirtualComplex& c, const Overlap& o, int samples, std::uint64_t seed) {
  if (o.rank == 0 && [&] {
        for (std::size_t k = 0; k < o.fiber_param.size(); ++k) {
          const auto& e = o.fiber_param[k];
          if (e.op() != Op::Var || e.variable_index() != static_cast<int>(k)) return false;
        }
        return true;
      }())
    return 1;
  const int dJ = c.dim(o.big);
  const int dI = c.dim(o.small);
  std::vector<std::vector<CompiledExpression>> jac(dJ);
  for (int r = 0; r < dJ; ++r)
    for (int k = 0; k < dJ; ++k) jac[r].emplace_back(o.fiber_param[r].derivative(k));
  std::mt19937_64 rng(mix_seed(seed, o.small.bits(), o.big.bits()));
  auto points = sample_region(o.region_in_small, samples, rng);
  if (points.empty()) points.push_back(o.region_in_small.box_center());
  int sign = 0;
  for (auto& x : points) {
    double w[kMaxVariables] = {};
    std::copy(x.begin(), x.end(), w);
    (void)dI;
    Eigen::MatrixXd m(dJ, dJ);
    for (int r = 0; r < dJ; ++r)
      for (int k = 0; k < dJ; ++k) m(r, k) = jac[r][k](w);
    const double det = m.determinant();
    const int s = det > 0 ? 1 : (det < 0 ? -1 : 0);
    if (s == 0 || (sign != 0 && s != sign))
      throw StructureError("bundle chart " + o.small.str() + "->" + o.big.str() + " has no constant orientation");
    sign = s;
  }
  return sign;
}

ChartForm transition(const VirtualComplex& c, const TransitionData& theta, IndexSet I, IndexSet J) {
  const Overlap* o = c.overlap(I, J);
  if (!o) throw StructureError("no overlap " + I.str() + "->" + J.str());
  auto it = theta.find({I, J});
  if (it != theta.end()) return it->second;
  if (o->rank == 0) return ChartForm::function(c.dim(J), Expression::constant(1.0));
  throw StructureError("missing transition form for " + I.str() + "->" + J.str());
}

double fiber_integral(const VirtualComplex& c, const Overlap& o, const ChartForm& theta, const Point& x,
                      int points_per_axis) {
  const int k = o.rank;
  if (k == 0) return theta.value(0, c.zero_lift(o.big, o.small, x).data());
  const int dI = c.dim(o.small);
  std::vector<Expression> subst;
  for (int i = 0; i < dI; ++i) subst.push_back(Expression::constant(x[i]));
  for (int j = 0; j < k; ++j) subst.push_back(Expression::variable(j));
  std::vector<Expression> fiber_map;
  for (const auto& e : o.fiber_param) fiber_map.push_back(e.substitute(subst));
  const ChartForm on_fiber = pullback(fiber_map, k, theta);
  const CompiledExpression density(on_fiber.coefficient(top_monomial(k)));
  double R = 0.0;
  const ChartRegion& chart = c.chart(o.big);
  for (int a = 0; a < chart.dim(); ++a) R = std::max({R, std::fabs(chart.lo(a)), std::fabs(chart.hi(a))});
  const int n = points_per_axis > 0 ? points_per_axis
                                    : std::max(16, static_cast<int>(std::pow(4.0e5, 1.0 / k)));
  const double h = 2.0 * R / n;
  std::vector<int> idx(k, 0);
  double v[kMaxVariables];
  double sum = 0.0;
  while (true) {
    for (int j = 0; j < k; ++j) v[j] = -R + (idx[j] + 0.5) * h;
    sum += density(v);
    int j = 0;
    while (j < k && ++idx[j] == n) idx[j++] = 0;
    if (j == k) break;
  }
  return sum * std::pow(h, k);
}

ValidationReport validate_form_family(const VirtualComplex& c, const FormFamily& a, int samples, double tol,
                                      std::uint64_t seed) {
  ValidationReport report;
  for (const auto& o : c.overlaps()) {
    const std::string tag = o.small.str() + "->" + o.big.str();
    auto ai = a.find(o.small);
    auto aj = a.find(o.big);
    if (ai == a.end() || aj == a.end()) {
      report.add("compatibility " + tag, false, "form missing on a chart");
      continue;
    }
    const ChartForm expected = pullback(o.projection, c.dim(o.big), ai->second);
    std::mt19937_64 rng(mix_seed(seed, o.small.bits(), o.big.bits()));
    std::string bad;
    for (const auto& y : sample_region(o.region_in_big, samples, rng)) {
      bad = compare_at(aj->second, expected, y.data(), tol);
      if (!bad.empty()) {
        bad += " at " + format_point(y);
        break;
      }
    }
    report.add("compatibility " + tag, bad.empty(), bad);
  }
  return report;
}

ValidationReport validate_transition_data(const VirtualComplex& c, const TransitionData& theta, int samples,
                                          double tol, std::uint64_t seed, double normalization_tol) {
  ValidationReport report;
  for (const auto& o : c.overlaps()) {
    if (o.rank == 0) continue;
    const std::string tag = o.small.str() + "->" + o.big.str();
    auto it = theta.find({o.small, o.big});
    if (it == theta.end()) {
      report.add("normalization " + tag, false, "missing transition form");
      continue;
    }
    if (o.rank % 2 == 1) report.warn("transition form " + tag + " has odd rank " + std::to_string(o.rank));
    std::mt19937_64 rng(mix_seed(seed, o.small.bits(), o.big.bits()));
    std::string bad;
    double worst = 1.0;
    for (const auto& x : sample_region(o.region_in_small, 3, rng)) {
      const double value = fiber_integral(c, o, it->second, x);
      if (std::fabs(value - 1.0) > std::fabs(worst - 1.0)) worst = value;
      if (std::fabs(value - 1.0) > normalization_tol) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "fiber integral %.9g over %s", value, format_point(x).c_str());
        bad = buf;
        break;
      }
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "fiber integral %.9g", worst);
    report.add("normalization " + tag, bad.empty(), bad.empty() ? std::string(buf) : bad);
  }

  // Cocycle on incomparable pairs.
  const auto idx = c.chart_indices();
  for (std::size_t a = 0; a < idx.size(); ++a) {
    for (std::size_t b = a + 1; b < idx.size(); ++b) {
      const IndexSet I = idx[a];
      const IndexSet J = idx[b];
      if (I.subset_of(J) || J.subset_of(I)) continue;
      const IndexSet A = I & J;
      const IndexSet B = I | J;
      const Overlap* oBA = c.has_chart(A) && c.has_chart(B) ? c.overlap(A, B) : nullptr;
      const Overlap* oIA = c.overlap(A, I);
      const Overlap* oJA = c.overlap(A, J);
      const Overlap* oBI = c.overlap(I, B);
      const Overlap* oBJ = c.overlap(J, B);
      if (!oBA || !oIA || !oJA || !oBI || !oBJ) continue;
      const std::string name = "cocycle " + I.str() + "|" + J.str();
      try {
        const int sigma = overlap_orientation(c, *oBA) * overlap_orientation(c, *oBI) * overlap_orientation(c, *oIA);
        const int dB = c.dim(B);
        ChartForm rhs = wedge(pullback(oBI->projection, dB, transition(c, theta, A, I)),
                              pullback(oBJ->projection, dB, transition(c, theta, A, J)));
        if (sigma < 0) rhs = -rhs;
        const ChartForm lhs = transition(c, theta, A, B);
        std::mt19937_64 rng(mix_seed(seed, I.bits(), J.bits()));
        std::string bad;
        for (const auto& y : sample_region(oBA->region_in_big, samples, rng)) {
          bad = compare_at(lhs, rhs, y.data(), tol);
          if (!bad.empty()) {
            bad += " at " + format_point(y);
            break;
          }
        }
        report.add(name, bad.empty(), bad);
      } catch (const StructureError& e) {
        report.add(name, false, e.what());
      }
    }
  }
  return report;
}

ValidationReport validate_virtual_form(const VirtualComplex& c, const VirtualFormFamily& z, int samples, double tol,
                                       std::uint64_t seed) {
  ValidationReport report;
  for (IndexSet I : c.chart_indices())
    if (!z.forms.count(I)) report.add("form on " + I.str(), false, "missing");
  for (const auto& o : c.overlaps()) {
    const std::string tag = o.small.str() + "->" + o.big.str();
    auto zi = z.forms.find(o.small);
    auto zj = z.forms.find(o.big);
    if (zi == z.forms.end() || zj == z.forms.end()) continue;
    std::string bad;
    try {
      const int eps = overlap_orientation(c, o);
      ChartForm expected = wedge(pullback(o.projection, c.dim(o.big), zi->second), transition(c, z.theta, o.small, o.big));
      if (eps < 0) expected = -expected;
      std::mt19937_64 rng(mix_seed(seed, o.small.bits(), o.big.bits()));
      for (const auto& y : sample_region(o.region_in_big, samples, rng)) {
        bad = compare_at(zj->second, expected, y.data(), tol);
        if (!bad.empty()) {
          bad += " at " + format_point(y);
          break;
        }
      }
    } catch (const StructureError& e) {
      bad = e.what();
    }
    report.add("theta-form " + tag, bad.empty(), bad);
  }
  const SupportFlags flags = support_flags(c, z.forms, 256, seed);
  if (flags.empty) report.warn("form family vanishes at every probe");
  if (!flags.compact) report.warn("form family does not vanish at a free edge: " + flags.witness);
  if (!flags.interior) report.warn("form family meets the boundary");
  return report;
}

SupportFlags support_flags(const VirtualComplex& c, const FormFamily& z, int probes, std::uint64_t seed,
                           double zero_tol) {
  SupportFlags flags;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const auto& [I, form] : z) {
    if (!c.has_chart(I)) continue;
    const ChartRegion& r = c.chart(I);
    const CompiledForm cf(form);
    std::vector<double> vals(cf.monomials().size());
    std::mt19937_64 rng(mix_seed(seed, I.bits(), 0x73757070ull));
    auto nonzero = [&](const double* x) {
      cf.evaluate(x, 1.0, vals.data());
      for (double v : vals)
        if (std::fabs(v) > zero_tol) return true;
      return false;
    };
    for (const auto& p : sample_region(r, probes, rng))
      if (nonzero(p.data())) flags.empty = false;
    Point p(r.dim());
    for (int k = 0; k < r.dim(); ++k) {
      if (r.periodic(k)) continue;
      for (bool upper : {false, true}) {
        const FaceKind kind = r.face(k, upper);
        if (kind != FaceKind::Free && kind != FaceKind::Boundary) continue;
        for (int t = 0; t < probes; ++t) {
          for (int a = 0; a < r.dim(); ++a) p[a] = r.lo(a) + unit(rng) * (r.hi(a) - r.lo(a));
          p[k] = upper ? r.hi(k) : r.lo(k);
          if (!r.contains(p, 1e-12) || !nonzero(p.data())) continue;
          if (kind == FaceKind::Free) {
            if (flags.compact) flags.witness = "chart " + I.str() + " at " + format_point(p);
            flags.compact = false;
          }
          flags.interior = false;
          break;
        }
      }
    }
    for (std::size_t ci = 0; ci < r.constraints().size(); ++ci) {
      const FaceKind kind = r.constraints()[ci].kind;
      if (kind != FaceKind::Free && kind != FaceKind::Boundary) continue;
      std::vector<CompiledExpression> grad;
      for (int a = 0; a < r.dim(); ++a) grad.emplace_back(r.constraints()[ci].g.derivative(a));
      double diameter = 0.0;
      for (int a = 0; a < r.dim(); ++a) diameter = std::max(diameter, r.hi(a) - r.lo(a));
      const double band = 1e-3 * diameter;
      auto near_face = [&](const double* x) {
        const double g = r.constraint_value(ci, x);
        double n2 = 0.0;
        for (const auto& ge : grad) n2 += std::pow(ge(x), 2);
        return n2 > 0.0 && -g <= band * std::sqrt(n2);
      };
      for (const auto& q : sample_region(r, probes, rng, near_face, 256)) {
        if (!nonzero(q.data())) continue;
        if (kind == FaceKind::Free) {
          if (flags.compact) flags.witness = "chart " + I.str() + " at " + format_point(q);
          flags.compact = false;
        }
        flags.interior = false;
        break;
      }
    }
  }
  return flags;
}

VirtualFormFamily exterior_derivative(const VirtualFormFamily& z) {
  VirtualFormFamily out;
  out.theta = z.theta;
  for (const auto& [I, f] : z.forms) out.forms[I] = exterior_derivative(f);
  return out;
}

VirtualFormFamily wedge(const FormFamily& a, const VirtualFormFamily& z) {
  VirtualFormFamily out;
  out.theta = z.theta;
  for (const auto& [I, f] : z.forms) {
    auto it = a.find(I);
    if (it == a.end()) throw StructureError("pre-form missing on chart " + I.str());
    out.forms[I] = wedge(it->second, f);
  }
  return out;
}

}  // namespace vman
