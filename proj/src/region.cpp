#include "vman/region.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace vman {

IndexSet IndexSet::of(std::initializer_list<int> elements) {
  return of(std::vector<int>(elements));
}

IndexSet IndexSet::of(const std::vector<int>& elements) {
  std::uint16_t bits = 0;
  for (int e : elements) {
    if (e < 1 || e > kMaxElement) throw StructureError("index set element out of range: " + std::to_string(e));
    bits |= static_cast<std::uint16_t>(1u << (e - 1));
  }
  return from_bits(bits);
}

IndexSet IndexSet::parse(const std::string& text) {
  std::vector<int> out;
  std::string digits;
  auto flush = [&] {
    if (!digits.empty()) out.push_back(std::stoi(digits));
    digits.clear();
  };
  for (char ch : text) {
    if (ch >= '0' && ch <= '9') {
      digits.push_back(ch);
    } else if (ch == ',' || ch == ' ' || ch == '{' || ch == '}') {
      flush();
    } else {
      throw StructureError("bad index set '" + text + "'");
    }
  }
  flush();
  return of(out);
}

int IndexSet::size() const { return std::popcount(static_cast<unsigned>(bits_)); }

std::vector<int> IndexSet::elements() const {
  std::vector<int> out;
  for (int i = 1; i <= kMaxElement; ++i)
    if (contains(i)) out.push_back(i);
  return out;
}

std::string IndexSet::str() const {
  std::string s = "{";
  bool first = true;
  for (int e : elements()) {
    if (!first) s += ",";
    s += std::to_string(e);
    first = false;
  }
  return s + "}";
}

std::strong_ordering IndexSet::operator<=>(const IndexSet& o) const {
  if (auto c = size() <=> o.size(); c != 0) return c;
  return bits_ <=> o.bits_;
}

std::vector<IndexSet> subsets_of(IndexSet s) {
  std::vector<IndexSet> out;
  const std::uint16_t full = s.bits();
  std::uint16_t sub = full;
  while (true) {
    out.push_back(IndexSet::from_bits(sub));
    if (sub == 0) break;
    sub = static_cast<std::uint16_t>((sub - 1) & full);
  }
  std::sort(out.begin(), out.end());
  return out;
}

const char* to_string(FaceKind kind) {
  switch (kind) {
    case FaceKind::Open:
      return "open";
    case FaceKind::Free:
      return "free";
    case FaceKind::Boundary:
      return "boundary";
    case FaceKind::Singular:
      return "singular";
  }
  return "open";
}

FaceKind face_kind_from_string(const std::string& s) {
  if (s == "open") return FaceKind::Open;
  if (s == "free") return FaceKind::Free;
  if (s == "boundary") return FaceKind::Boundary;
  if (s == "singular") return FaceKind::Singular;
  throw StructureError("unknown face kind '" + s + "'");
}

ChartRegion::ChartRegion(std::vector<double> lo, std::vector<double> hi, FaceKind faces)
    : lo_(std::move(lo)), hi_(std::move(hi)) {
  if (lo_.size() != hi_.size()) throw StructureError("box bounds differ in length");
  if (lo_.size() > static_cast<std::size_t>(kMaxVariables)) throw StructureError("region dimension exceeds 16");
  for (std::size_t k = 0; k < lo_.size(); ++k) {
    if (!(lo_[k] < hi_[k])) throw StructureError("empty box on axis " + std::to_string(k));
  }
  periodic_.assign(lo_.size(), false);
  lo_face_.assign(lo_.size(), faces);
  hi_face_.assign(lo_.size(), faces);
}

ChartRegion& ChartRegion::set_periodic(int axis, bool on) {
  periodic_.at(axis) = on;
  return *this;
}

ChartRegion& ChartRegion::set_face(int axis, bool upper, FaceKind kind) {
  (upper ? hi_face_ : lo_face_).at(axis) = kind;
  return *this;
}

ChartRegion& ChartRegion::set_faces(FaceKind kind) {
  std::fill(lo_face_.begin(), lo_face_.end(), kind);
  std::fill(hi_face_.begin(), hi_face_.end(), kind);
  return *this;
}

ChartRegion& ChartRegion::add_constraint(const Expression& g, FaceKind kind, std::optional<FaceParametrization> face) {
  if (g.uses_u()) throw StructureError("constraints may not use u");
  const std::uint32_t mask = g.variable_mask();
  if (dim() < 32 && (mask >> dim()) != 0) throw StructureError("constraint uses a variable beyond the chart dimension");
  if (face && static_cast<int>(face->map.size()) != dim()) throw StructureError("face parametrization has wrong arity");
  constraints_.push_back(Constraint{g, kind, std::move(face)});
  compiled_.emplace_back(g);
  return *this;
}

double ChartRegion::constraint_value(std::size_t i, const double* x) const {
  double w[kMaxVariables];
  std::copy(x, x + dim(), w);
  wrap(w);
  return compiled_[i](w);
}

void ChartRegion::wrap(double* x) const {
  for (int k = 0; k < dim(); ++k) {
    if (!periodic_[k]) continue;
    const double period = hi_[k] - lo_[k];
    double t = std::fmod(x[k] - lo_[k], period);
    if (t < 0) t += period;
    x[k] = lo_[k] + t;
  }
}

double ChartRegion::violation(const double* x) const {
  double w[kMaxVariables];
  std::copy(x, x + dim(), w);
  wrap(w);
  double v = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < dim(); ++k) {
    if (periodic_[k]) continue;
    v = std::max(v, std::max(lo_[k] - w[k], w[k] - hi_[k]));
  }
  for (const auto& c : compiled_) v = std::max(v, c(w));
  if (std::isnan(v)) return std::numeric_limits<double>::infinity();
  return v;
}

bool ChartRegion::contains(const double* x, double tol) const {
  double w[kMaxVariables];
  std::copy(x, x + dim(), w);
  wrap(w);
  for (int k = 0; k < dim(); ++k) {
    if (periodic_[k]) continue;
    if (!(lo_[k] - w[k] <= tol && w[k] - hi_[k] <= tol)) return false;
  }
  for (const auto& c : compiled_)
    if (!(c(w) <= tol)) return false;
  return true;
}

double ChartRegion::box_volume() const {
  double v = 1.0;
  for (int k = 0; k < dim(); ++k) v *= hi_[k] - lo_[k];
  return v;
}

Point ChartRegion::box_center() const {
  Point c(dim());
  for (int k = 0; k < dim(); ++k) c[k] = 0.5 * (lo_[k] + hi_[k]);
  return c;
}

ChartRegion ChartRegion::intersect(const ChartRegion& other) const {
  if (other.dim() != dim()) throw StructureError("intersecting regions of different dimension");
  ChartRegion out = *this;
  for (int k = 0; k < dim(); ++k) {
    if (periodic_[k] != other.periodic_[k]) {
      // A periodic axis meeting a bounded one keeps the bounded extent.
      if (periodic_[k]) {
        out.lo_[k] = other.lo_[k];
        out.hi_[k] = other.hi_[k];
        out.lo_face_[k] = other.lo_face_[k];
        out.hi_face_[k] = other.hi_face_[k];
        out.periodic_[k] = false;
      }
      continue;
    }
    if (periodic_[k]) continue;
    if (other.lo_[k] > lo_[k]) {
      out.lo_[k] = other.lo_[k];
      out.lo_face_[k] = other.lo_face_[k];
    } else if (other.lo_[k] == lo_[k] && other.lo_face_[k] == FaceKind::Boundary) {
      out.lo_face_[k] = FaceKind::Boundary;
    }
    if (other.hi_[k] < hi_[k]) {
      out.hi_[k] = other.hi_[k];
      out.hi_face_[k] = other.hi_face_[k];
    } else if (other.hi_[k] == hi_[k] && other.hi_face_[k] == FaceKind::Boundary) {
      out.hi_face_[k] = FaceKind::Boundary;
    }
    if (!(out.lo_[k] < out.hi_[k])) {
      // Disjoint boxes: keep a degenerate but valid box that contains nothing.
      out.hi_[k] = out.lo_[k] + 1e-300;
      out.add_constraint(Expression::constant(1.0));
    }
  }
  for (const auto& c : other.constraints_) out.add_constraint(c.g, c.kind, c.face);
  return out;
}

ChartRegion ChartRegion::homothety(double factor) const {
  if (!(factor > 0.0)) throw StructureError("homothety factor must be positive");
  ChartRegion out = *this;
  const Point c = box_center();
  std::vector<Expression> back(dim());
  for (int k = 0; k < dim(); ++k) {
    if (periodic_[k]) {
      back[k] = Expression::variable(k);
      continue;
    }
    out.lo_[k] = c[k] + factor * (lo_[k] - c[k]);
    out.hi_[k] = c[k] + factor * (hi_[k] - c[k]);
    back[k] = Expression::constant(c[k]) +
              (Expression::variable(k) - Expression::constant(c[k])) / Expression::constant(factor);
  }
  out.constraints_.clear();
  out.compiled_.clear();
  for (const auto& con : constraints_) out.add_constraint(con.g.substitute(back), con.kind);
  return out;
}

Expression ChartRegion::violation_expression() const {
  std::optional<Expression> v;
  auto fold = [&](const Expression& e) { v = v ? max(*v, e) : e; };
  for (int k = 0; k < dim(); ++k) {
    if (periodic_[k]) continue;
    fold(Expression::constant(lo_[k]) - Expression::variable(k));
    fold(Expression::variable(k) - Expression::constant(hi_[k]));
  }
  for (const auto& c : constraints_) fold(c.g);
  return v ? *v : Expression::constant(-1.0);
}

ChartRegion& ChartRegion::exclude(const ChartRegion& removed, FaceKind kind) {
  if (removed.dim() != dim()) throw StructureError("excluding a region of different dimension");
  return add_constraint(-removed.violation_expression(), kind);
}

ChartRegion ChartRegion::box_face(int axis, bool upper) const {
  if (dim() == 0) throw StructureError("a point has no faces");
  std::vector<double> lo, hi;
  std::vector<Expression> embed(dim());
  int j = 0;
  for (int k = 0; k < dim(); ++k) {
    if (k == axis) {
      embed[k] = Expression::constant(upper ? hi_[k] : lo_[k]);
      continue;
    }
    lo.push_back(lo_[k]);
    hi.push_back(hi_[k]);
    embed[k] = Expression::variable(j++);
  }
  ChartRegion out = lo.empty() ? ChartRegion() : ChartRegion(lo, hi);
  j = 0;
  for (int k = 0; k < dim(); ++k) {
    if (k == axis) continue;
    out.periodic_[j] = periodic_[k];
    out.lo_face_[j] = lo_face_[k];
    out.hi_face_[j] = hi_face_[k];
    ++j;
  }
  for (const auto& c : constraints_) out.add_constraint(c.g.substitute(embed), c.kind);
  return out;
}

ChartRegion ChartRegion::pullback(const ChartRegion& domain_box, const std::vector<Expression>& map) const {
  if (static_cast<int>(map.size()) != dim()) throw StructureError("pullback map has wrong arity");
  ChartRegion out = domain_box;
  for (int k = 0; k < dim(); ++k) {
    if (periodic_[k]) continue;
    if (map[k].op() == Op::Var && map[k].variable_index() == k && k < out.dim() && out.lo_[k] >= lo_[k] &&
        out.hi_[k] <= hi_[k] && !out.periodic_[k])
      continue;
    if (map[k].is_constant()) {
      const double v = map[k].constant_value();
      if (v < lo_[k] || v > hi_[k]) out.add_constraint(Expression::constant(std::max(lo_[k] - v, v - hi_[k])));
      continue;
    }
    out.add_constraint(Expression::constant(lo_[k]) - map[k]);
    out.add_constraint(map[k] - Expression::constant(hi_[k]));
  }
  for (const auto& c : constraints_) out.add_constraint(c.g.substitute(map), c.kind);
  return out;
}

std::vector<Point> sample_region(const ChartRegion& region, int count, std::mt19937_64& rng,
                                 const std::function<bool(const double*)>& accept, int max_tries_factor) {
  std::vector<Point> out;
  const int d = region.dim();
  if (count <= 0) return out;
  if (d == 0) {
    Point p;
    if (region.contains(p.data()) && (!accept || accept(p.data()))) out.assign(1, p);
    return out;
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const long long tries = static_cast<long long>(count) * max_tries_factor;
  Point p(d);
  for (long long t = 0; t < tries && static_cast<int>(out.size()) < count; ++t) {
    for (int k = 0; k < d; ++k) p[k] = region.lo(k) + unit(rng) * (region.hi(k) - region.lo(k));
    if (!region.contains(p.data())) continue;
    if (accept && !accept(p.data())) continue;
    out.push_back(p);
  }
  return out;
}

double region_distance(const ChartRegion& region, const double* a, const double* b) {
  double m = 0.0;
  for (int k = 0; k < region.dim(); ++k) {
    double d = std::fabs(a[k] - b[k]);
    if (region.periodic(k)) {
      const double period = region.hi(k) - region.lo(k);
      d = std::fmod(d, period);
      d = std::min(d, period - d);
    }
    m = std::max(m, d);
  }
  return m;
}

void ValidationReport::add(std::string name, bool passed, std::string detail) {
  checks_.push_back(CheckResult{std::move(name), passed, std::move(detail)});
}

void ValidationReport::warn(std::string message) { warnings_.push_back(std::move(message)); }

void ValidationReport::merge(const ValidationReport& other) {
  checks_.insert(checks_.end(), other.checks_.begin(), other.checks_.end());
  warnings_.insert(warnings_.end(), other.warnings_.begin(), other.warnings_.end());
}

bool ValidationReport::ok() const { return failures() == 0; }

std::size_t ValidationReport::failures() const {
  return static_cast<std::size_t>(std::count_if(checks_.begin(), checks_.end(), [](const auto& c) { return !c.passed; }));
}

const CheckResult* ValidationReport::first_failure() const {
  for (const auto& c : checks_)
    if (!c.passed) return &c;
  return nullptr;
}

const CheckResult* ValidationReport::find(const std::string& name) const {
  for (const auto& c : checks_)
    if (c.name == name) return &c;
  return nullptr;
}

std::string format_point(const double* x, int dim) {
  std::string s = "(";
  char buf[32];
  for (int k = 0; k < dim; ++k) {
    std::snprintf(buf, sizeof buf, "%.6g", x[k]);
    if (k) s += ", ";
    s += buf;
  }
  return s + ")";
}

}  // namespace vman
