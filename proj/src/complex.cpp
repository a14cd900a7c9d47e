#include "vman/complex.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace vman {

namespace {

std::vector<Expression> identity_map(int dim) {
  std::vector<Expression> m;
  m.reserve(dim);
  for (int k = 0; k < dim; ++k) m.push_back(Expression::variable(k));
  return m;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ull;
  for (std::uint64_t v : {a, b}) {
    h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h *= 0xbf58476d1ce4e5b9ull;
    h ^= h >> 31;
  }
  return h;
}

std::string pair_name(const char* axiom, IndexSet I, IndexSet J) {
  return std::string(axiom) + " " + I.str() + "|" + J.str();
}

double max_abs(const Point& p) {
  double m = 0.0;
  for (double v : p) m = std::max(m, std::fabs(v));
  return m;
}

bool nonempty(const ChartRegion& region, int probes, std::mt19937_64& rng) {
  return !sample_region(region, 1, rng, {}, probes).empty();
}

}  // namespace

Overlap identity_overlap(IndexSet small, IndexSet big, const ChartRegion& region) {
  Overlap o;
  o.small = small;
  o.big = big;
  o.region_in_small = region;
  o.region_in_big = region;
  o.rank = 0;
  o.projection = identity_map(region.dim());
  o.fiber_param = identity_map(region.dim());
  return o;
}

VirtualComplex::VirtualComplex(int n) : n_(n) {
  if (n < 0 || n > IndexSet::kMaxElement) throw StructureError("n must lie in 0..15");
}

void VirtualComplex::set_chart(IndexSet index, ChartRegion region) {
  if (!index.subset_of(IndexSet::from_bits(static_cast<std::uint16_t>((1u << n_) - 1))))
    throw StructureError("chart index " + index.str() + " exceeds n=" + std::to_string(n_));
  charts_[index] = std::move(region);
}

const ChartRegion& VirtualComplex::chart(IndexSet index) const {
  auto it = charts_.find(index);
  if (it == charts_.end()) throw StructureError("missing chart " + index.str());
  return it->second;
}

std::vector<IndexSet> VirtualComplex::chart_indices() const {
  std::vector<IndexSet> out;
  for (const auto& [k, v] : charts_) out.push_back(k);
  return out;
}

int VirtualComplex::virtual_dim() const { return chart(IndexSet()).dim(); }

void VirtualComplex::add_overlap(Overlap o) {
  if (!o.small.proper_subset_of(o.big))
    throw StructureError("overlap " + o.small.str() + "->" + o.big.str() + " is not a proper inclusion");
  if (!has_chart(o.small) || !has_chart(o.big))
    throw StructureError("overlap " + o.small.str() + "->" + o.big.str() + " references a missing chart");
  const int dI = dim(o.small);
  const int dJ = dim(o.big);
  if (o.region_in_small.dim() != dI || o.region_in_big.dim() != dJ)
    throw StructureError("overlap " + o.small.str() + "->" + o.big.str() + " regions have wrong dimension");
  if (static_cast<int>(o.projection.size()) != dI || static_cast<int>(o.fiber_param.size()) != dJ)
    throw StructureError("overlap " + o.small.str() + "->" + o.big.str() + " maps have wrong arity");
  if (o.rank < 0) throw StructureError("negative rank");
  for (const auto& e : o.projection)
    if (e.uses_u() || (dJ < 32 && (e.variable_mask() >> dJ) != 0))
      throw StructureError("projection uses variables beyond the big chart");
  const int pdim = dI + o.rank;
  for (const auto& e : o.fiber_param)
    if (e.uses_u() || (pdim < 32 && (e.variable_mask() >> pdim) != 0))
      throw StructureError("fiber parametrization uses variables beyond (x, v)");
  const auto key = std::make_pair(o.small.bits(), o.big.bits());
  if (overlap_index_.count(key)) throw StructureError("duplicate overlap " + o.small.str() + "->" + o.big.str());
  CompiledOverlap co;
  for (const auto& e : o.projection) co.projection.emplace_back(e);
  for (const auto& e : o.fiber_param) co.fiber_param.emplace_back(e);
  overlap_index_[key] = overlaps_.size();
  overlaps_.push_back(std::move(o));
  compiled_.push_back(std::move(co));
}

const Overlap* VirtualComplex::overlap(IndexSet small, IndexSet big) const {
  auto it = overlap_index_.find(std::make_pair(small.bits(), big.bits()));
  return it == overlap_index_.end() ? nullptr : &overlaps_[it->second];
}

bool VirtualComplex::in_overlap(IndexSet I, IndexSet J, const double* x, double tol) const {
  auto it = charts_.find(I);
  if (it == charts_.end() || !it->second.contains(x, tol)) return false;
  if (I == J) return true;
  if (I.subset_of(J)) {
    const Overlap* o = overlap(I, J);
    return o && o->region_in_small.contains(x, tol);
  }
  if (J.subset_of(I)) {
    const Overlap* o = overlap(J, I);
    return o && o->region_in_big.contains(x, tol);
  }
  const IndexSet A = I & J;
  if (!has_chart(A) || !in_overlap(I, A, x, tol)) return false;
  double p[kMaxVariables];
  project(I, A, x, p);
  return in_overlap(A, I | J, p, tol);
}

void VirtualComplex::project(IndexSet J, IndexSet I, const double* y, double* out) const {
  const ChartRegion& cj = chart(J);
  if (I == J) {
    std::copy(y, y + cj.dim(), out);
    return;
  }
  auto it = overlap_index_.find(std::make_pair(I.bits(), J.bits()));
  if (it == overlap_index_.end()) throw StructureError("no overlap " + I.str() + "->" + J.str());
  double w[kMaxVariables];
  std::copy(y, y + cj.dim(), w);
  cj.wrap(w);
  const auto& co = compiled_[it->second];
  for (std::size_t k = 0; k < co.projection.size(); ++k) out[k] = co.projection[k](w);
}

Point VirtualComplex::project(IndexSet J, IndexSet I, const Point& y) const {
  Point out(dim(I));
  project(J, I, y.data(), out.data());
  return out;
}

void VirtualComplex::lift(IndexSet J, IndexSet I, const double* x, const double* v, double* out) const {
  const int dI = dim(I);
  if (I == J) {
    std::copy(x, x + dI, out);
    return;
  }
  auto it = overlap_index_.find(std::make_pair(I.bits(), J.bits()));
  if (it == overlap_index_.end()) throw StructureError("no overlap " + I.str() + "->" + J.str());
  const int rank = overlaps_[it->second].rank;
  double w[kMaxVariables];
  std::copy(x, x + dI, w);
  if (dI + rank > kMaxVariables) throw StructureError("bundle chart exceeds 16 coordinates");
  std::copy(v, v + rank, w + dI);
  const auto& co = compiled_[it->second];
  for (std::size_t k = 0; k < co.fiber_param.size(); ++k) out[k] = co.fiber_param[k](w);
}

Point VirtualComplex::lift(IndexSet J, IndexSet I, const Point& x, const Point& v) const {
  Point out(dim(J));
  lift(J, I, x.data(), v.data(), out.data());
  return out;
}

Point VirtualComplex::zero_lift(IndexSet J, IndexSet I, const Point& x) const {
  const Overlap* o = I == J ? nullptr : overlap(I, J);
  const Point v(o ? o->rank : 0, 0.0);
  return lift(J, I, x, v);
}

ValidationReport validate_patchable(const VirtualComplex& c, int samples, double tol, std::uint64_t seed) {
  ValidationReport report;
  const auto idx = c.chart_indices();
  if (!c.has_chart(IndexSet())) report.add("X_empty nonempty", false, "chart for the empty index set is missing");
  for (const auto& o : c.overlaps()) {
    if (!c.has_chart(o.small) || !c.has_chart(o.big))
      throw StructureError("overlap references a missing chart");
  }

  // Samples a set inside chart C described by a predicate; a short probe
  // settles empty sets before the full rejection budget is spent.
  auto draw = [&](IndexSet C, std::mt19937_64& rng, const std::function<bool(const double*)>& pred) {
    if (!c.has_chart(C)) return std::vector<Point>{};
    auto pts = sample_region(c.chart(C), samples, rng, pred, 8);
    if (pts.empty() || static_cast<int>(pts.size()) == samples) return pts;
    auto more = sample_region(c.chart(C), samples - static_cast<int>(pts.size()), rng, pred, 56);
    pts.insert(pts.end(), more.begin(), more.end());
    return pts;
  };

  for (std::size_t a = 0; a < idx.size(); ++a) {
    for (std::size_t b = a + 1; b < idx.size(); ++b) {
      const IndexSet I = idx[a];
      const IndexSet J = idx[b];
      const IndexSet A = I & J;
      const IndexSet B = I | J;
      std::mt19937_64 rng(mix_seed(seed, I.bits(), J.bits()));

      // P1 and P2: set identities inside X_B and X_A.
      auto set_identity = [&](const char* axiom, IndexSet C, IndexSet lhs, IndexSet r1, IndexSet r2) {
        auto left = [&](const double* x, double t) { return c.in_overlap(C, lhs, x, t); };
        auto right = [&](const double* x, double t) {
          return c.in_overlap(C, r1, x, t) && c.in_overlap(C, r2, x, t);
        };
        std::string bad;
        for (const auto& p : draw(C, rng, [&](const double* x) { return left(x, 0.0); })) {
          if (!right(p.data(), tol)) {
            bad = "point " + format_point(p) + " of the left set is missing on the right";
            break;
          }
        }
        if (bad.empty()) {
          for (const auto& p : draw(C, rng, [&](const double* x) { return right(x, 0.0); })) {
            if (!left(p.data(), tol)) {
              bad = "point " + format_point(p) + " of the right set is missing on the left";
              break;
            }
          }
        }
        report.add(pair_name(axiom, I, J), bad.empty(), bad);
      };
      set_identity("P1", B, A, I, J);
      set_identity("P2", A, B, I, J);

      const auto in_BA = draw(B, rng, [&](const double* y) { return c.in_overlap(B, A, y, 0.0); });

      // P3: φ_{B,A} = φ_{I,A}∘φ_{B,I} = φ_{J,A}∘φ_{B,J}.
      {
        std::string bad;
        for (const auto& y : in_BA) {
          try {
            const Point direct = c.project(B, A, y);
            const Point via_i = c.project(I, A, c.project(B, I, y));
            const Point via_j = c.project(J, A, c.project(B, J, y));
            const double scale = 1.0 + max_abs(direct);
            const ChartRegion& ca = c.chart(A);
            if (region_distance(ca, direct.data(), via_i.data()) > tol * scale ||
                region_distance(ca, direct.data(), via_j.data()) > tol * scale) {
              bad = "maps disagree at " + format_point(y);
              break;
            }
          } catch (const StructureError& e) {
            bad = std::string(e.what()) + " at " + format_point(y);
            break;
          }
        }
        report.add(pair_name("P3", I, J), bad.empty(), bad);
      }

      // P4/P5: φ_{B,K}(X_{B,A}) = φ_{K,A}^{-1}(X_{A,B}) for K = I, J.
      auto image_identity = [&](const char* axiom, IndexSet K) {
        std::string bad;
        for (const auto& y : in_BA) {
          if (!c.overlap(K, B) && K != B) {
            bad = "missing overlap " + K.str() + "->" + B.str();
            break;
          }
          const Point x = c.project(B, K, y);
          if (!c.in_overlap(K, A, x.data(), tol)) {
            bad = "image " + format_point(x) + " of " + format_point(y) + " leaves X_{K,A}";
            break;
          }
          const Point p = c.project(K, A, x);
          if (!c.in_overlap(A, B, p.data(), tol)) {
            bad = "image " + format_point(x) + " of " + format_point(y) + " is not in the preimage";
            break;
          }
        }
        if (bad.empty()) {
          auto pre = [&](const double* x) {
            if (!c.in_overlap(K, A, x, 0.0)) return false;
            double p[kMaxVariables];
            c.project(K, A, x, p);
            return c.in_overlap(A, B, p, 0.0);
          };
          for (const auto& x : draw(K, rng, pre)) {
            if (K != B && !c.overlap(K, B)) {
              bad = "preimage point " + format_point(x) + " has no bundle chart to " + B.str();
              break;
            }
            const Point y = c.zero_lift(B, K, x);
            if (!c.in_overlap(B, A, y.data(), tol)) {
              bad = "preimage point " + format_point(x) + " is not hit by X_{B,A}";
              break;
            }
          }
        }
        report.add(pair_name(axiom, I, J), bad.empty(), bad);
      };
      image_identity("P4", I);
      image_identity("P5", J);
    }
  }
  return report;
}

ValidationReport validate_virtual(const VirtualComplex& c, int samples, double tol, std::uint64_t seed) {
  ValidationReport report;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (const auto& o : c.overlaps()) {
    const std::string tag = o.small.str() + "->" + o.big.str();
    const int dI = c.dim(o.small);
    const int dJ = c.dim(o.big);
    const bool dims_ok = o.rank == dJ - dI;
    report.add("rank " + tag, dims_ok,
               dims_ok ? "" : "declared rank " + std::to_string(o.rank) + " but d_J - d_I = " + std::to_string(dJ - dI));
    if (!dims_ok) continue;

    std::mt19937_64 rng(mix_seed(seed, o.small.bits(), o.big.bits()));
    // φ∘ψ = id on sampled (x, v).
    std::string bad;
    int checked = 0;
    for (const auto& x : sample_region(o.region_in_small, samples, rng)) {
      Point v(o.rank, 0.0);
      for (int pass = 0; pass < 2 && bad.empty(); ++pass) {
        if (pass == 1)
          for (auto& t : v) t = unit(rng);
        const Point y = c.lift(o.big, o.small, x, v);
        if (pass == 0 && !o.region_in_big.contains(y, tol)) {
          bad = "zero section over " + format_point(x) + " leaves X_{J,I}";
          break;
        }
        if (!o.region_in_big.contains(y, tol)) continue;
        const Point back = c.project(o.big, o.small, y);
        if (region_distance(c.chart(o.small), back.data(), x.data()) > tol * (1.0 + max_abs(x))) {
          bad = "projection of the lift of " + format_point(x) + " returns " + format_point(back);
          break;
        }
        ++checked;
      }
      if (!bad.empty()) break;
    }
    report.add("bundle chart " + tag, bad.empty(), bad.empty() ? std::to_string(checked) + " samples" : bad);

    // Rank 0: ψ∘φ = id. Positive rank: ψ is a local diffeomorphism.
    bad.clear();
    if (o.rank == 0) {
      for (const auto& y : sample_region(o.region_in_big, samples, rng)) {
        const Point x = c.project(o.big, o.small, y);
        const Point back = c.lift(o.big, o.small, x, Point{});
        if (region_distance(c.chart(o.big), back.data(), y.data()) > tol * (1.0 + max_abs(y))) {
          bad = "inverse inconsistency at " + format_point(y);
          break;
        }
      }
      report.add("inverse " + tag, bad.empty(), bad);
    } else {
      std::vector<std::vector<CompiledExpression>> jac(dJ);
      for (int r = 0; r < dJ; ++r)
        for (int k = 0; k < dJ; ++k) jac[r].emplace_back(o.fiber_param[r].derivative(k));
      for (const auto& x : sample_region(o.region_in_small, samples, rng)) {
        double w[kMaxVariables] = {};
        std::copy(x.begin(), x.end(), w);
        Eigen::MatrixXd m(dJ, dJ);
        for (int r = 0; r < dJ; ++r)
          for (int k = 0; k < dJ; ++k) m(r, k) = jac[r][k](w);
        if (std::fabs(m.determinant()) <= tol) {
          bad = "fiber parametrization is singular over " + format_point(x);
          break;
        }
      }
      report.add("bundle diffeomorphism " + tag, bad.empty(), bad);
    }
  }

  // Rank additivity along chains and the fiber-product dimension identity.
  const auto idx = c.chart_indices();
  for (const auto& o1 : c.overlaps()) {
    for (const auto& o2 : c.overlaps()) {
      if (o1.big != o2.small) continue;
      const Overlap* o3 = c.overlap(o1.small, o2.big);
      if (!o3) continue;
      const bool ok = o3->rank == o1.rank + o2.rank;
      report.add("chain " + o1.small.str() + "<" + o1.big.str() + "<" + o2.big.str(), ok,
                 ok ? "" : "ranks do not add");
    }
  }
  for (std::size_t a = 0; a < idx.size(); ++a) {
    for (std::size_t b = a + 1; b < idx.size(); ++b) {
      const IndexSet I = idx[a];
      const IndexSet J = idx[b];
      if (I.subset_of(J) || J.subset_of(I)) continue;
      const IndexSet A = I & J;
      const IndexSet B = I | J;
      if (!c.has_chart(A) || !c.has_chart(B) || !c.overlap(A, B)) continue;
      const int lhs = c.dim(B) - c.dim(A);
      const int rhs = (c.dim(I) - c.dim(A)) + (c.dim(J) - c.dim(A));
      report.add(pair_name("fiber product", I, J), lhs == rhs,
                 lhs == rhs ? "" : "d_B - d_A = " + std::to_string(lhs) + " but fiber sum = " + std::to_string(rhs));
    }
  }
  return report;
}

bool equivalent(const VirtualComplex& c, const ChartPoint& a, const ChartPoint& b, double tol) {
  if (!c.has_chart(a.chart) || !c.has_chart(b.chart)) return false;
  double pa[kMaxVariables];
  double pb[kMaxVariables];
  for (IndexSet K : subsets_of(a.chart & b.chart)) {
    if (!c.has_chart(K)) continue;
    if (!c.in_overlap(a.chart, K, a.x.data(), tol) || !c.in_overlap(b.chart, K, b.x.data(), tol)) continue;
    c.project(a.chart, K, a.x.data(), pa);
    c.project(b.chart, K, b.x.data(), pb);
    if (region_distance(c.chart(K), pa, pb) <= tol) return true;
  }
  return false;
}

ChartPoint support(const VirtualComplex& c, const ChartPoint& a, double tol) {
  for (IndexSet K : subsets_of(a.chart)) {
    if (!c.has_chart(K) || !c.in_overlap(a.chart, K, a.x.data(), tol)) continue;
    return ChartPoint{K, c.project(a.chart, K, a.x)};
  }
  return a;
}

VirtualComplex from_cover(int ambient_dim, const std::vector<ChartRegion>& cover, double shrink,
                          int emptiness_probes, std::uint64_t seed) {
  if (cover.empty()) throw StructureError("cover needs at least U_0");
  if (!(shrink > 0.0 && shrink < 1.0)) throw StructureError("shrink must lie in (0,1)");
  const int n = static_cast<int>(cover.size()) - 1;
  if (n > IndexSet::kMaxElement) throw StructureError("at most 15 cover elements besides U_0");
  for (const auto& u : cover)
    if (u.dim() != ambient_dim) throw StructureError("cover region dimension differs from the ambient dimension");

  std::vector<ChartRegion> shrunk;
  for (int i = 1; i <= n; ++i) shrunk.push_back(cover[i].homothety(shrink));

  auto boxes_meet = [](const ChartRegion& a, const ChartRegion& b) {
    for (int k = 0; k < a.dim(); ++k) {
      if (a.periodic(k) || b.periodic(k)) continue;
      if (a.hi(k) <= b.lo(k) || b.hi(k) <= a.lo(k)) return false;
    }
    return true;
  };

  VirtualComplex c(n);
  std::mt19937_64 rng(mix_seed(seed, 0x636f766572ull));
  for (std::uint32_t bits = 0; bits < (1u << n); ++bits) {
    const IndexSet I = IndexSet::from_bits(static_cast<std::uint16_t>(bits));
    ChartRegion region;
    if (I.empty()) {
      region = cover[0];
    } else {
      bool first = true;
      for (int i : I.elements()) {
        region = first ? cover[i] : region.intersect(cover[i]);
        first = false;
      }
    }
    for (int j = 1; j <= n; ++j) {
      if (I.contains(j) || !boxes_meet(region, shrunk[j - 1])) continue;
      region.exclude(shrunk[j - 1]);
    }
    if (!nonempty(region, emptiness_probes, rng)) {
      if (I.empty()) throw StructureError("X_empty computes empty");
      continue;
    }
    c.set_chart(I, std::move(region));
  }

  const auto idx = c.chart_indices();
  for (IndexSet I : idx) {
    for (IndexSet J : idx) {
      if (!I.proper_subset_of(J)) continue;
      ChartRegion meet = c.chart(I).intersect(c.chart(J));
      if (!nonempty(meet, emptiness_probes, rng)) continue;
      c.add_overlap(identity_overlap(I, J, meet));
    }
  }
  return c;
}

namespace {

struct Face {
  FaceRef ref;
  ChartRegion region;
  std::vector<Expression> embedding;
  int orientation = 1;
  std::vector<CompiledExpression> compiled;
};

Point embed(const Face& f, const Point& t) {
  Point y(f.compiled.size());
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = f.compiled[k](t.data());
  return y;
}

bool on_face(const VirtualComplex& c, const Face& f, const Point& x, double tol) {
  const ChartRegion& r = c.chart(f.ref.chart);
  if (!r.contains(x, tol)) return false;
  if (f.ref.axis >= 0) {
    const double bound = f.ref.upper ? r.hi(f.ref.axis) : r.lo(f.ref.axis);
    return std::fabs(x[f.ref.axis] - bound) <= tol * (1.0 + std::fabs(bound));
  }
  return std::fabs(r.constraint_value(static_cast<std::size_t>(f.ref.constraint), x.data())) <= tol;
}

int find_root(std::vector<int>& parent, int i) {
  while (parent[i] != i) i = parent[i] = parent[parent[i]];
  return i;
}

std::vector<Expression> drop(const std::vector<Expression>& v, int axis) {
  std::vector<Expression> out;
  for (int k = 0; k < static_cast<int>(v.size()); ++k)
    if (k != axis) out.push_back(v[k]);
  return out;
}

}  // namespace

std::vector<BoundaryComponent> boundary(const VirtualComplex& c, int samples, double tol, std::uint64_t seed) {
  std::vector<Face> faces;
  std::mt19937_64 rng(mix_seed(seed, 0x626f756e64ull));
  for (IndexSet I : c.chart_indices()) {
    const ChartRegion& r = c.chart(I);
    for (int k = 0; k < r.dim(); ++k) {
      if (r.periodic(k)) continue;
      for (bool upper : {false, true}) {
        if (r.face(k, upper) != FaceKind::Boundary) continue;
        Face f;
        f.ref = FaceRef{I, k, upper, -1};
        f.region = r.box_face(k, upper);
        int j = 0;
        for (int a = 0; a < r.dim(); ++a)
          f.embedding.push_back(a == k ? Expression::constant(upper ? r.hi(k) : r.lo(k)) : Expression::variable(j++));
        const int parity = (k % 2 == 0) ? 1 : -1;
        f.orientation = upper ? parity : -parity;
        for (const auto& e : f.embedding) f.compiled.emplace_back(e);
        if (sample_region(f.region, 1, rng, {}, 4096).empty()) continue;
        faces.push_back(std::move(f));
      }
    }
    for (std::size_t ci = 0; ci < r.constraints().size(); ++ci) {
      const Constraint& con = r.constraints()[ci];
      if (con.kind != FaceKind::Boundary) continue;
      if (!con.face) throw StructureError("boundary constraint on chart " + I.str() + " has no face parametrization");
      const FaceParametrization& fp = *con.face;
      Face f;
      f.ref = FaceRef{I, -1, false, static_cast<int>(ci)};
      f.region = fp.lo.empty() ? ChartRegion() : ChartRegion(fp.lo, fp.hi);
      for (std::size_t a = 0; a < fp.periodic.size(); ++a) f.region.set_periodic(static_cast<int>(a), fp.periodic[a]);
      for (int a = 0; a < r.dim(); ++a) {
        if (r.periodic(a)) continue;
        f.region.add_constraint(Expression::constant(r.lo(a)) - fp.map[a]);
        f.region.add_constraint(fp.map[a] - Expression::constant(r.hi(a)));
      }
      for (std::size_t cj = 0; cj < r.constraints().size(); ++cj)
        if (cj != ci) f.region.add_constraint(r.constraints()[cj].g.substitute(fp.map));
      f.embedding = fp.map;
      for (const auto& e : f.embedding) f.compiled.emplace_back(e);
      // Orientation: sign det[∇g, ∂P/∂t] must be constant along the face.
      std::vector<CompiledExpression> grad;
      for (int a = 0; a < r.dim(); ++a) grad.emplace_back(con.g.derivative(a));
      std::vector<std::vector<CompiledExpression>> dp(r.dim());
      for (int a = 0; a < r.dim(); ++a)
        for (int b = 0; b < r.dim() - 1; ++b) dp[a].emplace_back(fp.map[a].derivative(b));
      int sign = 0;
      for (const auto& t : sample_region(f.region, samples, rng)) {
        const Point y = embed(f, t);
        Eigen::MatrixXd m(r.dim(), r.dim());
        for (int a = 0; a < r.dim(); ++a) {
          m(a, 0) = grad[a](y.data());
          for (int b = 0; b + 1 < r.dim(); ++b) m(a, b + 1) = dp[a][b](t.data());
        }
        const double det = m.determinant();
        const int s = det > 0 ? 1 : (det < 0 ? -1 : 0);
        if (s == 0 || (sign != 0 && s != sign))
          throw StructureError("face parametrization of constraint " + std::to_string(ci) + " on chart " + I.str() +
                               " is not an immersion of constant orientation");
        sign = s;
      }
      if (sign == 0) continue;
      f.orientation = sign;
      faces.push_back(std::move(f));
    }
  }

  std::vector<int> parent(faces.size());
  std::iota(parent.begin(), parent.end(), 0);
  struct Link {
    std::size_t small_face, big_face;
    const Overlap* overlap;
  };
  std::vector<Link> links;

  for (const auto& o : c.overlaps()) {
    for (std::size_t fj = 0; fj < faces.size(); ++fj) {
      if (faces[fj].ref.chart != o.big) continue;
      auto in_overlap = [&](const double* t) {
        return o.region_in_big.contains(embed(faces[fj], Point(t, t + faces[fj].region.dim())), 0.0);
      };
      for (const auto& t : sample_region(faces[fj].region, samples, rng, in_overlap)) {
        const Point x = c.project(o.big, o.small, embed(faces[fj], t));
        bool found = false;
        for (std::size_t fi = 0; fi < faces.size() && !found; ++fi) {
          if (faces[fi].ref.chart != o.small || !on_face(c, faces[fi], x, tol)) continue;
          found = true;
          if (faces[fi].ref.axis < 0 || faces[fj].ref.axis < 0)
            throw StructureError("gluing parametrized boundary faces across charts is not supported");
          const int ri = find_root(parent, static_cast<int>(fi));
          const int rj = find_root(parent, static_cast<int>(fj));
          if (ri != rj) {
            parent[ri] = rj;
            links.push_back(Link{fi, fj, &o});
          }
        }
        if (!found)
          throw StructureError("boundary compatibility fails: face point " + format_point(embed(faces[fj], t)) +
                               " of chart " + o.big.str() + " projects off the boundary of " + o.small.str());
      }
    }
  }

  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t f = 0; f < faces.size(); ++f) groups[find_root(parent, static_cast<int>(f))].push_back(f);

  std::vector<BoundaryComponent> out;
  for (const auto& [root, members] : groups) {
    IndexSet common = IndexSet::from_bits(0xffff);
    for (std::size_t f : members) common = common & faces[f].ref.chart;
    BoundaryComponent comp{VirtualComplex(c.n()), common, {}};
    for (std::size_t f : members) {
      const IndexSet key = faces[f].ref.chart - common;
      if (comp.charts.count(key))
        throw StructureError("chart " + faces[f].ref.chart.str() + " has two boundary faces in one component");
      comp.complex.set_chart(key, faces[f].region);
      comp.charts[key] = BoundaryChart{faces[f].ref.chart, faces[f].ref, faces[f].embedding, faces[f].orientation};
    }
    // Restrict every overlap between member faces, including those implied by transitivity.
    for (std::size_t fi : members) {
      for (std::size_t fj : members) {
        const Face& a = faces[fi];
        const Face& b = faces[fj];
        if (!a.ref.chart.proper_subset_of(b.ref.chart)) continue;
        const Overlap* o = c.overlap(a.ref.chart, b.ref.chart);
        if (!o) continue;
        if (a.ref.axis < 0 || b.ref.axis < 0)
          throw StructureError("gluing parametrized boundary faces across charts is not supported");
        Overlap r;
        r.small = a.ref.chart - common;
        r.big = b.ref.chart - common;
        r.rank = o->rank;
        r.region_in_small = o->region_in_small.pullback(a.region, a.embedding);
        r.region_in_big = o->region_in_big.pullback(b.region, b.embedding);
        std::vector<Expression> proj;
        for (const auto& e : o->projection) proj.push_back(e.substitute(b.embedding));
        r.projection = drop(proj, a.ref.axis);
        const int dI = c.dim(a.ref.chart);
        std::vector<Expression> subst;
        for (const auto& e : a.embedding) subst.push_back(e);
        for (int v = 0; v < o->rank; ++v) subst.push_back(Expression::variable(dI - 1 + v));
        std::vector<Expression> fib;
        for (const auto& e : o->fiber_param) fib.push_back(e.substitute(subst));
        r.fiber_param = drop(fib, b.ref.axis);
        comp.complex.add_overlap(std::move(r));
      }
    }
    out.push_back(std::move(comp));
  }
  return out;
}

}  // namespace vman
