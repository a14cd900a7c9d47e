#include "vman/integrate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <thread>

namespace vman {

namespace {

constexpr std::int64_t kBlock = 4096;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t h = seed ^ 0x2545f4914f6cdd1dull;
  for (std::uint64_t v : {a, b}) {
    h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h *= 0xbf58476d1ce4e5b9ull;
    h ^= h >> 31;
  }
  return h;
}

/// Runs body(block) for block in [0, blocks) on `workers` threads and returns
/// the per-block results in block order.
template <class T, class Body>
std::vector<T> run_blocks(std::int64_t blocks, int workers, const Body& body) {
  std::vector<T> out(static_cast<std::size_t>(blocks));
  if (workers <= 0) workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = static_cast<int>(std::min<std::int64_t>(workers, std::max<std::int64_t>(blocks, 1)));
  std::atomic<std::int64_t> next{0};
  auto worker = [&] {
    for (std::int64_t b = next++; b < blocks; b = next++) out[static_cast<std::size_t>(b)] = body(b);
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return out;
}

struct ConstraintCut {
  std::vector<CompiledExpression> grad;
  double reach = 0.0;  // bound on half the variation of g across a cell
};

struct Sum {
  double value = 0.0;
  double square = 0.0;
};

class GridKernel {
 public:
  GridKernel(const ChartRegion& region, const Integrand& f, int n) : region_(region), f_(f), n_(n), dim_(region.dim()) {
    for (int k = 0; k < dim_; ++k) h_[k] = (region.hi(k) - region.lo(k)) / n;
    std::mt19937_64 rng(0x9a1d);
    for (std::size_t i = 0; i < region.constraints().size(); ++i) {
      ConstraintCut cut;
      for (int k = 0; k < dim_; ++k) cut.grad.emplace_back(region.constraints()[i].g.derivative(k));
      for (const auto& p : sample_region(ChartRegion(region.lo(), region.hi()), 64, rng)) {
        double spread = 0.0;
        for (int k = 0; k < dim_; ++k) spread += std::fabs(cut.grad[k](p.data())) * h_[k];
        cut.reach = std::max(cut.reach, spread);
      }
      cut.reach = 4.0 * cut.reach + 1e-300;
      cuts_.push_back(std::move(cut));
    }
    cells_ = 1;
    for (int k = 0; k < dim_; ++k) cells_ *= n_;
  }

  std::int64_t cells() const { return cells_; }

  Sum block(std::int64_t b) const {
    const std::int64_t first = b * kBlock;
    const std::int64_t last = std::min(cells_, first + kBlock);
    int idx[kMaxVariables];
    std::int64_t rest = first;
    for (int k = 0; k < dim_; ++k) {
      idx[k] = static_cast<int>(rest % n_);
      rest /= n_;
    }
    double x[kMaxVariables];
    Sum sum;
    for (std::int64_t cell = first; cell < last; ++cell) {
      for (int k = 0; k < dim_; ++k) x[k] = region_.lo(k) + (idx[k] + 0.5) * h_[k];
      const double w = weight(x);
      if (w > 0.0) {
        const double v = w * f_(x);
        sum.value += v;
        sum.square += std::fabs(v);
      }
      for (int k = 0; k < dim_ && ++idx[k] == n_; ++k) idx[k] = 0;
    }
    return sum;
  }

  double cell_volume() const {
    double v = 1.0;
    for (int k = 0; k < dim_; ++k) v *= h_[k];
    return v;
  }

 private:
  double weight(const double* x) const {
    double w = 1.0;
    for (std::size_t i = 0; i < cuts_.size(); ++i) {
      const double g = region_.constraint_value(i, x);
      if (std::isnan(g)) return 0.0;
      if (g >= cuts_[i].reach) return 0.0;
      if (g <= -cuts_[i].reach) continue;
      double spread = 0.0;
      for (int k = 0; k < dim_; ++k) spread += std::fabs(cuts_[i].grad[k](x)) * h_[k];
      if (spread <= 0.0) {
        if (g > 0.0) return 0.0;
        continue;
      }
      w = std::min(w, std::clamp(0.5 - g / spread, 0.0, 1.0));
      if (w == 0.0) return 0.0;
    }
    return w;
  }

  const ChartRegion& region_;
  const Integrand& f_;
  int n_;
  int dim_;
  double h_[kMaxVariables] = {};
  std::vector<ConstraintCut> cuts_;
  std::int64_t cells_ = 0;
};

// Returns the midpoint sum and ∫|f| (in `square`).
Sum grid_sum(const ChartRegion& region, const Integrand& f, int n, int workers, std::int64_t& evaluations) {
  const GridKernel kernel(region, f, n);
  const std::int64_t blocks = (kernel.cells() + kBlock - 1) / kBlock;
  const auto parts = run_blocks<Sum>(blocks, workers, [&](std::int64_t b) { return kernel.block(b); });
  Sum total;
  for (const auto& p : parts) {
    total.value += p.value;
    total.square += p.square;
  }
  evaluations += kernel.cells();
  total.value *= kernel.cell_volume();
  total.square *= kernel.cell_volume();
  return total;
}

int auto_points(int dim, std::int64_t budget) {
  int n = static_cast<int>(std::floor(std::pow(static_cast<double>(budget), 1.0 / dim) + 1e-9));
  return std::max(n, 2);
}

CompiledExpression top_coefficient(const ChartForm& omega, int dim) {
  if (omega.is_zero()) return CompiledExpression(Expression::constant(0.0));
  const int deg = omega.degree();
  if (deg != -1 && deg != dim)
    throw StructureError("cannot integrate a " + std::to_string(deg) + "-form over a " + std::to_string(dim) +
                         "-dimensional chart");
  return CompiledExpression(omega.coefficient(top_monomial(dim)));
}

void require_compact(const VirtualComplex& c, const FormFamily& forms) {
  const SupportFlags flags = support_flags(c, forms);
  if (!flags.compact) throw SupportError("form does not vanish at a free edge: " + flags.witness);
}

}  // namespace

std::string to_string(QuadratureMethod m) { return m == QuadratureMethod::Grid ? "grid" : "monte-carlo"; }

QuadratureMethod quadrature_method_from_string(const std::string& s) {
  if (s == "grid") return QuadratureMethod::Grid;
  if (s == "monte-carlo" || s == "mc") return QuadratureMethod::MonteCarlo;
  throw std::invalid_argument("unknown quadrature method '" + s + "'");
}

IntegralResult& IntegralResult::operator+=(const IntegralResult& o) {
  value += o.value;
  error += o.error;
  samples += o.samples;
  warnings.insert(warnings.end(), o.warnings.begin(), o.warnings.end());
  return *this;
}

IntegralResult& IntegralResult::operator-=(const IntegralResult& o) {
  value -= o.value;
  error += o.error;
  samples += o.samples;
  warnings.insert(warnings.end(), o.warnings.begin(), o.warnings.end());
  return *this;
}

IntegralResult integrate_function(const ChartRegion& region, const Integrand& f, const QuadratureSpec& q) {
  IntegralResult r;
  const int dim = region.dim();
  if (dim == 0) {
    if (region.contains(static_cast<const double*>(nullptr))) r.value = f(nullptr);
    r.samples = 1;
    return r;
  }
  if (q.method == QuadratureMethod::Grid) {
    const int n = q.points_per_axis > 0 ? q.points_per_axis : auto_points(dim, q.sample_count);
    const Sum fine = grid_sum(region, f, n, q.workers, r.samples);
    r.value = fine.value;
    // Rounding floor for a sum of n^dim terms.
    const double cells = std::pow(static_cast<double>(n), dim);
    r.error = 4.0 * std::numeric_limits<double>::epsilon() * std::sqrt(cells) * fine.square;
    if (n >= 4) {
      const Sum coarse = grid_sum(region, f, n / 2, q.workers, r.samples);
      r.error = std::max(r.error, std::fabs(r.value - coarse.value));
    }
    return r;
  }
  const std::int64_t total = std::max<std::int64_t>(q.sample_count, 1);
  const std::int64_t blocks = (total + kBlock - 1) / kBlock;
  const std::uint64_t stream = mix_seed(q.seed, static_cast<std::uint64_t>(dim));
  const auto parts = run_blocks<Sum>(blocks, q.workers, [&](std::int64_t b) {
    std::mt19937_64 rng(mix_seed(stream, static_cast<std::uint64_t>(b)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::int64_t count = std::min(kBlock, total - b * kBlock);
    double x[kMaxVariables];
    Sum s;
    for (std::int64_t i = 0; i < count; ++i) {
      for (int k = 0; k < dim; ++k) x[k] = region.lo(k) + unit(rng) * (region.hi(k) - region.lo(k));
      if (!region.contains(x)) continue;
      const double v = f(x);
      s.value += v;
      s.square += v * v;
    }
    return s;
  });
  Sum s;
  for (const auto& p : parts) {
    s.value += p.value;
    s.square += p.square;
  }
  const double n = static_cast<double>(total);
  const double mean = s.value / n;
  const double var = std::max(0.0, s.square / n - mean * mean);
  const double volume = region.box_volume();
  r.value = volume * mean;
  r.error = volume * std::sqrt(var / n);
  r.samples = total;
  return r;
}

IntegralResult chart_integral(const ChartRegion& region, const ChartForm& omega, const QuadratureSpec& q, double u) {
  if (omega.is_zero()) return {};
  const CompiledExpression coef = top_coefficient(omega, region.dim());
  return integrate_function(region, [&](const double* x) { return coef(x, u); }, q);
}

std::optional<Point> representative(const VirtualComplex& c, IndexSet I, const double* x, IndexSet J, double tol) {
  if (!c.has_chart(J) || !c.in_overlap(I, J, x, tol)) return std::nullopt;
  const Point px(x, x + c.dim(I));
  if (I == J) return px;
  if (J.subset_of(I)) return c.project(I, J, px);
  if (I.subset_of(J)) return c.zero_lift(J, I, px);
  const IndexSet A = I & J;
  const Point y = c.project(I, A, px);
  if (!c.in_overlap(A, J, y.data(), tol)) return std::nullopt;
  return c.zero_lift(J, A, y);
}

PartitionOfUnity::PartitionOfUnity(const VirtualComplex& c, std::map<IndexSet, Expression> bumps)
    : complex_(&c), bumps_(std::move(bumps)) {
  for (const auto& [I, e] : bumps_) compiled_.emplace(I, CompiledExpression(e));
}

double PartitionOfUnity::beta(IndexSet I, const double* x) const {
  auto it = compiled_.find(I);
  return it == compiled_.end() ? 0.0 : it->second(x);
}

double PartitionOfUnity::total(IndexSet I, const double* x) const {
  double sum = 0.0;
  for (const auto& [J, b] : compiled_) {
    if (J == I) {
      sum += b(x);
      continue;
    }
    if (auto rep = representative(*complex_, I, x, J)) sum += b(rep->data());
  }
  return sum;
}

double PartitionOfUnity::weight(IndexSet I, const double* x) const {
  const double b = beta(I, x);
  if (b == 0.0) return 0.0;
  const double t = total(I, x);
  return t > 0.0 ? b / t : 0.0;
}

CoverGapError::CoverGapError(IndexSet chart, Point witness)
    : std::runtime_error("cover gap: no cutoff is positive at " + format_point(witness) + " in chart " +
                         chart.str()),
      chart_(chart),
      witness_(std::move(witness)) {}

std::vector<bool> fiber_axes(const VirtualComplex& c, IndexSet J) {
  std::vector<bool> fiber(c.dim(J), false);
  for (const auto& o : c.overlaps()) {
    if (o.big != J || o.rank == 0) continue;
    for (int k = 0; k < c.dim(J); ++k) {
      bool constant = true;
      for (const auto& p : o.projection) constant = constant && p.derivative(k).is_zero();
      if (constant) fiber[k] = true;
    }
  }
  return fiber;
}

namespace {

struct Cutoffs {
  Expression beta;
  std::vector<std::function<bool(const double*)>> free_collars;
};

Cutoffs chart_cutoffs(const VirtualComplex& c, IndexSet I, double shrink) {
  const ChartRegion& r = c.chart(I);
  const std::vector<bool> fiber = fiber_axes(c, I);
  Cutoffs out;
  out.beta = Expression::constant(1.0);
  double min_half = std::numeric_limits<double>::infinity();
  for (int k = 0; k < r.dim(); ++k)
    if (!r.periodic(k)) min_half = std::min(min_half, 0.5 * (r.hi(k) - r.lo(k)));
  // factor = 1 at inward distance >= m, 0 at distance <= m/2.
  auto factor = [](const Expression& d, double m) {
    return smooth_step_down(Expression::constant(2.0) - d * Expression::constant(2.0 / m));
  };
  for (int k = 0; k < r.dim(); ++k) {
    if (r.periodic(k) || fiber[k]) continue;
    const double m = (1.0 - shrink) * 0.5 * (r.hi(k) - r.lo(k));
    for (bool upper : {false, true}) {
      const FaceKind kind = r.face(k, upper);
      if (kind != FaceKind::Open && kind != FaceKind::Free) continue;
      const Expression xk = Expression::variable(k);
      const Expression d = upper ? Expression::constant(r.hi(k)) - xk : xk - Expression::constant(r.lo(k));
      out.beta = out.beta * factor(d, m);
      if (kind == FaceKind::Free) {
        const double bound = upper ? r.hi(k) : r.lo(k);
        out.free_collars.push_back([k, bound, m](const double* x) { return std::fabs(x[k] - bound) < m; });
      }
    }
  }
  for (std::size_t i = 0; i < r.constraints().size(); ++i) {
    const Constraint& con = r.constraints()[i];
    if (con.kind != FaceKind::Open && con.kind != FaceKind::Free) continue;
    if (!std::isfinite(min_half)) continue;
    const double m = (1.0 - shrink) * min_half;
    Expression norm2 = Expression::constant(0.0);
    for (int k = 0; k < r.dim(); ++k) norm2 = norm2 + pow(con.g.derivative(k), Expression::constant(2.0));
    const Expression d = -con.g / sqrt(norm2);
    out.beta = out.beta * factor(d, m);
    if (con.kind == FaceKind::Free) {
      auto dist = std::make_shared<CompiledExpression>(d);
      out.free_collars.push_back([dist, m](const double* x) { return (*dist)(x) < m; });
    }
  }
  return out;
}

}  // namespace

PartitionOfUnity build_pou(const VirtualComplex& c, double shrink, int samples, std::uint64_t seed) {
  if (!(shrink > 0.0 && shrink < 1.0)) throw StructureError("partition-of-unity shrink must lie in (0,1)");
  std::map<IndexSet, Expression> bumps;
  std::map<IndexSet, Cutoffs> cutoffs;
  for (IndexSet I : c.chart_indices()) {
    cutoffs[I] = chart_cutoffs(c, I, shrink);
    bumps[I] = cutoffs[I].beta;
  }
  PartitionOfUnity pou(c, std::move(bumps));
  for (IndexSet I : c.chart_indices()) {
    std::mt19937_64 rng(mix_seed(seed, I.bits(), 0x706f75ull));
    for (const auto& x : sample_region(c.chart(I), samples, rng)) {
      if (pou.total(I, x.data()) > 0.0) continue;
      bool exempt = false;
      for (const auto& collar : cutoffs[I].free_collars) exempt = exempt || collar(x.data());
      if (!exempt) throw CoverGapError(I, x);
    }
  }
  return pou;
}

double pou_residual(const VirtualComplex& c, const PartitionOfUnity& pou, int samples, std::uint64_t seed) {
  const auto charts = c.chart_indices();
  const int per_chart = std::max(1, samples / static_cast<int>(charts.size()));
  double worst = 0.0;
  for (IndexSet I : charts) {
    std::mt19937_64 rng(mix_seed(seed, I.bits(), 0x726573ull));
    for (const auto& x : sample_region(c.chart(I), per_chart, rng)) {
      if (pou.total(I, x.data()) <= 0.0) continue;
      double sum = 0.0;
      for (IndexSet J : charts) {
        auto rep = representative(c, I, x.data(), J);
        if (!rep) continue;
        const double eta = pou.weight(J, rep->data());
        if (eta < 0.0) return std::numeric_limits<double>::infinity();
        sum += eta;
      }
      worst = std::max(worst, std::fabs(sum - 1.0));
    }
  }
  return worst;
}

IntegralResult integrate_incl_excl(const VirtualComplex& c, const VirtualFormFamily& z, const QuadratureSpec& q,
                                   double u) {
  require_compact(c, z.forms);
  const auto charts = c.chart_indices();
  if (charts.size() > 20) throw StructureError("inclusion-exclusion over more than 20 charts");
  IntegralResult total;
  const std::uint32_t subsets = 1u << charts.size();
  for (std::uint32_t s = 1; s < subsets; ++s) {
    IndexSet K;
    int members = 0;
    for (std::size_t i = 0; i < charts.size(); ++i)
      if (s & (1u << i)) {
        K = K | charts[i];
        ++members;
      }
    if (!c.has_chart(K)) continue;
    auto zk = z.forms.find(K);
    if (zk == z.forms.end() || zk->second.is_zero()) continue;
    ChartRegion region = c.chart(K);
    bool empty = false;
    for (std::size_t i = 0; i < charts.size() && !empty; ++i) {
      if (!(s & (1u << i)) || charts[i] == K) continue;
      const Overlap* o = c.overlap(charts[i], K);
      if (!o) {
        empty = true;
        break;
      }
      region = region.intersect(o->region_in_big);
    }
    if (empty) continue;
    if (members > 1) {
      std::mt19937_64 rng(mix_seed(q.seed, s, 0x70726eull));
      if (sample_region(region, 1, rng, {}, 64).empty()) continue;
    }
    const IntegralResult term = chart_integral(region, zk->second, q, u);
    if (members % 2 == 1) {
      total += term;
    } else {
      total -= term;
    }
  }
  return total;
}

IntegralResult integrate_pou(const VirtualComplex& c, const VirtualFormFamily& z, const PartitionOfUnity& pou,
                             const QuadratureSpec& q, double u) {
  require_compact(c, z.forms);
  IntegralResult total;
  for (IndexSet I : c.chart_indices()) {
    auto it = z.forms.find(I);
    if (it == z.forms.end() || it->second.is_zero()) continue;
    const CompiledExpression coef = top_coefficient(it->second, c.dim(I));
    total += integrate_function(
        c.chart(I),
        [&](const double* x) {
          const double eta = pou.weight(I, x);
          return eta == 0.0 ? 0.0 : eta * coef(x, u);
        },
        q);
  }
  return total;
}

double closedness_defect(const VirtualComplex& c, const FormFamily& a, int samples, std::uint64_t seed, double u) {
  double worst = 0.0;
  for (const auto& [I, form] : a) {
    if (!c.has_chart(I)) continue;
    const CompiledForm d(exterior_derivative(form));
    std::vector<double> vals(d.monomials().size());
    std::mt19937_64 rng(mix_seed(seed, I.bits(), 0x636c6full));
    for (const auto& x : sample_region(c.chart(I), samples, rng)) {
      d.evaluate(x.data(), u, vals.data());
      for (double v : vals) worst = std::max(worst, std::fabs(v));
    }
  }
  return worst;
}

IntegralResult pairing_mu(const VirtualComplex& c, const FormFamily& a, const VirtualFormFamily& z,
                          const PartitionOfUnity& pou, const QuadratureSpec& q, double u) {
  const IndexSet base;
  if (c.has_chart(base) && a.count(base) && z.forms.count(base)) {
    const int da = a.at(base).degree();
    const int dz = z.virtual_degree();
    if (da >= 0 && dz >= 0 && !a.at(base).is_zero() && !z.forms.at(base).is_zero() && da + dz != c.dim(base))
      throw StructureError("pairing degree mismatch: " + std::to_string(da) + " + " + std::to_string(dz) +
                           " != " + std::to_string(c.dim(base)));
  }
  std::vector<std::string> warnings;
  if (closedness_defect(c, a) > 1e-8) warnings.push_back("pre-form is not closed");
  if (closedness_defect(c, z.forms) > 1e-8) warnings.push_back("virtual form is not closed");
  IntegralResult r = integrate_pou(c, wedge(a, z), pou, q, u);
  r.warnings.insert(r.warnings.end(), warnings.begin(), warnings.end());
  return r;
}

VirtualFormFamily restrict_to_boundary(const BoundaryComponent& part, const VirtualFormFamily& z) {
  VirtualFormFamily out;
  for (const auto& [I, bc] : part.charts) {
    auto it = z.forms.find(bc.original);
    if (it == z.forms.end()) throw StructureError("form missing on chart " + bc.original.str());
    ChartForm f = pullback(bc.embedding, part.complex.dim(I), it->second);
    out.forms[I] = bc.orientation < 0 ? -f : f;
  }
  for (const auto& o : part.complex.overlaps()) {
    const BoundaryChart& small = part.charts.at(o.small);
    const BoundaryChart& big = part.charts.at(o.big);
    auto it = z.theta.find({small.original, big.original});
    if (it == z.theta.end()) continue;
    out.theta[{o.small, o.big}] = pullback(big.embedding, part.complex.dim(o.big), it->second);
  }
  return out;
}

StokesResult stokes_check(const VirtualComplex& c, const VirtualFormFamily& z, const QuadratureSpec& q) {
  StokesResult r;
  r.lhs = integrate_incl_excl(c, exterior_derivative(z), q);
  const auto parts = boundary(c);
  r.components = parts.size();
  for (const auto& part : parts) r.rhs += integrate_incl_excl(part.complex, restrict_to_boundary(part, z), q);
  r.residual = std::fabs(r.lhs.value - r.rhs.value);
  return r;
}

}  // namespace vman
