#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vman/forms.hpp"

namespace vman {

enum class QuadratureMethod { Grid, MonteCarlo };

std::string to_string(QuadratureMethod m);
QuadratureMethod quadrature_method_from_string(const std::string& s);

struct QuadratureSpec {
  QuadratureMethod method = QuadratureMethod::Grid;
  /// Grid resolution; 0 picks the largest n with n^dim <= sample_count.
  int points_per_axis = 0;
  /// Monte Carlo sample count, and the grid cell budget when points_per_axis is 0.
  std::int64_t sample_count = 200000;
  std::uint64_t seed = 1;
  double tol = 1e-6;
  /// Worker threads; 0 uses the hardware concurrency. Results do not depend on it.
  int workers = 1;
};

struct IntegralResult {
  double value = 0.0;
  double error = 0.0;        // |I_n - I_{n/2}| on grids, standard error for Monte Carlo
  std::int64_t samples = 0;  // integrand evaluations
  std::vector<std::string> warnings;

  IntegralResult& operator+=(const IntegralResult& o);
  IntegralResult& operator-=(const IntegralResult& o);
};

/// Raised when a form does not vanish at a free edge.
class SupportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pointwise integrand on chart coordinates.
using Integrand = std::function<double(const double* x)>;

/// ∫ f over {x in box : constraints <= 0}. Grid cells cut by a constraint are
/// weighted by a linear estimate of the inside fraction.
IntegralResult integrate_function(const ChartRegion& region, const Integrand& f, const QuadratureSpec& q);

/// ∫ of the top-degree component of ω in coordinate orientation, coefficients at u.
IntegralResult chart_integral(const ChartRegion& region, const ChartForm& omega, const QuadratureSpec& q,
                              double u = 0.0);

/// Point of chart J equivalent to x ∈ X_I, if [x] ∈ [X_J]. Fibers are entered
/// at the zero section.
std::optional<Point> representative(const VirtualComplex& c, IndexSet I, const double* x, IndexSet J,
                                    double tol = 1e-12);

/// Partition of unity {η_I}, η_I = β_I / Σ_J β_J(rep_J) with β_I a product of
/// cutoffs vanishing near the open and free faces of X_I.
class PartitionOfUnity {
 public:
  PartitionOfUnity() = default;
  PartitionOfUnity(const VirtualComplex& c, std::map<IndexSet, Expression> bumps);

  const std::map<IndexSet, Expression>& bumps() const { return bumps_; }
  double beta(IndexSet I, const double* x) const;
  /// Σ_J β_J over every chart containing [x], x ∈ X_I.
  double total(IndexSet I, const double* x) const;
  /// η_I(x); 0 where the total vanishes.
  double weight(IndexSet I, const double* x) const;

 private:
  const VirtualComplex* complex_ = nullptr;
  std::map<IndexSet, Expression> bumps_;
  std::map<IndexSet, CompiledExpression> compiled_;
};

class CoverGapError : public std::runtime_error {
 public:
  CoverGapError(IndexSet chart, Point witness);
  IndexSet chart() const { return chart_; }
  const Point& witness() const { return witness_; }

 private:
  IndexSet chart_;
  Point witness_;
};

/// Axes of chart J along which some projection φ_{J,I} is constant.
std::vector<bool> fiber_axes(const VirtualComplex& c, IndexSet J);

/// Builds cutoffs whose support stays (1 - shrink)/2 of a half-width away from
/// each open or free face. Throws CoverGapError if a sampled point away from
/// free faces has Σβ = 0. The complex must outlive the result.
PartitionOfUnity build_pou(const VirtualComplex& c, double shrink = 0.9, int samples = 2000, std::uint64_t seed = 1);

/// Samples the invariants: Σ_I η_I(rep_I) = 1 and η_I >= 0. Returns the worst residual.
double pou_residual(const VirtualComplex& c, const PartitionOfUnity& pou, int samples = 10000, std::uint64_t seed = 1);

/// Alternating sum over tuples of charts, each intersection integrated in
/// the chart of the union.
IntegralResult integrate_incl_excl(const VirtualComplex& c, const VirtualFormFamily& z, const QuadratureSpec& q,
                                   double u = 0.0);

/// Σ_I ∫_{X_I} η_I z_I.
IntegralResult integrate_pou(const VirtualComplex& c, const VirtualFormFamily& z, const PartitionOfUnity& pou,
                             const QuadratureSpec& q, double u = 0.0);

/// μ_z(a) = ∫ a ∧ z through the partition of unity. Warns if a or z is not closed.
IntegralResult pairing_mu(const VirtualComplex& c, const FormFamily& a, const VirtualFormFamily& z,
                          const PartitionOfUnity& pou, const QuadratureSpec& q, double u = 0.0);

/// Largest sampled coefficient of d a over all charts.
double closedness_defect(const VirtualComplex& c, const FormFamily& a, int samples = 64, std::uint64_t seed = 1,
                         double u = 1.0);

/// Restriction of z to a boundary component, with each chart's orientation sign folded in.
VirtualFormFamily restrict_to_boundary(const BoundaryComponent& part, const VirtualFormFamily& z);

struct StokesResult {
  IntegralResult lhs;  // ∫_X dz
  IntegralResult rhs;  // Σ over boundary components of ∫ i*z
  double residual = 0.0;
  std::size_t components = 0;
};

/// Both sides evaluated by inclusion-exclusion.
StokesResult stokes_check(const VirtualComplex& c, const VirtualFormFamily& z, const QuadratureSpec& q);

}  // namespace vman
