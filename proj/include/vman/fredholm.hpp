#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "vman/bundles.hpp"
#include "vman/equivariant.hpp"

namespace vman {

/// Section S: base -> R^m of the trivial bundle over a region of R^n.
struct FredholmSystem {
  ChartRegion base;
  int rank = 0;
  std::vector<Expression> section;

  int dim() const { return base.dim(); }
  int index() const { return base.dim() - rank; }
};

/// Local stabilization at a point: cutoff η with η = 1 on the half ball and
/// 0 outside 3/4 of the radius; columns span the obstruction space O ⊂ R^m.
struct StabilizationDatum {
  Point center;
  double radius = 0.0;
  Expression cutoff;
  std::vector<Point> columns;

  int rank() const { return static_cast<int>(columns.size()); }
};

class StabilizationError : public std::runtime_error {
 public:
  StabilizationError(const std::string& what, Point witness) : std::runtime_error(what), witness_(std::move(witness)) {}
  const Point& witness() const { return witness_; }

 private:
  Point witness_;
};

/// m x n Jacobian of S at x.
Eigen::MatrixXd linearization(const FredholmSystem& sys, const Point& x);

/// Orthonormal basis of the orthogonal complement of the column space; singular
/// values below threshold·σ_max count as zero.
std::vector<Point> cokernel_basis(const Eigen::MatrixXd& L, double threshold = 1e-8);

/// Cutoff of a ball: smooth_step_down((16|x-c|²/r² - 4)/5).
Expression stabilization_cutoff(const Point& center, double radius);

/// Checks surjectivity of [L_x | E_i] on samples of each half ball and that
/// S has no zero outside the half balls (Gauss-Newton probes).
ValidationReport verify_stabilization(const FredholmSystem& sys, const std::vector<StabilizationDatum>& stab,
                                      int samples = 256, double tol = 1e-8, std::uint64_t seed = 1);

/// One datum per center with O the cokernel of L at the center. Throws
/// StabilizationError on a failed verification.
std::vector<StabilizationDatum> build_stabilization_system(const FredholmSystem& sys, const std::vector<Point>& centers,
                                                           const std::vector<double>& radii, double threshold = 1e-8,
                                                           int samples = 256, std::uint64_t seed = 1);

struct NeighborhoodOptions {
  double thom_radius = 0.5;     // Θ_i on each obstruction block
  double section_radius = 0.5;  // Λ_m pulled back by the stabilized section
  double fiber_extent = 0.55;   // obstruction fibers are cut to [-extent, extent]
  double shrink = 0.75;         // U_i° in the cover construction
};

/// 𝒲 represented by its ambient charts Y_I = X_I × [-ρ,ρ]^{k_I}; the zero sets
/// W_I = {F_I = 0} are implicit.
struct VirtualNeighborhoodSystem {
  VirtualComplex base;     // X_I from the cover {ℬ - ∪ closed half balls, U_i}
  VirtualComplex ambient;  // Y_I
  VirtualBundle obstruction;
  VirtualSection sigma;    // canonical section (the obstruction coordinates)
  ThomFamily obstruction_thom;
  TransitionData theta;    // Θ_{J,I} = ∧_{j∈J-I} Θ_j in Y_J coordinates
  std::map<IndexSet, std::vector<Expression>> stabilized;  // F_I = S + Σ η_i E_i o_i
  std::map<IndexSet, std::vector<int>> blocks;             // stabilization indices of I, in order
  std::map<IndexSet, std::vector<int>> block_ranks;        // obstruction rank of each block
  NeighborhoodOptions options;
  int base_dim = 0;
  int rank = 0;

  /// Θ_I = ∧_{i∈I} Θ_i(o_i) on Y_I.
  ChartForm obstruction_form(IndexSet I) const;
};

VirtualNeighborhoodSystem build_virtual_neighborhoods(const FredholmSystem& sys,
                                                      const std::vector<StabilizationDatum>& stab,
                                                      const NeighborhoodOptions& options = {});

/// Validators of the derived structure: complex, transition data, obstruction bundle.
ValidationReport validate_neighborhoods(const VirtualNeighborhoodSystem& w, int samples = 64, std::uint64_t seed = 1);

struct InvariantResult {
  IntegralResult value;
  std::vector<std::string> warnings;
};

/// Φ(a) = Σ_I ∫_{W_I} 𝔬*a ∧ Θ_I with each zero-set integral realized on Y_I as
/// ∫ F_I*Λ_m ∧ β, assembled by inclusion-exclusion over the ambient charts.
InvariantResult invariant(const FredholmSystem& sys, const std::vector<StabilizationDatum>& stab, const ChartForm& a,
                          const QuadratureSpec& q, const NeighborhoodOptions& options = {});
InvariantResult invariant(const VirtualNeighborhoodSystem& w, const ChartForm& a, const QuadratureSpec& q);

struct IndependenceResult {
  IntegralResult phi_a;
  IntegralResult phi_b;
  IntegralResult phi_a_radii;  // stabilization A with re-drawn Thom radii
  double residual = 0.0;
  double radius_residual = 0.0;
};

IndependenceResult check_independence(const FredholmSystem& sys, const std::vector<StabilizationDatum>& a_stab,
                                      const std::vector<StabilizationDatum>& b_stab, const ChartForm& a,
                                      const QuadratureSpec& q, const NeighborhoodOptions& options = {},
                                      std::uint64_t seed = 1);

/// Circle action on the base (n expressions in x and θ = x_n) and a linear
/// action on R^m (m expressions in w and θ = w_m).
struct FredholmAction {
  std::vector<Expression> base_flow;
  std::vector<Expression> fiber_flow;
};

/// Equivariant Thom form on R^k for the rotation generator B (k x k): block
/// coordinates come from a real Schur basis; weights must be integers.
ChartForm equivariant_thom_form(const Eigen::MatrixXd& generator, double radius);

struct EquivariantInvariantProbe {
  double u = 0.0;
  IntegralResult lhs;
  double rhs = 0.0;
  double residual = 0.0;
};

struct EquivariantInvariantResult {
  std::vector<EquivariantInvariantProbe> probes;
  std::vector<Point> fixed_points;  // zeros of S fixed by the action, in base coordinates
  double max_residual() const;
};

/// Φ_G(α) for an equivariant form α on the base, computed on the ambient charts with equivariant Thom forms, against the
/// fixed-point sum Σ_p (2π)^{m_p} (α ∧ Θ_G)(p) / e_G(T_p W). `fixed` lists
/// base points; those with S ≠ 0 are dropped. Throws StructureError if S or
/// the stabilization is not equivariant.
EquivariantInvariantResult invariant_equivariant(const FredholmSystem& sys, const FredholmAction& act,
                                                 const std::vector<StabilizationDatum>& stab,
                                                 const ChartForm& alpha, const std::vector<Point>& fixed,
                                                 const QuadratureSpec& q, const std::vector<double>& u_probes,
                                                 const NeighborhoodOptions& options = {});

namespace fixtures {

/// (sin x0, sin x1) on the torus.
FredholmSystem torus_system();
/// Unit disk in R² (box [-1,1]² with |x|² <= 1).
ChartRegion unit_disk();
/// (x0², x1) on the unit disk.
FredholmSystem fold_system();
/// (x0² - x1², 2 x0 x1) on the unit disk.
FredholmSystem z_squared_system();
/// (x0, x1) on the unit disk.
FredholmSystem identity_system();
/// Rotation of the disk with weight 1 and of R² with the given weight.
FredholmAction disk_rotation(int fiber_weight);

}  // namespace fixtures

}  // namespace vman
