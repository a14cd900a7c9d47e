#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "vman/integrate.hpp"

namespace vman {

/// S¹ action, one flow per chart. flow[I][i] is the i-th coordinate of a(θ, x)
/// with x0..x_{d-1} the chart coordinates and θ the variable d.
struct CircleAction {
  std::map<IndexSet, std::vector<Expression>> flow;

  /// V_I = ∂_θ a(θ, x) at θ = 0, in chart coordinates.
  std::vector<Expression> vector_field(IndexSet I) const;
  /// a(θ, ·) for a fixed angle.
  std::vector<Expression> at_angle(IndexSet I, double theta) const;
};

CircleAction trivial_action(const VirtualComplex& c);

ValidationReport validate_action(const VirtualComplex& c, const CircleAction& act, int samples = 64,
                                 double tol = 1e-8, std::uint64_t seed = 1);

/// Equivariant forms live in FormFamily: coefficients are polynomials in u.
using EquivariantForm = FormFamily;

/// d_G = d - u·ι_V.
ChartForm cartan_d(const ChartForm& a, const std::vector<Expression>& field);
EquivariantForm cartan_d(const EquivariantForm& a, const CircleAction& act);

/// Total degree (form degree + 2·u-power) if every term agrees at sampled
/// points and u ∈ {0.7, 1.4}; -1 otherwise. The zero form reports 0.
int equivariant_degree(const ChartForm& a, int samples = 8, std::uint64_t seed = 1);

/// Largest sampled coefficient of d_G a over all charts and the given u.
double cartan_defect(const VirtualComplex& c, const EquivariantForm& a, const CircleAction& act, double u,
                     int samples = 64, std::uint64_t seed = 1);

/// Equivariant Thom form on the planes (axes[2j], axes[2j+1]) rotated with
/// weight w_j: ∏_j (1/2π)[-2G'(r_j²) dv ∧ dv' + w_j u G(r_j²)], G(s) = bump(s/r²).
/// Its u = 0 part has unit mass and d_G of it vanishes.
ChartForm equivariant_thom_form_on(int dim, const std::vector<int>& axes, const std::vector<int>& weights,
                                   double radius);

/// One chart of a declared fixed component.
struct FixedChart {
  ChartRegion region;                  // fixed-locus coordinates t
  std::vector<Expression> embedding;   // t -> chart coordinates
  std::vector<int> weights;            // normal weights w_1..w_m
  /// Oriented normal coordinates (chart coordinates -> R^{2m}) used where the
  /// chart is singular along the component. Empty: linearize in chart coordinates.
  std::vector<Expression> normal_coords;
  /// Declared e_G in t coordinates (may involve u); replaces ∏w·u^m.
  std::optional<ChartForm> euler;

  int normal_rank() const { return 2 * static_cast<int>(weights.size()); }
};

struct FixedComponent {
  std::map<IndexSet, FixedChart> charts;
};

class FixedLocusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// (∏ w_i)·u^m as a 0-form on the component chart, or the declared form.
ChartForm equivariant_euler(const FixedChart& f);

/// Weights of the linearized action at the component point t: magnitudes
/// (descending) and the sign of their product relative to the orientation.
struct NormalWeights {
  std::vector<double> magnitudes;
  int sign = 1;
};
NormalWeights linearized_weights(const VirtualComplex& c, const CircleAction& act, IndexSet I, const FixedChart& f,
                                 const Point& t, std::uint64_t seed = 1);

/// Checks each declared chart (V = 0 on it, weights match the linearization,
/// normal rank split along overlaps) and probes for undeclared fixed points.
ValidationReport verify_fixed_locus(const VirtualComplex& c, const CircleAction& act,
                                    const std::vector<FixedComponent>& fixed, int samples = 64, double tol = 1e-8,
                                    std::uint64_t seed = 1);

struct FixedLocus {
  VirtualComplex complex;
  FixedComponent data;
};

/// Verified fixed sub-complexes, one per component. Throws FixedLocusError on
/// a failed verification.
std::vector<FixedLocus> fixed_locus(const VirtualComplex& c, const CircleAction& act,
                                    const std::vector<FixedComponent>& fixed, int samples = 64, double tol = 1e-8,
                                    std::uint64_t seed = 1);

struct LocalizationProbe {
  double u = 0.0;
  IntegralResult lhs;
  IntegralResult rhs;
  std::vector<double> contributions;  // per fixed component
  double residual = 0.0;
  bool rejected = false;              // e_G vanished somewhere
};

struct LocalizationResult {
  std::vector<LocalizationProbe> probes;
  ValidationReport report;  // closedness and Θ̃-compatibility on the fixed locus
  double max_residual() const;
};

/// μ_ζ(α) against Σ_F ∫_F (2π)^m i*(α ∧ ζ)/e_G at each probe of u. The (2π)^m
/// factor matches flows of period 2π. Throws StructureError if α is not
/// equivariantly closed.
LocalizationResult localize(const VirtualComplex& c, const CircleAction& act, const EquivariantForm& alpha,
                            const VirtualFormFamily& zeta, const std::vector<FixedLocus>& fixed,
                            const PartitionOfUnity& pou, const QuadratureSpec& q, const std::vector<double>& u_probes,
                            double closed_tol = 1e-8);

namespace fixtures {

/// a(θ, p, a) = (p, a + θ) on fixtures::sphere().
CircleAction sphere_rotation();
/// Poles with weights +1 (p = 0) and -1 (p = π), with oriented normal coordinates.
std::vector<FixedComponent> sphere_poles();
/// Area form plus u times the height: d_G-closed for sphere_rotation().
EquivariantForm sphere_alpha();

/// Rotation of the fiber of fixtures::line_plane() with the given weight.
CircleAction line_plane_rotation(int weight = 1);
/// X_∅ together with the zero section of X_1.
FixedComponent line_plane_zero_section(int weight = 1);

}  // namespace fixtures

}  // namespace vman
