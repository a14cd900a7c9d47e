#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "vman/complex.hpp"

namespace vman {

/// Bitmask of axes i1 < ... < ik naming the monomial dx_{i1}∧...∧dx_{ik}.
using Monomial = std::uint32_t;

int monomial_degree(Monomial m);
Monomial monomial_of(std::initializer_list<int> axes);
/// Top monomial dx0∧...∧dx_{dim-1}.
inline Monomial top_monomial(int dim) { return dim >= 32 ? ~0u : ((1u << dim) - 1u); }
/// Sign of moving a∧b into increasing order; 0 if they share an axis.
int wedge_sign(Monomial a, Monomial b);
/// "01" style label used by scene files.
std::string monomial_label(Monomial m);
Monomial monomial_from_label(const std::string& label);

/// Differential form on a chart of dimension `dim`: a sum of coefficient *
/// monomial terms. Terms of different degree may coexist (the Cartan model
/// uses this); coefficients may involve `u`.
class ChartForm {
 public:
  ChartForm() = default;
  explicit ChartForm(int dim) : dim_(dim) {}

  static ChartForm function(int dim, const Expression& f);
  static ChartForm differential(int dim, int axis);
  /// f dx0∧...∧dx_{dim-1}.
  static ChartForm top(int dim, const Expression& f);
  static ChartForm term(int dim, Monomial m, const Expression& f);

  int dim() const { return dim_; }
  /// Degree if homogeneous, 0 for the zero form, -1 if mixed.
  int degree() const;
  bool is_zero() const { return terms_.empty(); }
  bool uses_u() const;
  const std::map<Monomial, Expression>& terms() const { return terms_; }
  Expression coefficient(Monomial m) const;
  /// Homogeneous component of degree k.
  ChartForm component(int k) const;

  ChartForm& add(Monomial m, const Expression& f);

  /// Pointwise coefficient of a monomial.
  double value(Monomial m, const double* x, double u = 0.0) const;
  std::string str() const;

  friend ChartForm operator+(const ChartForm& a, const ChartForm& b);
  friend ChartForm operator-(const ChartForm& a, const ChartForm& b);
  friend ChartForm operator-(const ChartForm& a);
  friend ChartForm operator*(const Expression& f, const ChartForm& a);

 private:
  int dim_ = 0;
  std::map<Monomial, Expression> terms_;
};

ChartForm wedge(const ChartForm& a, const ChartForm& b);
ChartForm exterior_derivative(const ChartForm& a);
/// Pullback along `map`: map[i] is the i-th target coordinate as an expression
/// in the `source_dim` source coordinates.
ChartForm pullback(const std::vector<Expression>& map, int source_dim, const ChartForm& target);
/// Contraction ι_V with the vector field V (one expression per axis).
ChartForm interior(const std::vector<Expression>& field, const ChartForm& a);
/// Replaces u by a constant.
ChartForm at_u(const ChartForm& a, double u);

/// Normalized radial bump form c·bump(|v|²/r²) dv_1∧...∧dv_k on R^k.
ChartForm thom_form(int rank, double radius);
/// Same profile on `axes` of a chart of dimension `dim` (v_j = x_{axes[j]}).
ChartForm thom_form_on(int dim, const std::vector<int>& axes, double radius);
/// ∫_{R^k} bump(|v|²) dv, computed once per rank by radial quadrature.
double bump_mass(int rank);

/// Coefficients compiled for fast evaluation.
class CompiledForm {
 public:
  CompiledForm() = default;
  explicit CompiledForm(const ChartForm& f);
  /// Fills out[i] with the coefficient of monomials()[i].
  void evaluate(const double* x, double u, double* out) const;
  const std::vector<Monomial>& monomials() const { return monomials_; }
  double value(Monomial m, const double* x, double u = 0.0) const;

 private:
  std::vector<Monomial> monomials_;
  std::vector<CompiledExpression> coefficients_;
};

/// Pre-form α = {α_I} (compatibility α_J = φ*_{J,I}α_I).
using FormFamily = std::map<IndexSet, ChartForm>;

/// Θ_{J,I} keyed by (I, J), each in the coordinates of chart J.
using TransitionData = std::map<std::pair<IndexSet, IndexSet>, ChartForm>;

struct VirtualFormFamily {
  FormFamily forms;
  TransitionData theta;
  int virtual_degree() const;
};

/// Sign of det Dψ_{J,I} on the overlap: the orientation of chart J relative
/// to base-then-fiber coordinates. Throws if it varies over the samples.
int overlap_orientation(const VirtualComplex& c, const Overlap& o, int samples = 16, std::uint64_t seed = 1);

/// Θ_{J,I} or the unit 0-form for rank-0 overlaps.
ChartForm transition(const VirtualComplex& c, const TransitionData& theta, IndexSet I, IndexSet J);

/// Fiber integral of Θ_{J,I} over the fiber through ψ(x, 0).
double fiber_integral(const VirtualComplex& c, const Overlap& o, const ChartForm& theta, const Point& x,
                      int points_per_axis = 0);

ValidationReport validate_form_family(const VirtualComplex& c, const FormFamily& a, int samples = 64,
                                      double tol = 1e-8, std::uint64_t seed = 1);
ValidationReport validate_transition_data(const VirtualComplex& c, const TransitionData& theta, int samples = 64,
                                          double tol = 1e-8, std::uint64_t seed = 1, double normalization_tol = 1e-6);
ValidationReport validate_virtual_form(const VirtualComplex& c, const VirtualFormFamily& z, int samples = 64,
                                       double tol = 1e-8, std::uint64_t seed = 1);

struct SupportFlags {
  bool empty = true;             // every probe returned zero coefficients
  bool compact = true;           // vanishes at free edges
  bool interior = true;          // also vanishes at boundary faces
  std::string witness;
};
SupportFlags support_flags(const VirtualComplex& c, const FormFamily& z, int probes = 256, std::uint64_t seed = 1,
                           double zero_tol = 1e-12);

/// Family {d z_I} with the same transition data.
VirtualFormFamily exterior_derivative(const VirtualFormFamily& z);
/// Family {a_I ∧ z_I}.
VirtualFormFamily wedge(const FormFamily& a, const VirtualFormFamily& z);

}  // namespace vman
