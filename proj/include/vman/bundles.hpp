#pragma once

#include <map>
#include <vector>

#include "vman/integrate.hpp"

namespace vman {

/// Virtual bundle: a rank per chart, total space X_I × R^{r_I}. Over X_{J,I}
/// the fiber of E_J is identified with (v, E_I), v the fiber of ψ_{J,I};
/// order[(I,J)][a] names the (v, E_I) coordinate that is E_J coordinate a.
struct VirtualBundle {
  std::map<IndexSet, int> rank;
  std::map<std::pair<IndexSet, IndexSet>, std::vector<int>> order;

  int rank_of(IndexSet I) const;
  /// Declared order, or the identity of length r_J.
  std::vector<int> fiber_order(IndexSet I, IndexSet J) const;
};

/// S_I: r_I expressions in chart coordinates.
using VirtualSection = std::map<IndexSet, std::vector<Expression>>;

/// Λ_I: a form on R^{r_I} in fiber coordinates w_0..w_{r-1}.
using ThomFamily = std::map<IndexSet, ChartForm>;

/// Sign of a permutation given as an image list.
int permutation_sign(const std::vector<int>& order);

/// Rank additivity, section compatibility S_J(ψ(x,v)) = P(v, S_I(x)), and
/// Thom compatibility Λ_J = sign(P)·P*(Θ_{J,I} ∧ Λ_I), all sampled. Also
/// warns at zeros of S_I (found by Gauss-Newton) where DS_I is close to
/// losing rank.
ValidationReport validate_virtual_bundle(const VirtualComplex& c, const VirtualBundle& E, const VirtualSection& S,
                                         const ThomFamily& lambda, const TransitionData& theta, int samples = 64,
                                         double tol = 1e-8, std::uint64_t seed = 1);

/// {S_I*Λ_I} with the given transition data.
VirtualFormFamily euler_form(const VirtualComplex& c, const VirtualBundle& E, const VirtualSection& S,
                             const ThomFamily& lambda, const TransitionData& theta);

/// Radial Thom form of each chart's rank with a common radius.
ThomFamily radial_thom_family(const VirtualBundle& E, double radius);

struct SplittingResult {
  IntegralResult v0;  // ∫ a ∧ S*Λ for S = S¹ ⊕ S²
  IntegralResult v1;  // ∫ over (S¹)⁻¹(0) of a ∧ (S²)*Λ²
  IntegralResult v2;  // ∫ over (S²)⁻¹(0) of a ∧ (S¹)*Λ¹
  double r01 = 0.0, r02 = 0.0, r12 = 0.0;
};

/// Zero-set integrals are ambient integrals against the complementary Euler
/// factor, with the zero set oriented normal-last; v1 carries the Koszul sign
/// (-1)^{r1 r2} that this orientation introduces relative to E¹ ⊕ E².
SplittingResult check_splitting(const VirtualComplex& c, const VirtualBundle& E1, const VirtualBundle& E2,
                                const VirtualSection& S1, const VirtualSection& S2, const ThomFamily& lambda1,
                                const ThomFamily& lambda2, const FormFamily& a, const TransitionData& theta,
                                const PartitionOfUnity& pou, const QuadratureSpec& q);

}  // namespace vman
