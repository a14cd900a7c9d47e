#pragma once

#include <map>
#include <vector>

#include "vman/region.hpp"

namespace vman {

/// Bundle chart φ_{J,I}: X_{J,I} -> X_{I,J} for I ⊂ J.
///
/// `projection` has d_I entries in the coordinates of X_J. `fiber_param` has
/// d_J entries in (x, v): x0..x_{d_I-1} base, the next `rank` variables fiber.
struct Overlap {
  IndexSet small;
  IndexSet big;
  ChartRegion region_in_small;
  ChartRegion region_in_big;
  int rank = 0;
  std::vector<Expression> projection;
  std::vector<Expression> fiber_param;
};

/// Identity overlap between two charts in a shared coordinate space.
Overlap identity_overlap(IndexSet small, IndexSet big, const ChartRegion& region);

struct ChartPoint {
  IndexSet chart;
  Point x;
};

class VirtualComplex {
 public:
  explicit VirtualComplex(int n = 0);

  int n() const { return n_; }
  void set_chart(IndexSet index, ChartRegion region);
  void add_overlap(Overlap overlap);

  bool has_chart(IndexSet index) const { return charts_.count(index) != 0; }
  const ChartRegion& chart(IndexSet index) const;
  /// Chart indices ordered by cardinality, then bits.
  std::vector<IndexSet> chart_indices() const;
  int dim(IndexSet index) const { return chart(index).dim(); }
  int virtual_dim() const;

  const std::vector<Overlap>& overlaps() const { return overlaps_; }
  const Overlap* overlap(IndexSet small, IndexSet big) const;

  /// x ∈ X_{I,J} ⊆ X_I for arbitrary I, J (incomparable pairs are derived).
  bool in_overlap(IndexSet I, IndexSet J, const double* x, double tol = 0.0) const;
  /// φ_{J,I}(y) for I ⊆ J; identity when I == J.
  void project(IndexSet J, IndexSet I, const double* y, double* out) const;
  Point project(IndexSet J, IndexSet I, const Point& y) const;
  /// ψ_{J,I}(x, v) for I ⊆ J.
  void lift(IndexSet J, IndexSet I, const double* x, const double* v, double* out) const;
  Point lift(IndexSet J, IndexSet I, const Point& x, const Point& v) const;
  /// ψ_{J,I}(x, 0).
  Point zero_lift(IndexSet J, IndexSet I, const Point& x) const;

 private:
  struct CompiledOverlap {
    std::vector<CompiledExpression> projection;
    std::vector<CompiledExpression> fiber_param;
  };

  int n_;
  std::map<IndexSet, ChartRegion> charts_;
  std::vector<Overlap> overlaps_;
  std::vector<CompiledOverlap> compiled_;
  std::map<std::pair<std::uint16_t, std::uint16_t>, std::size_t> overlap_index_;
};

/// Checks P1-P5 for every pair of charts by sampled mutual membership.
ValidationReport validate_patchable(const VirtualComplex& c, int samples = 200, double tol = 1e-8,
                                    std::uint64_t seed = 1);
/// Checks bundle-chart consistency, rank bookkeeping and fiber-product dimensions.
ValidationReport validate_virtual(const VirtualComplex& c, int samples = 200, double tol = 1e-8,
                                  std::uint64_t seed = 1);

bool equivalent(const VirtualComplex& c, const ChartPoint& a, const ChartPoint& b, double tol = 1e-8);
/// Minimal-cardinality representative of [a].
ChartPoint support(const VirtualComplex& c, const ChartPoint& a, double tol = 1e-8);

/// Charts of the cover construction: X_∅ = U_0 - ∪U_i°, X_I = ∩_{i∈I}U_i - ∪_{j∉I}U_j°,
/// with U° the homothety of U by `shrink`. Empty charts are dropped.
VirtualComplex from_cover(int ambient_dim, const std::vector<ChartRegion>& cover, double shrink,
                          int emptiness_probes = 20000, std::uint64_t seed = 1);

struct FaceRef {
  IndexSet chart;
  int axis = -1;        // box face axis, or -1 for a constraint face
  bool upper = false;
  int constraint = -1;  // constraint index for parametrized faces
};

struct BoundaryChart {
  IndexSet original;
  FaceRef face;
  std::vector<Expression> embedding;  // face coordinates -> chart coordinates
  int orientation = 1;                // outward normal first
};

/// One connected piece of the boundary, reindexed so that its smallest chart is ∅.
struct BoundaryComponent {
  VirtualComplex complex;
  IndexSet removed;  // common indices stripped when reindexing
  std::map<IndexSet, BoundaryChart> charts;
};

std::vector<BoundaryComponent> boundary(const VirtualComplex& c, int samples = 64, double tol = 1e-8,
                                        std::uint64_t seed = 1);

}  // namespace vman
