#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "vman/expr.hpp"

namespace vman {

using Point = std::vector<double>;

class StructureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Subset of {1..15}, bit i-1 set iff i is a member.
class IndexSet {
 public:
  static constexpr int kMaxElement = 15;

  constexpr IndexSet() = default;
  static constexpr IndexSet from_bits(std::uint16_t bits) {
    IndexSet s;
    s.bits_ = bits;
    return s;
  }
  static IndexSet of(std::initializer_list<int> elements);
  static IndexSet of(const std::vector<int>& elements);
  /// Parses "{}", "{1,3}" or "1,3".
  static IndexSet parse(const std::string& text);

  constexpr std::uint16_t bits() const { return bits_; }
  constexpr bool empty() const { return bits_ == 0; }
  int size() const;
  bool contains(int element) const { return element >= 1 && element <= kMaxElement && (bits_ >> (element - 1)) & 1u; }
  constexpr bool subset_of(IndexSet other) const { return (bits_ & ~other.bits_) == 0; }
  constexpr bool proper_subset_of(IndexSet other) const { return subset_of(other) && bits_ != other.bits_; }
  std::vector<int> elements() const;
  std::string str() const;

  constexpr IndexSet operator|(IndexSet o) const { return from_bits(bits_ | o.bits_); }
  constexpr IndexSet operator&(IndexSet o) const { return from_bits(bits_ & o.bits_); }
  constexpr IndexSet operator-(IndexSet o) const { return from_bits(bits_ & ~o.bits_); }
  constexpr bool operator==(const IndexSet&) const = default;
  /// Orders by cardinality, then by bits.
  std::strong_ordering operator<=>(const IndexSet& o) const;

 private:
  std::uint16_t bits_ = 0;
};

/// All subsets of s, ordered by cardinality then bits.
std::vector<IndexSet> subsets_of(IndexSet s);

/// How a region edge behaves.
///   Open:     the chart ends but the virtual space continues in another chart.
///   Free:     the chart ends and nothing continues; forms must vanish nearby.
///   Boundary: a boundary face of the virtual manifold.
///   Singular: a coordinate degeneracy (polar origin); neither edge nor boundary.
enum class FaceKind : std::uint8_t { Open, Free, Boundary, Singular };

const char* to_string(FaceKind kind);
FaceKind face_kind_from_string(const std::string& s);

/// Parametrization of the face {g = 0} of a constraint, by dim-1 parameters.
struct FaceParametrization {
  std::vector<Expression> map;
  std::vector<double> lo, hi;
  std::vector<bool> periodic;
};

struct Constraint {
  Expression g;
  FaceKind kind = FaceKind::Open;
  std::optional<FaceParametrization> face;
};

/// Axis-aligned box intersected with {g <= 0}. Periodic axes wrap into [lo, hi).
class ChartRegion {
 public:
  ChartRegion() = default;  // the 0-dimensional point
  ChartRegion(std::vector<double> lo, std::vector<double> hi, FaceKind faces = FaceKind::Open);

  int dim() const { return static_cast<int>(lo_.size()); }
  double lo(int axis) const { return lo_[axis]; }
  double hi(int axis) const { return hi_[axis]; }
  const std::vector<double>& lo() const { return lo_; }
  const std::vector<double>& hi() const { return hi_; }
  bool periodic(int axis) const { return periodic_[axis]; }
  FaceKind face(int axis, bool upper) const { return upper ? hi_face_[axis] : lo_face_[axis]; }

  ChartRegion& set_periodic(int axis, bool on = true);
  ChartRegion& set_face(int axis, bool upper, FaceKind kind);
  ChartRegion& set_faces(FaceKind kind);
  ChartRegion& add_constraint(const Expression& g, FaceKind kind = FaceKind::Open,
                              std::optional<FaceParametrization> face = std::nullopt);

  const std::vector<Constraint>& constraints() const { return constraints_; }
  double constraint_value(std::size_t i, const double* x) const;

  /// Max of box excess and constraint values; <= 0 exactly on the region.
  double violation(const double* x) const;
  bool contains(const double* x, double tol = 0.0) const;
  bool contains(const Point& x, double tol = 0.0) const { return contains(x.data(), tol); }

  void wrap(double* x) const;
  double box_volume() const;
  Point box_center() const;

  /// Same-dimension intersection: box meet, constraints concatenated.
  ChartRegion intersect(const ChartRegion& other) const;
  /// Homothety about the box centre; full-period periodic axes are kept.
  ChartRegion homothety(double factor) const;
  /// Adds the constraint that excludes `removed` (an open set): -violation(removed) <= 0.
  ChartRegion& exclude(const ChartRegion& removed, FaceKind kind = FaceKind::Open);
  /// Expression for violation(x) over the given axes (box rows and constraints).
  Expression violation_expression() const;

  /// Region on the face {x_axis = bound}; remaining axes keep their order.
  ChartRegion box_face(int axis, bool upper) const;
  /// Pulls the constraints back through `map` (expressions in the new coordinates).
  ChartRegion pullback(const ChartRegion& domain_box, const std::vector<Expression>& map) const;

 private:
  std::vector<double> lo_, hi_;
  std::vector<bool> periodic_;
  std::vector<FaceKind> lo_face_, hi_face_;
  std::vector<Constraint> constraints_;
  std::vector<CompiledExpression> compiled_;
};

/// Rejection sampling inside a region, optionally filtered by `accept`.
/// Returns at most `count` points; gives up after count*max_tries_factor draws.
std::vector<Point> sample_region(const ChartRegion& region, int count, std::mt19937_64& rng,
                                 const std::function<bool(const double*)>& accept = {},
                                 int max_tries_factor = 64);

/// Distance in the max norm, periodic axes measured modulo their period.
double region_distance(const ChartRegion& region, const double* a, const double* b);

struct CheckResult {
  std::string name;
  bool passed = true;
  std::string detail;
};

class ValidationReport {
 public:
  void add(std::string name, bool passed, std::string detail = {});
  void warn(std::string message);
  void merge(const ValidationReport& other);

  bool ok() const;
  std::size_t failures() const;
  const CheckResult* first_failure() const;
  const CheckResult* find(const std::string& name) const;
  const std::vector<CheckResult>& checks() const { return checks_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  std::vector<CheckResult> checks_;
  std::vector<std::string> warnings_;
};

std::string format_point(const double* x, int dim);
inline std::string format_point(const Point& x) { return format_point(x.data(), static_cast<int>(x.size())); }

}  // namespace vman
