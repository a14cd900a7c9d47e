#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>

#include <Eigen/Dense>

#include "vman/equivariant.hpp"

namespace vman::detail {

inline std::uint64_t mix_seed(std::uint64_t salt, std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t h = seed ^ salt;
  for (std::uint64_t v : {a, b}) {
    h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h *= 0xbf58476d1ce4e5b9ull;
    h ^= h >> 31;
  }
  return h;
}

inline bool close(double a, double b, double tol) {
  return std::fabs(a - b) <= tol * (1.0 + std::max(std::fabs(a), std::fabs(b)));
}

// First coefficient mismatch between two forms at a point, or "".
inline std::string compare_at(const ChartForm& lhs, const ChartForm& rhs, const double* y, double tol,
                              double u = 1.0) {
  std::map<Monomial, bool> seen;
  for (const auto& [m, e] : lhs.terms()) seen[m] = true;
  for (const auto& [m, e] : rhs.terms()) seen[m] = true;
  for (const auto& [m, unused] : seen) {
    const double a = lhs.value(m, y, u);
    const double b = rhs.value(m, y, u);
    if (!close(a, b, tol)) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "coefficient d%s differs: %.12g vs %.12g", monomial_label(m).c_str(), a, b);
      return buf;
    }
  }
  return {};
}

// Magnitudes and orientation sign of a rotation generator, from its real Schur form.
NormalWeights schur_weights(const Eigen::MatrixXd& A);

}  // namespace vman::detail
