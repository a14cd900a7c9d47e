#pragma once

#include "vman/complex.hpp"

namespace vman::fixtures {

/// [0,1] covered by U_0 = [0,0.6), U_1 = (0.4,1], shrink 0.75.
std::vector<ChartRegion> interval_cover_regions();
VirtualComplex interval_cover();

/// X_∅ = [-2,2]; X_1 = (-1.5,1.5) x [-1,1]^2 a rank-2 bundle chart over X_{∅,1} = (-1,1).
VirtualComplex line_plane();

/// [0,1] as a single chart with both ends on the boundary.
VirtualComplex unit_interval();

/// Unit disk in polar coordinates (r, θ), r = 0 singular, r = 1 boundary.
VirtualComplex polar_disk();

/// Flat torus [-π/2, 3π/2)^2 as one periodic chart.
ChartRegion torus_region();
VirtualComplex torus();

/// Round sphere in (polar angle p ∈ [0,π], azimuth a periodic), both poles singular.
VirtualComplex sphere();

}  // namespace vman::fixtures
