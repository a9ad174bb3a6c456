#pragma once

#include "common/linalg.hpp"
#include "kernel/geometry.hpp"

namespace iak {

// Distance-decay encoding covariance between the positions of two inputs.
// Images use column/row offsets divided by width/height; strings use the
// relative coordinate a/n (1-indexed), so inputs of different lengths get a
// well-defined rectangular block. Throws ShapeError for vector geometries or
// images of different shapes.
Matrix structured_pe_covariance(const SpatialGeometry& gx, const SpatialGeometry& gxp, double rho, double phi);

// rho * delta_ab, rectangular when the sizes differ.
Matrix random_pe_covariance(const SpatialGeometry& gx, const SpatialGeometry& gxp, double rho);

// alpha * k + (1 - alpha) * r.
Matrix interpolate(const Matrix& k, double alpha, const Matrix& r);

}  // namespace iak
