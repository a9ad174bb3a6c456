#include "kernel/pe_covariance.hpp"

#include <cmath>

#include "common/error.hpp"

namespace iak {

Matrix structured_pe_covariance(const SpatialGeometry& gx, const SpatialGeometry& gxp, double rho, double phi) {
  if (gx.kind != gxp.kind || gx.kind == GeometryKind::Vector)
    throw ShapeError("positional encodings need two image or two string geometries, got " + gx.describe() + " and " +
                     gxp.describe());
  const Eigen::Index n = static_cast<Eigen::Index>(gx.size());
  const Eigen::Index m = static_cast<Eigen::Index>(gxp.size());
  Matrix r(n, m);
  if (gx.kind == GeometryKind::Image) {
    if (gx != gxp) throw ShapeError("structured encodings need images of equal shape");
    const double w = static_cast<double>(gx.width);
    const double h = static_cast<double>(gx.height);
    for (Eigen::Index a = 0; a < n; ++a) {
      const double ra = static_cast<double>(a / gx.width), ca = static_cast<double>(a % gx.width);
      for (Eigen::Index b = 0; b < m; ++b) {
        const double rb = static_cast<double>(b / gx.width), cb = static_cast<double>(b % gx.width);
        const double dh = (ca - cb) / w;
        const double dv = (ra - rb) / h;
        r(a, b) = rho * std::exp(-phi * (dh * dh + dv * dv));
      }
    }
  } else {
    for (Eigen::Index a = 0; a < n; ++a) {
      for (Eigen::Index b = 0; b < m; ++b) {
        const double d = static_cast<double>(a + 1) / static_cast<double>(n) - static_cast<double>(b + 1) / static_cast<double>(m);
        r(a, b) = rho * std::exp(-phi * d * d);
      }
    }
  }
  return r;
}

Matrix random_pe_covariance(const SpatialGeometry& gx, const SpatialGeometry& gxp, double rho) {
  if (gx.kind != gxp.kind || gx.kind == GeometryKind::Vector)
    throw ShapeError("positional encodings need two image or two string geometries, got " + gx.describe() + " and " +
                     gxp.describe());
  return rho * Matrix::Identity(static_cast<Eigen::Index>(gx.size()), static_cast<Eigen::Index>(gxp.size()));
}

Matrix interpolate(const Matrix& k, double alpha, const Matrix& r) {
  if (k.rows() != r.rows() || k.cols() != r.cols())
    throw ShapeError("interpolate: kernel block is " + std::to_string(k.rows()) + "x" + std::to_string(k.cols()) +
                     " but encoding block is " + std::to_string(r.rows()) + "x" + std::to_string(r.cols()));
  return alpha * k + (1.0 - alpha) * r;
}

}  // namespace iak
