#pragma once

#include <Eigen/Dense>

namespace iak {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Smallest eigenvalue divided by the largest absolute eigenvalue (0 for the
// zero matrix). Input is symmetrized first.
double min_relative_eigenvalue(const Matrix& m);

// True when m is symmetric and its min relative eigenvalue >= -tol.
bool is_psd(const Matrix& m, double tol = 1e-8);

// F with F * F^T == m for symmetric PSD m, via the eigendecomposition with
// negative eigenvalues clamped to zero. Columns with zero eigenvalue are
// dropped, so F has rank(m) columns.
Matrix psd_factor(const Matrix& m);

double frobenius_inner(const Matrix& a, const Matrix& b);

}  // namespace iak
