#include "common/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace iak {

double min_relative_eigenvalue(const Matrix& m) {
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym, Eigen::EigenvaluesOnly);
  const Vector& ev = solver.eigenvalues();
  if (ev.size() == 0) return 0.0;
  const double scale = ev.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0.0;
  return ev.minCoeff() / scale;
}

bool is_psd(const Matrix& m, double tol) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > tol * scale) return false;
  return min_relative_eigenvalue(m) >= -tol;
}

Matrix psd_factor(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (m + m.transpose()));
  const Vector& ev = solver.eigenvalues();
  const double scale = ev.size() ? ev.cwiseAbs().maxCoeff() : 0.0;
  const double cutoff = scale * 1e-14;
  Eigen::Index keep = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (ev(i) > cutoff) ++keep;
  Matrix f(m.rows(), keep);
  Eigen::Index col = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) > cutoff) f.col(col++) = solver.eigenvectors().col(i) * std::sqrt(ev(i));
  }
  return f;
}

double frobenius_inner(const Matrix& a, const Matrix& b) { return a.cwiseProduct(b).sum(); }

}  // namespace iak
