#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace cmr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// (A + A^T) / 2. Used before every eigenvalue-based test so that tiny
/// asymmetries from accumulated rounding do not leak into the spectra.
Matrix symmetrize(const Matrix& a);

/// Moore-Penrose pseudoinverse via SVD. Singular values below
/// rel_tol * sigma_max are treated as zero. Rejects non-finite input.
Matrix pinv(const Matrix& m, double rel_tol = 1e-12);

/// Rank of m under the same truncation rule as pinv.
int numerical_rank(const Matrix& m, double rel_tol = 1e-12);

/// True when A - B is positive semidefinite up to eig_tol: the smallest
/// eigenvalue of symmetrize(A - B) is >= -eig_tol. Both inputs must be
/// square, of equal size, and symmetric up to eig_tol.
bool loewner_geq(const Matrix& a, const Matrix& b, double eig_tol = 1e-10);

/// Central finite difference of a matrix-valued map. Entry c of the result
/// is d f / d theta_c evaluated at `at`, using per-coordinate step
/// step_scale * (1 + |at_c|). With absolute_step > 0 that fixed step is used
/// for every coordinate instead (lattice-valued maps need this).
std::vector<Matrix> fd_derivative(
    const std::function<Matrix(const Vector&)>& f, const Vector& at,
    double step_scale = 1e-6, double absolute_step = 0.0);

}  // namespace cmr
