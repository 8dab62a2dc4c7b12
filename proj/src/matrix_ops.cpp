#include "cmr/matrix_ops.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <cmath>
#include <string>

#include "cmr/errors.hpp"

namespace cmr {

namespace {

void require_finite(const Matrix& m, const char* who) {
    if (!m.allFinite()) {
        throw ContractViolation(std::string(who) + ": non-finite entries in input");
    }
}

}  // namespace

Matrix symmetrize(const Matrix& a) {
    if (a.rows() != a.cols()) {
        throw ContractViolation("symmetrize: matrix must be square");
    }
    return 0.5 * (a + a.transpose());
}

Matrix pinv(const Matrix& m, double rel_tol) {
    require_finite(m, "pinv");
    if (rel_tol < 0.0) {
        throw ContractViolation("pinv: rel_tol must be nonnegative");
    }
    if (m.rows() == 0 || m.cols() == 0) {
        return Matrix::Zero(m.cols(), m.rows());
    }
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double cutoff = sv.size() > 0 ? rel_tol * sv(0) : 0.0;
    Vector inv_sv = Vector::Zero(sv.size());
    for (int i = 0; i < sv.size(); ++i) {
        if (sv(i) > cutoff && sv(i) > 0.0) inv_sv(i) = 1.0 / sv(i);
    }
    return svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose();
}

int numerical_rank(const Matrix& m, double rel_tol) {
    require_finite(m, "numerical_rank");
    if (m.rows() == 0 || m.cols() == 0) return 0;
    Eigen::JacobiSVD<Matrix> svd(m);
    const auto& sv = svd.singularValues();
    const double cutoff = sv.size() > 0 ? rel_tol * sv(0) : 0.0;
    int rank = 0;
    for (int i = 0; i < sv.size(); ++i) {
        if (sv(i) > cutoff && sv(i) > 0.0) ++rank;
    }
    return rank;
}

bool loewner_geq(const Matrix& a, const Matrix& b, double eig_tol) {
    if (a.rows() != a.cols() || b.rows() != b.cols() || a.rows() != b.rows()) {
        throw ContractViolation("loewner_geq: matrices must be square and equal size");
    }
    require_finite(a, "loewner_geq");
    require_finite(b, "loewner_geq");
    const double scale = std::max({1.0, a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()});
    auto asym = [&](const Matrix& m) {
        return (m - m.transpose()).cwiseAbs().maxCoeff();
    };
    if (asym(a) > eig_tol * scale || asym(b) > eig_tol * scale) {
        throw ContractViolation("loewner_geq: inputs must be symmetric");
    }
    const Matrix diff = symmetrize(a - b);
    Eigen::SelfAdjointEigenSolver<Matrix> es(diff, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) {
        throw NumericalFailure("loewner_geq: eigenvalue computation failed");
    }
    return es.eigenvalues().minCoeff() >= -eig_tol;
}

std::vector<Matrix> fd_derivative(const std::function<Matrix(const Vector&)>& f,
                                  const Vector& at, double step_scale,
                                  double absolute_step) {
    if (!f) throw ContractViolation("fd_derivative: empty function");
    if (step_scale <= 0.0 && absolute_step <= 0.0) {
        throw ContractViolation("fd_derivative: step must be positive");
    }
    std::vector<Matrix> result(static_cast<std::size_t>(at.size()));
    for (int c = 0; c < at.size(); ++c) {
        const double h = absolute_step > 0.0
                             ? absolute_step
                             : step_scale * (1.0 + std::abs(at(c)));
        Vector up = at, down = at;
        up(c) += h;
        down(c) -= h;
        const Matrix fu = f(up);
        const Matrix fd = f(down);
        if (fu.rows() != fd.rows() || fu.cols() != fd.cols()) {
            throw ContractViolation("fd_derivative: map changes shape across evaluations");
        }
        result[static_cast<std::size_t>(c)] = (fu - fd) / (2.0 * h);
    }
    return result;
}

}  // namespace cmr
