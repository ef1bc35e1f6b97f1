#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>

namespace tdrg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace linalg {

inline bool is_symmetric(const Matrix& M, double tol = 1e-12) {
    if (M.rows() != M.cols())
        return false;
    const double scale = 1.0 + M.cwiseAbs().maxCoeff();
    return (M - M.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

/// Largest eigenvalue of the symmetric part of M.
inline double max_eigenvalue(const Matrix& M) {
    const Matrix S = 0.5 * (M + M.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success)
        return std::numeric_limits<double>::infinity();
    return es.eigenvalues().maxCoeff();
}

inline double min_eigenvalue(const Matrix& M) {
    const Matrix S = 0.5 * (M + M.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success)
        return -std::numeric_limits<double>::infinity();
    return es.eigenvalues().minCoeff();
}

inline bool is_positive_definite(const Matrix& M) {
    return is_symmetric(M, 1e-9) && min_eigenvalue(M) > 0.0;
}

/// Number of free entries in an n x n lower-triangular factor.
constexpr int triangular_size(int n) { return n * (n + 1) / 2; }

/// Builds L L^T from a packed lower-triangular parameter vector whose
/// diagonal entries are stored as logarithms, so the result is positive
/// definite for every parameter value.
template <typename Derived>
Matrix spd_from_cholesky(const Eigen::MatrixBase<Derived>& packed, int n) {
    Matrix L = Matrix::Zero(n, n);
    int k = 0;
    for (int j = 0; j < n; ++j) {
        for (int i = j; i < n; ++i, ++k)
            L(i, j) = (i == j) ? std::exp(packed(k)) : packed(k);
    }
    return L * L.transpose();
}

/// Inverse of spd_from_cholesky for a positive-definite matrix.
inline Vector cholesky_to_packed(const Matrix& S) {
    const int n = static_cast<int>(S.rows());
    Eigen::LLT<Matrix> llt(0.5 * (S + S.transpose()));
    const Matrix L = llt.matrixL();
    Vector packed(triangular_size(n));
    int k = 0;
    for (int j = 0; j < n; ++j) {
        for (int i = j; i < n; ++i, ++k)
            packed(k) = (i == j) ? std::log(L(i, j)) : L(i, j);
    }
    return packed;
}

}  // namespace linalg
}  // namespace tdrg
