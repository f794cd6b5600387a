#pragma once

// Finite truncations of the state space K and the control space O.
//
// Vectors and operators are plain Eigen objects; the truncation dimension is
// whatever the owning SpaceConfig says. Hilbert-Schmidt quantities reduce to
// Frobenius ones in a fixed orthonormal basis.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>

#include "smp/errors.hpp"

namespace smp {

using StateVec = Eigen::VectorXd;
using ControlVec = Eigen::VectorXd;
using Operator = Eigen::MatrixXd;

struct SpaceConfig {
    int state_dim = 1;
    int control_dim = 1;

    void validate() const {
        detail::require_shape(state_dim >= 1, "state_dim must be >= 1");
        detail::require_shape(control_dim >= 1, "control_dim must be >= 1");
    }
};

/// Tolerances used when validating covariance operators.
struct PsdTolerances {
    double symmetry_rel = 1e-12;
    double negative_eig_rel = 1e-10;
};

/// Symmetric positive semi-definite operator (a covariance or covariance rate).
///
/// Construction validates symmetry and the spectral lower bound; the stored
/// matrix is the exact symmetrization of the input.
class CovarianceOperator {
public:
    CovarianceOperator() = default;

    explicit CovarianceOperator(const Operator& m, const PsdTolerances& tol = {}) {
        detail::require_shape(m.rows() == m.cols(), "covariance operator must be square");
        detail::require_shape(m.allFinite(), "covariance operator has non-finite entries");
        const double norm = m.norm();
        const double asym = (m - m.transpose()).norm();
        if (asym > tol.symmetry_rel * norm)
            throw PreconditionError("covariance operator is not symmetric (relative asymmetry " +
                                    std::to_string(norm > 0 ? asym / norm : asym) + ")");
        matrix_ = 0.5 * (m + m.transpose());
        if (matrix_.size() > 0) {
            Eigen::SelfAdjointEigenSolver<Operator> es(matrix_, Eigen::EigenvaluesOnly);
            const double lmin = es.eigenvalues().minCoeff();
            const double lmax = es.eigenvalues().maxCoeff();
            if (lmin < -tol.negative_eig_rel * std::max(lmax, 0.0))
                throw PreconditionError("covariance operator has eigenvalue " + std::to_string(lmin) +
                                        " below the PSD tolerance");
        }
    }

    const Operator& matrix() const { return matrix_; }
    Eigen::Index dim() const { return matrix_.rows(); }
    double trace() const { return matrix_.trace(); }

private:
    Operator matrix_;
};

/// Symmetric PSD square root via eigendecomposition.
///
/// Eigenvalues below roundoff level (or negative within tolerance) are clamped
/// to zero, so rank-deficient inputs such as rank-one covariances are handled.
inline Operator psd_sqrt(const CovarianceOperator& c) {
    const Eigen::Index n = c.dim();
    if (n == 0) return Operator();
    Eigen::SelfAdjointEigenSolver<Operator> es(c.matrix());
    Eigen::VectorXd lambda = es.eigenvalues();
    const double lmax = std::max(lambda.maxCoeff(), 0.0);
    const double floor = static_cast<double>(n) * std::numeric_limits<double>::epsilon() * lmax;
    for (Eigen::Index i = 0; i < n; ++i) lambda(i) = lambda(i) <= floor ? 0.0 : std::sqrt(lambda(i));
    const Operator& v = es.eigenvectors();
    Operator s = v * lambda.asDiagonal() * v.transpose();
    return 0.5 * (s + s.transpose());
}

inline Operator psd_sqrt(const Operator& m, const PsdTolerances& tol = {}) {
    return psd_sqrt(CovarianceOperator(m, tol));
}

/// Hilbert-Schmidt inner product <a, b>_2 = trace(a^T b).
inline double hs_inner(const Operator& a, const Operator& b) {
    detail::require_shape(a.rows() == b.rows() && a.cols() == b.cols(),
                          "hs_inner: operator shapes differ");
    return (a.array() * b.array()).sum();
}

/// Rank-one operator k -> <w, k> u.
inline Operator tensor(const StateVec& u, const StateVec& w) {
    detail::require_shape(u.size() == w.size(), "tensor: vector dimensions differ");
    return u * w.transpose();
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix restricted to its range.
inline Operator psd_pinv(const Operator& m, double rel_cutoff = 1e-12) {
    Eigen::SelfAdjointEigenSolver<Operator> es(0.5 * (m + m.transpose()));
    Eigen::VectorXd lambda = es.eigenvalues();
    const double lmax = lambda.size() > 0 ? std::max(lambda.maxCoeff(), 0.0) : 0.0;
    for (Eigen::Index i = 0; i < lambda.size(); ++i)
        lambda(i) = (lmax > 0 && lambda(i) > rel_cutoff * lmax) ? 1.0 / lambda(i) : 0.0;
    const Operator& v = es.eigenvectors();
    return v * lambda.asDiagonal() * v.transpose();
}

}  // namespace smp
