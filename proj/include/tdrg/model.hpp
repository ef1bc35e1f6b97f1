#pragma once

/// Plant, constraints, steady-state maps and the primary feedback law for
/// linear systems with a constant input delay:
///
///     x'(t) = A x(t) + B u(t - tau)
///     y(t)  = C x(t) + D u(t - tau)
///
/// subject to h_x,i' x + h_u,i' u + g_i >= 0.

#include "tdrg/errors.hpp"
#include "tdrg/linalg.hpp"

#include <string>
#include <utility>
#include <vector>

namespace tdrg {

class DelaySystem {
public:
    DelaySystem(Matrix A, Matrix B, Matrix C, Matrix D, double tau)
        : A_(std::move(A)), B_(std::move(B)), C_(std::move(C)), D_(std::move(D)), tau_(tau) {
        if (!(tau_ > 0.0))
            throw InvalidArgument("delay tau must be positive");
        const auto n = A_.rows();
        detail::require_dims(n > 0 && A_.cols() == n, "A must be square and non-empty");
        detail::require_dims(B_.rows() == n && B_.cols() > 0, "B must have n rows");
        detail::require_dims(C_.cols() == n && C_.rows() > 0, "C must have n columns");
        detail::require_dims(D_.rows() == C_.rows() && D_.cols() == B_.cols(), "D must be p x m");
    }

    const Matrix& A() const { return A_; }
    const Matrix& B() const { return B_; }
    const Matrix& C() const { return C_; }
    const Matrix& D() const { return D_; }
    double tau() const { return tau_; }

    int n() const { return static_cast<int>(A_.rows()); }
    int m() const { return static_cast<int>(B_.cols()); }
    int p() const { return static_cast<int>(C_.rows()); }

private:
    Matrix A_, B_, C_, D_;
    double tau_;
};

struct ConstraintRow {
    Vector h_x;
    Vector h_u;
    double g = 0.0;
};

class ConstraintSet {
public:
    ConstraintSet(std::vector<ConstraintRow> rows) : rows_(std::move(rows)) {
        if (rows_.empty())
            throw InvalidArgument("constraint set needs at least one row");
        const auto n = rows_.front().h_x.size();
        const auto m = rows_.front().h_u.size();
        Hx_.resize(static_cast<Eigen::Index>(rows_.size()), n);
        Hu_.resize(static_cast<Eigen::Index>(rows_.size()), m);
        g_.resize(static_cast<Eigen::Index>(rows_.size()));
        for (std::size_t i = 0; i < rows_.size(); ++i) {
            const auto& r = rows_[i];
            detail::require_dims(r.h_x.size() == n && r.h_u.size() == m,
                                 "constraint rows must share dimensions");
            if (r.h_x.isZero(0.0) && r.h_u.isZero(0.0))
                throw InvalidArgument("constraint row " + std::to_string(i) + " has h_x = h_u = 0");
            const auto ii = static_cast<Eigen::Index>(i);
            Hx_.row(ii) = r.h_x.transpose();
            Hu_.row(ii) = r.h_u.transpose();
            g_(ii) = r.g;
        }
    }

    const std::vector<ConstraintRow>& rows() const { return rows_; }
    int size() const { return static_cast<int>(rows_.size()); }
    int n() const { return static_cast<int>(Hx_.cols()); }
    int m() const { return static_cast<int>(Hu_.cols()); }

    const Matrix& Hx() const { return Hx_; }
    const Matrix& Hu() const { return Hu_; }
    const Vector& g() const { return g_; }

    /// Closed-loop error normal of row i: h_x,i + K' h_u,i.
    Vector closed_loop_normal(int i, const Matrix& K) const {
        return Hx_.row(i).transpose() + K.transpose() * Hu_.row(i).transpose();
    }

private:
    std::vector<ConstraintRow> rows_;
    Matrix Hx_, Hu_;
    Vector g_;
};

/// Component i is h_x,i' x + h_u,i' u + g_i. Nonnegative means satisfied.
inline Vector residuals(const ConstraintSet& cs, const Vector& x, const Vector& u) {
    detail::require_dims(x.size() == cs.n() && u.size() == cs.m(), "residuals: dimension mismatch");
    return cs.Hx() * x + cs.Hu() * u + cs.g();
}

struct Equilibrium {
    Vector x_bar;
    Vector u_bar;
    Vector v;
};

struct PrimaryGain {
    Matrix K;
};

/// Minimum-norm solution map of
///     A x + B u = 0,   C x + D u = v,
/// cached so that x_bar = Gx v and u_bar = Gu v for every consistent v.
class SteadyStateMap {
public:
    explicit SteadyStateMap(const DelaySystem& sys) : n_(sys.n()), m_(sys.m()), p_(sys.p()) {
        M_.resize(n_ + p_, n_ + m_);
        M_ << sys.A(), sys.B(), sys.C(), sys.D();
        Eigen::CompleteOrthogonalDecomposition<Matrix> cod(M_);
        Matrix rhs = Matrix::Zero(n_ + p_, p_);
        rhs.bottomRows(p_).setIdentity();
        G_ = cod.solve(rhs);
        Gx_ = G_.topRows(n_);
        Gu_ = G_.bottomRows(m_);
    }

    Equilibrium operator()(const Vector& v) const {
        detail::require_dims(v.size() == p_, "steady_state: reference has wrong dimension");
        Equilibrium eq{Gx_ * v, Gu_ * v, v};
        Vector target = Vector::Zero(n_ + p_);
        target.tail(p_) = v;
        Vector sol(n_ + m_);
        sol << eq.x_bar, eq.u_bar;
        const double res = (M_ * sol - target).norm();
        if (res > 1e-8 * (1.0 + v.norm()))
            throw NoEquilibrium("no steady state for the requested reference (residual " +
                                std::to_string(res) + ")");
        return eq;
    }

    /// True when every reference has an equilibrium.
    bool surjective() const {
        Matrix rhs = Matrix::Zero(n_ + p_, p_);
        rhs.bottomRows(p_).setIdentity();
        return (M_ * G_ - rhs).cwiseAbs().maxCoeff() <= 1e-9;
    }

    const Matrix& Gx() const { return Gx_; }
    const Matrix& Gu() const { return Gu_; }

private:
    int n_, m_, p_;
    Matrix M_, G_, Gx_, Gu_;
};

inline Equilibrium steady_state(const DelaySystem& sys, const Vector& v) {
    return SteadyStateMap(sys)(v);
}

/// u = u_bar + K (x - x_bar).
inline Vector primary_input(const PrimaryGain& gain, const Equilibrium& eq, const Vector& x) {
    detail::require_dims(gain.K.rows() == eq.u_bar.size() && gain.K.cols() == x.size() &&
                             x.size() == eq.x_bar.size(),
                         "primary_input: dimension mismatch");
    return eq.u_bar + gain.K * (x - eq.x_bar);
}

inline void check_gain(const DelaySystem& sys, const PrimaryGain& gain) {
    detail::require_dims(gain.K.rows() == sys.m() && gain.K.cols() == sys.n(), "gain K must be m x n");
}

}  // namespace tdrg
