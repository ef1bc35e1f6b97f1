#pragma once

/// Lyapunov certificates for the pre-stabilized delay loop
///
///     e'(t) = A e(t) + B K e(t - tau),
///
/// in three flavours:
///   - Razumikhin:   V = max_{theta in [-tau,0]} e(t+theta)' P e(t+theta)
///   - KrasovskiiQ:  V = e' P e + int_{t-tau}^{t} e' Q e
///   - KrasovskiiR:  V = e' P e + int_{t-tau}^{t} (s - t + tau) e'(s)' R e'(s) ds
///
/// together with their LMI feasibility tests and the level-set threshold
/// Gamma(v) of the largest sublevel set that fits inside the constraints.

#include "tdrg/errors.hpp"
#include "tdrg/history.hpp"
#include "tdrg/linalg.hpp"
#include "tdrg/model.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace tdrg {

enum class Variant { Razumikhin, KrasovskiiQ, KrasovskiiR };

inline std::string_view to_string(Variant v) {
    switch (v) {
    case Variant::Razumikhin: return "razumikhin";
    case Variant::KrasovskiiQ: return "krasovskii_q";
    case Variant::KrasovskiiR: return "krasovskii_r";
    }
    return "?";
}

inline std::optional<Variant> parse_variant(std::string_view s) {
    if (s == "razumikhin") return Variant::Razumikhin;
    if (s == "krasovskii_q") return Variant::KrasovskiiQ;
    if (s == "krasovskii_r") return Variant::KrasovskiiR;
    return std::nullopt;
}

struct RazumikhinParams {
    Matrix P;
    double q = 0.0;
};

struct KrasovskiiQParams {
    Matrix P;
    Matrix Q;
};

struct KrasovskiiRParams {
    Matrix P;
    Matrix R;
    Matrix Psi2;
    Matrix Psi3;
};

using CertificateParams = std::variant<RazumikhinParams, KrasovskiiQParams, KrasovskiiRParams>;

inline Variant variant_of(const CertificateParams& params) {
    return static_cast<Variant>(params.index());
}

inline const Matrix& lyapunov_matrix(const CertificateParams& params) {
    return std::visit([](const auto& p) -> const Matrix& { return p.P; }, params);
}

/// Multiplies every decision variable by alpha > 0. All three LMIs are
/// homogeneous of degree one in their decision variables.
inline CertificateParams scaled(const CertificateParams& params, double alpha) {
    return std::visit(
        [alpha](auto p) -> CertificateParams {
            using T = std::decay_t<decltype(p)>;
            p.P *= alpha;
            if constexpr (std::is_same_v<T, KrasovskiiQParams>) {
                p.Q *= alpha;
            } else if constexpr (std::is_same_v<T, KrasovskiiRParams>) {
                p.R *= alpha;
                p.Psi2 *= alpha;
                p.Psi3 *= alpha;
            }
            return p;
        },
        params);
}

/// Scales the parameters so that the largest eigenvalue of P is 1.
inline CertificateParams normalized(const CertificateParams& params) {
    return scaled(params, 1.0 / linalg::max_eigenvalue(lyapunov_matrix(params)));
}

namespace detail {

inline void check_square(const Matrix& M, int n, const char* name) {
    require_dims(M.rows() == n && M.cols() == n, std::string(name) + " must be n x n");
}

inline void check_params_dims(const CertificateParams& params, int n) {
    std::visit(
        [n](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            check_square(p.P, n, "P");
            if constexpr (std::is_same_v<T, KrasovskiiQParams>) {
                check_square(p.Q, n, "Q");
            } else if constexpr (std::is_same_v<T, KrasovskiiRParams>) {
                check_square(p.R, n, "R");
                check_square(p.Psi2, n, "Psi2");
                check_square(p.Psi3, n, "Psi3");
            }
        },
        params);
}

}  // namespace detail

/// Full symmetric block matrix of the LMI that certifies `params`.
inline Matrix lmi_matrix(const CertificateParams& params, const DelaySystem& sys, const PrimaryGain& gain) {
    check_gain(sys, gain);
    const int n = sys.n();
    detail::check_params_dims(params, n);
    const Matrix& A = sys.A();
    const Matrix BK = sys.B() * gain.K;

    return std::visit(
        [&](const auto& p) -> Matrix {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, RazumikhinParams>) {
                Matrix M(2 * n, 2 * n);
                M.topLeftCorner(n, n) = A.transpose() * p.P + p.P * A + p.q * p.P;
                M.topRightCorner(n, n) = p.P * BK;
                M.bottomLeftCorner(n, n) = (p.P * BK).transpose();
                M.bottomRightCorner(n, n) = -p.q * p.P;
                return M;
            } else if constexpr (std::is_same_v<T, KrasovskiiQParams>) {
                Matrix M(2 * n, 2 * n);
                M.topLeftCorner(n, n) = A.transpose() * p.P + p.P * A + p.Q;
                M.topRightCorner(n, n) = p.P * BK;
                M.bottomLeftCorner(n, n) = (p.P * BK).transpose();
                M.bottomRightCorner(n, n) = -p.Q;
                return M;
            } else {
                const double tau = sys.tau();
                const Matrix Acl = A + BK;
                Matrix M(3 * n, 3 * n);
                M.block(0, 0, n, n) = Acl.transpose() * p.Psi2 + p.Psi2.transpose() * Acl;
                M.block(0, n, n, n) = p.P - p.Psi2.transpose() + Acl.transpose() * p.Psi3;
                M.block(0, 2 * n, n, n) = -tau * p.Psi2.transpose() * BK;
                M.block(n, n, n, n) = -p.Psi3 - p.Psi3.transpose() + tau * p.R;
                M.block(n, 2 * n, n, n) = -tau * p.Psi3.transpose() * BK;
                M.block(2 * n, 2 * n, n, n) = -tau * p.R;
                M.block(n, 0, n, n) = M.block(0, n, n, n).transpose();
                M.block(2 * n, 0, n, n) = M.block(0, 2 * n, n, n).transpose();
                M.block(2 * n, n, n, n) = M.block(n, 2 * n, n, n).transpose();
                return M;
            }
        },
        params);
}

struct LmiCheck {
    bool feasible = false;
    /// Largest eigenvalue of the LMI matrix (NaN when a precondition failed).
    double max_eigenvalue = std::numeric_limits<double>::quiet_NaN();
    /// Set when a positivity precondition on the parameters fails.
    std::optional<std::string> diagnostic;

    explicit operator bool() const { return feasible; }
};

/// Positivity preconditions on the decision variables (P, q, Q, R).
inline std::optional<std::string> positivity_violation(const CertificateParams& params) {
    return std::visit(
        [](const auto& p) -> std::optional<std::string> {
            using T = std::decay_t<decltype(p)>;
            if (!linalg::is_positive_definite(p.P))
                return "P is not positive definite";
            if constexpr (std::is_same_v<T, RazumikhinParams>) {
                if (!(p.q > 0.0))
                    return "q must be positive";
            } else if constexpr (std::is_same_v<T, KrasovskiiQParams>) {
                if (!linalg::is_positive_definite(p.Q))
                    return "Q is not positive definite";
            } else {
                if (!linalg::is_positive_definite(p.R))
                    return "R is not positive definite";
            }
            return std::nullopt;
        },
        params);
}

/// True iff the LMI matrix has every eigenvalue below -margin.
inline LmiCheck lmi_feasible(const CertificateParams& params, const DelaySystem& sys, const PrimaryGain& gain,
                             double margin = 0.0) {
    LmiCheck out;
    if (auto why = positivity_violation(params)) {
        out.diagnostic = std::move(why);
        return out;
    }
    out.max_eigenvalue = linalg::max_eigenvalue(lmi_matrix(params, sys, gain));
    out.feasible = out.max_eigenvalue < -margin;
    return out;
}

inline constexpr double kDefaultLmiMargin = 1e-6;

/// A set of decision variables whose LMI has been verified for a given
/// (system, gain) pair.
class Certificate {
public:
    static Certificate issue(CertificateParams params, const DelaySystem& sys, const PrimaryGain& gain,
                             double margin = kDefaultLmiMargin) {
        const auto check = lmi_feasible(params, sys, gain, margin);
        if (!check.feasible) {
            throw Infeasible(std::string("certificate rejected: ") +
                             (check.diagnostic ? *check.diagnostic
                                               : "LMI max eigenvalue " + std::to_string(check.max_eigenvalue) +
                                                     " not below -" + std::to_string(margin)));
        }
        return Certificate(std::move(params), -check.max_eigenvalue);
    }

    const CertificateParams& params() const { return params_; }
    Variant variant() const { return variant_of(params_); }
    const Matrix& P() const { return lyapunov_matrix(params_); }
    /// -max eigenvalue of the LMI matrix at issue time.
    double margin() const { return margin_; }

private:
    Certificate(CertificateParams params, double margin) : params_(std::move(params)), margin_(margin) {}

    CertificateParams params_;
    double margin_;
};

/// Time span a segment must cover, ending at the evaluation instant.
inline double required_window(Variant v, double tau) {
    return v == Variant::KrasovskiiR ? 2.0 * tau : tau;
}

namespace detail {

/// Nodes of `seg` inside [t_from, t_end], with the (possibly off-grid) start
/// point prepended.
struct WindowSamples {
    std::vector<double> times;
    std::vector<Vector> values;
};

inline WindowSamples window_samples(const HistorySegment& seg, double t_from) {
    WindowSamples w;
    w.times.push_back(t_from);
    w.values.push_back(seg.at(t_from));
    const double s = snap_to_grid((t_from - seg.t_begin()) / seg.dt());
    for (int i = static_cast<int>(std::floor(s)) + 1; i < seg.size(); ++i) {
        w.times.push_back(seg.time(i));
        w.values.push_back(seg.sample(i));
    }
    return w;
}

inline void require_span(const HistorySegment& seg, double window) {
    if (!seg.covers(seg.t_end() - window))
        throw InsufficientSpan("segment spans " + std::to_string(seg.span()) + " s, functional needs " +
                               std::to_string(window) + " s");
}

template <typename F>
double trapezoid(const std::vector<double>& t, F&& f) {
    double acc = 0.0;
    double prev = f(0);
    for (std::size_t i = 1; i < t.size(); ++i) {
        const double cur = f(i);
        acc += 0.5 * (t[i] - t[i - 1]) * (prev + cur);
        prev = cur;
    }
    return acc;
}

}  // namespace detail

/// Evaluates the functional matching `params` on an error segment ending at
/// the evaluation instant. For KrasovskiiR the error rate is rebuilt from the
/// closed-loop model, e'(s) = A e(s) + B K e(s - tau), so the segment must
/// span 2 tau.
inline double eval_functional(const CertificateParams& params, const DelaySystem& sys, const PrimaryGain& gain,
                              const HistorySegment& seg) {
    const double tau = sys.tau();
    const Variant var = variant_of(params);
    detail::require_span(seg, required_window(var, tau));
    detail::require_dims(seg.dim() == sys.n(), "segment dimension must equal n");
    detail::check_params_dims(params, sys.n());

    const double t = seg.t_end();
    const auto w = detail::window_samples(seg, t - tau);
    const Vector& e_now = w.values.back();

    return std::visit(
        [&](const auto& p) -> double {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, RazumikhinParams>) {
                double best = -std::numeric_limits<double>::infinity();
                for (const auto& e : w.values)
                    best = std::max(best, e.dot(p.P * e));
                return best;
            } else if constexpr (std::is_same_v<T, KrasovskiiQParams>) {
                return e_now.dot(p.P * e_now) +
                       detail::trapezoid(w.times, [&](std::size_t i) { return w.values[i].dot(p.Q * w.values[i]); });
            } else {
                const Matrix BK = sys.B() * gain.K;
                std::vector<Vector> rates(w.times.size());
                for (std::size_t i = 0; i < w.times.size(); ++i)
                    rates[i] = sys.A() * w.values[i] + BK * seg.at(w.times[i] - tau);
                return e_now.dot(p.P * e_now) + detail::trapezoid(w.times, [&](std::size_t i) {
                           return (w.times[i] - t + tau) * rates[i].dot(p.R * rates[i]);
                       });
            }
        },
        params);
}

inline double eval_functional(const Certificate& cert, const DelaySystem& sys, const PrimaryGain& gain,
                              const HistorySegment& seg) {
    return eval_functional(cert.params(), sys, gain, seg);
}

/// KrasovskiiR functional with the error rate supplied explicitly. `rate`
/// must span tau and end at the same instant as `error`. This is the form to
/// use when the trajectory inside the window was not driven by the frozen
/// closed loop (e.g. inputs still coming from an earlier reference).
inline double eval_functional_with_rate(const KrasovskiiRParams& p, double tau, const HistorySegment& error,
                                        const HistorySegment& rate) {
    detail::require_span(rate, tau);
    if (std::abs(rate.t_end() - error.t_end()) > 1e-9 * std::max(1.0, std::abs(error.t_end())))
        throw InvalidArgument("error and rate segments must end at the same instant");
    const double t = rate.t_end();
    const auto w = detail::window_samples(rate, t - tau);
    const Vector e_now = error.at(t);
    return e_now.dot(p.P * e_now) + detail::trapezoid(w.times, [&](std::size_t i) {
               return (w.times[i] - t + tau) * w.values[i].dot(p.R * w.values[i]);
           });
}

struct GammaBreakdown {
    double value = std::numeric_limits<double>::infinity();
    /// Per-row Gamma_i; NaN for rows whose closed-loop normal vanishes.
    Vector per_row;
    std::vector<int> degenerate_rows;
};

/// Gamma_i(v) = residual_i(v)^2 / (h_cl,i' P^-1 h_cl,i) with h_cl,i = h_x,i + K' h_u,i;
/// Gamma(v) is the minimum over non-degenerate rows.
inline GammaBreakdown gamma_breakdown(const ConstraintSet& cs, const Matrix& P, const PrimaryGain& gain,
                                      const Equilibrium& eq) {
    detail::require_dims(P.rows() == cs.n() && P.cols() == cs.n(), "gamma: P must be n x n");
    const Vector res = residuals(cs, eq.x_bar, eq.u_bar);
    for (int i = 0; i < cs.size(); ++i) {
        if (!(res(i) > 0.0))
            throw ReferenceNotStrictlyAdmissible("steady state violates or touches constraint " + std::to_string(i) +
                                                 " (residual " + std::to_string(res(i)) + ")");
    }
    Eigen::LLT<Matrix> llt(P);
    if (llt.info() != Eigen::Success)
        throw InvalidArgument("gamma: P is not positive definite");

    GammaBreakdown out;
    out.per_row.resize(cs.size());
    for (int i = 0; i < cs.size(); ++i) {
        const Vector h = cs.closed_loop_normal(i, gain.K);
        const double scale = 1.0 + cs.Hx().row(i).norm() + cs.Hu().row(i).norm();
        if (h.norm() <= 1e-14 * scale) {
            out.per_row(i) = std::numeric_limits<double>::quiet_NaN();
            out.degenerate_rows.push_back(i);
            continue;
        }
        const double denom = h.dot(llt.solve(h));
        out.per_row(i) = res(i) * res(i) / denom;
        out.value = std::min(out.value, out.per_row(i));
    }
    if (static_cast<int>(out.degenerate_rows.size()) == cs.size())
        throw DegenerateConstraint("every constraint row has a vanishing closed-loop normal");
    return out;
}

inline double gamma_threshold(const ConstraintSet& cs, const Matrix& P, const PrimaryGain& gain,
                              const Equilibrium& eq) {
    return gamma_breakdown(cs, P, gain, eq).value;
}

inline double gamma_threshold(const ConstraintSet& cs, const Certificate& cert, const PrimaryGain& gain,
                              const Equilibrium& eq) {
    return gamma_threshold(cs, cert.P(), gain, eq);
}

}  // namespace tdrg
