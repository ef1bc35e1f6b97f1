#pragma once

/// Explicit reference governor for the delayed loop: the auxiliary reference
/// evolves as v' = Delta * rho(v, r), where Delta is a dynamic safety margin
/// computed from a frozen-reference prediction plus a terminal Lyapunov
/// level-set test, and rho is an attraction/repulsion navigation field.

#include "tdrg/errors.hpp"
#include "tdrg/model.hpp"
#include "tdrg/sim.hpp"
#include "tdrg/stability.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <variant>

namespace tdrg {

/// Delta_inf omitted; the prediction horizon alone bounds the trajectory.
struct InfiniteHorizon {};

/// Delta_inf = Gamma(v) - V(e_hat_tau(T)) with the certificate's functional.
struct Terminal {
    Certificate certificate;
};

struct ErgConfig {
    double T = 0.0;
    double kappa1 = 1.0;
    double kappa2 = 1.0;
    double eta = 1.0;
    double zeta = 1.0;
    double delta = 0.1;
    double update_period = 0.0;
    std::variant<InfiniteHorizon, Terminal> variant = InfiniteHorizon{};

    bool terminal() const { return std::holds_alternative<Terminal>(variant); }
    const Certificate& certificate() const { return std::get<Terminal>(variant).certificate; }

    /// Throws InvalidArgument describing the first violated requirement.
    void validate(double tau, double dt) const {
        if (!(kappa1 > 0.0) || (terminal() && !(kappa2 > 0.0)))
            throw InvalidArgument("erg: kappa1 and kappa2 must be positive");
        if (!(eta > 0.0))
            throw InvalidArgument("erg: eta must be positive");
        if (!(delta > 0.0) || !(zeta > delta))
            throw InvalidArgument("erg: need zeta > delta > 0");
        if (T < tau - 1e-12)
            throw InvalidArgument("erg: prediction horizon T must be at least the delay tau");
        const double ratio = update_period / dt;
        if (!(update_period > 0.0) || std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio) ||
            std::round(ratio) < 1.0)
            throw InvalidArgument("erg: update_period must be a positive multiple of dt");
    }

    long update_stride(double dt) const { return std::lround(update_period / dt); }
};

struct DsmBreakdown {
    double delta_T = 0.0;
    std::optional<double> delta_inf;
    double delta = 0.0;
    std::optional<double> gamma;
    std::optional<double> v_functional_at_T;
};

/// Terminal functional value on a prediction. KrasovskiiR uses the predicted
/// error rate: inside [T - tau, T] the delayed input may still carry the
/// pre-freeze reference, where e' = A e + B K e(. - tau) does not hold.
inline double terminal_functional(const Certificate& cert, const ClosedLoop& loop, const PredictionResult& pr) {
    if (const auto* p = std::get_if<KrasovskiiRParams>(&cert.params()))
        return eval_functional_with_rate(*p, loop.tau(), pr.terminal_error, pr.terminal_rate);
    return eval_functional(cert.params(), loop.system(), loop.gain(), pr.terminal_error);
}

/// Min over the prediction grid and all rows of the constraint residuals.
inline double horizon_margin(const ConstraintSet& cs, const PredictionResult& pr) {
    const Matrix res = (cs.Hx() * pr.x + cs.Hu() * pr.u).colwise() + cs.g();
    return res.minCoeff();
}

inline DsmBreakdown dsm(const ErgConfig& cfg, const ClosedLoop& loop, const ConstraintSet& cs,
                        const SimState& state) {
    const PredictionResult pr = predict(loop, state, cfg.T);
    DsmBreakdown out;
    out.delta_T = horizon_margin(cs, pr);
    out.delta = cfg.kappa1 * out.delta_T;
    if (cfg.terminal()) {
        const Certificate& cert = cfg.certificate();
        out.gamma = gamma_threshold(cs, cert, loop.gain(), pr.eq);
        out.v_functional_at_T = terminal_functional(cert, loop, pr);
        out.delta_inf = *out.gamma - *out.v_functional_at_T;
        out.delta = std::min(out.delta, cfg.kappa2 * *out.delta_inf);
    }
    return out;
}

/// Gradient of the steady-state residual of row i with respect to v.
inline Vector steady_residual_gradient(const ConstraintSet& cs, const SteadyStateMap& map, int i) {
    return map.Gx().transpose() * cs.Hx().row(i).transpose() + map.Gu().transpose() * cs.Hu().row(i).transpose();
}

inline Vector steady_residuals(const ConstraintSet& cs, const SteadyStateMap& map, const Vector& v) {
    const Equilibrium eq = map(v);
    return residuals(cs, eq.x_bar, eq.u_bar);
}

/// rho(v, r) = (r - v) / max(|v - r|, eta)
///           + sum_i max((zeta - res_i(v)) / (zeta - delta), 0) * n_i,
/// with n_i the unit direction in reference space along which the steady-state
/// residual of row i grows.
inline Vector attraction_field(const ErgConfig& cfg, const ConstraintSet& cs, const SteadyStateMap& map,
                               const Vector& v, const Vector& r) {
    detail::require_dims(v.size() == r.size(), "attraction_field: v and r differ in size");
    Vector rho = (r - v) / std::max((v - r).norm(), cfg.eta);
    const Vector res = steady_residuals(cs, map, v);
    for (int i = 0; i < cs.size(); ++i) {
        const double weight = std::max((cfg.zeta - res(i)) / (cfg.zeta - cfg.delta), 0.0);
        if (weight == 0.0)
            continue;
        const Vector grad = steady_residual_gradient(cs, map, i);
        const double norm = grad.norm();
        if (norm > 0.0)
            rho += weight * grad / norm;
    }
    return rho;
}

struct GovernorUpdate {
    Vector v;
    DsmBreakdown dsm;
    /// Fraction of the Euler step kept by the static-margin projection.
    double step_fraction = 1.0;
};

/// One Euler step of v' = max(Delta, 0) rho(v, r), followed by a bisection
/// pull-back along the step so that every steady-state residual stays at or
/// above min(delta, current residual).
inline GovernorUpdate governor_step(const ErgConfig& cfg, const ClosedLoop& loop, const ConstraintSet& cs,
                                    const SimState& state, const Vector& v, const Vector& r) {
    GovernorUpdate out;
    out.dsm = dsm(cfg, loop, cs, state);
    const auto& map = loop.steady_state();
    const double margin = std::max(out.dsm.delta, 0.0);
    const Vector step = cfg.update_period * margin * attraction_field(cfg, cs, map, v, r);
    out.v = v;
    if (margin == 0.0 || step.isZero(0.0)) {
        out.step_fraction = 0.0;
        return out;
    }

    const double floor = std::min(cfg.delta, steady_residuals(cs, map, v).minCoeff());
    auto admissible = [&](double s) {
        try {
            return steady_residuals(cs, map, v + s * step).minCoeff() >= floor;
        } catch (const NoEquilibrium&) {
            return false;
        }
    };
    double s = 1.0;
    if (!admissible(1.0)) {
        double lo = 0.0, hi = 1.0;
        for (int it = 0; it < 40; ++it) {
            const double mid = 0.5 * (lo + hi);
            (admissible(mid) ? lo : hi) = mid;
        }
        s = lo;
    }
    out.step_fraction = s;
    out.v = v + s * step;
    return out;
}

}  // namespace tdrg
