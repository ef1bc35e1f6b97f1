#pragma once

/// Desk-scale certificate search. Decision variables are parameterized so
/// that P, Q, R and q are positive by construction (Cholesky factors with
/// log-diagonals, log q); the slack matrices Psi2, Psi3 are free. A seeded
/// multi-start simplex search then pushes the largest LMI eigenvalue down.
/// This is a feasibility heuristic: failing to find a certificate does not
/// mean the loop is unstable.

#include "tdrg/errors.hpp"
#include "tdrg/linalg.hpp"
#include "tdrg/model.hpp"
#include "tdrg/nelder_mead.hpp"
#include "tdrg/stability.hpp"

#include <cstdint>
#include <optional>
#include <random>

namespace tdrg {

struct SearchBudget {
    int restarts = 200;
    int iterations = 500;
};

struct SynthesisOptions {
    std::uint64_t seed = 0;
    SearchBudget budget;
    double margin = kDefaultLmiMargin;
};

struct SynthesisResult {
    std::optional<Certificate> certificate;
    /// Best -max eigenvalue seen (normalized parameters).
    double best_margin = -std::numeric_limits<double>::infinity();
    int restarts_used = 0;

    explicit operator bool() const { return certificate.has_value(); }
};

inline constexpr int kMaxSynthesisDimension = 4;

namespace detail {

/// Flat parameter vector <-> decision variables of one LMI variant.
class Parameterization {
public:
    Parameterization(Variant variant, int n) : variant_(variant), n_(n) {}

    int size() const {
        const int tri = linalg::triangular_size(n_);
        switch (variant_) {
        case Variant::Razumikhin: return tri + 1;
        case Variant::KrasovskiiQ: return 2 * tri;
        case Variant::KrasovskiiR: return 2 * tri + 2 * n_ * n_;
        }
        return 0;
    }

    CertificateParams decode(const Vector& z) const {
        const int tri = linalg::triangular_size(n_);
        const Matrix P = linalg::spd_from_cholesky(z.head(tri), n_);
        switch (variant_) {
        case Variant::Razumikhin: return RazumikhinParams{P, std::exp(z(tri))};
        case Variant::KrasovskiiQ: return KrasovskiiQParams{P, linalg::spd_from_cholesky(z.segment(tri, tri), n_)};
        case Variant::KrasovskiiR: {
            const int nn = n_ * n_;
            return KrasovskiiRParams{P, linalg::spd_from_cholesky(z.segment(tri, tri), n_),
                                     Eigen::Map<const Matrix>(z.data() + 2 * tri, n_, n_),
                                     Eigen::Map<const Matrix>(z.data() + 2 * tri + nn, n_, n_)};
        }
        }
        throw InvalidArgument("unknown variant");
    }

    Vector encode(const CertificateParams& params) const {
        const int tri = linalg::triangular_size(n_);
        Vector z(size());
        z.head(tri) = linalg::cholesky_to_packed(lyapunov_matrix(params));
        std::visit(
            [&](const auto& p) {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, RazumikhinParams>) {
                    z(tri) = std::log(p.q);
                } else if constexpr (std::is_same_v<T, KrasovskiiQParams>) {
                    z.segment(tri, tri) = linalg::cholesky_to_packed(p.Q);
                } else {
                    const int nn = n_ * n_;
                    z.segment(tri, tri) = linalg::cholesky_to_packed(p.R);
                    z.segment(2 * tri, nn) = Eigen::Map<const Vector>(p.Psi2.data(), nn);
                    z.segment(2 * tri + nn, nn) = Eigen::Map<const Vector>(p.Psi3.data(), nn);
                }
            },
            params);
        return z;
    }

private:
    Variant variant_;
    int n_;
};

inline std::mt19937_64 restart_rng(std::uint64_t seed, int restart) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(restart)};
    return std::mt19937_64(seq);
}

inline Vector random_start(int size, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector z(size);
    for (int i = 0; i < size; ++i)
        z(i) = normal(rng);
    return z;
}

inline void check_desk_scale(const DelaySystem& sys) {
    if (sys.n() > kMaxSynthesisDimension)
        throw InvalidArgument("certificate search is limited to n <= " + std::to_string(kMaxSynthesisDimension));
}

inline double finite_or_inf(double x) {
    return std::isfinite(x) ? x : std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Searches for decision variables of the chosen LMI. Restarts run in index
/// order; the first restart whose optimized point clears `margin` wins. The
/// returned parameters are scaled so that max eig(P) = 1.
inline SynthesisResult synthesize(Variant variant, const DelaySystem& sys, const PrimaryGain& gain,
                                  const SynthesisOptions& opts = {}) {
    detail::check_desk_scale(sys);
    check_gain(sys, gain);
    const detail::Parameterization param(variant, sys.n());

    auto objective = [&](const Vector& z) {
        const CertificateParams p = normalized(param.decode(z));
        return detail::finite_or_inf(linalg::max_eigenvalue(lmi_matrix(p, sys, gain)));
    };

    SynthesisResult out;
    SimplexOptions simplex;
    simplex.max_iterations = opts.budget.iterations;
    for (int r = 0; r < opts.budget.restarts; ++r) {
        auto rng = detail::restart_rng(opts.seed, r);
        const auto res = nelder_mead(objective, detail::random_start(param.size(), rng), simplex);
        out.restarts_used = r + 1;
        out.best_margin = std::max(out.best_margin, -res.f);
        if (-res.f >= opts.margin) {
            CertificateParams p = normalized(param.decode(res.x));
            if (lmi_feasible(p, sys, gain, opts.margin)) {
                out.certificate = Certificate::issue(std::move(p), sys, gain, opts.margin);
                return out;
            }
        }
    }
    return out;
}

/// Searches only the slack matrices Psi2, Psi3 of the delay-dependent LMI
/// for given P and R.
inline SynthesisResult synthesize_slacks(const DelaySystem& sys, const PrimaryGain& gain, const Matrix& P,
                                         const Matrix& R, const SynthesisOptions& opts = {}) {
    detail::check_desk_scale(sys);
    check_gain(sys, gain);
    const int n = sys.n();
    const int nn = n * n;
    auto decode = [&](const Vector& z) {
        return KrasovskiiRParams{P, R, Eigen::Map<const Matrix>(z.data(), n, n),
                                 Eigen::Map<const Matrix>(z.data() + nn, n, n)};
    };
    auto objective = [&](const Vector& z) {
        return detail::finite_or_inf(linalg::max_eigenvalue(lmi_matrix(decode(z), sys, gain)));
    };

    SynthesisResult out;
    SimplexOptions simplex;
    simplex.max_iterations = opts.budget.iterations;
    for (int r = 0; r < opts.budget.restarts; ++r) {
        auto rng = detail::restart_rng(opts.seed, r);
        const auto res = nelder_mead(objective, 2.0 * detail::random_start(2 * nn, rng), simplex);
        out.restarts_used = r + 1;
        out.best_margin = std::max(out.best_margin, -res.f);
        if (-res.f >= opts.margin) {
            out.certificate = Certificate::issue(decode(res.x), sys, gain, opts.margin);
            return out;
        }
    }
    return out;
}

/// Minimizes log det P subject to P >= h_cl,i h_cl,i' for every constraint row
/// and the chosen LMI, starting from synthesized certificates scaled into the
/// constraint-compatible region. Local search: not guaranteed globally
/// optimal. Throws Infeasible when no starting certificate is found.
inline SynthesisResult optimize_p_volume(const ConstraintSet& cs, const DelaySystem& sys, const PrimaryGain& gain,
                                         Variant variant, const SynthesisOptions& opts = {}) {
    detail::check_desk_scale(sys);
    check_gain(sys, gain);
    detail::require_dims(cs.n() == sys.n() && cs.m() == sys.m(), "constraint set does not match the system");
    const int n = sys.n();
    const detail::Parameterization param(variant, n);

    std::vector<Vector> normals;
    for (int i = 0; i < cs.size(); ++i) {
        Vector h = cs.closed_loop_normal(i, gain.K);
        if (h.norm() > 0.0)
            normals.push_back(std::move(h));
    }
    if (normals.empty())
        throw DegenerateConstraint("volume objective is unbounded: no constraint bounds the error");

    constexpr double kPenalty = 1e3;
    struct Best {
        double f = std::numeric_limits<double>::infinity();
        std::optional<CertificateParams> params;
    } best;

    auto violation = [&](const CertificateParams& p, double& lmi_max) {
        const Matrix& P = lyapunov_matrix(p);
        double v = 0.0;
        for (const auto& h : normals)
            v += std::max(0.0, -linalg::min_eigenvalue(P - h * h.transpose()));
        lmi_max = linalg::max_eigenvalue(lmi_matrix(p, sys, gain));
        v += std::max(0.0, lmi_max + opts.margin);
        return v;
    };
    auto objective = [&](const Vector& z) {
        const CertificateParams p = param.decode(z);
        const double logdet = std::log(lyapunov_matrix(p).determinant());
        double lmi_max = 0.0;
        const double viol = violation(p, lmi_max);
        if (!std::isfinite(logdet) || !std::isfinite(viol))
            return std::numeric_limits<double>::infinity();
        if (viol == 0.0 && logdet < best.f) {
            best.f = logdet;
            best.params = p;
        }
        return logdet + kPenalty * viol;
    };

    SynthesisOptions start_opts = opts;
    SimplexOptions simplex;
    simplex.max_iterations = opts.budget.iterations;
    SynthesisResult out;
    constexpr int kVolumeStarts = 8;
    for (int s = 0; s < kVolumeStarts; ++s) {
        start_opts.seed = opts.seed + static_cast<std::uint64_t>(s) * 7919u;
        const auto start = synthesize(variant, sys, gain, start_opts);
        out.restarts_used += start.restarts_used;
        if (!start)
            continue;
        const CertificateParams& p0 = start.certificate->params();
        Eigen::LLT<Matrix> llt(lyapunov_matrix(p0));
        double alpha = 0.0;
        for (const auto& h : normals)
            alpha = std::max(alpha, h.dot(llt.solve(h)));
        const CertificateParams seeded = scaled(p0, alpha * (1.0 + 1e-9));
        objective(param.encode(seeded));
        nelder_mead(objective, param.encode(seeded), simplex);
    }
    if (!best.params)
        throw Infeasible("volume optimization: no feasible starting certificate within budget");
    out.certificate = Certificate::issue(*best.params, sys, gain, opts.margin);
    out.best_margin = out.certificate->margin();
    return out;
}

}  // namespace tdrg
