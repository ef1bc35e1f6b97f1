#pragma once

/// Declarative experiment description and the governed closed-loop run that
/// turns it into a time-series trace.

#include "tdrg/erg.hpp"
#include "tdrg/errors.hpp"
#include "tdrg/model.hpp"
#include "tdrg/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tdrg {

struct ReferenceStep {
    double t = 0.0;
    Vector value;
};

/// Piecewise-constant reference r(t): the value of the last step with
/// step.t <= t (the first step's value before that).
class ReferenceSchedule {
public:
    ReferenceSchedule() = default;
    explicit ReferenceSchedule(std::vector<ReferenceStep> steps) : steps_(std::move(steps)) {
        if (steps_.empty())
            throw InvalidArgument("reference schedule is empty");
        if (!std::is_sorted(steps_.begin(), steps_.end(), [](const auto& a, const auto& b) { return a.t < b.t; }))
            throw InvalidArgument("reference schedule times must be non-decreasing");
    }

    const Vector& at(double t) const {
        const Vector* cur = &steps_.front().value;
        for (const auto& s : steps_) {
            if (s.t <= t + 1e-12)
                cur = &s.value;
            else
                break;
        }
        return *cur;
    }

    const std::vector<ReferenceStep>& steps() const { return steps_; }

private:
    std::vector<ReferenceStep> steps_;
};

struct HistorySample {
    double t = 0.0;
    Vector x;
    Vector v;
};

struct RunSpec {
    double dt = 1e-3;
    double duration = 60.0;
    Vector x0;
    Vector v0;
    ReferenceSchedule reference;
    /// Tabulated pre-start history (t <= 0, increasing); when present it
    /// replaces the constant (x0, v0) history and is linearly interpolated.
    std::vector<HistorySample> history;
};

struct OutputSpec {
    std::string path;
    int decimation = 1;
};

struct Scenario {
    DelaySystem system;
    ConstraintSet constraints;
    PrimaryGain gain;
    /// Absent means no governor: v follows r directly.
    std::optional<ErgConfig> erg;
    RunSpec run;
    OutputSpec output;
};

/// Uniform time series. Columns: t, x_1..x_n, u_1..u_m, v_1..v_p, r_1..r_p,
/// Delta_T, Delta_inf, V, residual_1..residual_nc. The v columns hold the
/// reference carried by each node, i.e. the value decided one step earlier
/// and applied over the step that produced the node.
class Trace {
public:
    Trace(int n, int m, int p, int nc) : n_(n), m_(m), p_(p), nc_(nc) {
        columns_.push_back("t");
        for (int i = 1; i <= n; ++i) columns_.push_back("x_" + std::to_string(i));
        for (int i = 1; i <= m; ++i) columns_.push_back("u_" + std::to_string(i));
        for (int i = 1; i <= p; ++i) columns_.push_back("v_" + std::to_string(i));
        for (int i = 1; i <= p; ++i) columns_.push_back("r_" + std::to_string(i));
        columns_.push_back("Delta_T");
        columns_.push_back("Delta_inf");
        columns_.push_back("V");
        for (int i = 1; i <= nc; ++i) columns_.push_back("residual_" + std::to_string(i));
    }

    int width() const { return static_cast<int>(columns_.size()); }
    std::size_t rows() const { return width() == 0 ? 0 : data_.size() / static_cast<std::size_t>(width()); }
    const std::vector<std::string>& columns() const { return columns_; }
    const std::vector<double>& data() const { return data_; }

    double at(std::size_t row, int col) const { return data_[row * static_cast<std::size_t>(width()) + col]; }

    int n() const { return n_; }
    int m() const { return m_; }
    int p() const { return p_; }
    int nc() const { return nc_; }

    int col_t() const { return 0; }
    int col_x(int i) const { return 1 + i; }
    int col_u(int i) const { return 1 + n_ + i; }
    int col_v(int i) const { return 1 + n_ + m_ + i; }
    int col_r(int i) const { return 1 + n_ + m_ + p_ + i; }
    int col_delta_T() const { return 1 + n_ + m_ + 2 * p_; }
    int col_delta_inf() const { return col_delta_T() + 1; }
    int col_V() const { return col_delta_T() + 2; }
    int col_residual(int i) const { return col_delta_T() + 3 + i; }

    void append(const std::vector<double>& row) {
        detail::require_dims(static_cast<int>(row.size()) == width(), "trace row has wrong width");
        data_.insert(data_.end(), row.begin(), row.end());
    }

    /// Combined margin Delta at each row (NaN when no governor ran). Not a CSV
    /// column: it is derivable from Delta_T, Delta_inf and the gains.
    std::vector<double> delta;
    /// Output y = C x + D u(t - tau) at each row.
    std::vector<Vector> output;

private:
    int n_, m_, p_, nc_;
    std::vector<std::string> columns_;
    std::vector<double> data_;
};

namespace detail {

inline SimState initial_state(const ClosedLoop& loop, const RunSpec& run, double horizon) {
    const double tau = loop.tau();
    const double span = 2.0 * tau;
    if (run.history.empty())
        return SimState::from_history(
            loop, [&](double) { return std::make_pair(run.x0, run.v0); }, span, span + horizon);

    const auto& h = run.history;
    if (h.front().t > -span + 1e-9 || std::abs(h.back().t) > 1e-9)
        throw InvalidArgument("tabulated history must cover [-2 tau, 0]");
    auto sample = [&](double t) {
        auto it = std::lower_bound(h.begin(), h.end(), t, [](const HistorySample& s, double tt) { return s.t < tt; });
        if (it == h.begin())
            return std::make_pair(it->x, it->v);
        if (it == h.end())
            return std::make_pair(h.back().x, h.back().v);
        const auto& b = *it;
        const auto& a = *(it - 1);
        const double w = (t - a.t) / (b.t - a.t);
        return std::make_pair(Vector((1 - w) * a.x + w * b.x), Vector((1 - w) * a.v + w * b.v));
    };
    return SimState::from_history(loop, sample, span, span + horizon);
}

}  // namespace detail

/// Runs the scenario: closed-loop RK4 steps every dt, governor updates every
/// update_period. Throws InitialMarginViolated when Delta < 0 at t = 0.
inline Trace run_scenario(const Scenario& sc) {
    const auto& sys = sc.system;
    const auto& cs = sc.constraints;
    const double dt = sc.run.dt;
    ClosedLoop loop(sys, sc.gain, dt);
    const double horizon = sc.erg ? sc.erg->T : 0.0;
    if (sc.erg)
        sc.erg->validate(sys.tau(), dt);

    SimState state = detail::initial_state(loop, sc.run, horizon);
    const long steps = std::lround(sc.run.duration / dt);
    const long stride = sc.erg ? sc.erg->update_stride(dt) : 1;
    const double nan = std::numeric_limits<double>::quiet_NaN();

    Trace trace(sys.n(), sys.m(), sys.p(), cs.size());
    trace.delta.reserve(static_cast<std::size_t>(steps + 1));
    Vector v = state.v();
    DsmBreakdown last;
    bool have_dsm = false;

    const long delay_nodes = std::lround(std::floor(loop.delay_steps()));
    const double delay_frac = loop.delay_steps() - static_cast<double>(delay_nodes);

    std::vector<double> row(static_cast<std::size_t>(trace.width()));
    for (long k = 0; k <= steps; ++k) {
        const double t = state.t();
        const Vector& r = sc.run.reference.at(t);
        if (sc.erg) {
            if (k % stride == 0) {
                GovernorUpdate upd = governor_step(*sc.erg, loop, cs, state, v, r);
                if (k == 0 && upd.dsm.delta < 0.0)
                    throw InitialMarginViolated("initial dynamic safety margin is negative (" +
                                                std::to_string(upd.dsm.delta) + ")");
                last = upd.dsm;
                have_dsm = true;
                v = upd.v;
            }
        } else {
            v = r;
        }

        const Vector x = state.x();
        const Vector u = state.u();
        const Vector vn = state.v();
        const Vector res = residuals(cs, x, u);
        std::size_t c = 0;
        row[c++] = t;
        for (int i = 0; i < sys.n(); ++i) row[c++] = x(i);
        for (int i = 0; i < sys.m(); ++i) row[c++] = u(i);
        for (int i = 0; i < sys.p(); ++i) row[c++] = vn(i);
        for (int i = 0; i < sys.p(); ++i) row[c++] = r(i);
        row[c++] = have_dsm ? last.delta_T : nan;
        row[c++] = have_dsm && last.delta_inf ? *last.delta_inf : nan;
        row[c++] = have_dsm && last.v_functional_at_T ? *last.v_functional_at_T : nan;
        for (int i = 0; i < cs.size(); ++i) row[c++] = res(i);
        trace.append(row);
        trace.delta.push_back(have_dsm ? last.delta : nan);

        const long kd = state.step_index() - delay_nodes;
        Vector u_delayed = delay_frac == 0.0
                               ? Vector(state.u_hist().node(kd))
                               : Vector((1.0 - delay_frac) * state.u_hist().node(kd) +
                                        delay_frac * state.u_hist().node(kd - 1));
        trace.output.push_back(sys.C() * x + sys.D() * u_delayed);

        if (k == steps)
            break;
        step_closed_loop(loop, state, v);
    }
    return trace;
}

struct TraceSummary {
    Vector max_x;
    Vector final_x;
    /// First time after which |y_j - r_j| <= 0.02 |r_j| for all j until the
    /// end of the trace; NaN if never settled.
    double settling_time = std::numeric_limits<double>::quiet_NaN();
    double min_residual = std::numeric_limits<double>::infinity();
    double min_delta = std::numeric_limits<double>::quiet_NaN();
    bool violated = false;
};

inline constexpr double kViolationTolerance = 1e-6;

inline TraceSummary summarize(const Trace& tr) {
    TraceSummary s;
    const std::size_t rows = tr.rows();
    s.max_x = Vector::Constant(tr.n(), -std::numeric_limits<double>::infinity());
    s.final_x = Vector::Zero(tr.n());
    if (rows == 0)
        return s;
    for (std::size_t k = 0; k < rows; ++k) {
        for (int i = 0; i < tr.n(); ++i)
            s.max_x(i) = std::max(s.max_x(i), tr.at(k, tr.col_x(i)));
        for (int i = 0; i < tr.nc(); ++i)
            s.min_residual = std::min(s.min_residual, tr.at(k, tr.col_residual(i)));
        if (k < tr.delta.size() && !std::isnan(tr.delta[k]))
            s.min_delta = std::isnan(s.min_delta) ? tr.delta[k] : std::min(s.min_delta, tr.delta[k]);
    }
    for (int i = 0; i < tr.n(); ++i)
        s.final_x(i) = tr.at(rows - 1, tr.col_x(i));
    s.violated = s.min_residual < -kViolationTolerance;

    if (tr.output.size() == rows) {
        auto settled = [&](std::size_t k) {
            for (int j = 0; j < tr.p(); ++j) {
                const double r = tr.at(k, tr.col_r(j));
                if (std::abs(tr.output[k](j) - r) > 0.02 * std::abs(r))
                    return false;
            }
            return true;
        };
        std::size_t k = rows;
        while (k > 0 && settled(k - 1))
            --k;
        if (k < rows)
            s.settling_time = tr.at(k, tr.col_t());
    }
    return s;
}

}  // namespace tdrg
