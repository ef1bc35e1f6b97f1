#pragma once

/// Fixed-step simulation of the delayed closed loop
///
///     x'(t) = A x(t) + B u(t - tau),   u(s) = u_bar(v(s)) + K (x(s) - x_bar(v(s))),
///
/// by classical RK4 with the delayed input linearly interpolated between
/// buffered grid nodes (method of steps), plus forward prediction with the
/// reference frozen at its current value.

#include "tdrg/errors.hpp"
#include "tdrg/history.hpp"
#include "tdrg/linalg.hpp"
#include "tdrg/model.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <utility>

namespace tdrg {

namespace detail {

/// Interpolation stencil for a lookup at node k + offset + w (0 <= w < 1).
struct DelayTap {
    long offset = 0;
    double w = 0.0;
};

inline DelayTap make_tap(double position) {
    position = snap_to_grid(position);
    const double i = std::floor(position);
    return {static_cast<long>(i), position - i};
}

template <typename NodeFn, typename Out>
void apply_tap(const DelayTap& tap, long k, NodeFn&& node, Out& out) {
    if (tap.w == 0.0)
        out = node(k + tap.offset);
    else
        out = (1.0 - tap.w) * node(k + tap.offset) + tap.w * node(k + tap.offset + 1);
}

}  // namespace detail

/// Everything the integrator needs about one (system, gain, step) triple.
class ClosedLoop {
public:
    ClosedLoop(DelaySystem sys, PrimaryGain gain, double dt)
        : sys_(std::move(sys)), gain_(std::move(gain)), steady_(sys_), dt_(dt) {
        check_gain(sys_, gain_);
        if (!(dt_ > 0.0))
            throw InvalidArgument("integration step must be positive");
        if (dt_ > sys_.tau())
            throw InvalidArgument("integration step must not exceed the delay");
        Fv_ = steady_.Gu() - gain_.K * steady_.Gx();
        delay_steps_ = detail::snap_to_grid(sys_.tau() / dt_);
        taps_ = {detail::make_tap(-delay_steps_), detail::make_tap(0.5 - delay_steps_),
                 detail::make_tap(1.0 - delay_steps_)};
        build_rk4();
    }

    const DelaySystem& system() const { return sys_; }
    const PrimaryGain& gain() const { return gain_; }
    const SteadyStateMap& steady_state() const { return steady_; }
    double dt() const { return dt_; }
    double tau() const { return sys_.tau(); }
    /// tau / dt, snapped to an integer when within rounding noise.
    double delay_steps() const { return delay_steps_; }
    /// Deepest node offset a step at node k touches (k + oldest_tap_offset()).
    long oldest_tap_offset() const { return taps_[0].offset; }

    /// Commanded input at a grid node: u_bar(v) + K (x - x_bar(v)).
    template <typename X, typename V>
    Vector input(const Eigen::MatrixBase<X>& x, const Eigen::MatrixBase<V>& v) const {
        return Fv_ * v + gain_.K * x;
    }

    /// Scratch space for rk4(); one per thread of use.
    struct Workspace {
        Vector w0, wh, w1;
    };

    Workspace workspace() const {
        const int m = sys_.m();
        return {Vector(m), Vector(m), Vector(m)};
    }

    /// One RK4 step of x' = A x + B w(t). w0, wh, w1 are the delayed inputs at
    /// the start, middle and end of the step.
    template <typename U>
    void rk4(const Vector& x, long k, U&& u_node, Vector& x_next, Workspace& ws) const {
        detail::apply_tap(taps_[0], k, u_node, ws.w0);
        detail::apply_tap(taps_[1], k, u_node, ws.wh);
        detail::apply_tap(taps_[2], k, u_node, ws.w1);
        x_next.noalias() = Phi_ * x;
        x_next.noalias() += G0_ * ws.w0;
        x_next.noalias() += Gh_ * ws.wh;
        x_next.noalias() += G1_ * ws.w1;
    }

    /// Right derivative at node k.
    template <typename U>
    Vector rate(const Vector& x, long k, U&& u_node) const {
        Vector w(sys_.m());
        detail::apply_tap(taps_[0], k, u_node, w);
        return sys_.A() * x + sys_.B() * w;
    }

private:
    // The classical RK4 update is linear in (x, w0, wh, w1) for a linear
    // vector field, so it collapses to four fixed matrices.
    void build_rk4() {
        const int n = sys_.n(), m = sys_.m();
        const double h = dt_;
        const Matrix& A = sys_.A();
        const Matrix& B = sys_.B();
        const Matrix I = Matrix::Identity(n, n);
        struct Lin {
            Matrix x, w0, wh, w1;
        };
        const Matrix Zm = Matrix::Zero(n, m);
        Lin k1{A, B, Zm, Zm};
        Lin k2{A * (I + 0.5 * h * k1.x), 0.5 * h * A * k1.w0, 0.5 * h * A * k1.wh + B, 0.5 * h * A * k1.w1};
        Lin k3{A * (I + 0.5 * h * k2.x), 0.5 * h * A * k2.w0, 0.5 * h * A * k2.wh + B, 0.5 * h * A * k2.w1};
        Lin k4{A * (I + h * k3.x), h * A * k3.w0, h * A * k3.wh, h * A * k3.w1 + B};
        Phi_ = I + h / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x);
        G0_ = h / 6.0 * (k1.w0 + 2.0 * k2.w0 + 2.0 * k3.w0 + k4.w0);
        Gh_ = h / 6.0 * (k1.wh + 2.0 * k2.wh + 2.0 * k3.wh + k4.wh);
        G1_ = h / 6.0 * (k1.w1 + 2.0 * k2.w1 + 2.0 * k3.w1 + k4.w1);
    }

    DelaySystem sys_;
    PrimaryGain gain_;
    SteadyStateMap steady_;
    double dt_;
    Matrix Fv_;
    double delay_steps_ = 0.0;
    std::array<detail::DelayTap, 3> taps_{};
    Matrix Phi_, G0_, Gh_, G1_;
};

/// Simulator state: aligned x, v and commanded-u histories; the newest node
/// is the current time.
class SimState {
public:
    using HistoryFn = std::function<std::pair<Vector, Vector>(double)>;

    /// Fills nodes t = -N dt, ..., 0 with N = ceil(history_span / dt) from
    /// `history(t) -> (x, v)`. Capacity covers `capacity_span` seconds.
    static SimState from_history(const ClosedLoop& loop, const HistoryFn& history, double history_span,
                                 double capacity_span) {
        const double dt = loop.dt();
        const long pre = static_cast<long>(std::ceil(detail::snap_to_grid(history_span / dt)));
        const int cap = static_cast<int>(std::ceil(detail::snap_to_grid(capacity_span / dt))) + 4;
        const int capacity = std::max<int>(cap, static_cast<int>(pre) + 1);
        const auto& sys = loop.system();
        SimState s;
        s.ws_ = loop.workspace();
        s.x_ = HistoryBuffer(sys.n(), dt, capacity, -pre);
        s.v_ = HistoryBuffer(sys.p(), dt, capacity, -pre);
        s.u_ = HistoryBuffer(sys.m(), dt, capacity, -pre);
        for (long k = -pre; k <= 0; ++k) {
            const auto [x, v] = history(dt * static_cast<double>(k));
            detail::require_dims(x.size() == sys.n() && v.size() == sys.p(), "initial history has wrong dimension");
            s.x_.push(x);
            s.v_.push(v);
            s.u_.push(loop.input(x, v));
        }
        return s;
    }

    /// Constant history x(theta) = x0, v(theta) = v0 over [-2 tau, 0].
    static SimState constant(const ClosedLoop& loop, const Vector& x0, const Vector& v0, double horizon) {
        const double span = 2.0 * loop.tau();
        return from_history(
            loop, [&](double) { return std::make_pair(x0, v0); }, span, span + horizon);
    }

    double t() const { return x_.newest_time(); }
    long step_index() const { return x_.newest_index(); }
    double dt() const { return x_.dt(); }

    const HistoryBuffer& x_hist() const { return x_; }
    const HistoryBuffer& v_hist() const { return v_; }
    /// Commanded input u(s) at each node, derived from x and v at that node.
    const HistoryBuffer& u_hist() const { return u_; }

    Vector x() const { return x_.newest(); }
    Vector v() const { return v_.newest(); }
    Vector u() const { return u_.newest(); }

private:
    friend void step_closed_loop(const ClosedLoop&, SimState&, const Vector&);

    HistoryBuffer x_, v_, u_;
    ClosedLoop::Workspace ws_;
};

/// Advances one step; the new node carries reference `v_current`.
inline void step_closed_loop(const ClosedLoop& loop, SimState& state, const Vector& v_current) {
    detail::require_dims(v_current.size() == loop.system().p(), "reference has wrong dimension");
    const long k = state.x_.newest_index();
    if (k + loop.oldest_tap_offset() < state.u_.oldest_index())
        throw HistoryUnderrun("buffered history shorter than the delay");
    const Vector x = state.x_.newest();
    Vector x_next(x.size());
    loop.rk4(x, k, [&](long i) { return state.u_.node(i); }, x_next, state.ws_);
    state.x_.push(x_next);
    state.v_.push(v_current);
    state.u_.push(loop.input(x_next, v_current));
}

struct PredictionResult {
    /// Prediction times theta_j = j dt, j = 0..N (theta = 0 is the current node).
    std::vector<double> theta;
    Matrix x;       // n x (N+1)
    Matrix u;       // m x (N+1), commanded input with the frozen reference
    Matrix x_rate;  // n x (N+1), right derivative of the predicted state
    Vector v;       // frozen reference
    Equilibrium eq;
    /// x_hat - x_bar(v) over [T - 2 tau, T] (prediction-relative times).
    HistorySegment terminal_error;
    /// Error rate over [T - tau, T], taken from the predicted dynamics.
    HistorySegment terminal_rate;

    double horizon() const { return theta.back(); }
};

/// Integrates forward from the buffered history with the reference frozen at
/// the newest buffered value. Never mutates `state`.
inline PredictionResult predict(const ClosedLoop& loop, const SimState& state, double T) {
    const double tau = loop.tau();
    const double dt = loop.dt();
    if (T < tau - 1e-12)
        throw InvalidArgument("prediction horizon must be at least the delay");
    const long N = static_cast<long>(std::ceil(detail::snap_to_grid(T / dt)));
    const auto& sys = loop.system();
    const int n = sys.n(), m = sys.m();

    const long k_now = state.step_index();
    const long k_first_u = k_now + loop.oldest_tap_offset();
    if (k_first_u < state.u_hist().oldest_index())
        throw HistoryUnderrun("buffered history shorter than the delay");

    PredictionResult out;
    out.v = state.v();
    out.eq = loop.steady_state()(out.v);

    // Local input array: column c is absolute node k_first_u + c.
    const long hist_cols = k_now - k_first_u;
    Matrix U(m, hist_cols + N + 1);
    for (long c = 0; c < hist_cols; ++c)
        U.col(c) = state.u_hist().node(k_first_u + c);
    auto u_node = [&](long k_abs) { return U.col(k_abs - k_first_u); };

    out.theta.resize(static_cast<std::size_t>(N + 1));
    out.x.resize(n, N + 1);
    out.x_rate.resize(n, N + 1);
    out.x.col(0) = state.x();
    U.col(hist_cols) = state.u();
    Vector xj = state.x(), x_next(n);
    auto ws = loop.workspace();
    for (long j = 0; j <= N; ++j) {
        out.theta[static_cast<std::size_t>(j)] = dt * static_cast<double>(j);
        out.x_rate.col(j) = loop.rate(xj, k_now + j, u_node);
        if (j == N)
            break;
        loop.rk4(xj, k_now + j, u_node, x_next, ws);
        xj.swap(x_next);
        out.x.col(j + 1) = xj;
        U.col(hist_cols + j + 1) = loop.input(xj, out.v);
    }
    out.u = U.rightCols(N + 1);

    // Terminal error segment over [T - 2 tau, T].
    const double t_end = dt * static_cast<double>(N);
    const long first = static_cast<long>(std::floor(detail::snap_to_grid((t_end - 2.0 * tau) / dt)));
    const long oldest_rel = state.x_hist().oldest_index() - k_now;
    const long start = std::max(first, oldest_rel);
    Matrix E(n, N - start + 1);
    for (long j = start; j <= N; ++j) {
        const Vector xv = j < 0 ? Vector(state.x_hist().node(k_now + j)) : Vector(out.x.col(j));
        E.col(j - start) = xv - out.eq.x_bar;
    }
    out.terminal_error = HistorySegment(dt * static_cast<double>(start), dt, std::move(E));

    const long rfirst = std::max<long>(0, static_cast<long>(std::floor(detail::snap_to_grid((t_end - tau) / dt))));
    out.terminal_rate = HistorySegment(dt * static_cast<double>(rfirst), dt, out.x_rate.rightCols(N - rfirst + 1));
    return out;
}

}  // namespace tdrg
