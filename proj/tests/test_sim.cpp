#include "flow_fixture.hpp"

#include "tdrg/sim.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace tdrg {
namespace {

using test::flow_gain;
using test::flow_system;
using test::s;
using test::vs;

/// Simulates the flow loop from x0 with reference v held at v0, returning x(t_end).
double run_flow(double k, double dt, double tau, double x0, double t_end) {
    const ClosedLoop loop(flow_system(tau), flow_gain(k), dt);
    SimState st = SimState::constant(loop, vs(x0), vs(0.0), 0.0);
    const long steps = std::lround(t_end / dt);
    for (long i = 0; i < steps; ++i)
        step_closed_loop(loop, st, vs(0.0));
    return st.x()(0);
}

TEST(ClosedLoop, RejectsBadSteps) {
    EXPECT_THROW(ClosedLoop(flow_system(), flow_gain(-1.0), 0.0), InvalidArgument);
    EXPECT_THROW(ClosedLoop(flow_system(), flow_gain(-1.0), 1.0), InvalidArgument);
}

TEST(Simulation, MatchesExponentialWithoutFeedback) {
    // K = 0 and v = 0: the delayed input is identically zero and x = x0 e^{at}.
    const double x = run_flow(0.0, 0.01, 0.8, 2.0, 3.0);
    EXPECT_NEAR(x, 2.0 * std::exp(test::kA * 3.0), 1e-10);
}

TEST(Simulation, FourthOrderWithoutDelayedInput) {
    auto err = [](double dt) { return std::abs(run_flow(0.0, dt, 20.0, 1.0, 4.0) - std::exp(test::kA * 4.0)); };
    const double ratio = err(0.2) / err(0.1);
    EXPECT_GT(ratio, 14.0);
    EXPECT_LT(ratio, 18.0);
}

TEST(Simulation, ConvergesWithDelayedFeedback) {
    // The method of steps with linear interpolation is second order in the
    // delayed term; halving dt still shrinks the error.
    const double ref = run_flow(-1.0, 1e-4, 0.8, 1.0, 5.0);
    const double e1 = std::abs(run_flow(-1.0, 0.02, 0.8, 1.0, 5.0) - ref);
    const double e2 = std::abs(run_flow(-1.0, 0.01, 0.8, 1.0, 5.0) - ref);
    EXPECT_GT(e1 / e2, 3.5);
}

TEST(Simulation, OffGridDelayIsInterpolated) {
    // tau / dt = 80.5: the delayed lookup falls between nodes.
    const double coarse = run_flow(-1.0, 0.00995, 0.801, 1.0, 5.0);
    const double fine = run_flow(-1.0, 1e-4, 0.801, 1.0, 5.0);
    EXPECT_NEAR(coarse, fine, 1e-4);
}

TEST(Simulation, EquilibriumIsInvariant) {
    const ClosedLoop loop(flow_system(), flow_gain(-1.0), 1e-3);
    const Equilibrium eq = loop.steady_state()(vs(26.0));
    SimState st = SimState::constant(loop, eq.x_bar, vs(26.0), 0.0);
    for (int i = 0; i < 5000; ++i)
        step_closed_loop(loop, st, vs(26.0));
    EXPECT_NEAR(st.x()(0), 26.0, 1e-11);
    EXPECT_NEAR(st.u()(0), eq.u_bar(0), 1e-10);
}

TEST(Simulation, StabilityBoundaryOfTheDelayedLoop) {
    // The exact boundary for x' = a x + b k x(t - tau) is k ~ -3.456.
    auto envelope = [](double k, double t0, double t1) {
        const double dt = 1e-3;
        const ClosedLoop loop(flow_system(), flow_gain(k), dt);
        SimState st = SimState::constant(loop, vs(1.0), vs(0.0), 0.0);
        double peak = 0.0;
        for (long i = 0; i < std::lround(t1 / dt); ++i) {
            step_closed_loop(loop, st, vs(0.0));
            if (st.t() >= t0)
                peak = std::max(peak, std::abs(st.x()(0)));
        }
        return peak;
    };
    EXPECT_LT(envelope(-3.4, 80.0, 100.0), envelope(-3.4, 0.0, 20.0));
    EXPECT_GT(envelope(-3.7, 80.0, 100.0), envelope(-3.7, 0.0, 20.0));
}

TEST(Predict, EqualsHeldReferenceStepping) {
    Matrix A(2, 2), B(2, 1), C(1, 2), K(1, 2);
    A << 0, 1, -1, -0.4;
    B << 0, 1;
    C << 1, 0;
    K << -0.3, -0.2;
    const ClosedLoop loop(DelaySystem(A, B, C, s(0), 0.25), PrimaryGain{K}, 1e-2);
    SimState st = SimState::constant(loop, Vector::Constant(2, 0.5), vs(0.0), 2.0);
    for (int i = 0; i < 30; ++i)
        step_closed_loop(loop, st, vs(std::sin(0.1 * i)));
    const PredictionResult pr = predict(loop, st, 1.0);
    SimState held = st;
    for (std::size_t j = 1; j < pr.theta.size(); ++j) {
        step_closed_loop(loop, held, pr.v);
        EXPECT_EQ(held.x(), Vector(pr.x.col(static_cast<Eigen::Index>(j))));
        EXPECT_EQ(held.u(), Vector(pr.u.col(static_cast<Eigen::Index>(j))));
    }
}

TEST(Predict, DoesNotMutateStateAndRequiresHorizonAtLeastTau) {
    const ClosedLoop loop(flow_system(), flow_gain(-1.0), 1e-2);
    SimState st = SimState::constant(loop, vs(3.0), vs(10.0), 2.0);
    const Vector before = st.x();
    (void)predict(loop, st, 1.0);
    EXPECT_EQ(st.x(), before);
    EXPECT_THROW(predict(loop, st, 0.5), InvalidArgument);
}

TEST(Predict, TerminalSegmentsSpanTheFunctionalWindows) {
    const ClosedLoop loop(flow_system(), flow_gain(-1.0), 1e-2);
    SimState st = SimState::constant(loop, vs(3.0), vs(10.0), 2.0);
    const PredictionResult pr = predict(loop, st, 0.8);
    EXPECT_NEAR(pr.terminal_error.t_end(), 0.8, 1e-12);
    EXPECT_NEAR(pr.terminal_error.span(), 1.6, 1e-9);
    EXPECT_NEAR(pr.terminal_rate.span(), 0.8, 1e-9);
    EXPECT_NEAR(pr.terminal_error.at(0.8)(0), pr.x(0, pr.x.cols() - 1) - 10.0, 1e-12);
}

}  // namespace
}  // namespace tdrg
