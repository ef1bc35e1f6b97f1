#include "flow_fixture.hpp"

#include "tdrg/model.hpp"

#include <gtest/gtest.h>

namespace tdrg {
namespace {

using test::flow_constraints;
using test::flow_gain;
using test::flow_system;
using test::s;
using test::vs;

TEST(DelaySystem, RejectsNonPositiveDelay) {
    EXPECT_THROW(DelaySystem(s(-1), s(1), s(1), s(0), 0.0), InvalidArgument);
    EXPECT_THROW(DelaySystem(s(-1), s(1), s(1), s(0), -0.5), InvalidArgument);
}

TEST(DelaySystem, RejectsInconsistentShapes) {
    EXPECT_THROW(DelaySystem(Matrix::Zero(2, 3), s(1), s(1), s(0), 1.0), DimensionMismatch);
    EXPECT_THROW(DelaySystem(Matrix::Zero(2, 2), s(1), Matrix::Zero(1, 2), s(0), 1.0), DimensionMismatch);
    EXPECT_THROW(DelaySystem(Matrix::Zero(2, 2), Matrix::Zero(2, 1), Matrix::Zero(1, 2), Matrix::Zero(1, 2), 1.0),
                 DimensionMismatch);
}

TEST(DelaySystem, ReportsDimensions) {
    const DelaySystem sys(Matrix::Zero(3, 3), Matrix::Zero(3, 2), Matrix::Zero(1, 3), Matrix::Zero(1, 2), 0.5);
    EXPECT_EQ(sys.n(), 3);
    EXPECT_EQ(sys.m(), 2);
    EXPECT_EQ(sys.p(), 1);
}

TEST(ConstraintSet, RejectsEmptyAndZeroRows) {
    EXPECT_THROW(ConstraintSet({}), InvalidArgument);
    EXPECT_THROW(ConstraintSet({ConstraintRow{vs(0), vs(0), 1.0}}), InvalidArgument);
}

TEST(ConstraintSet, ClosedLoopNormalFoldsInputRow) {
    const ConstraintSet cs({ConstraintRow{vs(2.0), vs(3.0), 1.0}});
    EXPECT_DOUBLE_EQ(cs.closed_loop_normal(0, s(-1.5))(0), 2.0 + (-1.5) * 3.0);
}

TEST(SteadyState, FlowSetPoint) {
    const Equilibrium eq = steady_state(flow_system(), vs(26.0));
    EXPECT_NEAR(eq.x_bar(0), 26.0, 1e-12);
    EXPECT_NEAR(eq.u_bar(0), 26.0 * 0.82 / 0.7279, 1e-10);
    EXPECT_NEAR(eq.u_bar(0), 29.2897, 1e-4);
}

TEST(SteadyState, ResidualsAtAdmissibleAndInadmissibleReferences) {
    const auto sys = flow_system();
    const auto cs = flow_constraints();
    const Equilibrium in = steady_state(sys, vs(26.0));
    const Equilibrium out = steady_state(sys, vs(27.0));
    EXPECT_NEAR(residuals(cs, in.x_bar, in.u_bar)(0), 0.6, 1e-12);
    EXPECT_NEAR(residuals(cs, out.x_bar, out.u_bar)(0), -0.4, 1e-12);
}

TEST(SteadyState, SolvesTheEquilibriumEquations) {
    Matrix A(2, 2), B(2, 1), C(1, 2);
    A << 0, 1, -2, -3;
    B << 0, 1;
    C << 1, 0;
    const DelaySystem sys(A, B, C, s(0), 0.3);
    const Equilibrium eq = steady_state(sys, vs(1.5));
    EXPECT_LT((A * eq.x_bar + B * eq.u_bar).norm(), 1e-12);
    EXPECT_NEAR((C * eq.x_bar)(0), 1.5, 1e-12);
    EXPECT_TRUE(SteadyStateMap(sys).surjective());
}

TEST(SteadyState, ThrowsWhenNoEquilibriumExists) {
    // A pure integrator with no input authority over x: A x + B u = 0 forces
    // u = 0, and C x = v is then unconstrained only through x, but B = 0 and
    // A = 0 make any x an equilibrium. Use a plant where C x = v is impossible.
    Matrix A = Matrix::Identity(2, 2);
    Matrix B = Matrix::Zero(2, 1);
    Matrix C(1, 2);
    C << 1, 0;
    const DelaySystem sys(A, B, C, s(0), 0.3);
    EXPECT_FALSE(SteadyStateMap(sys).surjective());
    EXPECT_THROW(steady_state(sys, vs(1.0)), NoEquilibrium);
    EXPECT_NO_THROW(steady_state(sys, vs(0.0)));
}

TEST(PrimaryInput, FlowExample) {
    const Equilibrium eq = steady_state(flow_system(), vs(26.0));
    const Vector u = primary_input(flow_gain(-1.0), eq, vs(20.0));
    EXPECT_NEAR(u(0), 26.0 * 0.82 / 0.7279 + 6.0, 1e-10);
    EXPECT_NEAR(u(0), 35.29, 1e-2);
}

TEST(PrimaryInput, EqualsSteadyInputAtEquilibrium) {
    const Equilibrium eq = steady_state(flow_system(), vs(12.0));
    EXPECT_DOUBLE_EQ(primary_input(flow_gain(-1.3), eq, eq.x_bar)(0), eq.u_bar(0));
}

TEST(PrimaryInput, ChecksGainShape) {
    EXPECT_THROW(check_gain(flow_system(), PrimaryGain{Matrix::Zero(1, 2)}), DimensionMismatch);
}

}  // namespace
}  // namespace tdrg
