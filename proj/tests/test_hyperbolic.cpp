#include <gtest/gtest.h>

#include "hyperflow/hyperbolic.hpp"

using namespace hyperflow;

namespace {

PrimarySystem unit_binary() { return blow_up_system(make_circular_binary(0.5, 0.5, 1.0), 1.0 / two_pi); }

// Converged solution or, for rays where the window tolerance is out of reach,
// the partial solution carried by the failure.
HyperbolicSolution solve_any(const PrimarySystem& sys, const HyperbolicQuery& q, const ContinuationSchedule& s,
                             bool* converged = nullptr)
{
    try {
        auto r = solve_hyperbolic(sys, q, s);
        if (converged) *converged = true;
        return r;
    } catch (const HyperbolicContinuationFailure& e) {
        if (converged) *converged = false;
        return e.partial();
    }
}

void check_per_level_invariants(const PrimarySystem& sys, const HyperbolicSolution& s, const ContinuationSchedule& sc,
                                double t_x)
{
    double tau_lo = std::numeric_limits<double>::infinity(), tau_hi = -tau_lo;
    for (std::size_t k = 0; k < s.history.size(); ++k) {
        const auto& st = s.history[k];
        EXPECT_TRUE(st.action_bound_ok) << "level " << st.level;
        EXPECT_LE(st.action, free_time_action_bound(sys, 0.0, st.radius) + 1e3);
        EXPECT_EQ(st.radial_floor_violations, 0u) << "level " << st.level;
        EXPECT_GT(st.tau_y, t_x);
        tau_lo = std::min(tau_lo, st.tau_y);
        tau_hi = std::max(tau_hi, st.tau_y);
        if (k > 0) EXPECT_GT(st.duration, s.history[k - 1].duration);
        EXPECT_LT(st.window_radius, 2.0 * sc.R2);
        EXPECT_EQ(st.status, MinimizeStatus::converged);
    }
    // τ_y stays in a bracket of a few periods while the targets recede by 2⁸.
    EXPECT_LT(tau_hi - tau_lo, 3.0 * sys.period());
    EXPECT_GT(s.history.back().duration, 100.0 * s.history.front().duration / 2.0);
}

} // namespace

TEST(Hyperbolic, RayTargetAndExitTime)
{
    EXPECT_EQ(ray_target(0.0, 5.0), Vec(5, 0));
    EXPECT_NEAR(std::abs(ray_target(pi, 3.0) - Vec(-3, 0)), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(ray_target(pi / 2, 7.0) - Vec(0, 7)), 0.0, 1e-15);
    EXPECT_THROW(ray_target(0.0, 0.0), InvalidArgument);

    Path radial = straight_path(Vec(1, 0), Vec(10, 0), uniform_times(2.0, 11.0, 9));
    EXPECT_NEAR(first_exit_time(radial, 5.0), 6.0, 1e-14);
    Path outside = straight_path(Vec(6, 0), Vec(10, 0), uniform_times(0.0, 1.0, 4));
    EXPECT_EQ(first_exit_time(outside, 5.0), 0.0);
    Path inside = straight_path(Vec(1, 0), Vec(2, 0), uniform_times(0.0, 1.0, 4));
    EXPECT_THROW(first_exit_time(inside, 5.0), NotFound);
}

TEST(Hyperbolic, RejectsInvalidQueries)
{
    auto sys = make_static_center(1.0);
    auto sc = default_schedule(sys, Vec(2, 0));
    EXPECT_THROW(solve_forward(sys, {0.0, 0.0, Vec(2, 0), 0.0}, sc), InvalidArgument);
    EXPECT_THROW(solve_forward(sys, {1.0, two_pi, Vec(2, 0), 0.0}, sc), InvalidArgument);
    auto small = sc;
    small.R2 = 1.0;
    EXPECT_THROW(solve_forward(sys, {1.0, 0.0, Vec(2, 0), 0.0}, small), InvalidArgument);
    auto unordered = sc;
    std::swap(unordered.radii[0], unordered.radii[1]);
    EXPECT_THROW(solve_forward(sys, {1.0, 0.0, Vec(2, 0), 0.0}, unordered), InvalidArgument);
    EXPECT_THROW(default_schedule(sys, Vec(2, 0), 1), InvalidArgument);
}

TEST(Hyperbolic, StaticCenterRadialRay)
{
    auto sys = make_static_center(1.0);
    const Vec x(2, 0);
    auto sc = default_schedule(sys, x);
    EXPECT_GE(sc.R2, 2 * std::sqrt(2.0) * sys.far_field().R1);
    auto s = solve_forward(sys, {0.5, 0.0, x, 0.0}, sc);
    EXPECT_TRUE(s.converged);
    EXPECT_TRUE(s.verified);
    EXPECT_NEAR(s.escape.estimate.v_inf, 1.0, 1e-2);
    EXPECT_LE(std::abs(s.escape.estimate.theta_inf), s.escape.estimate.theta_bound + 1e-15);
    EXPECT_EQ(s.path.z.front(), x);
    EXPECT_EQ(s.path.t.front(), 0.0);
    EXPECT_LT(s.el_residual, 1e-3);
    EXPECT_GT(s.interior_dmin, collision_guard(sys, {}));
    check_per_level_invariants(sys, s, sc, 0.0);
}

TEST(Hyperbolic, BinaryPerpendicularRay)
{
    auto sys = unit_binary();
    const Vec x(3, 0);
    auto sc = default_schedule(sys, x);
    bool converged = false;
    auto s = solve_any(sys, {1.0, pi / 2, x, 0.0}, sc, &converged);
    EXPECT_TRUE(s.escape.certificate.valid);
    EXPECT_EQ(s.escape.certificate.violations, 0u);
    EXPECT_LE(std::abs(s.escape.estimate.theta_inf - pi / 2), s.escape.estimate.theta_bound);
    EXPECT_NEAR(s.escape.estimate.v_inf, std::sqrt(2.0), 1e-2);
    check_per_level_invariants(sys, s, sc, 0.0);
    // Window differences decay like 1/R, halving per doubling of the radius.
    // Once that term is extrapolated away the remainder decays like 1/R².
    const auto& H = s.history;
    ASSERT_EQ(H.size(), sc.radii.size());
    for (std::size_t k = 3; k < H.size(); ++k) {
        EXPECT_NEAR(H[k - 1].diff_position / H[k].diff_position, 2.0, 0.1);
        EXPECT_NEAR(H[k - 1].diff_velocity / H[k].diff_velocity, 2.0, 0.1);
        EXPECT_NEAR(H[k - 1].extrap_position / H[k].extrap_position, 4.0, 0.2);
        EXPECT_NEAR(H[k - 1].extrap_velocity / H[k].extrap_velocity, 4.0, 0.2);
        EXPECT_LT(H[k].extrap_position, H[k].diff_position);
    }
    EXPECT_EQ(converged, s.converged);
}

TEST(Hyperbolic, NonzeroDepartureTime)
{
    auto sys = unit_binary();
    const Vec x(3, 0);
    auto sc = default_schedule(sys, x, 3);
    sc.tol_position = sc.tol_velocity = 1.0;
    auto a = solve_forward(sys, {0.5, 0.0, x, 0.25}, sc);
    auto b = solve_forward(sys, {0.5, 0.0, x, 2.25}, sc);
    EXPECT_EQ(a.path.t.front(), 0.25);
    EXPECT_NEAR(b.path.t.front(), 2.25, 1e-15);
    EXPECT_EQ(a.action, b.action);
    for (std::size_t k = 0; k < a.path.size(); ++k) EXPECT_EQ(a.path.z[k], b.path.z[k]);
}

TEST(Hyperbolic, BackwardIsMirrorOnStaticCenter)
{
    auto sys = make_static_center(1.0);
    const Vec x(2, 1);
    auto sc = default_schedule(sys, x, 4);
    sc.tol_position = sc.tol_velocity = 1.0;
    HyperbolicQuery q{0.5, 0.3, x, 0.0};
    auto fwd = solve_forward(sys, q, sc);
    q.direction = Direction::backward;
    auto bwd = solve_hyperbolic(sys, q, sc);
    ASSERT_EQ(fwd.path.size(), bwd.path.size());
    const std::size_t n = fwd.path.size();
    for (std::size_t k = 0; k < n; ++k) {
        EXPECT_NEAR(bwd.path.t[n - 1 - k], -fwd.path.t[k], 1e-12);
        EXPECT_NEAR(std::abs(bwd.path.z[n - 1 - k] - fwd.path.z[k]), 0.0, 1e-12);
    }
    EXPECT_EQ(bwd.path.z.back(), x);
    EXPECT_EQ(bwd.direction, Direction::backward);
}

TEST(Hyperbolic, BackwardOnBinary)
{
    auto sys = unit_binary();
    const double tx = 0.3;
    auto refl = reflect_time(sys, tx);
    EXPECT_LT(refl.newton_residual(), 1e-8);
    const Vec x(3, 1);
    auto sc = default_schedule(sys, x);
    HyperbolicQuery q{1.0, 0.5, x, tx, Direction::backward};
    auto s = solve_any(sys, q, sc);
    EXPECT_NEAR(s.path.t.back(), tx, 1e-12);
    EXPECT_EQ(s.path.z.back(), x);
    // Arriving from infinity along the ray: velocity → −√(2h) e^{iθ}.
    const Vec v0 = s.velocity.front();
    EXPECT_LT(std::abs(v0 + std::sqrt(2.0) * std::polar(1.0, 0.5)), 1e-2);
}

TEST(Hyperbolic, PeriodRescaling)
{
    EXPECT_DOUBLE_EQ(rescaled_energy(1.0, 8.0), 0.25);
    for (double lam : {0.2, 1.0, 8.0}) {
        const double h = 0.7, hl = rescaled_energy(h, lam);
        EXPECT_NEAR(std::cbrt(lam) * std::sqrt(2 * hl), std::sqrt(2 * h), 1e-15);
    }
    auto sys = make_static_center(1.0);
    auto sc = default_schedule(sys, Vec(2, 0), 3);
    sc.tol_position = sc.tol_velocity = 1.0;
    auto s = solve_forward(sys, {0.5, 0.0, Vec(2, 0), 0.0}, sc);
    auto same = rescale_general_period(s, 1.0);
    EXPECT_EQ(same.action, s.action);
    EXPECT_THROW(rescale_general_period(s, 0.0), InvalidArgument);

    // A T-periodic problem solved on its unit-period blow-up maps back onto the
    // direct solution of the T-periodic problem.
    const double T = 8.0, lam = 1.0 / T;
    auto big = make_static_center(1.0, T);
    auto unit = blow_up_system(big, lam);
    const double h = 0.5;
    const Vec x(3, 0);
    auto scu = default_schedule(unit, x * std::pow(lam, 2.0 / 3.0), 3);
    scu.tol_position = scu.tol_velocity = 1.0;
    auto su = solve_forward(unit, {rescaled_energy(h, lam), 0.0, x * std::pow(lam, 2.0 / 3.0), 0.0}, scu);
    auto back = rescale_general_period(su, lam);
    EXPECT_NEAR(std::abs(back.path.z.front() - x), 0.0, 1e-12);
    EXPECT_NEAR(back.target_speed, std::sqrt(2 * h), 1e-14);
    const auto& A = su.history.back();
    const auto& B = back.history.back();
    EXPECT_NEAR(B.duration, A.duration * T, 1e-9 * B.duration);
    EXPECT_NEAR(B.radius, A.radius * std::pow(T, 2.0 / 3.0), 1e-9 * B.radius);
    // Action of the mapped path on the T-periodic system equals the mapped action.
    EXPECT_NEAR(action(big, back.path, h).total, back.action, 1e-9 * back.action);
}
