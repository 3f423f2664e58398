#include <gtest/gtest.h>

#include <random>

#include "hyperflow/minimize.hpp"
#include "hyperflow/verify.hpp"

using namespace hyperflow;

namespace {

PrimarySystem unit_binary() { return blow_up_system(make_circular_binary(0.5, 0.5, 1.0), 1.0 / two_pi); }

Path synthetic_collision(Vec sm, Vec sp, int nodes = 201)
{
    const double c = std::cbrt(4.5);
    Path p;
    for (int k = 0; k < nodes; ++k) {
        const double t = -1.0 + 2.0 * (k + 0.37) / (nodes - 1 + 0.74);
        p.t.push_back(t);
        p.z.push_back(c * std::pow(std::abs(t), 2.0 / 3.0) * (t < 0 ? sm : sp));
    }
    p.t.front() = -1.0;
    p.t.back() = 1.0;
    p.z.front() = c * sm;
    p.z.back() = c * sp;
    return p;
}

} // namespace

TEST(ArcGuess, StaticCenterBound)
{
    auto sys = make_static_center(1.0);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> ang(0.0, two_pi);
    for (int k = 0; k < 10; ++k) {
        const Vec x = std::polar(10.0, ang(rng)), y = std::polar(10.0, ang(rng));
        const Path g = initial_guess_via_arc(sys, x, y, 0.0, 10.0);
        EXPECT_LE(action(sys, g, 0.0).total, 172.0);
        EXPECT_EQ(g.z.front(), x);
        EXPECT_EQ(g.z.back(), y);
    }
}

TEST(ArcGuess, ProfileAndSymmetry)
{
    const Vec x(3, 0), z(0, 5);
    EXPECT_EQ(arc_profile(x, z, 1.0, 4.0, 1.0), 0.0);
    EXPECT_NEAR(arc_profile(x, z, 1.0, 4.0, 2.5), 1.0, 1e-15);
    double prev = 0.0;
    for (int k = 1; k <= 50; ++k) {
        const double l = arc_profile(x, z, 1.0, 4.0, 1.0 + 1.5 * k / 50);
        EXPECT_GE(l, prev);
        prev = l;
    }

    auto sys = make_static_center(1.0);
    const Vec p(4, 3);
    const Path g = initial_guess_via_arc(sys, p, p, 0.0, 2.0);
    for (int k = 0; k <= 40; ++k) {
        const double t = 2.0 * k / 40;
        EXPECT_NEAR(std::abs(g.at(t) - g.at(2.0 - t)), 0.0, 1e-12);
    }
    EXPECT_NEAR(std::abs(g.at(1.0)), 5.0, 1e-12);
    EXPECT_THROW(initial_guess_via_arc(sys, 0.0, 0.0, 0.0, 1.0), InvalidArgument);
    std::vector<std::string> warn;
    initial_guess_via_arc(unit_binary(), Vec(0.1, 0), Vec(5, 0), 0.0, 1.0, {}, &warn);
    EXPECT_FALSE(warn.empty());
}

TEST(FreeTime, RejectsNonPositiveEnergy)
{
    auto sys = make_static_center(1.0);
    EXPECT_THROW(minimize_free_time(sys, {Vec(2, 0), Vec(5, 0), 0.0, 0.5, 0.0}), InvalidArgument);
    EXPECT_THROW(minimize_free_time(sys, {Vec(2, 0), Vec(5, 0), 0.0, 0.5, -1.0}), InvalidArgument);
}

TEST(FreeTime, LargeEnergyPicksShortestDuration)
{
    auto sys = make_static_center(1.0);
    auto r = minimize_free_time(sys, {Vec(2, 0), Vec(5, 0), 0.0, 0.5, 1e3});
    EXPECT_EQ(r.n, 0);
    EXPECT_NEAR(r.duration, 0.5, 1e-15);
}

TEST(FreeTime, EnumerationLogAndCutoff)
{
    auto sys = unit_binary();
    const FreeTimeProblem prob{Vec(3, 0), Vec(-1, 6), 0.2, 0.6, 0.5};
    MinimizeOptions opts;
    opts.max_refine = 0;
    auto r = minimize_free_time(sys, prob, opts);
    EXPECT_GE(r.solves.size(), 2u);
    for (const auto& s : r.solves) EXPECT_LE(r.result.action.total, s.action * (1 + 1e-12));
    // Every duration longer than the cutoff is bounded below by the incumbent.
    const double chord2 = std::norm(prob.y - prob.x);
    int n_max = -1;
    for (const auto& s : r.solves) n_max = std::max(n_max, s.n);
    const double D_next = 0.4 + (n_max + 1) * sys.period();
    EXPECT_GT(chord2 / (2 * D_next) + prob.h * D_next, r.result.action.total);
    EXPECT_EQ(r.result.status, MinimizeStatus::converged);
    EXPECT_GT(r.result.dmin.d_min, collision_guard(sys, opts));
}

TEST(FreeTime, RadialKeplerOracle)
{
    auto sys = make_static_center(1.0);
    const auto oracle = kepler_oracle_radial_action(1.0, 0.5, 2.0, 8.0);
    MinimizeOptions opts;
    opts.phase_grid = 4;
    auto r = minimize_free_time(sys, {Vec(2, 0), Vec(8, 0), 0.0, std::nullopt, 0.5}, opts);
    EXPECT_NEAR(r.result.action.total, oracle.action, 1e-4 * oracle.action);
    EXPECT_NEAR(r.duration, oracle.duration, 1e-2 * oracle.duration);
}

TEST(ArrivalPhase, StaticCenterIsPhaseIndependent)
{
    auto sys = make_static_center(1.0);
    MinimizeOptions opts;
    opts.phase_grid = 4;
    auto a = optimize_arrival_phase(sys, Vec(2, 1), Vec(5, 3), 0.0, 0.5, opts);
    auto b = optimize_arrival_phase(sys, Vec(2, 1), Vec(5, 3), 0.3, 0.5, opts);
    EXPECT_NEAR(a.free_time.result.action.total, b.free_time.result.action.total,
                1e-6 * a.free_time.result.action.total);
    EXPECT_NEAR(a.free_time.duration, b.free_time.duration, 1e-2);
    for (const auto& [s, v] : a.grid) EXPECT_LE(a.free_time.result.action.total, v * (1 + 1e-12));
}

TEST(ArrivalPhase, SinglePointGridAndThreads)
{
    auto sys = unit_binary();
    MinimizeOptions opts;
    opts.phase_grid = 1;
    opts.max_refine = 0;
    auto single = optimize_arrival_phase(sys, Vec(3, 0), Vec(0, 4), 0.25, 0.5, opts);
    auto fixed = minimize_free_time(sys, {Vec(3, 0), Vec(0, 4), 0.25, 0.0, 0.5}, opts);
    EXPECT_EQ(single.free_time.result.action.total, fixed.result.action.total);
    EXPECT_EQ(single.free_time.n, fixed.n);

    opts.phase_grid = 3;
    auto one = optimize_arrival_phase(sys, Vec(3, 0), Vec(0, 4), 0.25, 0.5, opts);
    opts.threads = 3;
    auto many = optimize_arrival_phase(sys, Vec(3, 0), Vec(0, 4), 0.25, 0.5, opts);
    EXPECT_EQ(one.free_time.result.action.total, many.free_time.result.action.total);
    EXPECT_EQ(one.s2, many.s2);
    for (const auto& [s, v] : one.grid) EXPECT_LE(one.free_time.result.action.total, v);
}

TEST(Subpath, KeplerHyperbolaIsMinimal)
{
    auto sys = make_static_center(1.0);
    const KeplerConic k(1.0, 0.5, 1.5, 0.3);
    Path p;
    p.t = uniform_times(-2.0, 2.0, 4000);
    for (double t : p.t) p.z.push_back(k.position(t));
    auto rep = check_subpath_minimality(sys, p, 0.5, 5, {}, 3);
    EXPECT_LT(rep.max_excess, 1e-5);
    EXPECT_EQ(rep.samples.size(), 5u);

    Path noisy = p;
    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd(0.0, 1e-3);
    for (std::size_t j = 1; j + 1 < noisy.size(); ++j) noisy.z[j] += Vec(nd(rng), nd(rng));
    auto bad = check_subpath_minimality(sys, noisy, 0.5, 3, {}, 3);
    EXPECT_GT(bad.max_excess, 0.0);
    for (const auto& s : bad.samples) EXPECT_GT(s.excess, 0.0);
}

TEST(Subpath, FullIntervalOfMinimizer)
{
    auto sys = unit_binary();
    MinimizeOptions opts;
    const FixedEndProblem prob{Vec(3, 0), Vec(0, 3.5), 0.0, 1.7, 0.5};
    auto r = minimize_fixed_end(sys, prob, regrid(sys, straight_path(prob.x, prob.y, uniform_times(0, 1.7, 2)), opts),
                                opts);
    auto s = subpath_excess(sys, r.path, 0.5, 0, r.path.size() - 1, opts);
    EXPECT_LE(s.excess, 1e-12);
}

TEST(CollisionEscape, PinchedPathLowered)
{
    auto sys = make_static_center(1.0);
    MinimizeOptions opts;
    opts.guard_fraction = 0.1;
    MinimizeResult pinched;
    pinched.path = synthetic_collision(Vec(1, 0), Vec(0, 1));
    pinched.action = action(sys, pinched.path, 0.0);
    pinched.dmin = min_primary_distance(sys, pinched.path);
    ASSERT_LE(pinched.dmin.d_min, collision_guard(sys, opts));
    pinched.status = MinimizeStatus::collision_suspected;

    auto out = collision_escape(sys, pinched, 0.0, opts);
    EXPECT_LT(out.action.total, pinched.action.total);
    EXPECT_NE(out.status, MinimizeStatus::collision_suspected);
    EXPECT_GT(out.dmin.d_min, collision_guard(sys, opts));
    // The quarter turn counterclockwise is the cheaper side.
    const double w = winding_about(out.path, sys, 0, -1.0, 1.0);
    EXPECT_GT(w, 0.0);
    EXPECT_LT(w, two_pi);
    EXPECT_FALSE(out.notes.empty());

    MinimizeResult clean = pinched;
    clean.status = MinimizeStatus::converged;
    auto same = collision_escape(sys, clean, 0.0, opts);
    EXPECT_EQ(same.action.total, clean.action.total);
    EXPECT_TRUE(same.notes.empty());
}

TEST(FixedEnd, LocalLipschitzSpotCheck)
{
    auto sys = unit_binary();
    MinimizeOptions opts;
    const Vec x(3, 0), y(0, 4);
    auto solve = [&](Vec yy) {
        Path g = regrid(sys, straight_path(x, yy, uniform_times(0, 1.5, 2)), opts);
        return minimize_fixed_end(sys, {x, yy, 0.0, 1.5, 0.5}, g, opts).action.total;
    };
    const double a0 = solve(y);
    const Vec dir = std::polar(1.0, 0.7);
    const double K1 = std::abs(solve(y + 0.01 * dir) - a0) / 0.01;
    const double K2 = std::abs(solve(y + 0.005 * dir) - a0) / 0.005;
    EXPECT_GT(K1, 0.0);
    EXPECT_NEAR(K1 / K2, 1.0, 0.1);
    EXPECT_LE(std::abs(solve(y + 0.0025 * dir) - a0), 1.1 * std::max(K1, K2) * 0.0025);
}
