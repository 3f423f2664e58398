#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <random>
#include <sstream>

#include "hyperflow/action.hpp"

using namespace hyperflow;
using boost::math::quadrature::gauss_kronrod;

namespace {

PrimarySystem unit_binary() { return blow_up_system(make_circular_binary(0.5, 0.5, 1.0), 1.0 / two_pi); }

// Potential integral of a piecewise-linear path by adaptive Gauss-Kronrod.
double potential_oracle(const PrimarySystem& sys, const Path& p)
{
    double sum = 0.0;
    for (std::size_t k = 0; k + 1 < p.size(); ++k) {
        auto f = [&](double s) {
            const double u = (s - p.t[k]) / (p.t[k + 1] - p.t[k]);
            const Vec z = (1 - u) * p.z[k] + u * p.z[k + 1];
            const auto q = sys.positions(s);
            double U = 0.0;
            for (std::size_t i = 0; i < q.size(); ++i) U += sys.mass(i) / std::abs(z - q[i]);
            return U;
        };
        sum += gauss_kronrod<double, 31>::integrate(f, p.t[k], p.t[k + 1], 12, 1e-12);
    }
    return sum;
}

Path random_path(std::mt19937_64& rng, int nodes, double radius, double t0, double t1)
{
    std::uniform_real_distribution<double> U(-radius, radius);
    Path p;
    p.t = uniform_times(t0, t1, nodes - 1);
    for (int k = 0; k < nodes; ++k) p.z.emplace_back(U(rng), U(rng));
    return p;
}

} // namespace

TEST(Action, PotentialExamples)
{
    auto sc = make_static_center(1.0);
    EXPECT_DOUBLE_EQ(potential_U(sc, Vec(2, 0), 0.0), 0.5);
    auto bin = make_circular_binary(0.5, 0.5, 1.0);
    EXPECT_DOUBLE_EQ(potential_U(bin, Vec(0, 0), 0.0), 2.0);
    EXPECT_THROW(potential_U(bin, Vec(0.5, 0), 0.0), SingularityError);
    try {
        potential_U(bin, Vec(-0.5, 0), 0.0);
    } catch (const SingularityError& e) {
        EXPECT_EQ(e.body(), 1u);
    }
    const Vec z(10, 0);
    const double W = split_W(bin, z, 0.0);
    EXPECT_NEAR(potential_U(bin, z, 0.0), 1.0 / 10.0 + W, 1e-16);
    EXPECT_LE(std::abs(W), bin.far_field().alpha1 / 100.0);
    EXPECT_NEAR(split_W(bin, Vec(0.6, 0), 0.0), 0.5 / 0.1 + 0.5 / 1.1 - 1.0 / 0.6, 1e-13);
    EXPECT_DOUBLE_EQ(split_W(sc, Vec(0.3, -0.2), 0.0), 0.0);
}

TEST(Action, WBoundAtR1)
{
    auto bin = make_circular_binary(0.5, 0.5, 1.0);
    const double R1 = bin.far_field().R1;
    for (int k = 0; k < 64; ++k) {
        const Vec z = std::polar(R1, two_pi * k / 64.0 + 0.01);
        EXPECT_LE(std::abs(split_W(bin, z, 0.37 * k)) * R1 * R1, bin.far_field().alpha1);
    }
}

TEST(Action, RadialSegmentStaticCenter)
{
    auto sc = make_static_center(1.0);
    Path p({0.0, 2.0}, {Vec(10, 0), Vec(12, 0)});
    auto a = action(sc, p, 0.0);
    EXPECT_DOUBLE_EQ(a.kinetic, 1.0);
    auto f = [](double t) { return 1.0 / (10.0 + t); };
    const double oracle = gauss_kronrod<double, 61>::integrate(f, 0.0, 2.0, 15, 1e-15);
    EXPECT_NEAR(a.potential, oracle, 1e-8);
}

TEST(Action, EnergyTermAndConstantPath)
{
    auto sc = make_static_center(1.0);
    std::mt19937_64 rng(3);
    Path p = random_path(rng, 12, 20.0, 0.0, 3.0);
    for (auto& z : p.z) z += Vec(100, 0);
    auto a0 = action(sc, p, 0.0), a2 = action(sc, p, 2.0);
    EXPECT_DOUBLE_EQ(a2.total - a0.total, 2.0 * 3.0);
    EXPECT_DOUBLE_EQ(a2.h_term, 6.0);
    EXPECT_DOUBLE_EQ(a2.total, a2.kinetic + a2.potential + a2.h_term);

    Path c(uniform_times(0.0, 5.0, 10), std::vector<Vec>(11, Vec(4, 3)));
    auto ac = action(sc, c, 0.5);
    EXPECT_DOUBLE_EQ(ac.kinetic, 0.0);
    EXPECT_NEAR(ac.total, (0.2 + 0.5) * 5.0, 1e-13);
}

TEST(Action, QuadratureMatchesAdaptiveOracle)
{
    auto sys = unit_binary();
    std::mt19937_64 rng(5);
    int checked = 0;
    while (checked < 20) {
        Path p = random_path(rng, 30, 3.0, 0.0, 2.0);
        if (min_primary_distance(sys, p).d_min < 0.1 * sys.rho0()) continue;
        const double lib = action(sys, p, 0.0).potential;
        const double ref = potential_oracle(sys, p);
        EXPECT_LT(std::abs(lib - ref), 1e-8 * std::abs(ref));
        ++checked;
    }
}

TEST(Action, GradientMatchesFiniteDifferences)
{
    auto sys = unit_binary();
    ActionEvaluator ev(sys);
    std::mt19937_64 rng(9);
    int checked = 0;
    double worst = 0.0;
    while (checked < 100) {
        Path p = random_path(rng, 9, 2.0, 0.3, 1.8);
        if (min_primary_distance(sys, p).d_min < 0.1 * sys.rho0()) continue;
        ActionDerivatives d;
        ev.derivatives(p, 0.7, d, true, false);
        double gnorm = 0.0, err = 0.0;
        for (std::size_t k = 1; k + 1 < p.size(); ++k) {
            for (int c = 0; c < 2; ++c) {
                const Vec e = c == 0 ? Vec(1, 0) : Vec(0, 1);
                const double eps = 1e-6;
                Path pp = p, pm = p;
                pp.z[k] += eps * e;
                pm.z[k] -= eps * e;
                const double fd = (ev.action(pp, 0.7).total - ev.action(pm, 0.7).total) / (2 * eps);
                const double an = c == 0 ? d.grad[k].real() : d.grad[k].imag();
                err = std::max(err, std::abs(fd - an));
                gnorm = std::max(gnorm, std::abs(an));
            }
        }
        worst = std::max(worst, err / gnorm);
        ++checked;
    }
    EXPECT_LT(worst, 1e-5);
}

TEST(Action, TimeDerivativesMatchFiniteDifferences)
{
    auto sys = unit_binary();
    ActionEvaluator ev(sys);
    std::mt19937_64 rng(13);
    Path p = random_path(rng, 15, 2.0, 0.1, 1.4);
    while (min_primary_distance(sys, p).d_min < 0.2) p = random_path(rng, 15, 2.0, 0.1, 1.4);
    ActionDerivatives d;
    ev.derivatives(p, 0.4, d, true, false);
    const double D = p.duration(), eps = 1e-6;
    const double fd_D =
        (ev.action(dilate(p, D + eps), 0.4).total - ev.action(dilate(p, D - eps), 0.4).total) / (2 * eps);
    EXPECT_NEAR(d.d_duration, fd_D, 1e-6 * std::max(1.0, std::abs(fd_D)));
    const double fd_s =
        (ev.action(time_shift(p, eps), 0.4).total - ev.action(time_shift(p, -eps), 0.4).total) / (2 * eps);
    EXPECT_NEAR(d.d_shift, fd_s, 1e-6 * std::max(1.0, std::abs(fd_s)));
}

TEST(Action, HessianBlocksMatchGradientDifferences)
{
    auto sys = unit_binary();
    ActionEvaluator ev(sys);
    std::mt19937_64 rng(17);
    Path p = random_path(rng, 7, 2.0, 0.0, 1.0);
    while (min_primary_distance(sys, p).d_min < 0.2) p = random_path(rng, 7, 2.0, 0.0, 1.0);
    ActionDerivatives d;
    ev.derivatives(p, 0.0, d, false, true);
    const double eps = 1e-6;
    for (std::size_t k = 1; k + 1 < p.size(); ++k) {
        Path pp = p, pm = p;
        pp.z[k] += Vec(eps, 0);
        pm.z[k] -= Vec(eps, 0);
        ActionDerivatives gp, gm;
        ev.derivatives(pp, 0.0, gp, false, false);
        ev.derivatives(pm, 0.0, gm, false, false);
        const Vec col_k = (gp.grad[k] - gm.grad[k]) / (2 * eps);
        const Vec col_next = (gp.grad[k + 1] - gm.grad[k + 1]) / (2 * eps);
        EXPECT_NEAR(d.hdiag[k].xx, col_k.real(), 1e-5 * std::abs(d.hdiag[k].xx));
        EXPECT_NEAR(d.hdiag[k].xy, col_k.imag(), 1e-5 * std::abs(d.hdiag[k].xx));
        EXPECT_NEAR(d.hoff[k].xx, col_next.real(), 1e-5 * std::abs(d.hoff[k].xx));
        EXPECT_NEAR(d.hoff[k].xy, col_next.imag(), 1e-5 * std::abs(d.hoff[k].xx));
    }
}

TEST(Action, RadialPathHasNoTransverseGradient)
{
    auto sc = make_static_center(1.0);
    Path p;
    p.t = uniform_times(0.0, 4.0, 16);
    for (std::size_t k = 0; k < p.t.size(); ++k) p.z.push_back(std::polar(2.0 + 0.3 * k + 0.02 * k * k, 0.7));
    auto g = action_gradient(sc, p, 0.5);
    const Vec dir = std::polar(1.0, 0.7);
    for (const auto& gk : g.interior) EXPECT_LT(std::abs(cross(dir, gk)), 1e-13 * (1 + std::abs(gk)));
}

TEST(Action, Invariances)
{
    auto sys = unit_binary();
    std::mt19937_64 rng(21);
    Path p = random_path(rng, 20, 2.0, 0.0, 1.0);
    while (min_primary_distance(sys, p).d_min < 0.1) p = random_path(rng, 20, 2.0, 0.0, 1.0);
    Path moved = p;
    for (auto& z : moved.z) z += Vec(3.5, -1.25);
    EXPECT_NEAR(action(sys, moved, 0).kinetic, action(sys, p, 0).kinetic, 1e-12 * action(sys, p, 0).kinetic);
    Path rotated = p;
    for (auto& z : rotated.z) z = -z;
    EXPECT_NEAR(action(sys, rotated, 0).potential, action(sys, p, 0).potential, 1e-12 * action(sys, p, 0).potential);
}

TEST(Action, MinPrimaryDistance)
{
    auto bin = make_circular_binary(0.5, 0.5, 1.0);
    Path hit({0.0, 1.0, 2.0}, {Vec(3, 3), bin.positions(1.0)[0], Vec(-2, 4)});
    auto rec = min_primary_distance(bin, hit);
    EXPECT_EQ(rec.d_min, 0.0);
    EXPECT_EQ(rec.t, 1.0);
    EXPECT_EQ(rec.body, 0u);

    Path circle;
    circle.t = uniform_times(0.0, 20.0, 400);
    // Circumscribed polygon, so every segment stays outside |z| = 10.
    const double half_step = 0.5 * 0.9 * (circle.t[1] - circle.t[0]);
    for (double s : circle.t) circle.z.push_back(std::polar(10.0 / std::cos(half_step), 0.9 * s));
    EXPECT_GE(min_primary_distance(bin, circle).d_min, 9.5);

    Path chord({0.0, 3.0}, {Vec(-3, 0.8), Vec(3, 0.6)});
    auto r = min_primary_distance(bin, chord);
    double oracle = 1e300;
    for (int k = 0; k <= 10000; ++k) {
        const double s = 3.0 * k / 10000;
        const auto q = bin.positions(s);
        for (int i = 0; i < 2; ++i) oracle = std::min(oracle, std::abs(chord.at(s) - q[i]));
    }
    EXPECT_NEAR(r.d_min, oracle, 1e-6);
    EXPECT_LE(r.d_min, oracle);
}

TEST(Action, ConcatenationIsAdditive)
{
    auto sys = unit_binary();
    Path a({0.0, 0.5, 1.0}, {Vec(2, 0), Vec(2, 1), Vec(1, 2)});
    Path b({1.0, 1.5, 2.0}, {Vec(1, 2), Vec(0, 3), Vec(-1, 3)});
    Path ab = concatenate(a, b, 1.0);
    EXPECT_EQ(ab.size(), 5u);
    EXPECT_DOUBLE_EQ(ab.t_end(), 2.0);
    const double sum = action(sys, a, 1).total + action(sys, b, 1).total;
    EXPECT_NEAR(action(sys, ab, 1).total, sum, 1e-14 * sum);

    Path b3 = time_shift(b, 2.0);
    Path ab3 = concatenate(a, b3, 1.0);
    EXPECT_DOUBLE_EQ(ab3.t[3], 1.5);
    EXPECT_DOUBLE_EQ(ab3.t_end(), 2.0);

    Path bad({1.0, 2.0}, {Vec(5, 5), Vec(6, 6)});
    EXPECT_THROW(concatenate(a, bad, 1.0), InvalidArgument);
    EXPECT_THROW(concatenate(a, time_shift(b, 0.25), 1.0), InvalidArgument);
}

TEST(Action, CsvRoundTripIsBitExact)
{
    std::mt19937_64 rng(23);
    Path p = random_path(rng, 50, 1e3, 0.1, 7.3);
    std::stringstream ss;
    write_path_csv(ss, p);
    Path q = read_path_csv(ss);
    ASSERT_EQ(q.size(), p.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
        EXPECT_EQ(q.t[k], p.t[k]);
        EXPECT_EQ(q.z[k], p.z[k]);
    }
    std::stringstream bad("a,b\n1,2\n");
    EXPECT_THROW(read_path_csv(bad), FormatError);
}

TEST(Action, SingularQuadratureNode)
{
    auto sc = make_static_center(1.0);
    // The segment midpoint is not a Gauss node, but this one is.
    const double u = GaussLegendre4::nodes[1];
    Path p({0.0, 1.0}, {Vec(-u, 0), Vec(1 - u, 0)});
    EXPECT_THROW(action(sc, p, 0.0), SingularityError);
}
