// Acceptance runner. `acceptance --criterion N` runs one criterion, no argument runs all.
// Every criterion prints exactly one line: "criterion N: PASS|FAIL (seconds) detail".

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "hyperflow/bihyperbolic.hpp"
#include "hyperflow/collision.hpp"
#include "hyperflow/hyperbolic.hpp"
#include "hyperflow/minimize.hpp"
#include "hyperflow/verify.hpp"

using namespace hyperflow;

namespace {

PrimarySystem unit_binary() { return blow_up_system(make_circular_binary(0.5, 0.5, 1.0), 1.0 / two_pi); }

struct Outcome {
    bool pass = true;
    std::ostringstream detail;
    void require(bool cond, const std::string& what)
    {
        if (!cond) {
            if (pass) detail << "first failure: " << what << "; ";
            pass = false;
        }
    }
};

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

// Free-time radial Kepler action in closed form. Along the energy-h orbit
// ½ṙ² = h + m/r, so the action is ∫ṙ² dt = ∫ √(2(h + m/r)) dr.
double radial_maupertuis(double m, double h, double r0, double r1)
{
    auto f = [&](double r) { return std::sqrt(2.0 * (h + m / r)); };
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, r0, r1, 15, 1e-14);
}

void criterion1(Outcome& o)
{
    const auto sys = make_static_center(1.0);
    const double m = 1.0, h = 0.5, r0 = 2.0, r1 = 20.0;
    const auto oracle = kepler_oracle_radial_action(m, h, r0, r1);
    const double closed = radial_maupertuis(m, h, r0, r1);
    MinimizeOptions opts;
    opts.phase_grid = 4;
    const auto r = minimize_free_time(sys, {Vec(r0, 0), Vec(r1, 0), 0.0, std::nullopt, h}, opts);
    const double rel = std::abs(r.result.action.total - oracle.action) / oracle.action;
    o.require(rel < 1e-4, "free-time action vs oracle");
    o.require(std::abs(oracle.action - closed) < 1e-8 * closed, "oracle vs closed-form energy integral");
    o.detail << "action " << fmt(r.result.action.total) << " oracle " << fmt(oracle.action) << " closed form "
             << fmt(closed) << " rel " << fmt(rel);
}

HyperbolicSolution solve_or_partial(const PrimarySystem& sys, const HyperbolicQuery& q, const ContinuationSchedule& s)
{
    try {
        return solve_forward(sys, q, s);
    } catch (const HyperbolicContinuationFailure& e) {
        return e.partial();
    }
}

void criterion2(Outcome& o)
{
    struct Case {
        std::string name;
        PrimarySystem sys;
        Vec x;
    };
    const std::vector<Case> cases{{"center", make_static_center(1.0), Vec(2, 0)}, {"binary", unit_binary(), Vec(3, 0)}};
    double worst_v = 0.0, worst_slack = -1e300;
    for (const auto& c : cases) {
        const auto sched = default_schedule(c.sys, c.x, 8);
        for (double h : {0.5, 1.0, 2.0})
            for (double th : {0.0, pi / 2}) {
                const auto t0 = std::chrono::steady_clock::now();
                const auto s = solve_or_partial(c.sys, {h, th, c.x, 0.0}, sched);
                const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                const std::string tag = c.name + " h=" + fmt(h) + " theta=" + fmt(th);
                const auto& e = s.escape.estimate;
                const double dv = std::abs(e.v_inf - std::sqrt(2 * h));
                const double dth = std::abs(angle_diff(e.theta_inf, th));
                o.require(s.history.size() == sched.radii.size(), tag + ": all levels solved");
                o.require(std::abs(std::abs(s.path.z.back()) - 256.0 * sched.R2) < 1e-9 * sched.R2,
                          tag + ": final radius 2^8 R2");
                o.require(dv < 1e-2, tag + ": v_inf");
                o.require(dth <= e.theta_bound, tag + ": theta_inf within bound");
                o.require(secs < 600.0, tag + ": runtime");
                worst_v = std::max(worst_v, dv);
                worst_slack = std::max(worst_slack, dth - e.theta_bound);
            }
    }
    o.detail << "12 cases, max |v_inf - sqrt(2h)| " << fmt(worst_v) << ", max (|dtheta| - bound) " << fmt(worst_slack);
}

void criterion3(Outcome& o)
{
    const auto sys = unit_binary();
    const double m = sys.total_mass(), R1 = sys.far_field().R1, rmin = std::sqrt(2.0) * R1;
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    MinimizeOptions opts;
    double worst = -1e300;
    for (int k = 0; k < 20; ++k) {
        const double R = rmin * (1.0 + 3.0 * U(rng));
        const Vec x = std::polar(rmin + (R - rmin) * U(rng), two_pi * U(rng));
        const Vec y = std::polar(rmin + (R - rmin) * U(rng), two_pi * U(rng));
        const double t1 = U(rng), D = 0.2 + 8.0 * U(rng), t2 = t1 + D;
        const double bound = 16.0 * R * R / D + 12.0 * m * D / R;
        const Path g = initial_guess_via_arc(sys, x, y, t1, t2, opts);
        const double ga = action(sys, g, 0.0, opts.action).total;
        const auto r = minimize_fixed_end(sys, {x, y, t1, t2, 0.0}, g, opts);
        o.require(ga <= bound, "guess " + std::to_string(k) + " within bound");
        o.require(r.action.total <= bound, "minimizer " + std::to_string(k) + " within bound");
        worst = std::max(worst, std::max(ga, r.action.total) / bound);
    }
    o.detail << "20 pairs, max action/bound " << fmt(worst);
}

void criterion4(Outcome& o)
{
    const auto sys = unit_binary();
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> U(-4.0, 4.0);
    double worst = 0.0;
    for (int k = 0; k < 10; ++k) {
        Path p;
        p.t = uniform_times(0.0, 1.0, 80);
        const Vec a(U(rng), U(rng)), b(U(rng), U(rng)), c(U(rng), U(rng));
        for (double t : p.t) p.z.push_back(a + t * b + std::sin(pi * t) * c + Vec(3.0, 3.0));
        const double t0 = 0.5, delta = 0.4;
        const double base = action(sys, subpath(p, t0 - delta, t0 + delta), 0.0).total;
        for (double lam : {0.125, 1.0, 8.0}) {
            const auto f = blow_up_path(p, sys, t0, lam, delta);
            // Independent rescaling check: q^λ(s) = λ^{2/3} q(t0 + s/λ).
            const double s = 0.37 * lam * delta;
            const Vec expect_q = std::pow(lam, 2.0 / 3.0) * (sys.positions(t0 + s / lam)[0]);
            o.require(std::abs(f.system.positions(s)[0] - expect_q) < 1e-12 * (1 + std::abs(expect_q)),
                      "blown-up ephemeris");
            const double rel = std::abs(action(f.system, f.path, 0.0).total - std::cbrt(lam) * base) / base;
            o.require(rel < 1e-9, "action scaling at lambda " + fmt(lam));
            worst = std::max(worst, rel);
        }
    }
    o.detail << "10 paths x 3 lambdas, max rel error " << fmt(worst);
}

void criterion5(Outcome& o)
{
    const auto center = make_static_center(1.0);
    const double m = 1.0, h = 0.5;
    const auto conic = kepler_conic(m, h, 0.0, 0.0, 0.0);
    IntegratorOptions io;
    io.rtol = 1e-12;
    io.atol = 1e-16;
    io.near_primary_floor = 1e-12;
    // Approach integrated forward from t = −0.5, ejection backward from t = +0.5,
    // both sampled on a grid that accumulates at the collision instant.
    std::vector<double> neg, pos;
    for (int k = 40; k >= 1; --k) {
        const double v = (k - 0.5) / 40.0;
        neg.push_back(-1e-3 * v * v * v);
        pos.push_back(1e-3 * v * v * v);
    }
    Vec za, va, zb, vb;
    conic.state(-0.5, za, va);
    conic.state(0.5, zb, vb);
    io.output_times = neg;
    const auto in = integrate_ode(center, za, va, -0.5, neg.back(), io);
    io.output_times = pos;
    const auto out = integrate_ode(center, zb, vb, 0.5, pos.back(), io);
    o.require(!in.collision && !out.collision, "integration reached the sampling grid");
    Path p;
    p.t = in.path.t;
    p.z = in.path.z;
    for (std::size_t k = out.path.size(); k-- > 0;) {
        p.t.push_back(out.path.t[k]);
        p.z.push_back(out.path.z[k]);
    }
    const auto ev = fit_asymptotics(p, center, 0, 0.0, 1e-3);
    const double c0 = std::cbrt(4.5 * m);
    for (double e : {ev.exponent_minus, ev.exponent_plus}) o.require(std::abs(e - 2.0 / 3.0) <= 0.01, "exponent");
    for (double c : {ev.coefficient_minus, ev.coefficient_plus})
        o.require(std::abs(c / c0 - 1.0) <= 0.01, "coefficient");

    // Energy relative to the primary on either side of the collision.
    double worst = 0.0;
    for (double eps : {1e-2, 1e-3, 1e-4}) {
        IntegratorOptions fine = io;
        fine.output_times.clear();
        for (int k = -2; k <= 2; ++k) fine.output_times.push_back(-eps + k * 1e-3 * eps);
        const auto a = integrate_ode(center, za, va, -0.5, -eps + 3e-3 * eps, fine);
        fine.output_times.clear();
        for (int k = 2; k >= -2; --k) fine.output_times.push_back(eps + k * 1e-3 * eps);
        auto b = integrate_ode(center, zb, vb, 0.5, eps - 3e-3 * eps, fine);
        std::reverse(b.path.t.begin(), b.path.t.end());
        std::reverse(b.path.z.begin(), b.path.z.end());
        const double Ea = binary_energy(a.path, center, 0, -eps), Eb = binary_energy(b.path, center, 0, eps);
        o.require(std::abs(Ea - Eb) < 1e-3, "energy jump at eps " + fmt(eps));
        worst = std::max(worst, std::abs(Ea - Eb));
    }
    o.detail << "exponents " << fmt(ev.exponent_minus) << "/" << fmt(ev.exponent_plus) << ", coefficient ratio "
             << fmt(ev.coefficient_minus / c0) << "/" << fmt(ev.coefficient_plus / c0) << ", max energy jump "
             << fmt(worst);
}

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

// Total argument increment about the origin, accumulated segment by segment.
double argument_increment(const Path& p, double a, double b)
{
    double w = 0.0;
    for (std::size_t k = 0; k + 1 < p.size(); ++k)
        if (p.t[k] >= a && p.t[k + 1] <= b) w += std::arg(p.z[k + 1] / p.z[k]);
    return w;
}

void criterion6(Outcome& o)
{
    const auto center = make_static_center(1.0);
    const Vec sigma(std::cos(0.3), std::sin(0.3));
    const Path p = synthetic_collision(-sigma, sigma);
    const auto ev = fit_asymptotics(p, center, 0, 0.0, 0.2);
    const double delta = 0.25, eps = 1.0;
    const auto d = local_deform(p, center, ev, delta, eps);
    const double base = action(center, p, 0.0).total;
    const double ap = action(center, d.eta_plus, 0.0).total, am = action(center, d.eta_minus, 0.0).total;
    double prox = 0.0;
    for (const Path* eta : {&d.eta_plus, &d.eta_minus}) {
        o.require(min_primary_distance(center, *eta).d_min > 0.0, "collision-free");
        for (std::size_t k = 0; k < eta->size(); ++k) {
            o.require(eta->z[k] != Vec(0.0), "no node on the primary");
            prox = std::max(prox, std::abs(eta->z[k] - p.at(eta->t[k])));
        }
    }
    o.require(prox <= eps, "proximity bound");
    const double wp = argument_increment(d.eta_plus, -d.delta, d.delta);
    const double wm = argument_increment(d.eta_minus, -d.delta, d.delta);
    o.require(wp > 0.0 && wp < two_pi, "eta+ winding in (0, 2pi)");
    o.require(wm < 0.0 && wm > -two_pi, "eta- winding in (-2pi, 0)");
    const double gain = base - std::min(ap, am);
    o.require(gain > 1e-4, "action lowered by more than 1e-4");
    o.detail << "action " << fmt(base) << " -> " << fmt(ap) << "/" << fmt(am) << " (gain " << fmt(gain)
             << "), windings " << fmt(wp) << "/" << fmt(wm) << ", max |eta - gamma| " << fmt(prox);
}

void criterion7(Outcome& o)
{
    const auto sys = unit_binary();
    const auto& ff = sys.far_field();
    const double m = sys.total_mass();
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> ang(0.0, two_pi), tang(-0.5, 0.5), rad(0.0, 4.0);
    std::size_t violations = 0;
    double omega_slack = -1e300, tail_excess = -1e300;
    for (int k = 0; k < 50; ++k) {
        const double r1 = ff.R1 + rad(rng);
        const Vec e = std::polar(1.0, ang(rng));
        const double rdot1 = std::sqrt(6.0 * m / r1);
        IntegratorOptions io;
        io.samples = 2001;
        const auto res = integrate_ode(sys, r1 * e, rdot1 * e + tang(rng) * Vec(0, 1) * e, 0.0, 1000.0, io);
        o.require(!res.collision, "orbit " + std::to_string(k) + " collision-free");
        const auto s = polar_series(res.path, res.velocity);
        // Radial floor checked directly on the samples.
        for (std::size_t j = 0; j < s.size(); ++j)
            if (!(s.rdot[j] > 0.5 * rdot1)) ++violations;
        const auto cert = check_escape(s, sys, 0.0);
        o.require(cert.valid && cert.violations == 0, "certificate " + std::to_string(k));
        const auto ob = angular_momentum_bound(s, 0.0, cert.v_floor, ff.alpha2);
        o.require(ob.measured_sup <= ob.bound + 1e-6, "omega bound " + std::to_string(k));
        omega_slack = std::max(omega_slack, ob.measured_sup - ob.bound);
        const double te = angle_tail_excess(s, 0.0, cert.v_floor, ff.alpha2);
        o.require(te <= 0.0, "angle tail " + std::to_string(k));
        tail_excess = std::max(tail_excess, te);
    }
    o.require(violations == 0, "radial floor");
    o.detail << "50 orbits, floor violations " << violations << ", max (sup|omega| - bound) " << fmt(omega_slack)
             << ", max tail excess " << fmt(tail_excess);
}

void criterion8(Outcome& o)
{
    const auto sys = unit_binary();
    BiQuery q;
    q.h = 1.0;
    q.theta_minus = pi;
    q.theta_plus = 0.0;
    q.cls.nu_target = 1;
    BihyperbolicSolution s;
    try {
        s = solve_bihyperbolic(sys, q, default_bi_schedule(sys));
    } catch (const BihyperbolicContinuationFailure& e) {
        s = e.partial();
    }
    const double v = std::sqrt(2.0);
    o.require(s.converged, "converged");
    o.require(std::abs(s.outgoing.estimate.v_inf - v) < 1e-2, "outgoing speed");
    o.require(std::abs(s.incoming.estimate.v_inf - v) < 1e-2, "incoming speed");
    o.require(std::abs(s.nu - 1.0) <= 0.25, "relative winding");
    o.require(s.collision_dips <= 1, "d_min dips");
    o.require(s.action > s.untied_action, "tied action above untied");
    o.detail << "levels " << s.history.size() << ", v_out " << fmt(s.outgoing.estimate.v_inf) << ", v_in "
             << fmt(s.incoming.estimate.v_inf) << ", nu " << fmt(s.nu) << ", dips " << s.collision_dips << ", action "
             << fmt(s.action) << " > untied " << fmt(s.untied_action);
}

struct SuiteCase {
    PrimarySystem sys;
    FixedEndProblem prob;
};

std::vector<SuiteCase> minimizer_suite()
{
    const auto b = unit_binary();
    const auto c = make_static_center(1.0);
    return {{b, {Vec(3, 0), Vec(0, 3.5), 0.0, 1.7, 0.5}},
            {b, {Vec(-3, 1), Vec(2.5, 2), 0.0, 4.0, 0.5}},
            {b, {Vec(4, -1), Vec(-4, 1), 0.3, 2.8, 1.0}},
            {b, {Vec(2.5, 2.5), Vec(6, -1), 0.1, 3.1, 0.0}},
            {c, {Vec(2, 0), Vec(0, 3), 0.0, 2.0, 0.5}},
            {c, {Vec(5, 1), Vec(-3, 4), 0.0, 6.0, 0.0}}};
}

MinimizeResult solve_case(const SuiteCase& c, const MinimizeOptions& opts)
{
    const auto& p = c.prob;
    return minimize_fixed_end(c.sys, p, initial_guess_via_arc(c.sys, p.x, p.y, p.t1, p.t2, opts), opts);
}

void criterion9(Outcome& o)
{
    MinimizeOptions opts;
    int used = 0;
    double lo = 1e300, hi = 0.0;
    for (const auto& c : minimizer_suite()) {
        const auto r = solve_case(c, opts);
        if (r.status != MinimizeStatus::converged) continue;
        ++used;
        const double guard = collision_guard(c.sys, opts);
        const auto d = min_primary_distance(c.sys, subpath(r.path, r.path.t[1], r.path.t[r.path.size() - 2]));
        o.require(d.d_min > guard, "d_min above guard");
        double last = 0.0;
        Path level = regrid(c.sys, r.path, opts);
        for (int k = 0; k < 3; ++k) {
            const auto rk = minimize_fixed_end(c.sys, c.prob, level, opts);
            if (k > 0) {
                const double ratio = last / rk.el_residual;
                o.require(std::abs(ratio - 4.0) <= 0.6, "el_residual ratio " + fmt(ratio));
                lo = std::min(lo, ratio);
                hi = std::max(hi, ratio);
            }
            last = rk.el_residual;
            level = densify(c.sys, rk.path, 2.0 * (1 << k), opts);
        }
    }
    o.require(used >= 5, "suite mostly converged");
    o.detail << used << " converged minimizers, el_residual ratios per doubling in [" << fmt(lo) << ", " << fmt(hi)
             << "]";
}

void criterion10(Outcome& o)
{
    MinimizeOptions opts;
    struct Accepted {
        std::string name;
        PrimarySystem sys;
        Path path;
        double h;
        bool tied = false;
    };
    std::vector<Accepted> acc;
    int idx = 0;
    for (const auto& c : minimizer_suite()) {
        const auto r = solve_case(c, opts);
        if (r.status == MinimizeStatus::converged) acc.push_back({"fixed-end " + std::to_string(idx), c.sys, r.path, c.prob.h});
        ++idx;
    }
    {
        const auto center = make_static_center(1.0);
        MinimizeOptions fo;
        fo.phase_grid = 4;
        const auto r = minimize_free_time(center, {Vec(2, 0), Vec(20, 0), 0.0, std::nullopt, 0.5}, fo);
        acc.push_back({"free-time radial", center, r.result.path, 0.5});
    }
    {
        const auto sys = unit_binary();
        const auto s = solve_or_partial(sys, {1.0, pi / 2, Vec(3, 0), 0.0}, default_schedule(sys, Vec(3, 0), 4));
        acc.push_back({"hyperbolic", sys, s.path, 1.0});
    }
    {
        const auto sys = unit_binary();
        BiQuery q;
        q.h = 1.0;
        q.theta_minus = pi;
        q.theta_plus = 0.0;
        BiOptions bo;
        bo.tied.phase_grid = 2;
        const auto s = solve_bihyperbolic(sys, q, default_bi_schedule(sys), bo);
        acc.push_back({"bihyperbolic", sys, s.path, 1.0, true});
    }
    double worst = -1e300;
    std::string worst_name;
    std::uint64_t seed = 1;
    int fresh_starts = 0, other_class = 0;
    for (const auto& a : acc) {
        const auto rep = check_subpath_minimality(a.sys, a.path, a.h, 20, opts, seed++);
        o.require(rep.samples.size() == 20, a.name + ": 20 samples");
        double excess = rep.max_excess;
        // The same sub-intervals again, minimized from a straight chord on the same grid.
        for (const auto& smp : rep.samples) {
            Path sub;
            sub.t.assign(a.path.t.begin() + smp.i, a.path.t.begin() + smp.j + 1);
            const Vec za = a.path.z[smp.i], zb = a.path.z[smp.j];
            const auto fresh =
                minimize_fixed_end(a.sys, {za, zb, sub.t.front(), sub.t.back(), a.h}, straight_path(za, zb, sub.t), opts);
            if (fresh.status == MinimizeStatus::collision_suspected) continue;
            // A tied solution minimizes only within its class, so a restart that
            // winds differently around some primary is not a competitor.
            if (a.tied) {
                sub.z.assign(a.path.z.begin() + smp.i, a.path.z.begin() + smp.j + 1);
                bool same = true;
                for (std::size_t i = 0; i < a.sys.size(); ++i)
                    same = same && std::abs(winding_about(sub, a.sys, i, sub.t.front(), sub.t.back()) -
                                            winding_about(fresh.path, a.sys, i, sub.t.front(), sub.t.back())) < pi;
                if (!same) {
                    ++other_class;
                    continue;
                }
            }
            ++fresh_starts;
            excess = std::max(excess, (smp.original - fresh.action.total) / std::abs(smp.original));
        }
        o.require(excess < 1e-4, a.name + ": excess " + fmt(excess));
        if (excess > worst) {
            worst = excess;
            worst_name = a.name;
        }
    }
    o.detail << acc.size() << " solutions x 20 sub-intervals (" << fresh_starts
             << " also from a straight chord, " << other_class
             << " of those left the tied class), max relative excess " << fmt(worst) << " (" << worst_name << ")";
}

} // namespace

int main(int argc, char** argv)
{
    const std::map<int, std::function<void(Outcome&)>> criteria{
        {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4},  {5, criterion5},
        {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9}, {10, criterion10}};
    std::vector<int> which;
    if (argc == 3 && std::string(argv[1]) == "--criterion") {
        which.push_back(std::atoi(argv[2]));
        if (!criteria.count(which[0])) {
            std::cerr << "unknown criterion " << argv[2] << "\n";
            return 2;
        }
    } else if (argc == 1) {
        for (const auto& [n, f] : criteria) which.push_back(n);
    } else {
        std::cerr << "usage: acceptance [--criterion N]\n";
        return 2;
    }
    bool all = true;
    for (int n : which) {
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            criteria.at(n)(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << "exception: " << e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " (" << fmt(secs) << " s) "
                  << o.detail.str() << std::endl;
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
