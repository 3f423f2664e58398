#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "action.hpp"
#include "collision.hpp"
#include "core.hpp"
#include "ephemeris.hpp"
#include "path.hpp"
#include "solver.hpp"

namespace hyperflow {

//=============================================================================
// Two-leg test path through a point on the circle of radius max(|x|, |y|)

namespace detail {

    // One leg from a to z on [t1, tm] with the 2/3-power speed profile:
    // λ rises from 0 to μ = |a|/(|a| + |z|) on [t1, τ] and from μ to 1 on [τ, tm].
    struct ArcLeg {
        Vec a, z;
        double t1, tm, mu, tau;
        ArcLeg(Vec a_, Vec z_, double t1_, double tm_) : a(a_), z(z_), t1(t1_), tm(tm_)
        {
            mu = std::abs(a) / (std::abs(a) + std::abs(z));
            const double p = std::pow(mu, 1.5), q = std::pow(1 - mu, 1.5);
            tau = t1 + p / (p + q) * (tm - t1);
        }
        double lambda(double t) const
        {
            if (t <= tau) {
                if (tau <= t1) return mu;
                return mu * (1 - std::pow(std::max(0.0, (tau - t) / (tau - t1)), 2.0 / 3.0));
            }
            return mu + (1 - mu) * std::pow(std::min(1.0, (t - tau) / (tm - tau)), 2.0 / 3.0);
        }
        Vec at(double t) const
        {
            const double l = lambda(t);
            return (1 - l) * a + l * z;
        }
    };

} // namespace detail

/// Unit vector bisecting the smaller angle between x and y (a perpendicular
/// one when they are antipodal). `flip` returns the opposite bisector.
inline Vec bisector(Vec x, Vec y, bool flip = false)
{
    Vec u;
    if (x == 0.0)
        u = y / std::abs(y);
    else if (y == 0.0)
        u = x / std::abs(x);
    else {
        const Vec s = x / std::abs(x) + y / std::abs(y);
        u = std::abs(s) > 1e-12 ? s / std::abs(s) : Vec(0, 1) * (x / std::abs(x));
    }
    return flip ? -u : u;
}

/// The test path of the upper bound on ψ₀: straight legs x → z → y with the
/// 2/3-power time profile, z on the bisecting ray at radius max(|x|, |y|).
inline Path initial_guess_via_arc(const PrimarySystem& sys, Vec x, Vec y, double t1, double t2,
                                  const MinimizeOptions& opts = {}, std::vector<std::string>* warnings = nullptr,
                                  bool flip = false)
{
    if (x == 0.0 && y == 0.0) throw InvalidArgument("initial_guess_via_arc: x and y are both the origin");
    if (!(t2 > t1)) throw InvalidArgument("initial_guess_via_arc: t2 must exceed t1");
    const double R = std::max(std::abs(x), std::abs(y));
    const double Rmin = std::sqrt(2.0) * sys.far_field().R1;
    if (warnings && (std::abs(x) < Rmin || std::abs(y) < Rmin))
        warnings->push_back("initial_guess_via_arc: endpoint inside sqrt(2) R1; the upper bound need not hold");
    const Vec z = R * bisector(x, y, flip);
    const double tm = 0.5 * (t1 + t2);
    const detail::ArcLeg first(x, z, t1, tm), second(y, z, t1, tm);
    auto at = [&](double t) { return t <= tm ? first.at(t) : second.at(t1 + t2 - t); };
    auto times = standard_grid(sys, t1, t2, [&](double t) { return std::abs(at(t)); }, opts);
    Path p;
    p.t = times;
    for (double t : times) p.z.push_back(at(t));
    p.z.front() = x;
    p.z.back() = y;
    return p;
}

/// λ of the first leg, exposed for checks of the profile.
inline double arc_profile(Vec x, Vec z, double t1, double t2, double t)
{
    return detail::ArcLeg(x, z, t1, 0.5 * (t1 + t2)).lambda(t);
}

//=============================================================================
// Collision escape

/// Replace a near-collision minimizer by the better of the two re-descended
/// local deformations around the pinch.
inline MinimizeResult collision_escape(const PrimarySystem& sys, const MinimizeResult& result, double h,
                                       const MinimizeOptions& opts = {})
{
    if (result.status != MinimizeStatus::collision_suspected) return result;
    MinimizeResult out = result;
    const Path& p = result.path;
    const double guard = collision_guard(sys, opts);
    const auto ev0 = detect_collision(p, sys, guard);
    if (!ev0) return result;
    CollisionEvent ev = *ev0;
    const std::size_t k = static_cast<std::size_t>(std::lower_bound(p.t.begin(), p.t.end(), ev.t0) - p.t.begin());
    if (k <= 1 || k + 1 >= p.size()) {
        out.notes.push_back("collision-escape: near-collision at an endpoint node; deformation not attempted");
        return out;
    }
    // Window: up to eight nodes either side, inside the neighborhood where the
    // other primaries stay at least ρ0/2 away.
    const std::size_t lo = k > 9 ? k - 9 : 1, hi = std::min(p.size() - 2, k + 8);
    double delta = std::min(ev.t0 - p.t[lo], p.t[hi] - ev.t0);
    if (std::isfinite(sys.rho0())) {
        const Path rel = relative_path(p, sys, ev.i0);
        while (delta > 0) {
            bool inside = true;
            for (std::size_t j = 0; j < rel.size(); ++j)
                if (std::abs(rel.t[j] - ev.t0) <= delta && std::abs(rel.z[j]) >= 0.5 * sys.rho0()) inside = false;
            if (inside) break;
            delta *= 0.5;
        }
    }
    const double eps = 0.5 * sys.guard_scale();
    LocalDeformation def;
    try {
        def = local_deform(p, sys, ev, delta, eps);
    } catch (const Error& e) {
        out.notes.push_back(std::string("collision-escape: ") + e.what());
        return out;
    }
    const FixedEndProblem prob{p.z.front(), p.z.back(), p.t_begin(), p.t_end(), h};
    std::optional<MinimizeResult> best;
    for (const Path* eta : {&def.eta_plus, &def.eta_minus}) {
        try {
            auto r = minimize_fixed_end(sys, prob, *eta, opts);
            if (r.status == MinimizeStatus::collision_suspected) continue;
            if (!best || r.action.total < best->action.total) best = std::move(r);
        } catch (const NumericalFailure& e) {
            out.notes.push_back(std::string("collision-escape: ") + e.what());
        }
    }
    if (best && best->action.total < result.action.total) {
        best->notes = out.notes;
        best->notes.push_back("collision-escape: replaced a near-collision at t = " + format_double(ev.t0));
        return *best;
    }
    out.notes.push_back("collision-escape: no deformation lowered the action");
    return out;
}

//=============================================================================
// Free-time minimization

struct FreeTimeProblem {
    Vec x = 0.0, y = 0.0;
    /// Departure phase in [0, T).
    double s1 = 0.0;
    /// Arrival phase in [0, T); empty means free.
    std::optional<double> s2;
    double h = 0.0;
    /// Largest number of whole periods added to the base duration.
    int n_cap = 100000;
};

struct DurationSolve {
    int n = 0;
    double s2 = 0.0;
    double duration = 0.0;
    double action = 0.0;
    MinimizeStatus status = MinimizeStatus::max_iter;
};

struct FreeTimeResult {
    MinimizeResult result;
    int n = 0;
    double s2 = 0.0;
    double duration = 0.0;
    /// Every fixed-duration solve performed, in order.
    std::vector<DurationSolve> solves;
    /// Actions reached from the individual starting guesses of the first solve.
    std::vector<double> basins;
};

namespace detail {

    inline bool better(double a, int na, double b, int nb)
    {
        const double tol = 1e-9 * std::max(std::abs(a), std::abs(b));
        if (a < b - tol) return true;
        return std::abs(a - b) <= tol && na < nb;
    }

    // Fixed-duration solve from one or more seeds; collision-suspected results
    // get a deformation restart. Returns the lowest-action outcome.
    inline std::optional<MinimizeResult> solve_seeds(const PrimarySystem& sys, const FixedEndProblem& prob,
                                                     const std::vector<Path>& seeds, const MinimizeOptions& opts,
                                                     std::vector<double>* basins)
    {
        std::optional<MinimizeResult> best;
        for (const auto& seed : seeds) {
            MinimizeResult r;
            try {
                r = minimize_fixed_end(sys, prob, seed, opts);
            } catch (const NumericalFailure&) {
                continue;
            }
            if (r.status == MinimizeStatus::collision_suspected) r = collision_escape(sys, r, prob.h, opts);
            if (basins) basins->push_back(r.action.total);
            if (!best || r.action.total < best->action.total) best = std::move(r);
        }
        return best;
    }

    inline std::vector<Path> fresh_seeds(const PrimarySystem& sys, Vec x, Vec y, double t1, double t2,
                                         const MinimizeOptions& opts)
    {
        std::vector<Path> seeds;
        const Path chord = straight_path(x, y, uniform_times(t1, t2, 1));
        seeds.push_back(regrid(sys, chord, opts));
        if (x == 0.0 && y == 0.0) return seeds;
        // An arc seed whose legs cut through the core of the system would start
        // the descent on a collision, so such seeds are left out.
        auto clear = [&](Vec a, Vec b) {
            const Vec d = b - a;
            const double s = std::clamp(-dot(a, d) / std::max(std::norm(d), 1e-300), 0.0, 1.0);
            return std::abs(a + s * d) >= sys.R0();
        };
        const double R = std::max(std::abs(x), std::abs(y));
        for (bool flip : {false, true}) {
            const Vec z = R * bisector(x, y, flip);
            if (clear(x, z) && clear(y, z)) seeds.push_back(initial_guess_via_arc(sys, x, y, t1, t2, opts, nullptr, flip));
        }
        return seeds;
    }

    inline Path warm_seed(const PrimarySystem& sys, const Path& prev, double duration, const MinimizeOptions& opts)
    {
        return regrid(sys, dilate(prev, duration), opts);
    }

} // namespace detail

/// Free-time minimization over durations s2 − s1 + nT with the arrival phase fixed.
inline FreeTimeResult minimize_free_time_fixed_phase(const PrimarySystem& sys, const FreeTimeProblem& prob,
                                                     const MinimizeOptions& opts, const Path* warm = nullptr,
                                                     bool final_refine = true)
{
    const double T = sys.period();
    const double s2 = *prob.s2;
    const double base = s2 - prob.s1;
    const double t1 = prob.s1;
    const double chord2 = std::norm(prob.y - prob.x);
    auto lower_bound = [&](double D) { return chord2 / (2 * D) + prob.h * D; };
    int n_min = static_cast<int>(std::floor(-base / T)) + 1;
    while (base + (n_min - 1) * T > 1e-9 * T) --n_min;
    while (!(base + n_min * T > 1e-9 * T)) ++n_min;

    double D_target = std::sqrt(chord2 / (2 * prob.h));
    if (warm) D_target = warm->duration();
    int n0 = static_cast<int>(std::lround((D_target - base) / T));
    n0 = std::clamp(n0, n_min, std::max(n_min, prob.n_cap));

    FreeTimeResult out;
    out.s2 = s2;
    std::optional<MinimizeResult> best;
    int best_n = 0;
    std::map<int, Path> solved;

    auto run = [&](int n) -> bool {
        const double D = base + n * T;
        if (best && lower_bound(D) > best->action.total) return false;
        const FixedEndProblem fp{prob.x, prob.y, t1, t1 + D, prob.h};
        std::vector<Path> seeds;
        const Path* neighbor = nullptr;
        for (int dn : {-1, 1})
            if (auto it = solved.find(n + dn); it != solved.end()) neighbor = &it->second;
        if (neighbor)
            seeds.push_back(detail::warm_seed(sys, *neighbor, D, opts));
        else if (warm)
            seeds.push_back(detail::warm_seed(sys, *warm, D, opts));
        else
            seeds = detail::fresh_seeds(sys, prob.x, prob.y, t1, t1 + D, opts);
        auto r = detail::solve_seeds(sys, fp, seeds, opts, out.basins.empty() ? &out.basins : nullptr);
        if (!r) return true;
        out.solves.push_back({n, s2, D, r->action.total, r->status});
        solved[n] = r->path;
        if (!best || detail::better(r->action.total, n, best->action.total, best_n)) {
            best = std::move(r);
            best_n = n;
            return true;
        }
        return true;
    };

    int since = 0;
    for (int n = n0; n <= prob.n_cap; ++n) {
        const double prev = best ? best->action.total : std::numeric_limits<double>::infinity();
        if (!run(n)) break;
        if (best && best->action.total < prev)
            since = 0;
        else if (opts.patience > 0 && ++since >= opts.patience)
            break;
    }
    since = 0;
    for (int n = n0 - 1; n >= n_min; --n) {
        const double prev = best ? best->action.total : std::numeric_limits<double>::infinity();
        if (!run(n)) break;
        if (best && best->action.total < prev)
            since = 0;
        else if (opts.patience > 0 && ++since >= opts.patience)
            break;
    }
    if (!best) throw NumericalFailure("minimize_free_time: no duration produced a finite minimizer");
    out.n = best_n;
    out.duration = base + best_n * T;
    if (final_refine && opts.max_refine > 0) {
        const FixedEndProblem fp{prob.x, prob.y, t1, t1 + out.duration, prob.h};
        auto refined = minimize_refined(sys, fp, best->path, opts);
        if (refined.status != MinimizeStatus::collision_suspected) best = std::move(refined);
    }
    out.result = std::move(*best);
    return out;
}

struct ArrivalPhaseResult {
    double s2 = 0.0;
    FreeTimeResult free_time;
    /// (phase, best action) on the coarse grid.
    std::vector<std::pair<double, double>> grid;
};

/// Coarse phase grid, each point a full free-time enumeration, then golden
/// section on the arrival phase around the best grid point.
inline ArrivalPhaseResult optimize_arrival_phase(const PrimarySystem& sys, Vec x, Vec y, double s1, double h,
                                                 const MinimizeOptions& opts = {}, const Path* warm = nullptr)
{
    if (!(h > 0)) throw InvalidArgument("optimize_arrival_phase: h must be positive");
    const double T = sys.period();
    const int G = std::max(1, opts.phase_grid);
    std::vector<std::optional<FreeTimeResult>> coarse(G);
    // Phases whose base duration ends near the warm start's come first in the grid.
    auto phase = [&](int j) { return T * j / G; };
    MinimizeOptions inner = opts;
    const int threads = std::max(1, std::min(opts.threads, G));
    if (threads > 1) inner.log = nullptr;
    std::vector<std::string> errors(G);
    auto work = [&](int j) {
        FreeTimeProblem fp{x, y, s1, phase(j), h};
        try {
            coarse[j] = minimize_free_time_fixed_phase(sys, fp, inner, warm, false);
        } catch (const NumericalFailure& e) {
            errors[j] = e.what();
        }
    };
    if (threads > 1) {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < threads; ++w)
            pool.emplace_back([&] {
                for (int j = next++; j < G; j = next++) work(j);
            });
        for (auto& th : pool) th.join();
    } else {
        for (int j = 0; j < G; ++j) work(j);
    }

    ArrivalPhaseResult out;
    int bj = -1;
    for (int j = 0; j < G; ++j) {
        if (!coarse[j]) continue;
        const double a = coarse[j]->result.action.total;
        out.grid.emplace_back(phase(j), a);
        if (bj < 0 || detail::better(a, coarse[j]->n, coarse[bj]->result.action.total, coarse[bj]->n)) bj = j;
    }
    if (bj < 0) throw NumericalFailure("optimize_arrival_phase: every phase failed: " + errors.front());
    FreeTimeResult best = std::move(*coarse[bj]);
    std::vector<DurationSolve> log;
    for (auto& c : coarse)
        if (c) log.insert(log.end(), c->solves.begin(), c->solves.end());

    if (G > 1) {
        // Golden section on the arrival time, keeping the number of whole periods.
        const double t1 = s1;
        const double D0 = best.duration;
        const Path anchor = best.result.path;
        auto solve_at = [&](double D) -> MinimizeResult {
            const FixedEndProblem fp{x, y, t1, t1 + D, h};
            auto r = detail::solve_seeds(sys, fp, {detail::warm_seed(sys, anchor, D, opts)}, opts, nullptr);
            if (!r) throw NumericalFailure("optimize_arrival_phase: golden-section solve failed");
            log.push_back({best.n, std::fmod(s1 + D, T), D, r->action.total, r->status});
            return std::move(*r);
        };
        double a = std::max(D0 - T / G, 1e-9 * T), b = D0 + T / G;
        const double g = 0.5 * (std::sqrt(5.0) - 1.0);
        double c1 = b - g * (b - a), c2 = a + g * (b - a);
        MinimizeResult r1 = solve_at(c1), r2 = solve_at(c2);
        while (b - a > opts.phase_tol * T) {
            if (r1.action.total < r2.action.total) {
                b = c2;
                c2 = c1;
                r2 = std::move(r1);
                c1 = b - g * (b - a);
                r1 = solve_at(c1);
            } else {
                a = c1;
                c1 = c2;
                r1 = std::move(r2);
                c2 = a + g * (b - a);
                r2 = solve_at(c2);
            }
        }
        MinimizeResult& rb = r1.action.total < r2.action.total ? r1 : r2;
        const double Db = (&rb == &r1) ? c1 : c2;
        if (rb.action.total < best.result.action.total) {
            best.result = std::move(rb);
            best.duration = Db;
        }
    }
    best.s2 = std::fmod(s1 + best.duration, T);
    if (best.s2 < 0) best.s2 += T;
    best.n = static_cast<int>(std::lround((best.duration - (best.s2 - s1)) / T));
    if (opts.max_refine > 0) {
        const FixedEndProblem fp{x, y, s1, s1 + best.duration, h};
        auto refined = minimize_refined(sys, fp, best.result.path, opts);
        if (refined.status != MinimizeStatus::collision_suspected) best.result = std::move(refined);
    }
    best.solves = std::move(log);
    out.s2 = best.s2;
    out.free_time = std::move(best);
    return out;
}

/// Free-time minimizer: enumeration over whole periods when the arrival phase
/// is given, arrival-phase optimization otherwise.
inline FreeTimeResult minimize_free_time(const PrimarySystem& sys, const FreeTimeProblem& prob,
                                         const MinimizeOptions& opts = {}, const Path* warm = nullptr)
{
    if (!(prob.h > 0)) throw InvalidArgument("minimize_free_time: h must be positive");
    if (!std::isfinite(std::abs(prob.x)) || !std::isfinite(std::abs(prob.y)))
        throw InvalidArgument("minimize_free_time: endpoints must be finite");
    if (prob.s2) return minimize_free_time_fixed_phase(sys, prob, opts, warm, true);
    return optimize_arrival_phase(sys, prob.x, prob.y, prob.s1, prob.h, opts, warm).free_time;
}

//=============================================================================
// Sub-path minimality

struct SubpathSample {
    std::size_t i = 0, j = 0;
    double t_a = 0.0, t_b = 0.0;
    double original = 0.0, reminimized = 0.0, excess = 0.0;
};

struct SubpathReport {
    double max_excess = 0.0;
    std::vector<SubpathSample> samples;
};

/// Relative amount by which the nodes i..j of `p` exceed a fresh fixed-end
/// minimization between the same endpoints on the same grid.
inline SubpathSample subpath_excess(const PrimarySystem& sys, const Path& p, double h, std::size_t i, std::size_t j,
                                    const MinimizeOptions& opts = {})
{
    if (!(i < j) || j >= p.size()) throw InvalidArgument("subpath_excess: invalid node range");
    Path sub;
    sub.t.assign(p.t.begin() + i, p.t.begin() + j + 1);
    sub.z.assign(p.z.begin() + i, p.z.begin() + j + 1);
    SubpathSample s;
    s.i = i;
    s.j = j;
    s.t_a = sub.t.front();
    s.t_b = sub.t.back();
    s.original = action(sys, sub, h, opts.action).total;
    MinimizeOptions o = opts;
    o.log = nullptr;
    const auto r = minimize_fixed_end(sys, {sub.z.front(), sub.z.back(), s.t_a, s.t_b, h}, sub, o);
    s.reminimized = r.action.total;
    s.excess = (s.original - s.reminimized) / std::abs(s.original);
    return s;
}

inline SubpathReport check_subpath_minimality(const PrimarySystem& sys, const Path& p, double h, int n_samples,
                                              const MinimizeOptions& opts = {}, std::uint64_t seed = 0)
{
    if (p.size() < 3) throw InvalidArgument("check_subpath_minimality: path too short");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, p.size() - 1);
    SubpathReport rep;
    rep.max_excess = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < n_samples; ++s) {
        std::size_t i = pick(rng), j = pick(rng);
        if (i > j) std::swap(i, j);
        if (j - i < 2) {
            if (j + 2 < p.size())
                j = i + 2;
            else
                i = j - 2;
        }
        rep.samples.push_back(subpath_excess(sys, p, h, i, j, opts));
        rep.max_excess = std::max(rep.max_excess, rep.samples.back().excess);
    }
    return rep;
}

} // namespace hyperflow
