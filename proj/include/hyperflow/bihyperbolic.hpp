#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "asymptotics.hpp"
#include "collision.hpp"
#include "hyperbolic.hpp"
#include "minimize.hpp"

namespace hyperflow {

//=============================================================================
// Tied classes

struct TiedClass {
    std::size_t i0 = 0, i1 = 1;
    /// Relative winding of the class in full turns.
    int nu_target = 1;
    /// Crossing times of the path the class was last evaluated on.
    double s_x = std::numeric_limits<double>::quiet_NaN();
    double s_y = std::numeric_limits<double>::quiet_NaN();
};

inline void validate_class(const TiedClass& c, const PrimarySystem& sys)
{
    if (c.i0 == c.i1) throw InvalidArgument("tied class: i0 and i1 must differ");
    if (c.i0 >= sys.size() || c.i1 >= sys.size()) throw InvalidArgument("tied class: primary index out of range");
    if (std::abs(c.nu_target) < 1) throw InvalidArgument("tied class: |nu_target| must be at least 1");
}

struct CrossingTimes {
    double s_x = 0.0, s_y = 0.0;
};

/// Core radius used for tied classes: R₀ raised to 2·sup|q| + 1 if needed, so
/// that any path outside it winds around two primaries by less than π apart.
inline double tied_core_radius(const PrimarySystem& sys) { return std::max(sys.R0(), 2.0 * sys.sup_radius() + 1.0); }

/// First and last times at which |γ| = R0, interpolating |γ| linearly between nodes.
inline CrossingTimes crossing_times(const Path& p, double R0)
{
    p.validate();
    if (!(R0 > 0)) throw InvalidArgument("crossing_times: R0 must be positive");
    const std::size_t n = p.size();
    if (std::abs(p.z.front()) < R0 || std::abs(p.z.back()) < R0)
        throw InvalidArgument("crossing_times: endpoints must lie outside the core");
    std::size_t first = n, last = n;
    for (std::size_t k = 0; k < n; ++k)
        if (std::abs(p.z[k]) <= R0) {
            if (first == n) first = k;
            last = k;
        }
    if (first == n) throw NotFound("crossing_times: path never meets the core of radius " + format_double(R0));
    CrossingTimes c;
    if (first == 0)
        c.s_x = p.t.front();
    else {
        const double ra = std::abs(p.z[first - 1]), rb = std::abs(p.z[first]);
        c.s_x = p.t[first - 1] + (ra - R0) / (ra - rb) * (p.t[first] - p.t[first - 1]);
    }
    if (last == n - 1)
        c.s_y = p.t.back();
    else {
        const double ra = std::abs(p.z[last]), rb = std::abs(p.z[last + 1]);
        c.s_y = p.t[last] + (R0 - ra) / (rb - ra) * (p.t[last + 1] - p.t[last]);
    }
    return c;
}

/// ν = (W₀ − W₁)/2π with W_j the argument increment of γ − q_j over [s_x, s_y].
///
/// Each segment is unwrapped from its end nodes. When the segment passes a
/// primary closer than twice the primary's deviation from a straight chord
/// over the same step, the increment is not determined by the nodes and
/// RefinementNeeded is thrown.
inline double relative_winding(const Path& p, const PrimarySystem& sys, std::size_t i0, std::size_t i1,
                               const CrossingTimes& c)
{
    if (i0 == i1 || i0 >= sys.size() || i1 >= sys.size()) throw InvalidArgument("relative_winding: invalid indices");
    if (!(c.s_y >= c.s_x) || c.s_x < p.t_begin() || c.s_y > p.t_end())
        throw InvalidArgument("relative_winding: crossing times outside the path");
    if (c.s_y == c.s_x) return 0.0;
    std::vector<double> ts{c.s_x};
    for (std::size_t k = 0; k < p.size(); ++k)
        if (p.t[k] > c.s_x && p.t[k] < c.s_y) ts.push_back(p.t[k]);
    ts.push_back(c.s_y);
    std::vector<Vec> q(sys.size()), qa(sys.size()), qm(sys.size());
    double W[2] = {0.0, 0.0};
    const std::size_t idx[2] = {i0, i1};
    sys.positions(ts[0], qa.data());
    Vec za = p.at(ts[0]);
    for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
        const double tb = ts[k + 1];
        sys.positions(tb, q.data());
        sys.positions(0.5 * (ts[k] + tb), qm.data());
        const Vec zb = p.at(tb);
        for (int j = 0; j < 2; ++j) {
            const std::size_t i = idx[j];
            const Vec a = za - qa[i], b = zb - q[i];
            if (a == 0.0 || b == 0.0)
                throw SingularityError("relative_winding: path meets a primary", i, a == 0.0 ? ts[k] : tb);
            const double bend = std::abs(qm[i] - 0.5 * (qa[i] + q[i]));
            if (segment_distance(a, b) <= 2.0 * bend)
                throw RefinementNeeded("relative_winding: grid too coarse near primary " + std::to_string(i) +
                                       " at t = " + format_double(ts[k]));
            W[j] += segment_angle(a, b);
        }
        za = zb;
        qa.swap(q);
    }
    return (W[0] - W[1]) / two_pi;
}

inline bool is_tied(double nu) { return std::abs(nu) >= 0.5; }

namespace detail {

    // ν of a path, or nothing when it is undefined (no crossing, unwrap
    // ambiguity, or a primary on the path).
    inline std::optional<double> try_winding(const Path& p, const PrimarySystem& sys, const TiedClass& cls, double R0)
    {
        try {
            return relative_winding(p, sys, cls.i0, cls.i1, crossing_times(p, R0));
        } catch (const Error&) {
            return std::nullopt;
        }
    }

    // Smallest distance from the piecewise-linear relative path to primary i.
    inline double relative_clearance(const Path& p, const PrimarySystem& sys, std::size_t i)
    {
        std::vector<Vec> q(sys.size());
        double best = std::numeric_limits<double>::infinity();
        sys.positions(p.t[0], q.data());
        Vec a = p.z[0] - q[i];
        for (std::size_t k = 0; k + 1 < p.size(); ++k) {
            sys.positions(p.t[k + 1], q.data());
            const Vec b = p.z[k + 1] - q[i];
            best = std::min(best, segment_distance(a, b));
            a = b;
        }
        return best;
    }

    inline double pair_separation(const PrimarySystem& sys, std::size_t i0)
    {
        double d = std::numeric_limits<double>::infinity();
        for (int k = 0; k < 256; ++k) {
            const auto q = sys.positions(sys.period() * k / 256);
            for (std::size_t j = 0; j < q.size(); ++j)
                if (j != i0) d = std::min(d, std::abs(q[j] - q[i0]));
        }
        return d;
    }

    // Straight legs into and out of a loop of radius ρ around q_{i0} on [ta, tb].
    // The loop starts facing x, ends facing y, and makes `turns` extra turns.
    inline Path loop_path(const PrimarySystem& sys, Vec x, Vec y, double t1, double t2, std::size_t i0, double rho,
                          int turns, const MinimizeOptions& opts)
    {
        const double T = sys.period(), D = t2 - t1;
        const double tc = t1 + D * std::abs(x) / (std::abs(x) + std::abs(y));
        const double dc = std::min(0.5 * T, 0.25 * D);
        const double ta = tc - 0.5 * dc, tb = tc + 0.5 * dc;
        const Vec qa = sys.positions(ta)[i0], qb = sys.positions(tb)[i0];
        const double phi_a = std::arg(x - qa);
        const double dphi = angle_diff(std::arg(y - qb), phi_a) + two_pi * turns;
        auto loop = [&](double t) {
            const double u = (t - ta) / (tb - ta);
            return sys.positions(t)[i0] + std::polar(rho, phi_a + u * dphi);
        };
        const Vec za = loop(ta), zb = loop(tb);
        auto at = [&](double t) {
            if (t <= ta) return x + (za - x) * ((t - t1) / (ta - t1));
            if (t >= tb) return zb + (y - zb) * ((t - tb) / (t2 - tb));
            return loop(t);
        };
        const double base = opts.nodes_per_period / T;
        const double Rg = grade_radius(sys, opts);
        const double loop_density = std::max(base, (64.0 + 16.0 * std::abs(dphi)) / dc);
        auto density = [&](double t) {
            if (t >= ta && t <= tb) return loop_density;
            return base * std::min(1.0, Rg / std::max(std::abs(at(t)), 1e-300));
        };
        Path p;
        p.t = graded_times(t1, t2, density, 8);
        for (double t : p.t) p.z.push_back(at(t));
        p.z.front() = x;
        p.z.back() = y;
        return p;
    }

    // Path on [t1n, t2n] that keeps the part of `p` between its crossing times
    // at the same absolute times and stretches the outer legs.
    inline Path retime(const PrimarySystem& sys, const Path& p, double t1n, double t2n, double R0,
                       const MinimizeOptions& opts)
    {
        double ca = p.t_begin(), cb = p.t_end();
        try {
            const auto c = crossing_times(p, R0);
            ca = c.s_x;
            cb = c.s_y;
        } catch (const Error&) {
        }
        if (!(t1n < ca && cb < t2n && p.t_begin() < ca && cb < p.t_end())) return regrid(sys, time_shift(dilate(p, t2n - t1n), t1n - p.t_begin()), opts);
        Path out = p;
        const double a1 = p.t_begin(), a2 = p.t_end();
        for (double& t : out.t) {
            if (t <= ca)
                t = t1n + (t - a1) * (ca - t1n) / (ca - a1);
            else if (t >= cb)
                t = cb + (t - cb) * (t2n - cb) / (a2 - cb);
        }
        out.t.front() = t1n;
        out.t.back() = t2n;
        return regrid(sys, out, opts);
    }

    // Golden section on [lo, hi] after an equispaced scan picks the bracket.
    template <class F>
    double scan_golden(F&& f, double lo, double hi, int scan, double tol)
    {
        scan = std::max(scan, 2);
        std::vector<double> xs(scan + 1), fs(scan + 1);
        for (int k = 0; k <= scan; ++k) {
            xs[k] = lo + (hi - lo) * k / scan;
            fs[k] = f(xs[k]);
        }
        const int j = static_cast<int>(std::min_element(fs.begin(), fs.end()) - fs.begin());
        double a = xs[std::max(j - 1, 0)], b = xs[std::min(j + 1, scan)];
        double best_x = xs[j], best_f = fs[j];
        const double g = 0.5 * (std::sqrt(5.0) - 1.0);
        double c1 = b - g * (b - a), c2 = a + g * (b - a);
        double f1 = f(c1), f2 = f(c2);
        while (b - a > tol) {
            if (f1 < f2) {
                b = c2;
                c2 = c1;
                f2 = f1;
                c1 = b - g * (b - a);
                f1 = f(c1);
            } else {
                a = c1;
                c1 = c2;
                f1 = f2;
                c2 = a + g * (b - a);
                f2 = f(c2);
            }
        }
        if (f1 < best_f) {
            best_f = f1;
            best_x = c1;
        }
        if (f2 < best_f) best_x = c2;
        return best_x;
    }

    // Number of separate stretches of the path closer than `guard` to a primary.
    inline std::size_t guard_dips(const PrimarySystem& sys, const Path& p, double guard)
    {
        std::vector<Vec> q(sys.size());
        std::size_t dips = 0;
        bool inside = false;
        for (std::size_t k = 0; k < p.size(); ++k) {
            sys.positions(p.t[k], q.data());
            double d = std::numeric_limits<double>::infinity();
            for (const Vec& qi : q) d = std::min(d, std::abs(p.z[k] - qi));
            if (d < guard && !inside) ++dips;
            inside = d < guard;
        }
        if (dips == 0 && min_primary_distance(sys, p).d_min < guard) dips = 1;
        return dips;
    }

} // namespace detail

/// Loop paths from x to y in the requested class: straight legs and one loop
/// around a constrained primary, with the turn count chosen so that ν rounds to
/// the target. One path per constrained primary that admits such a loop.
inline std::vector<Path> tied_guesses(const PrimarySystem& sys, Vec x, Vec y, double t1, double t2,
                                      const TiedClass& cls, const MinimizeOptions& opts = {})
{
    validate_class(cls, sys);
    if (!(t2 > t1)) throw InvalidArgument("tied_guess: t2 must exceed t1");
    const double R0 = tied_core_radius(sys);
    if (std::abs(x) < R0 || std::abs(y) < R0) throw InvalidArgument("tied_guess: endpoints must lie outside the core");
    const double guard = collision_guard(sys, opts);
    std::vector<Path> out;
    for (std::size_t center : {cls.i0, cls.i1}) {
        const double rho = 0.35 * detail::pair_separation(sys, center);
        // ν changes by ±1 per extra turn, so the turn count follows from ν at zero turns.
        const auto nu0 = detail::try_winding(detail::loop_path(sys, x, y, t1, t2, center, rho, 0, opts), sys, cls, R0);
        if (!nu0) continue;
        const long sign = center == cls.i0 ? 1 : -1;
        const long k0 = sign * (cls.nu_target - std::lround(*nu0));
        for (long k : {k0, k0 - 1, k0 + 1}) {
            Path p = detail::loop_path(sys, x, y, t1, t2, center, rho, static_cast<int>(k), opts);
            const auto nu = detail::try_winding(p, sys, cls, R0);
            if (!nu || std::lround(*nu) != cls.nu_target) continue;
            if (min_primary_distance(sys, p).d_min <= guard) continue;
            out.push_back(std::move(p));
            break;
        }
    }
    if (out.empty())
        throw InitializationFailure("tied_guess: no loop around a constrained primary realizes relative winding " +
                                    std::to_string(cls.nu_target));
    return out;
}

/// The lowest-action path among tied_guesses.
inline Path tied_guess(const PrimarySystem& sys, Vec x, Vec y, double t1, double t2, const TiedClass& cls, double h,
                       const MinimizeOptions& opts = {})
{
    auto all = tied_guesses(sys, x, y, t1, t2, cls, opts);
    std::size_t best = 0;
    double best_action = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < all.size(); ++k) {
        const double a = action(sys, all[k], h, opts.action).total;
        if (a < best_action) {
            best_action = a;
            best = k;
        }
    }
    return all[best];
}

//=============================================================================
// Tied minimization

struct TiedOptions {
    MinimizeOptions minimize;
    /// Phase grid per endpoint for a cold start (G × G cells).
    int phase_grid = 8;
    /// Whole periods tried past the last improvement in each enumeration direction.
    int patience = 2;
    /// Coordinate-wise golden-section sweeps over the endpoint times.
    int sweeps = 2;
    /// Half-width of the endpoint-time search around a warm start, in periods.
    double warm_width = 0.5;
    /// Step rejection keeps the constrained primaries at least this fraction
    /// of the collision guard away.
    double reject_fraction = 0.5;
    /// Also minimize without the constraint at the final endpoint times.
    bool compare_untied = true;
    /// Grid density near the primaries used by the tied solves (see MinimizeOptions).
    double approach_nodes = 8.0;
};

struct TiedSolve {
    double t1 = 0.0, t2 = 0.0;
    double action = 0.0;
    double nu = 0.0;
    MinimizeStatus status = MinimizeStatus::max_iter;
};

struct TiedResult {
    MinimizeResult result;
    double t1 = 0.0, t2 = 0.0;
    CrossingTimes crossing;
    double nu = 0.0;
    double core_radius = 0.0;
    /// Separate near-collisions closer than the collision guard.
    std::size_t collision_dips = 0;
    std::optional<CollisionEvent> collision_fit;
    /// Path length ∫|γ̇| dt.
    double length = 0.0;
    /// Unconstrained minimum at the same endpoint times, and its ν (NaN when undefined).
    double untied_action = std::numeric_limits<double>::quiet_NaN();
    double untied_nu = std::numeric_limits<double>::quiet_NaN();
    /// Rounded ν of every accepted iterate of the final solve.
    std::vector<long> accepted_classes;
    bool class_invariant = true;
    std::vector<TiedSolve> solves;
    std::vector<std::string> notes;
};

namespace detail {

    class TiedSolver {
      public:
        TiedSolver(const PrimarySystem& sys, Vec x, Vec y, double h, const TiedClass& cls, const TiedOptions& opts)
            : sys_(sys), x_(x), y_(y), h_(h), cls_(cls), opts_(opts), R0_(tied_core_radius(sys))
        {
            guard_ = collision_guard(sys, opts.minimize);
            constrained_ = opts.minimize;
            constrained_.approach_nodes = std::max(constrained_.approach_nodes, opts.approach_nodes);
            constrained_.admissible = [this](const Path& p) { return admissible(p); };
        }

        double core_radius() const { return R0_; }

        bool admissible(const Path& p) const
        {
            const double keep = opts_.reject_fraction * guard_;
            if (relative_clearance(p, sys_, cls_.i0) <= keep || relative_clearance(p, sys_, cls_.i1) <= keep)
                return false;
            const auto nu = try_winding(p, sys_, cls_, R0_);
            return nu && std::lround(*nu) == cls_.nu_target;
        }

        // Constrained fixed-time solve from the admissible seeds.
        std::optional<MinimizeResult> solve(double t1, double t2, const std::vector<Path>& seeds,
                                            std::vector<TiedSolve>* log, bool refined = false,
                                            std::vector<long>* classes = nullptr) const
        {
            const FixedEndProblem fp{x_, y_, t1, t2, h_};
            std::optional<MinimizeResult> best;
            MinimizeOptions o = constrained_;
            if (classes)
                o.on_accept = [&](const Path& p) {
                    const auto nu = try_winding(p, sys_, cls_, R0_);
                    classes->push_back(nu ? std::lround(*nu) : std::numeric_limits<long>::min());
                };
            for (const auto& seed : seeds) {
                if (!admissible(seed)) continue;
                MinimizeResult r;
                try {
                    if (refined) {
                        r = minimize_refined(sys_, fp, seed, o);
                    } else {
                        r = minimize_fixed_end(sys_, fp, seed, o);
                        // The descent may move the path close to a primary the
                        // seed's grid did not resolve; solve once more on a grid
                        // built from the result.
                        Path again = regrid(sys_, r.path, o);
                        if (admissible(again)) {
                            auto r2 = minimize_fixed_end(sys_, fp, again, o);
                            if (admissible(r2.path)) r = std::move(r2);
                        }
                    }
                } catch (const NumericalFailure&) {
                    continue;
                }
                classify(r, o);
                if (!admissible(r.path)) continue;
                if (!best || r.action.total < best->action.total) best = std::move(r);
            }
            if (best && log) {
                const auto nu = try_winding(best->path, sys_, cls_, R0_);
                log->push_back({t1, t2, best->action.total, nu ? *nu : std::numeric_limits<double>::quiet_NaN(),
                                best->status});
            }
            return best;
        }

        std::vector<Path> guesses(double t1, double t2) const { return tied_guesses(sys_, x_, y_, t1, t2, cls_, opts_.minimize); }

        double lower_bound(double D) const
        {
            const double L = std::max({std::abs(y_ - x_), std::abs(x_) + std::abs(y_) - 2.0 * R0_, 2.0});
            return L * L / (2.0 * D) + h_ * D;
        }

        const PrimarySystem& sys() const { return sys_; }
        const TiedClass& cls() const { return cls_; }
        const MinimizeOptions& minimize_options() const { return constrained_; }

      private:
        // A near-collision with a constrained primary is allowed and reported; one
        // with any other primary gets the deformation restart.
        void classify(MinimizeResult& r, const MinimizeOptions& o) const
        {
            if (r.status != MinimizeStatus::collision_suspected) return;
            if (r.dmin.body == cls_.i0 || r.dmin.body == cls_.i1) {
                r.status = r.iterations >= o.max_iter ? MinimizeStatus::max_iter
                           : r.grad_norm <= o.tol     ? MinimizeStatus::converged
                                                      : MinimizeStatus::stalled;
                r.notes.push_back("near-collision with constrained primary " + std::to_string(r.dmin.body) +
                                  " at t = " + format_double(r.dmin.t));
                return;
            }
            r = collision_escape(sys_, r, h_, o);
        }

        const PrimarySystem& sys_;
        Vec x_, y_;
        double h_;
        TiedClass cls_;
        TiedOptions opts_;
        double R0_;
        double guard_ = 0.0;
        MinimizeOptions constrained_;
    };

    struct CellBest {
        double action = std::numeric_limits<double>::infinity();
        int n = 0;
        double t1 = 0.0, t2 = 0.0;
        Path path;
        std::vector<TiedSolve> log;
    };

    // Duration enumeration for one (s1, s2) cell.
    inline CellBest tied_cell(const TiedSolver& S, double s1, double s2, double D_star, int patience)
    {
        const double T = S.sys().period();
        const double base = s2 - s1;
        int n_min = static_cast<int>(std::ceil((1e-9 * T - base) / T));
        while (base + n_min * T <= 1e-9 * T) ++n_min;
        const int n0 = std::max(n_min, static_cast<int>(std::lround((D_star - base) / T)));
        CellBest best;
        std::optional<Path> prev_up, prev_down;
        auto run = [&](int n, std::optional<Path>& prev) -> int {
            const double D = base + n * T;
            if (std::isfinite(best.action) && S.lower_bound(D) > best.action) return -1;
            std::vector<Path> seeds;
            if (prev) seeds.push_back(retime(S.sys(), *prev, s1, s1 + D, S.core_radius(), S.minimize_options()));
            std::optional<MinimizeResult> r = S.solve(s1, s1 + D, seeds, &best.log);
            if (!r) {
                try {
                    r = S.solve(s1, s1 + D, S.guesses(s1, s1 + D), &best.log);
                } catch (const InitializationFailure&) {
                }
            }
            if (!r) return 0;
            prev = r->path;
            if (!std::isfinite(best.action) || better(r->action.total, n, best.action, best.n)) {
                best.action = r->action.total;
                best.n = n;
                best.t1 = s1;
                best.t2 = s1 + D;
                best.path = r->path;
                return 1;
            }
            return 0;
        };
        int since = 0;
        for (int n = n0; n < n0 + 100000; ++n) {
            const int s = run(n, prev_up);
            if (s < 0) break;
            since = s > 0 ? 0 : since + 1;
            if (patience > 0 && since >= patience) break;
            if (!prev_down && prev_up) prev_down = prev_up;
        }
        since = 0;
        for (int n = n0 - 1; n >= n_min; --n) {
            const int s = run(n, prev_down);
            if (s < 0) break;
            since = s > 0 ? 0 : since + 1;
            if (patience > 0 && since >= patience) break;
        }
        return best;
    }

} // namespace detail

/// Minimize the action over paths of the tied class from x to y, over both
/// endpoint phases and the duration. Without a warm start the endpoint phases
/// are scanned on a G × G grid and the result is shifted by whole periods so
/// that s_x ∈ [0, T). With a warm start the endpoint times are searched
/// around the warm path's own times and the path keeps its absolute timing.
inline TiedResult minimize_tied(const PrimarySystem& sys, Vec x, Vec y, double h, const TiedClass& cls,
                                const TiedOptions& opts = {}, const Path* warm = nullptr)
{
    validate_class(cls, sys);
    if (!(h > 0)) throw InvalidArgument("minimize_tied: h must be positive");
    const double R0 = tied_core_radius(sys);
    if (!(std::abs(x) >= R0) || !(std::abs(y) >= R0))
        throw InvalidArgument("minimize_tied: endpoints must satisfy |x|, |y| >= R0 = " + format_double(R0));
    const double T = sys.period();
    detail::TiedSolver S(sys, x, y, h, cls, opts);
    TiedResult out;
    out.core_radius = R0;

    double t1 = 0.0, t2 = 0.0;
    Path anchor;
    double best_action = std::numeric_limits<double>::infinity();
    double width = 0.0;
    if (!warm) {
        const int G = std::max(1, opts.phase_grid);
        const double D_star = (std::abs(x) + std::abs(y)) / std::sqrt(2.0 * h);
        std::vector<detail::CellBest> cells(G * G);
        const int threads = std::max(1, std::min(opts.minimize.threads, G * G));
        auto work = [&](int c) {
            cells[c] = detail::tied_cell(S, T * (c / G) / G, T * (c % G) / G, D_star, opts.patience);
        };
        if (threads > 1) {
            std::atomic<int> next{0};
            std::vector<std::thread> pool;
            for (int w = 0; w < threads; ++w)
                pool.emplace_back([&] {
                    for (int c = next++; c < G * G; c = next++) work(c);
                });
            for (auto& th : pool) th.join();
        } else {
            for (int c = 0; c < G * G; ++c) work(c);
        }
        int bc = -1;
        for (int c = 0; c < G * G; ++c) {
            out.solves.insert(out.solves.end(), cells[c].log.begin(), cells[c].log.end());
            if (!std::isfinite(cells[c].action)) continue;
            if (bc < 0 || detail::better(cells[c].action, cells[c].n, cells[bc].action, cells[bc].n)) bc = c;
        }
        if (bc < 0)
            throw InitializationFailure("minimize_tied: no phase cell produced an admissible path in class " +
                                        std::to_string(cls.nu_target));
        t1 = cells[bc].t1;
        t2 = cells[bc].t2;
        anchor = std::move(cells[bc].path);
        best_action = cells[bc].action;
        width = G > 1 ? T / G : 0.0;
    } else {
        if (std::abs(warm->z.front() - x) > 1e-9 * (1 + std::abs(x)) ||
            std::abs(warm->z.back() - y) > 1e-9 * (1 + std::abs(y)))
            throw InvalidArgument("minimize_tied: warm path endpoints do not match x and y");
        t1 = warm->t_begin();
        t2 = warm->t_end();
        Path w = *warm;
        w.z.front() = x;
        w.z.back() = y;
        auto r = S.solve(t1, t2, {regrid(sys, w, S.minimize_options())}, &out.solves);
        if (!r) throw InitializationFailure("minimize_tied: warm path is not in the requested class");
        anchor = std::move(r->path);
        best_action = r->action.total;
        width = opts.warm_width * T;
    }

    // Coordinate-wise golden section on the two endpoint times.
    if (width > 0) {
        const double tol = opts.minimize.phase_tol * T;
        for (int sweep = 0; sweep < opts.sweeps; ++sweep) {
            const double before = best_action;
            for (int coord = 0; coord < 2; ++coord) {
                const Path base_path = anchor;
                auto f = [&](double t) {
                    const double a = coord == 0 ? t : t1, b = coord == 0 ? t2 : t;
                    if (!(b - a > 0.25 * T)) return std::numeric_limits<double>::infinity();
                    auto r = S.solve(a, b, {detail::retime(sys, base_path, a, b, R0, S.minimize_options())}, &out.solves);
                    if (!r) return std::numeric_limits<double>::infinity();
                    if (r->action.total < best_action) {
                        best_action = r->action.total;
                        anchor = r->path;
                        t1 = a;
                        t2 = b;
                    }
                    return r->action.total;
                };
                const double c = coord == 0 ? t1 : t2;
                const int scan = warm ? 4 : 2;
                detail::scan_golden(f, c - width, c + width, scan, tol);
            }
            if (!(best_action < before * (1 - 1e-10))) break;
        }
    }

    // Final solve with grid refinement; ν is recorded on every accepted iterate.
    std::optional<MinimizeResult> fin;
    if (opts.minimize.max_refine > 0) fin = S.solve(t1, t2, {anchor}, nullptr, true, &out.accepted_classes);
    if (!fin || fin->action.total > best_action * (1 + 1e-6)) {
        out.accepted_classes.clear();
        fin = S.solve(t1, t2, {anchor}, nullptr, false, &out.accepted_classes);
    }
    if (!fin) throw NumericalFailure("minimize_tied: final constrained solve failed");
    out.result = std::move(*fin);
    for (long c : out.accepted_classes)
        if (c != cls.nu_target) out.class_invariant = false;

    if (!warm) {
        // Whole-period shift so that the first core crossing lies in [0, T).
        const auto c = crossing_times(out.result.path, R0);
        const double shift = -T * std::floor(c.s_x / T);
        out.result.path = time_shift(out.result.path, shift);
        out.result.dmin.t += shift;
        t1 += shift;
        t2 += shift;
        for (auto& s : out.solves) {
            s.t1 += shift;
            s.t2 += shift;
        }
    }
    out.t1 = t1;
    out.t2 = t2;
    const Path& p = out.result.path;
    out.crossing = crossing_times(p, R0);
    out.nu = relative_winding(p, sys, cls.i0, cls.i1, out.crossing);
    for (std::size_t k = 0; k + 1 < p.size(); ++k) out.length += std::abs(p.z[k + 1] - p.z[k]);

    const double guard = collision_guard(sys, opts.minimize);
    out.collision_dips = detail::guard_dips(sys, p, guard);
    if (out.collision_dips > 0) {
        const auto d = min_primary_distance(sys, p);
        try {
            out.collision_fit = fit_asymptotics(p, sys, d.body, d.t, 0.05 * T, guard);
        } catch (const Error& e) {
            out.notes.push_back(std::string("collision fit failed: ") + e.what());
        }
    }

    if (opts.compare_untied) {
        MinimizeOptions free = opts.minimize;
        free.admissible = nullptr;
        free.on_accept = nullptr;
        const FixedEndProblem fp{x, y, t1, t2, h};
        auto seeds = detail::fresh_seeds(sys, x, y, t1, t2, free);
        seeds.push_back(p);
        if (auto r = detail::solve_seeds(sys, fp, seeds, free, nullptr)) {
            out.untied_action = r->action.total;
            if (const auto nu = detail::try_winding(r->path, sys, cls, R0)) out.untied_nu = *nu;
            if (out.untied_action > out.result.action.total * (1 + 1e-9))
                out.notes.push_back("unconstrained descent ended above the tied minimum");
        }
    }
    return out;
}

//=============================================================================
// Bi-hyperbolic continuation

struct BiQuery {
    double h = 1.0;
    double theta_minus = 0.0;
    double theta_plus = 0.0;
    TiedClass cls;
};

struct BiSchedule {
    double R2 = 0.0;
    /// Endpoint radii |x_n| = |y_n|, increasing.
    std::vector<double> radii;
    /// Extra time on each side of the first level's core crossing interval.
    double window_margin = 1.0;
    double tol_position = 1e-5;
    double tol_velocity = 1e-4;
};

/// Smallest R₂ for the continuation: it must exceed 2√2·R₁ and clear the core by one unit.
inline double min_bi_radius(const PrimarySystem& sys)
{
    return std::max(2.0 * std::sqrt(2.0) * sys.far_field().R1, tied_core_radius(sys) + 1.0);
}

/// Radii R₂·2ⁿ for n = 1..levels.
inline BiSchedule default_bi_schedule(const PrimarySystem& sys, int levels = 12)
{
    if (levels < 2) throw InvalidArgument("default_bi_schedule: at least two levels are needed");
    BiSchedule s;
    s.R2 = min_bi_radius(sys);
    for (int n = 1; n <= levels; ++n) s.radii.push_back(s.R2 * std::ldexp(1.0, n));
    s.window_margin = sys.period();
    return s;
}

struct BiOptions {
    TiedOptions tied;
    bool stop_on_convergence = true;
    double tail_fraction = 0.25;
};

struct BiStep {
    int level = 0;
    double radius = 0.0;
    double action = 0.0;
    double untied_action = std::numeric_limits<double>::quiet_NaN();
    double t1 = 0.0, t2 = 0.0;
    CrossingTimes crossing;
    /// Last R₂ crossing before s_x and first one after s_y.
    double tau_x = 0.0, tau_y = 0.0;
    double nu = 0.0;
    std::size_t collision_dips = 0;
    std::size_t floor_violations_in = 0, floor_violations_out = 0;
    bool class_invariant = true;
    double diff_position = std::numeric_limits<double>::quiet_NaN();
    double diff_velocity = std::numeric_limits<double>::quiet_NaN();
    double extrap_position = std::numeric_limits<double>::quiet_NaN();
    double extrap_velocity = std::numeric_limits<double>::quiet_NaN();
    MinimizeStatus status = MinimizeStatus::converged;
    std::size_t solves = 0;
};

struct Bracket {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void add(double v)
    {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    bool positive() const { return lo > 0 && std::isfinite(hi); }
};

struct BihyperbolicSolution {
    Path path;
    std::vector<Vec> velocity;
    double action = 0.0;
    double untied_action = std::numeric_limits<double>::quiet_NaN();
    double el_residual = 0.0;
    MinimizeStatus status = MinimizeStatus::converged;
    CrossingTimes crossing;
    double nu = 0.0;
    double core_radius = 0.0;
    DistanceRecord dmin;
    std::size_t collision_dips = 0;
    std::optional<CollisionEvent> collision_fit;
    bool class_invariant = true;
    /// Escape reports of the outgoing leg and of the time-reversed incoming leg.
    EscapeReport outgoing, incoming;
    bool verified_out = false, verified_in = false;
    double target_speed = 0.0;
    double theta_minus = 0.0, theta_plus = 0.0;
    /// Brackets of s_y − s_x, τ_y − s_y and s_x − τ_x over the continuation.
    Bracket core_time, exit_time, entry_time;
    std::vector<BiStep> history;
    bool converged = false;
    std::vector<double> window_times;
    std::vector<Vec> window_position, window_velocity;
    std::vector<std::string> notes;
};

class BihyperbolicContinuationFailure : public ContinuationFailure {
  public:
    BihyperbolicContinuationFailure(const std::string& what, BihyperbolicSolution partial)
        : ContinuationFailure(what), partial_(std::move(partial))
    {
    }
    const BihyperbolicSolution& partial() const { return partial_; }

  private:
    BihyperbolicSolution partial_;
};

/// Time reversal t ↦ −t.
inline Path reverse_time(const Path& p)
{
    Path r;
    for (std::size_t k = p.size(); k-- > 0;) {
        r.t.push_back(-p.t[k]);
        r.z.push_back(p.z[k]);
    }
    return r;
}

namespace detail {

    // Extend a level's minimizer to the next radii along both rays with radial
    // Kepler legs, keeping the absolute timing of the original path.
    inline Path extend_both(const Path& p, double m, double h, double r0, double r1, double theta_minus,
                            double theta_plus)
    {
        const Path in = kepler_radial_tail(m, h, r0, r1, std::polar(1.0, theta_minus), 0.0);
        const Path head = time_shift(reverse_time(in), p.t_begin());
        const Path out = kepler_radial_tail(m, h, r0, r1, std::polar(1.0, theta_plus), p.t_end());
        Path w = concatenate(concatenate(head, p), out);
        w.z.front() = r1 * std::polar(1.0, theta_minus);
        w.z.back() = r1 * std::polar(1.0, theta_plus);
        return w;
    }

    // Last time before s at which |z| = R, by linear interpolation.
    inline double last_entry_time(const Path& p, double R, double s)
    {
        return -first_exit_time(reverse_time(subpath(p, p.t_begin(), s)), R);
    }

} // namespace detail

/// Continuation of tied minimizers between x_n = |x_n|e^{iθ₋} and y_n = |y_n|e^{iθ₊}
/// on a unit-period system. Each level is warm-started from the previous
/// minimizer extended radially on both sides; convergence is measured on a
/// window around the first level's core crossing.
inline BihyperbolicSolution solve_bihyperbolic(const PrimarySystem& sys, const BiQuery& q, const BiSchedule& sched,
                                               const BiOptions& opts = {})
{
    if (!(q.h > 0)) throw InvalidArgument("solve_bihyperbolic: h must be positive");
    for (double th : {q.theta_minus, q.theta_plus})
        if (!(th >= 0 && th < two_pi)) throw InvalidArgument("solve_bihyperbolic: angles must lie in [0, 2pi)");
    validate_class(q.cls, sys);
    if (sched.radii.size() < 2) throw InvalidArgument("solve_bihyperbolic: schedule needs at least two radii");
    if (sched.R2 < min_bi_radius(sys) * (1 - 1e-12))
        throw InvalidArgument("solve_bihyperbolic: R2 must be at least max(2 sqrt(2) R1, R0 + 1)");
    for (std::size_t k = 0; k < sched.radii.size(); ++k)
        if (!(sched.radii[k] > (k ? sched.radii[k - 1] : sched.R2)))
            throw InvalidArgument("solve_bihyperbolic: radii must increase and exceed R2");

    const double m = sys.total_mass();
    const double floor_speed = std::sqrt(1.5 * m / sched.R2);
    const double guard = collision_guard(sys, opts.tied.minimize);

    BihyperbolicSolution sol;
    sol.target_speed = std::sqrt(2.0 * q.h);
    sol.theta_minus = q.theta_minus;
    sol.theta_plus = q.theta_plus;
    std::optional<Path> warm;
    std::vector<detail::WindowSample> samples;
    std::vector<double> radii_done;
    TiedResult last;
    for (std::size_t lvl = 0; lvl < sched.radii.size(); ++lvl) {
        const double R = sched.radii[lvl];
        const Vec x = R * std::polar(1.0, q.theta_minus), y = R * std::polar(1.0, q.theta_plus);
        last = minimize_tied(sys, x, y, q.h, q.cls, opts.tied, warm ? &*warm : nullptr);
        const Path& p = last.result.path;

        BiStep st;
        st.level = static_cast<int>(lvl) + 1;
        st.radius = R;
        st.action = last.result.action.total;
        st.untied_action = last.untied_action;
        st.t1 = last.t1;
        st.t2 = last.t2;
        st.crossing = last.crossing;
        st.nu = last.nu;
        st.collision_dips = last.collision_dips;
        st.class_invariant = last.class_invariant;
        st.status = last.result.status;
        st.solves = last.solves.size();
        st.tau_y = first_exit_time(subpath(p, last.crossing.s_y, p.t_end()), sched.R2);
        st.tau_x = detail::last_entry_time(p, sched.R2, last.crossing.s_x);
        st.floor_violations_out = detail::radial_floor_violations(p, st.tau_y, floor_speed);
        st.floor_violations_in = detail::radial_floor_violations(reverse_time(p), -st.tau_x, floor_speed);
        sol.core_time.add(st.crossing.s_y - st.crossing.s_x);
        sol.exit_time.add(st.tau_y - st.crossing.s_y);
        sol.entry_time.add(st.crossing.s_x - st.tau_x);

        // The window is fixed by the first level; later levels keep its absolute times.
        if (sol.window_times.empty())
            sol.window_times = uniform_times(std::max(p.t_begin(), last.crossing.s_x - sched.window_margin),
                                             std::min(p.t_end(), last.crossing.s_y + sched.window_margin), 400);
        const auto cur = detail::sample_window(p, sol.window_times);
        samples.push_back(cur);
        radii_done.push_back(R);
        const std::size_t L = samples.size();
        if (L >= 2) {
            std::tie(st.diff_position, st.diff_velocity) = detail::window_distance(samples[L - 2], cur);
            if (st.diff_position < sched.tol_position && st.diff_velocity < sched.tol_velocity) sol.converged = true;
        }
        detail::WindowSample limit = L >= 2 ? detail::extrapolate_window(samples, radii_done, 1) : cur;
        if (L >= 3) {
            std::vector<detail::WindowSample> before(samples.begin(), samples.end() - 1);
            std::vector<double> rb(radii_done.begin(), radii_done.end() - 1);
            const auto earlier = detail::extrapolate_window(before, rb, 1);
            std::tie(st.extrap_position, st.extrap_velocity) = detail::window_distance(earlier, limit);
            if (st.extrap_position < sched.tol_position && st.extrap_velocity < sched.tol_velocity)
                sol.converged = true;
        }
        sol.window_position = limit.z;
        sol.window_velocity = limit.v;
        sol.history.push_back(st);
        if (sol.converged && opts.stop_on_convergence) break;
        if (lvl + 1 < sched.radii.size())
            warm = detail::extend_both(p, m, q.h, R, sched.radii[lvl + 1], q.theta_minus, q.theta_plus);
    }

    const Path& p = last.result.path;
    sol.path = p;
    sol.velocity = differentiate(p.t, p.z);
    sol.action = last.result.action.total;
    sol.untied_action = last.untied_action;
    sol.el_residual = last.result.el_residual;
    sol.status = last.result.status;
    sol.crossing = last.crossing;
    sol.nu = last.nu;
    sol.core_radius = last.core_radius;
    sol.dmin = last.result.dmin;
    sol.collision_dips = detail::guard_dips(sys, p, guard);
    sol.collision_fit = last.collision_fit;
    for (const auto& st : sol.history) sol.class_invariant = sol.class_invariant && st.class_invariant;
    sol.notes = last.notes;
    sol.notes.insert(sol.notes.end(), last.result.notes.begin(), last.result.notes.end());

    const Path out_leg = subpath(p, sol.crossing.s_y, p.t_end());
    sol.outgoing = escape_report(polar_series(out_leg, differentiate(out_leg.t, out_leg.z)), sys, opts.tail_fraction);
    const Path in_leg = reverse_time(subpath(p, p.t_begin(), sol.crossing.s_x));
    sol.incoming = escape_report(polar_series(in_leg, differentiate(in_leg.t, in_leg.z)), sys, opts.tail_fraction);
    sol.verified_out = sol.outgoing.certificate.valid && sol.outgoing.certificate.violations == 0;
    sol.verified_in = sol.incoming.certificate.valid && sol.incoming.certificate.violations == 0;
    if (!sol.verified_out) sol.notes.push_back("escape certificate of the outgoing leg invalid; result unverified");
    if (!sol.verified_in) sol.notes.push_back("escape certificate of the incoming leg invalid; result unverified");
    if (!sol.converged)
        throw BihyperbolicContinuationFailure("solve_bihyperbolic: window did not converge within the schedule", sol);
    return sol;
}

/// Map a solution on the λ-blown-up system back to the original period.
inline BihyperbolicSolution rescale_general_period(BihyperbolicSolution s, double lambda)
{
    if (!(lambda > 0)) throw InvalidArgument("rescale_general_period: lambda must be positive");
    if (lambda == 1.0) return s;
    const double a = std::pow(lambda, -2.0 / 3.0), b = 1.0 / lambda, c = std::cbrt(lambda);
    for (auto& t : s.path.t) t *= b;
    for (auto& z : s.path.z) z *= a;
    for (auto& v : s.velocity) v *= c;
    s.action /= c;
    s.untied_action /= c;
    s.crossing.s_x *= b;
    s.crossing.s_y *= b;
    s.core_radius *= a;
    s.dmin.d_min *= a;
    s.dmin.t *= b;
    s.target_speed *= c;
    detail::rescale_escape(s.outgoing, a, b, c);
    detail::rescale_escape(s.incoming, a, b, c);
    for (Bracket* br : {&s.core_time, &s.exit_time, &s.entry_time}) {
        br->lo *= b;
        br->hi *= b;
    }
    for (auto& t : s.window_times) t *= b;
    for (auto& z : s.window_position) z *= a;
    for (auto& v : s.window_velocity) v *= c;
    for (auto& st : s.history) {
        st.radius *= a;
        st.action /= c;
        st.untied_action /= c;
        st.t1 *= b;
        st.t2 *= b;
        st.crossing.s_x *= b;
        st.crossing.s_y *= b;
        st.tau_x *= b;
        st.tau_y *= b;
        st.diff_position *= a;
        st.diff_velocity *= c;
        st.extrap_position *= a;
        st.extrap_velocity *= c;
    }
    return s;
}

} // namespace hyperflow
