#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "asymptotics.hpp"
#include "minimize.hpp"
#include "verify.hpp"

namespace hyperflow {

enum class Direction { forward, backward };

struct HyperbolicQuery {
    double h = 0.0;
    double theta = 0.0;
    Vec x = 0.0;
    double t_x = 0.0;
    Direction direction = Direction::forward;
};

struct ContinuationSchedule {
    double R2 = 0.0;
    std::vector<double> radii;
    /// Length of the comparison window starting at t_x.
    double window = 2.0;
    double tol_position = 1e-5;
    double tol_velocity = 1e-4;
};

struct HyperbolicOptions {
    MinimizeOptions minimize;
    /// Whole periods tried past the last improvement in each enumeration direction.
    int patience = 2;
    /// Stop at the first level whose window difference meets the tolerances.
    bool stop_on_convergence = false;
    double tail_fraction = 0.25;
};

struct ContinuationStep {
    int level = 0;
    double radius = 0.0;
    double action = 0.0;
    double duration = 0.0;
    double s2 = 0.0;
    int periods = 0;
    double tau_y = 0.0;
    double action_bound = 0.0;
    bool action_bound_ok = true;
    std::size_t radial_floor_violations = 0;
    double window_radius = 0.0;
    /// Window differences from the previous level (NaN at the first level).
    double diff_position = std::numeric_limits<double>::quiet_NaN();
    double diff_velocity = std::numeric_limits<double>::quiet_NaN();
    /// Same differences between successive window limits extrapolated in 1/R
    /// (NaN while too few levels exist).
    double extrap_position = std::numeric_limits<double>::quiet_NaN();
    double extrap_velocity = std::numeric_limits<double>::quiet_NaN();
    MinimizeStatus status = MinimizeStatus::converged;
    std::size_t solves = 0;
};

struct HyperbolicSolution {
    Path path;
    std::vector<Vec> velocity;
    EscapeReport escape;
    std::vector<ContinuationStep> history;
    double action = 0.0;
    double el_residual = 0.0;
    DistanceRecord dmin;
    /// Time of the closest approach to a primary away from t_x, and its distance.
    double interior_dmin = std::numeric_limits<double>::infinity();
    bool converged = false;
    /// Window limit extrapolated in 1/R from the last levels, sampled on window_times.
    std::vector<double> window_times;
    std::vector<Vec> window_position, window_velocity;
    /// Escape certificate valid at the final level.
    bool verified = false;
    double target_speed = 0.0;
    double target_angle = 0.0;
    Direction direction = Direction::forward;
    std::vector<std::string> notes;
};

class HyperbolicContinuationFailure : public ContinuationFailure {
  public:
    HyperbolicContinuationFailure(const std::string& what, HyperbolicSolution partial)
        : ContinuationFailure(what), partial_(std::move(partial))
    {
    }
    const HyperbolicSolution& partial() const { return partial_; }

  private:
    HyperbolicSolution partial_;
};

//=============================================================================

inline Vec ray_target(double theta, double R)
{
    if (!(R > 0)) throw InvalidArgument("ray_target: radius must be positive");
    return std::polar(R, theta);
}

/// First time the path reaches radius R2, interpolating |z| linearly between nodes.
inline double first_exit_time(const Path& p, double R2)
{
    if (std::abs(p.z.front()) >= R2) return p.t.front();
    for (std::size_t k = 0; k + 1 < p.size(); ++k) {
        const double a = std::abs(p.z[k]), b = std::abs(p.z[k + 1]);
        if (a < R2 && b >= R2) return p.t[k] + (R2 - a) / (b - a) * (p.t[k + 1] - p.t[k]);
    }
    throw NotFound("first_exit_time: path never reaches radius " + format_double(R2));
}

inline double min_continuation_radius(const PrimarySystem& sys, Vec x)
{
    return std::max(2.0 * std::sqrt(2.0) * sys.far_field().R1, std::abs(x) + 1.0);
}

/// Radii R2·2ⁿ for n = 1..levels with R2 at its smallest admissible value.
inline ContinuationSchedule default_schedule(const PrimarySystem& sys, Vec x, int levels = 8)
{
    if (levels < 2) throw InvalidArgument("default_schedule: at least two levels are needed");
    ContinuationSchedule s;
    s.R2 = min_continuation_radius(sys, x);
    for (int n = 1; n <= levels; ++n) s.radii.push_back(s.R2 * std::ldexp(1.0, n));
    s.window = 2.0 * sys.period();
    return s;
}

/// Upper bound on the free-time action to a target at distance R: (16+h)R + 6m + 3√2 m/R1 + h.
inline double free_time_action_bound(const PrimarySystem& sys, double h, double R)
{
    const double m = sys.total_mass();
    return (16.0 + h) * R + 6.0 * m + 3.0 * std::sqrt(2.0) * m / sys.far_field().R1 + h;
}

namespace detail {

    // Positions and velocities at `times`, by cubic Hermite interpolation with
    // five-point nodal velocities.
    inline void sample_c1(const Path& p, const std::vector<Vec>& v, const std::vector<double>& times,
                          std::vector<Vec>& z, std::vector<Vec>& dz)
    {
        z.resize(times.size());
        dz.resize(times.size());
        for (std::size_t i = 0; i < times.size(); ++i) {
            const double t = times[i];
            std::size_t k = static_cast<std::size_t>(std::upper_bound(p.t.begin(), p.t.end(), t) - p.t.begin());
            k = std::clamp<std::size_t>(k, 1, p.size() - 1) - 1;
            const double h = p.t[k + 1] - p.t[k], s = (t - p.t[k]) / h;
            const double h00 = 2 * s * s * s - 3 * s * s + 1, h10 = s * s * s - 2 * s * s + s;
            const double h01 = -2 * s * s * s + 3 * s * s, h11 = s * s * s - s * s;
            z[i] = h00 * p.z[k] + h10 * h * v[k] + h01 * p.z[k + 1] + h11 * h * v[k + 1];
            const double d00 = (6 * s * s - 6 * s) / h, d10 = 3 * s * s - 4 * s + 1;
            const double d01 = (-6 * s * s + 6 * s) / h, d11 = 3 * s * s - 2 * s;
            dz[i] = d00 * p.z[k] + d10 * v[k] + d01 * p.z[k + 1] + d11 * v[k + 1];
        }
    }

    struct WindowSample {
        std::vector<Vec> z, v;
    };

    inline WindowSample sample_window(const Path& p, const std::vector<double>& times)
    {
        WindowSample w;
        sample_c1(p, differentiate(p.t, p.z), times, w.z, w.v);
        return w;
    }

    inline std::pair<double, double> window_distance(const WindowSample& a, const WindowSample& b)
    {
        double dp = 0.0, dv = 0.0;
        for (std::size_t i = 0; i < a.z.size(); ++i) {
            dp = std::max(dp, std::abs(a.z[i] - b.z[i]));
            dv = std::max(dv, std::abs(a.v[i] - b.v[i]));
        }
        return {dp, dv};
    }

    // Richardson table in 1/R: row k removes the terms up to 1/Rᵏ. Returns the
    // most extrapolated entry built from the given levels.
    inline WindowSample extrapolate_window(const std::vector<WindowSample>& levels, const std::vector<double>& R,
                                           int order)
    {
        std::vector<WindowSample> row(levels.end() - (order + 1), levels.end());
        std::vector<double> rr(R.end() - (order + 1), R.end());
        for (int k = 1; k <= order; ++k) {
            std::vector<WindowSample> next;
            for (std::size_t j = 0; j + 1 < row.size(); ++j) {
                const double a = std::pow(rr[j], k), b = std::pow(rr[j + k], k);
                const double wa = -a / (b - a), wb = b / (b - a);
                WindowSample e;
                for (std::size_t i = 0; i < row[j].z.size(); ++i) {
                    e.z.push_back(wa * row[j].z[i] + wb * row[j + 1].z[i]);
                    e.v.push_back(wa * row[j].v[i] + wb * row[j + 1].v[i]);
                }
                next.push_back(std::move(e));
            }
            row = std::move(next);
        }
        return row.back();
    }

    // Radial Kepler motion of energy h outward from radius r0 to r1 along the
    // direction e, starting at time t0: ṙ = √(2h + 2m/r).
    inline Path kepler_radial_tail(double m, double h, double r0, double r1, Vec e, double t0, int samples = 64)
    {
        namespace bq = boost::math::quadrature;
        auto inv_speed = [&](double r) { return 1.0 / std::sqrt(2.0 * h + 2.0 * m / r); };
        Path p;
        double t = t0, prev = r0;
        p.t.push_back(t0);
        p.z.push_back(r0 * e);
        for (int k = 1; k <= samples; ++k) {
            const double r = r0 * std::pow(r1 / r0, static_cast<double>(k) / samples);
            t += bq::gauss_kronrod<double, 15>::integrate(inv_speed, prev, r, 0, 0.0);
            p.t.push_back(t);
            p.z.push_back(r * e);
            prev = r;
        }
        return p;
    }

    inline std::size_t radial_floor_violations(const Path& p, double tau, double floor)
    {
        const auto v = differentiate(p.t, p.z);
        std::size_t bad = 0;
        for (std::size_t k = 0; k < p.size(); ++k)
            if (p.t[k] >= tau && dot(p.z[k], v[k]) / std::abs(p.z[k]) < floor) ++bad;
        return bad;
    }

} // namespace detail

/// Continuation of free-time minimizers from x at t_x to targets receding along
/// the ray of angle θ, on a unit-period system.
inline HyperbolicSolution solve_forward(const PrimarySystem& sys, const HyperbolicQuery& q,
                                        const ContinuationSchedule& sched, const HyperbolicOptions& hopts = {})
{
    if (!(q.h > 0)) throw InvalidArgument("solve_forward: h must be positive");
    if (!(q.theta >= 0 && q.theta < two_pi)) throw InvalidArgument("solve_forward: theta must lie in [0, 2pi)");
    if (!std::isfinite(std::abs(q.x))) throw InvalidArgument("solve_forward: x must be finite");
    if (sched.radii.size() < 2) throw InvalidArgument("solve_forward: schedule needs at least two radii");
    if (sched.R2 < min_continuation_radius(sys, q.x) * (1 - 1e-12))
        throw InvalidArgument("solve_forward: R2 must be at least max(2 sqrt(2) R1, |x| + 1)");
    for (std::size_t k = 0; k < sched.radii.size(); ++k)
        if (!(sched.radii[k] > (k ? sched.radii[k - 1] : sched.R2)))
            throw InvalidArgument("solve_forward: radii must increase and exceed R2");

    const double T = sys.period();
    const double m = sys.total_mass();
    // Work from the departure phase in [0, T) and shift back at the end.
    const double s1 = q.t_x - T * std::floor(q.t_x / T);
    const double shift = q.t_x - s1;
    MinimizeOptions mopts = hopts.minimize;
    mopts.patience = hopts.patience;
    const double floor_speed = std::sqrt(1.5 * m / sched.R2);

    HyperbolicSolution sol;
    sol.target_speed = std::sqrt(2.0 * q.h);
    sol.target_angle = q.theta;
    std::optional<Path> warm;
    std::vector<detail::WindowSample> samples;
    std::vector<double> radii_done;
    std::vector<double> wtimes;
    FreeTimeResult last;
    for (std::size_t lvl = 0; lvl < sched.radii.size(); ++lvl) {
        const double R = sched.radii[lvl];
        const Vec y = ray_target(q.theta, R);
        auto ap = optimize_arrival_phase(sys, q.x, y, s1, q.h, mopts, warm ? &*warm : nullptr);
        last = std::move(ap.free_time);
        const Path& p = last.result.path;

        ContinuationStep st;
        st.level = static_cast<int>(lvl) + 1;
        st.radius = R;
        st.action = last.result.action.total;
        st.duration = last.duration;
        st.s2 = last.s2;
        st.periods = last.n;
        st.status = last.result.status;
        st.solves = last.solves.size();
        st.tau_y = first_exit_time(p, sched.R2);
        st.action_bound = free_time_action_bound(sys, q.h, R);
        st.action_bound_ok = st.action <= st.action_bound;
        st.radial_floor_violations = detail::radial_floor_violations(p, st.tau_y, floor_speed);
        for (std::size_t k = 0; k < p.size() && p.t[k] <= s1 + sched.window; ++k)
            st.window_radius = std::max(st.window_radius, std::abs(p.z[k]));
        // Successive minimizers on the window differ by O(1/R); the comparison is
        // made both raw and after extrapolating that term away.
        if (wtimes.empty()) wtimes = uniform_times(s1, std::min(s1 + sched.window, p.t_end()), 400);
        const auto cur = detail::sample_window(p, wtimes);
        samples.push_back(cur);
        radii_done.push_back(R);
        const std::size_t L = samples.size();
        if (L >= 2) {
            std::tie(st.diff_position, st.diff_velocity) = detail::window_distance(samples[L - 2], cur);
            if (st.diff_position < sched.tol_position && st.diff_velocity < sched.tol_velocity) sol.converged = true;
        }
        // First-order limit from the last two levels, compared with the one a
        // level earlier. Higher orders were not found to converge faster.
        const int order = static_cast<int>(std::min<std::size_t>(L - 1, 1));
        detail::WindowSample limit = order > 0 ? detail::extrapolate_window(samples, radii_done, order) : cur;
        if (order > 0 && L >= static_cast<std::size_t>(order) + 2) {
            std::vector<detail::WindowSample> before(samples.begin(), samples.end() - 1);
            std::vector<double> rb(radii_done.begin(), radii_done.end() - 1);
            const auto earlier = detail::extrapolate_window(before, rb, order);
            std::tie(st.extrap_position, st.extrap_velocity) = detail::window_distance(earlier, limit);
            if (st.extrap_position < sched.tol_position && st.extrap_velocity < sched.tol_velocity)
                sol.converged = true;
        }
        sol.window_times = wtimes;
        sol.window_position = limit.z;
        sol.window_velocity = limit.v;
        sol.history.push_back(st);
        if (sol.converged && hopts.stop_on_convergence) break;

        if (lvl + 1 < sched.radii.size()) {
            const Path tail = detail::kepler_radial_tail(m, q.h, R, sched.radii[lvl + 1],
                                                         std::polar(1.0, q.theta), p.t_end());
            warm = concatenate(p, tail);
        }
    }

    const Path& p = last.result.path;
    sol.path = time_shift(p, shift);
    for (double& t : sol.window_times) t += shift;
    sol.velocity = differentiate(sol.path.t, sol.path.z);
    sol.action = last.result.action.total;
    sol.el_residual = last.result.el_residual;
    sol.dmin = last.result.dmin;
    sol.notes = last.result.notes;
    // Closest approach away from the start, which may itself sit on a primary.
    const double guard = collision_guard(sys, mopts);
    for (std::size_t k = 1; k < p.size(); ++k) {
        const auto d = min_primary_distance(sys, subpath(p, p.t[k - 1], p.t[k]));
        if (k == 1 && std::abs(p.z[0] - sys.positions(p.t[0])[d.body]) <= guard) continue;
        sol.interior_dmin = std::min(sol.interior_dmin, d.d_min);
    }
    sol.escape = escape_report(polar_series(sol.path, sol.velocity), sys, hopts.tail_fraction);
    sol.verified = sol.escape.certificate.valid && sol.escape.certificate.violations == 0;
    if (!sol.verified) sol.notes.push_back("escape certificate invalid at the final level; result unverified");
    if (!sol.converged)
        throw HyperbolicContinuationFailure("solve_forward: window did not converge within the schedule", sol);
    return sol;
}

/// Time-reflected problem: solve forward for q̃(t) = q(2t_x − t) and mirror the result.
inline HyperbolicSolution solve_backward(const PrimarySystem& sys, const HyperbolicQuery& q,
                                         const ContinuationSchedule& sched, const HyperbolicOptions& hopts = {})
{
    const PrimarySystem refl = reflect_time(sys, q.t_x);
    HyperbolicQuery fq = q;
    fq.direction = Direction::forward;
    auto mirror = [&](HyperbolicSolution s) {
        Path p;
        std::vector<Vec> v;
        for (std::size_t k = s.path.size(); k-- > 0;) {
            p.t.push_back(2.0 * q.t_x - s.path.t[k]);
            p.z.push_back(s.path.z[k]);
            v.push_back(-s.velocity[k]);
        }
        s.path = std::move(p);
        s.velocity = std::move(v);
        s.direction = Direction::backward;
        return s;
    };
    try {
        return mirror(solve_forward(refl, fq, sched, hopts));
    } catch (const HyperbolicContinuationFailure& e) {
        throw HyperbolicContinuationFailure(e.what(), mirror(e.partial()));
    }
}

inline HyperbolicSolution solve_hyperbolic(const PrimarySystem& sys, const HyperbolicQuery& q,
                                           const ContinuationSchedule& sched, const HyperbolicOptions& hopts = {})
{
    return q.direction == Direction::forward ? solve_forward(sys, q, sched, hopts) : solve_backward(sys, q, sched, hopts);
}

/// Energy on the unit-period system obtained by blowing up with factor λ.
inline double rescaled_energy(double h, double lambda) { return std::pow(lambda, -2.0 / 3.0) * h; }

namespace detail {

    // Lengths ×a, times ×b, velocities ×c.
    inline void rescale_escape(EscapeReport& r, double a, double b, double c)
    {
        auto& e = r.estimate;
        e.v_inf *= c;
        e.v_bound *= c;
        e.omega_bound *= a * c;
        auto& cert = r.certificate;
        cert.t1 *= b;
        cert.r1 *= a;
        cert.rdot1 *= c;
        cert.threshold *= c;
        cert.v_floor *= c;
        cert.first_violation *= b;
        cert.min_rdot_after *= c;
        r.omega.bound *= a * c;
        r.omega.measured_sup *= a * c;
    }

} // namespace detail

/// Map a solution of the λ-blown-up problem back: positions ×λ^{−2/3},
/// times ×λ^{−1}, velocities ×λ^{1/3}.
inline HyperbolicSolution rescale_general_period(HyperbolicSolution s, double lambda)
{
    if (!(lambda > 0)) throw InvalidArgument("rescale_general_period: lambda must be positive");
    if (lambda == 1.0) return s;
    const double a = std::pow(lambda, -2.0 / 3.0), b = 1.0 / lambda, c = std::cbrt(lambda);
    for (auto& t : s.path.t) t *= b;
    for (auto& z : s.path.z) z *= a;
    for (auto& v : s.velocity) v *= c;
    s.action /= c;
    s.dmin.d_min *= a;
    s.dmin.t *= b;
    s.interior_dmin *= a;
    s.target_speed *= c;
    detail::rescale_escape(s.escape, a, b, c);
    for (auto& st : s.history) {
        st.radius *= a;
        st.action /= c;
        st.duration *= b;
        st.s2 *= b;
        st.tau_y *= b;
        st.action_bound /= c;
        st.window_radius *= a;
        st.diff_position *= a;
        st.diff_velocity *= c;
        st.extrap_position *= a;
        st.extrap_velocity *= c;
    }
    for (auto& t : s.window_times) t *= b;
    for (auto& z : s.window_position) z *= a;
    for (auto& v : s.window_velocity) v *= c;
    return s;
}

} // namespace hyperflow
