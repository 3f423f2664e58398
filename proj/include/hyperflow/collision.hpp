#pragma once

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "action.hpp"
#include "core.hpp"
#include "ephemeris.hpp"
#include "path.hpp"
#include "solver.hpp"

namespace hyperflow {

struct CollisionEvent {
    double t0 = 0.0;
    std::size_t i0 = 0;
    Vec sigma_minus = 1.0, sigma_plus = 1.0;
    double E0 = 0.0;
    /// Power-law fits |ζ| ≈ C |t − t0|^p on each side.
    double exponent_minus = 0.0, exponent_plus = 0.0;
    double coefficient_minus = 0.0, coefficient_plus = 0.0;
    /// RMS residuals of the log-log fits.
    double residual_minus = 0.0, residual_plus = 0.0;
    double d_min = 0.0;
};

struct BlowUpFrame {
    double lambda = 1.0;
    double t0 = 0.0;
    Path path;
    PrimarySystem system;
};

/// ζ(t) = γ(t) − q_{i0}(t) node by node.
inline Path relative_path(const Path& p, const PrimarySystem& sys, std::size_t i0)
{
    if (i0 >= sys.size()) throw InvalidArgument("relative_path: body index out of range");
    Path out = p;
    std::vector<Vec> q(sys.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
        sys.positions(p.t[k], q.data());
        out.z[k] -= q[i0];
    }
    return out;
}

/// Inverse of relative_path.
inline Path absolute_path(const Path& rel, const PrimarySystem& sys, std::size_t i0)
{
    Path out = rel;
    std::vector<Vec> q(sys.size());
    for (std::size_t k = 0; k < rel.size(); ++k) {
        sys.positions(rel.t[k], q.data());
        out.z[k] += q[i0];
    }
    return out;
}

/// Two-body energy ½|γ̇ − q̇_{i0}|² − m_{i0}/|γ − q_{i0}| at time t, from a
/// five-node stencil around t.
inline double binary_energy(const Path& p, const PrimarySystem& sys, std::size_t i0, double t)
{
    if (p.size() < 5) throw InvalidArgument("binary_energy: need at least five nodes");
    if (!(t > p.t_begin() && t < p.t_end())) throw InvalidArgument("binary_energy: t must be interior");
    std::size_t k = static_cast<std::size_t>(std::lower_bound(p.t.begin(), p.t.end(), t) - p.t.begin());
    std::size_t lo = k >= 2 ? k - 2 : 0;
    if (lo + 5 > p.size()) lo = p.size() - 5;
    std::vector<double> xs(p.t.begin() + lo, p.t.begin() + lo + 5);
    const auto w0 = fornberg_weights(t, xs, 0);
    const auto w1 = fornberg_weights(t, xs, 1);
    std::vector<Vec> q(sys.size());
    Vec zeta = 0.0, vel = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
        sys.positions(xs[j], q.data());
        const Vec r = p.z[lo + j] - q[i0];
        zeta += w0[j] * r;
        vel += w1[j] * r;
    }
    const double d = std::abs(zeta);
    if (d == 0.0) throw SingularityError(i0, t);
    return 0.5 * std::norm(vel) - sys.mass(i0) / d;
}

inline double parabolic_coefficient(double m) { return std::cbrt(4.5 * m); }

/// ζ̄(s) = (9m/2)^{1/3} |s|^{2/3} σ∓ on [−T_half, T_half], with nodes
/// clustered cubically towards the collision at s = 0.
inline Path parabolic_homothetic(double m, Vec sigma_minus, Vec sigma_plus, double T_half, std::size_t per_side = 64)
{
    if (std::abs(std::abs(sigma_minus) - 1.0) > 1e-12 || std::abs(std::abs(sigma_plus) - 1.0) > 1e-12)
        throw InvalidArgument("parabolic_homothetic: directions must be unit vectors");
    if (!(T_half > 0) || !(m > 0)) throw InvalidArgument("parabolic_homothetic: need m > 0 and T_half > 0");
    if (per_side < 2) throw InvalidArgument("parabolic_homothetic: need at least two nodes per side");
    const double c = parabolic_coefficient(m);
    Path p;
    const auto n = static_cast<long>(per_side);
    for (long k = -n; k <= n; ++k) {
        const double v = static_cast<double>(k) / n;
        const double s = T_half * v * v * v;
        p.t.push_back(s);
        p.z.push_back(c * std::pow(std::abs(s), 2.0 / 3.0) * (s < 0 ? sigma_minus : sigma_plus));
    }
    p.t.front() = -T_half;
    p.t.back() = T_half;
    return p;
}

/// Action of a radial collision-ejection leg r(s) = ρ (|s|/T)^{2/3} over
/// [0, T] about a fixed mass m: (2/3)ρ²/T + 3mT/ρ. For ρ = (9m/2)^{1/3}T^{2/3}
/// this is one half of the parabolic homothetic action.
inline double radial_leg_action(double m, double rho, double T) { return 2.0 * rho * rho / (3.0 * T) + 3.0 * m * T / rho; }

inline double homothetic_action(double m, double T)
{
    const double c = parabolic_coefficient(m);
    return 8.0 / 3.0 * c * c * std::cbrt(T);
}

//=============================================================================
// Argument bookkeeping

/// Signed angle swept by the segment a → b as seen from the origin.
inline double segment_angle(Vec a, Vec b) { return std::atan2(cross(a, b), dot(a, b)); }

/// Distance from the origin to the segment [a, b].
inline double segment_distance(Vec a, Vec b)
{
    const Vec d = b - a;
    const double L2 = std::norm(d);
    if (L2 == 0.0) return std::abs(a);
    const double u = std::clamp(-dot(a, d) / L2, 0.0, 1.0);
    return std::abs(a + u * d);
}

/// Total argument increment of a path (already relative to the center) over its nodes.
inline double winding_increment(const Path& rel)
{
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < rel.size(); ++k) total += segment_angle(rel.z[k], rel.z[k + 1]);
    return total;
}

/// Argument increment of γ around q_{i0} over the nodes with t in [ta, tb].
inline double winding_about(const Path& p, const PrimarySystem& sys, std::size_t i0, double ta, double tb)
{
    Path rel = relative_path(p, sys, i0);
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < rel.size(); ++k)
        if (rel.t[k] >= ta && rel.t[k + 1] <= tb) total += segment_angle(rel.z[k], rel.z[k + 1]);
    return total;
}

//=============================================================================

/// Power-law fit of |γ − q_{i0}| against |t − t0| on each side of t0.
inline CollisionEvent fit_asymptotics(const Path& p, const PrimarySystem& sys, std::size_t i0, double t0, double window,
                                      double guard = -1.0)
{
    if (i0 >= sys.size()) throw InvalidArgument("fit_asymptotics: body index out of range");
    if (guard < 0) guard = MinimizeOptions{}.guard_fraction * sys.guard_scale();
    const Path rel = relative_path(p, sys, i0);
    CollisionEvent ev;
    ev.t0 = t0;
    ev.i0 = i0;
    ev.d_min = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < rel.size(); ++k)
        if (std::abs(rel.t[k] - t0) <= window) ev.d_min = std::min(ev.d_min, std::abs(rel.z[k]));
    ev.d_min = std::min(ev.d_min, std::abs(rel.at(t0)));
    if (!(ev.d_min <= guard))
        throw InvalidArgument("fit_asymptotics: the path does not approach the primary within the guard");

    std::vector<std::size_t> minus, plus;
    for (std::size_t k = 0; k < rel.size(); ++k) {
        const double dt = rel.t[k] - t0;
        if (std::abs(dt) > window || std::abs(rel.z[k]) == 0.0) continue;
        if (dt < 0)
            minus.push_back(k);
        else if (dt > 0)
            plus.push_back(k);
    }
    if (minus.size() < 6 || plus.size() < 6)
        throw InvalidArgument("fit_asymptotics: window holds fewer than 6 nodes on a side");

    auto fit = [&](const std::vector<std::size_t>& idx, double& p_out, double& c_out, double& res_out) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const double n = static_cast<double>(idx.size());
        for (auto k : idx) {
            const double x = std::log(std::abs(rel.t[k] - t0)), y = std::log(std::abs(rel.z[k]));
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        const double icpt = (sy - slope * sx) / n;
        double r2 = 0.0;
        for (auto k : idx) {
            const double x = std::log(std::abs(rel.t[k] - t0)), y = std::log(std::abs(rel.z[k]));
            r2 += (y - icpt - slope * x) * (y - icpt - slope * x);
        }
        p_out = slope;
        c_out = std::exp(icpt);
        res_out = std::sqrt(r2 / n);
    };
    fit(minus, ev.exponent_minus, ev.coefficient_minus, ev.residual_minus);
    fit(plus, ev.exponent_plus, ev.coefficient_plus, ev.residual_plus);

    // Directions: the unit vector three nodes out, extrapolated with the one six nodes out.
    auto direction = [&](const std::vector<std::size_t>& idx, bool before) {
        // idx is ordered by time; nodes nearest t0 are at the back (before) or front (after).
        auto at = [&](std::size_t j) { return before ? idx[idx.size() - 1 - j] : idx[j]; };
        const std::size_t j3 = std::min<std::size_t>(2, idx.size() - 1), j6 = std::min<std::size_t>(5, idx.size() - 1);
        const Vec u1 = rel.z[at(j3)] / std::abs(rel.z[at(j3)]);
        const Vec u2 = rel.z[at(j6)] / std::abs(rel.z[at(j6)]);
        const Vec e = 2.0 * u1 - u2;
        return std::abs(e) > 0 ? e / std::abs(e) : u1;
    };
    ev.sigma_minus = direction(minus, true);
    ev.sigma_plus = direction(plus, false);

    // Binary energy at the middle of each half window, averaged.
    double esum = 0.0;
    int ecount = 0;
    for (double s : {-0.5 * window, 0.5 * window}) {
        const double t = t0 + s;
        if (t > p.t_begin() && t < p.t_end() && p.size() >= 5) {
            esum += binary_energy(p, sys, i0, t);
            ++ecount;
        }
    }
    ev.E0 = ecount ? esum / ecount : 0.0;
    return ev;
}

/// Locate the closest approach to a primary and fit the collision asymptotics
/// there, provided it falls below the guard.
inline std::optional<CollisionEvent> detect_collision(const Path& p, const PrimarySystem& sys, double guard,
                                                      std::size_t window_nodes = 8)
{
    const auto rec = min_primary_distance(sys, p);
    if (!(rec.d_min <= guard)) return std::nullopt;
    std::size_t k = static_cast<std::size_t>(std::lower_bound(p.t.begin(), p.t.end(), rec.t) - p.t.begin());
    const std::size_t lo = k > window_nodes ? k - window_nodes : 0;
    const std::size_t hi = std::min(p.size() - 1, k + window_nodes);
    const double window = std::min(rec.t - p.t[lo], p.t[hi] - rec.t);
    try {
        return fit_asymptotics(p, sys, rec.body, rec.t, window, guard);
    } catch (const InvalidArgument&) {
        CollisionEvent ev;
        ev.t0 = rec.t;
        ev.i0 = rec.body;
        ev.d_min = rec.d_min;
        return ev;
    }
}

//=============================================================================
// λ-blow-up

/// ζ^λ(s) = λ^{2/3} ζ(t0 + s/λ) on the window [t0 − δ, t0 + δ], together with
/// the equally rescaled primaries.
inline BlowUpFrame blow_up_path(const Path& p, const PrimarySystem& sys, double t0, double lambda, double delta)
{
    if (!(lambda > 0)) throw InvalidArgument("blow_up_path: lambda must be positive");
    if (!(delta > 0) || t0 - delta < p.t_begin() - 1e-12 || t0 + delta > p.t_end() + 1e-12)
        throw InvalidArgument("blow_up_path: window must lie inside the path domain");
    const double a = std::pow(lambda, 2.0 / 3.0);
    Path w = subpath(p, std::max(p.t_begin(), t0 - delta), std::min(p.t_end(), t0 + delta));
    for (std::size_t k = 0; k < w.size(); ++k) {
        w.t[k] = lambda * (w.t[k] - t0);
        w.z[k] *= a;
    }
    auto orbit = std::make_shared<AffineOrbit>(sys.orbit(), a, t0, 1.0 / lambda);
    SystemOptions so = sys.options();
    so.validate = false;
    return {lambda, t0, std::move(w), PrimarySystem(sys.masses(), orbit, so)};
}

//=============================================================================
// Kepler deformation arcs

struct KeplerArc {
    Path path;
    double action = 0.0;
    /// Action of the collision-ejection reference through the same endpoints.
    double reference_action = 0.0;
    double winding = 0.0;
    double omega_min = 0.0, omega_max = 0.0;
    MinimizeStatus status = MinimizeStatus::max_iter;
};

/// Minimize the Kepler action about a fixed mass m at the origin among
/// collision-free arcs from `za` (time −T) to `zb` (time T) whose argument
/// increment lies in (0, 2π) for winding_sign = +1 or (−2π, 0) for −1.
inline KeplerArc kepler_deform_arcs(double m, Vec za, Vec zb, double T, int winding_sign, std::size_t segments = 256,
                                    MinimizeOptions opts = {})
{
    if (!(T > 0) || !(m > 0)) throw InvalidArgument("kepler_deform_arcs: need m > 0 and T > 0");
    if (winding_sign != 1 && winding_sign != -1) throw InvalidArgument("kepler_deform_arcs: winding sign must be ±1");
    if (za == 0.0 || zb == 0.0) throw InvalidArgument("kepler_deform_arcs: endpoints must avoid the center");
    const double phi_a = std::arg(za), phi_b = std::arg(zb);
    double delta = phi_b - phi_a;
    const Vec ua = za / std::abs(za), ub = zb / std::abs(zb);
    if (std::abs(ua - ub) < 1e-12)
        throw Unsupported("kepler_deform_arcs: the incoming and outgoing directions coincide");
    while (winding_sign > 0 && delta <= 0) delta += two_pi;
    while (winding_sign > 0 && delta >= two_pi) delta -= two_pi;
    while (winding_sign < 0 && delta >= 0) delta -= two_pi;
    while (winding_sign < 0 && delta <= -two_pi) delta += two_pi;

    auto center = make_static_center(m, 2 * T);
    Path guess;
    guess.t = uniform_times(-T, T, segments);
    const double ra = std::abs(za), rb = std::abs(zb);
    for (double s : guess.t) {
        const double u = (s + T) / (2 * T);
        guess.z.push_back(std::polar((1 - u) * ra + u * rb, phi_a + u * delta));
    }
    guess.z.front() = za;
    guess.z.back() = zb;

    const double floor = 1e-12 * std::max(ra, rb);
    auto in_class = [winding_sign, floor](const Path& p) {
        double total = 0.0;
        for (std::size_t k = 0; k + 1 < p.size(); ++k) {
            if (segment_distance(p.z[k], p.z[k + 1]) <= floor) return false;
            total += segment_angle(p.z[k], p.z[k + 1]);
        }
        return winding_sign > 0 ? (total > 0 && total < two_pi) : (total < 0 && total > -two_pi);
    };
    opts.admissible = in_class;
    opts.log = nullptr;
    const auto res = minimize_fixed_end(center, {za, zb, -T, T, 0.0}, guess, opts);

    KeplerArc arc;
    arc.path = res.path;
    arc.action = res.action.total;
    arc.status = res.status;
    arc.reference_action = radial_leg_action(m, ra, T) + radial_leg_action(m, rb, T);
    arc.winding = winding_increment(res.path);
    const auto vel = differentiate(res.path.t, res.path.z);
    arc.omega_min = std::numeric_limits<double>::infinity();
    arc.omega_max = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < res.path.size(); ++k) {
        const double w = cross(res.path.z[k], vel[k]);
        arc.omega_min = std::min(arc.omega_min, w);
        arc.omega_max = std::max(arc.omega_max, w);
    }
    if (!(arc.action < arc.reference_action))
        throw NumericalFailure("kepler_deform_arcs: the arc does not lower the collision-ejection action");
    return arc;
}

//=============================================================================
// Local deformation of a colliding path

struct DeformOptions {
    /// Fraction of the window used by each blending collar.
    double collar_fraction = 0.05;
    std::size_t arc_segments = 128;
    int max_halvings = 6;
};

struct LocalDeformation {
    Path eta_plus, eta_minus;
    double delta = 0.0;
    double lambda = 0.0;
    double winding_plus = 0.0, winding_minus = 0.0;
};

/// Replace the part of γ near a collision with q_{i0} by the two Kepler arcs
/// winding either way around the primary. The arcs are computed in blow-up
/// units on [−1, 1], scaled back, and joined to γ through linear collars.
inline LocalDeformation local_deform(const Path& p, const PrimarySystem& sys, const CollisionEvent& ev, double delta,
                                     double eps, const DeformOptions& dopts = {})
{
    const std::size_t i0 = ev.i0;
    if (i0 >= sys.size()) throw InvalidArgument("local_deform: body index out of range");
    if (!(ev.t0 > p.t_begin() && ev.t0 < p.t_end())) throw InvalidArgument("local_deform: collision time must be interior");
    if (!(eps > 0)) throw InvalidArgument("local_deform: proximity cap must be positive");
    const double m = sys.mass(i0);

    for (int attempt = 0; attempt <= dopts.max_halvings; ++attempt, delta *= 0.5) {
        const double lo = ev.t0 - delta, hi = ev.t0 + delta;
        if (lo <= p.t_begin() || hi >= p.t_end()) continue;
        const double collar = dopts.collar_fraction * 2 * delta;
        const double core = delta - collar;
        const double lambda = 1.0 / core;
        const double a = std::pow(lambda, 2.0 / 3.0);

        const Path rel = relative_path(p, sys, i0);
        const Vec ra = rel.at(ev.t0 - core), rb = rel.at(ev.t0 + core);
        if (ra == 0.0 || rb == 0.0) continue;
        // ζ̄(∓1) in blow-up units, pointing along γ at the core boundary.
        const double c = parabolic_coefficient(m);
        const Vec sa = ra / std::abs(ra), sb = rb / std::abs(rb);
        const Vec za = c * sa, zb = c * sb;
        if (std::abs(sa - sb) < 1e-12) throw Unsupported("local_deform: σ₋ = σ₊");

        LocalDeformation out;
        out.delta = delta;
        out.lambda = lambda;
        bool ok = true;
        for (int sign : {+1, -1}) {
            KeplerArc arc;
            try {
                arc = kepler_deform_arcs(m, za, zb, 1.0, sign, dopts.arc_segments);
            } catch (const NumericalFailure&) {
                ok = false;
                break;
            }
            // Relative core path in original units.
            std::vector<double> ts;
            std::vector<Vec> zs;
            for (std::size_t k = 0; k < arc.path.size(); ++k) {
                ts.push_back(ev.t0 + arc.path.t[k] / lambda);
                zs.push_back(arc.path.z[k] / a);
            }
            const Vec miss_a = ra - zs.front(), miss_b = rb - zs.back();
            Path eta;
            std::vector<Vec> q(sys.size());
            auto push = [&](double t, Vec zrel) {
                sys.positions(t, q.data());
                eta.t.push_back(t);
                eta.z.push_back(zrel + q[i0]);
            };
            for (std::size_t k = 0; k < p.size() && p.t[k] < lo; ++k) {
                eta.t.push_back(p.t[k]);
                eta.z.push_back(p.z[k]);
            }
            // Collars blend the offset between γ and the scaled arc linearly to zero.
            const std::size_t collar_nodes = std::max<std::size_t>(4, dopts.arc_segments / 16);
            for (std::size_t j = 0; j < collar_nodes; ++j) {
                const double u = static_cast<double>(j) / collar_nodes;
                const double t = lo + u * collar;
                push(t, rel.at(t) - u * miss_a);
            }
            for (std::size_t k = 0; k < ts.size(); ++k) push(ts[k], zs[k]);
            for (std::size_t j = 1; j <= collar_nodes; ++j) {
                const double u = static_cast<double>(j) / collar_nodes;
                const double t = ev.t0 + core + u * collar;
                push(t, rel.at(t) - (1 - u) * miss_b);
            }
            eta.t.back() = hi;
            eta.z.back() = p.at(hi);
            for (std::size_t k = 0; k < p.size(); ++k) {
                if (p.t[k] <= hi) continue;
                eta.t.push_back(p.t[k]);
                eta.z.push_back(p.z[k]);
            }
            // Proximity to γ.
            double dev = 0.0;
            for (std::size_t k = 0; k < eta.size(); ++k) dev = std::max(dev, std::abs(eta.z[k] - p.at(eta.t[k])));
            const double w = winding_about(eta, sys, i0, lo, hi);
            const bool class_ok = sign > 0 ? (w > 0 && w < two_pi) : (w < 0 && w > -two_pi);
            if (dev > eps || !class_ok || min_primary_distance(sys, eta).d_min == 0.0) {
                ok = false;
                break;
            }
            if (sign > 0) {
                out.eta_plus = std::move(eta);
                out.winding_plus = w;
            } else {
                out.eta_minus = std::move(eta);
                out.winding_minus = w;
            }
        }
        if (ok) return out;
    }
    throw RefinementNeeded("local_deform: proximity bound not attained; retry with a smaller window");
}

} // namespace hyperflow
