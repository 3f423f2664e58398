#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "core.hpp"
#include "ephemeris.hpp"
#include "path.hpp"

namespace hyperflow {

// Monitors for escaping orbits of  z'' = −m z/|z|³ + F(z, t)  written in polar
// form. F is the pull of the primaries beyond a point mass at the origin, so
// far out |F| ≤ m/|z|² and |F| ≤ α₂/|z|³.

struct PolarSeries {
    std::vector<double> t, r, theta, rdot, omega, speed;
    std::size_t size() const { return t.size(); }
};

namespace detail {

    inline PolarSeries polar_from(const Path& p, const std::vector<Vec>& v)
    {
        PolarSeries s;
        const std::size_t n = p.size();
        s.t = p.t;
        s.r.resize(n);
        s.theta.resize(n);
        s.rdot.resize(n);
        s.omega.resize(n);
        s.speed.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            const Vec z = p.z[k];
            const double r = std::abs(z);
            if (!(r > 0)) throw SingularityError("polar_series: node at the origin", 0, p.t[k]);
            s.r[k] = r;
            const double a = std::arg(z);
            if (k == 0) {
                s.theta[k] = a;
            } else {
                const double step = std::arg(z / p.z[k - 1]);
                if (std::abs(step) >= pi * (1 - 1e-12))
                    throw UnwrapAmbiguity("polar_series: angular jump of pi or more between t = " +
                                          format_double(p.t[k - 1]) + " and " + format_double(p.t[k]));
                s.theta[k] = s.theta[k - 1] + step;
            }
            s.rdot[k] = dot(z, v[k]) / r;
            s.omega[k] = cross(z, v[k]);
            s.speed[k] = std::abs(v[k]);
        }
        return s;
    }

} // namespace detail

/// Polar decomposition of a sampled path with velocities from five-point
/// differences (one-sided at the ends).
inline PolarSeries polar_series(const Path& p)
{
    if (p.size() < 2) throw InvalidArgument("polar_series: need at least 2 nodes");
    return detail::polar_from(p, differentiate(p.t, p.z));
}

/// Polar decomposition with known velocities, e.g. from an integrator.
inline PolarSeries polar_series(const Path& p, const std::vector<Vec>& velocity)
{
    if (velocity.size() != p.size()) throw InvalidArgument("polar_series: velocity count differs from node count");
    if (p.size() < 1) throw InvalidArgument("polar_series: empty path");
    return detail::polar_from(p, velocity);
}

inline void write_polar_csv(std::ostream& os, const PolarSeries& s)
{
    os << "t,r,theta,rdot,omega,speed\n";
    for (std::size_t k = 0; k < s.size(); ++k)
        os << format_double(s.t[k]) << ',' << format_double(s.r[k]) << ',' << format_double(s.theta[k]) << ','
           << format_double(s.rdot[k]) << ',' << format_double(s.omega[k]) << ',' << format_double(s.speed[k])
           << '\n';
}

inline void write_polar_csv(const std::string& file, const PolarSeries& s)
{
    std::ofstream os(file);
    if (!os) throw InvalidArgument("cannot open " + file + " for writing");
    write_polar_csv(os, s);
}

/// Index of the node at time t (to relative round-off).
inline std::size_t node_index(const PolarSeries& s, double t)
{
    const auto it = std::lower_bound(s.t.begin(), s.t.end(), t);
    std::size_t k = static_cast<std::size_t>(it - s.t.begin());
    const double tol = 1e-12 * std::max(1.0, std::abs(t));
    if (k < s.size() && std::abs(s.t[k] - t) <= tol) return k;
    if (k > 0 && std::abs(s.t[k - 1] - t) <= tol) return k - 1;
    throw InvalidArgument("no node at t = " + format_double(t));
}

//=============================================================================
// Radial escape

/// Radial speed above which the orbit escapes when |F| ≤ m/r².
inline double escape_threshold(double m, double r) { return std::sqrt(6.0 * m / r); }

/// Same threshold for a perturbation bounded by C/r².
inline double escape_threshold(double m, double C, double r) { return std::sqrt(3.0 * (m + C) / r); }

struct EscapeCertificate {
    double t1 = 0.0;
    double r1 = 0.0;
    double rdot1 = 0.0;
    double threshold = 0.0;
    double v_floor = 0.0;
    bool valid = false;
    /// Later nodes where ṙ ≤ v_floor; only counted for a valid certificate.
    std::size_t violations = 0;
    double first_violation = std::numeric_limits<double>::quiet_NaN();
    double min_rdot_after = std::numeric_limits<double>::quiet_NaN();
};

inline EscapeCertificate check_escape(const PolarSeries& s, double m, double R1, double t1)
{
    const std::size_t k1 = node_index(s, t1);
    EscapeCertificate c;
    c.t1 = s.t[k1];
    c.r1 = s.r[k1];
    c.rdot1 = s.rdot[k1];
    c.threshold = escape_threshold(m, c.r1);
    c.v_floor = 0.5 * c.rdot1;
    // A launch exactly at the threshold must not fail on the rounding of z·ż/|z|.
    c.valid = c.r1 >= R1 && c.rdot1 > 0 && c.rdot1 >= c.threshold * (1 - 1e-12);
    if (!c.valid) return c;
    c.min_rdot_after = std::numeric_limits<double>::infinity();
    for (std::size_t k = k1 + 1; k < s.size(); ++k) {
        c.min_rdot_after = std::min(c.min_rdot_after, s.rdot[k]);
        if (!(s.rdot[k] > c.v_floor)) {
            if (c.violations == 0) c.first_violation = s.t[k];
            ++c.violations;
        }
    }
    return c;
}

inline EscapeCertificate check_escape(const PolarSeries& s, const PrimarySystem& sys, double t1)
{
    return check_escape(s, sys.total_mass(), sys.far_field().R1, t1);
}

/// First node from which escape is certified, if any.
inline std::optional<std::size_t> first_escape_node(const PolarSeries& s, double m, double R1)
{
    for (std::size_t k = 0; k < s.size(); ++k)
        if (s.r[k] >= R1 && s.rdot[k] > 0 && s.rdot[k] >= escape_threshold(m, s.r[k]) * (1 - 1e-12)) return k;
    return std::nullopt;
}

//=============================================================================
// Angular momentum and limiting direction

struct OmegaBound {
    double bound = 0.0;
    double measured_sup = 0.0;
    bool satisfied = true;
};

/// |ω(t₁)| + α₂/(v₀ r(t₁)), checked against the measured sup of |ω| after t₁.
inline OmegaBound angular_momentum_bound(const PolarSeries& s, double t1, double v0, double alpha2,
                                         double slack = 1e-6)
{
    if (!(v0 > 0)) throw InvalidArgument("angular_momentum_bound: v0 must be positive");
    const std::size_t k1 = node_index(s, t1);
    OmegaBound b;
    b.bound = std::abs(s.omega[k1]) + alpha2 / (v0 * s.r[k1]);
    for (std::size_t k = k1; k < s.size(); ++k) b.measured_sup = std::max(b.measured_sup, std::abs(s.omega[k]));
    b.satisfied = b.measured_sup <= b.bound + slack;
    return b;
}

/// Largest change of θ after a point at radius r with angular momentum at most
/// |ω|, while ṙ stays ≥ v₀ and |F| ≤ C/|z|³.
inline double angle_tail_bound(double omega, double v0, double r, double C)
{
    return std::abs(omega) / (v0 * r) + C / (v0 * v0 * r * r);
}

struct AngleEstimate {
    double theta_inf = 0.0;
    double bound = 0.0;
};

inline AngleEstimate limit_angle(const PolarSeries& s, double t1, double v0, double omega_bound, double C)
{
    if (!(v0 > 0)) throw InvalidArgument("limit_angle: v0 must be positive");
    node_index(s, t1);
    AngleEstimate a;
    a.theta_inf = s.theta.back();
    a.bound = angle_tail_bound(omega_bound, v0, s.r.back(), C);
    return a;
}

/// Largest violation of the tail bound over checkpoints after t₁: for each
/// node c, the later variation of θ minus the bound at c. Non-positive means
/// the bound held everywhere.
inline double angle_tail_excess(const PolarSeries& s, double t1, double v0, double C)
{
    const std::size_t k1 = node_index(s, t1);
    double worst = -std::numeric_limits<double>::infinity();
    // Running extremes of θ from the end make this linear.
    double hi = s.theta.back(), lo = s.theta.back();
    for (std::size_t k = s.size(); k-- > k1;) {
        hi = std::max(hi, s.theta[k]);
        lo = std::min(lo, s.theta[k]);
        const double var = std::max(hi - s.theta[k], s.theta[k] - lo);
        worst = std::max(worst, var - angle_tail_bound(s.omega[k], v0, s.r[k], C));
    }
    return worst;
}

//=============================================================================
// Limiting speed

struct SpeedEstimate {
    double v_inf = 0.0;
    double error = 0.0;
};

/// Extrapolate |ż| to 1/r = 0 over the last `tail_fraction` of the nodes.
inline SpeedEstimate limit_speed(const PolarSeries& s, double tail_fraction, double omega_bound = -1.0)
{
    if (!(tail_fraction > 0 && tail_fraction <= 1)) throw InvalidArgument("limit_speed: tail_fraction in (0, 1]");
    const std::size_t n = s.size();
    const std::size_t m = static_cast<std::size_t>(std::ceil(tail_fraction * n));
    if (m < 10) throw InvalidArgument("limit_speed: tail shorter than 10 nodes");
    const std::size_t k0 = n - m;
    // Least squares in u = 1/r with monomials of degree ≤ deg.
    auto fit = [&](int deg, double* rms) {
        const int q = deg + 1;
        std::vector<double> A(q * q, 0.0), b(q, 0.0);
        const double scale = s.r[k0];
        for (std::size_t k = k0; k < n; ++k) {
            const double u = scale / s.r[k];
            double pw[3] = {1.0, u, u * u};
            for (int i = 0; i < q; ++i) {
                b[i] += pw[i] * s.speed[k];
                for (int j = 0; j < q; ++j) A[i * q + j] += pw[i] * pw[j];
            }
        }
        // Gaussian elimination with partial pivoting on the small normal system.
        for (int c = 0; c < q; ++c) {
            int piv = c;
            for (int r = c + 1; r < q; ++r)
                if (std::abs(A[r * q + c]) > std::abs(A[piv * q + c])) piv = r;
            for (int j = 0; j < q; ++j) std::swap(A[c * q + j], A[piv * q + j]);
            std::swap(b[c], b[piv]);
            if (A[c * q + c] == 0.0) throw NumericalFailure("limit_speed: degenerate tail");
            for (int r = c + 1; r < q; ++r) {
                const double f = A[r * q + c] / A[c * q + c];
                for (int j = c; j < q; ++j) A[r * q + j] -= f * A[c * q + j];
                b[r] -= f * b[c];
            }
        }
        std::vector<double> x(q);
        for (int c = q - 1; c >= 0; --c) {
            double acc = b[c];
            for (int j = c + 1; j < q; ++j) acc -= A[c * q + j] * x[j];
            x[c] = acc / A[c * q + c];
        }
        double ss = 0.0;
        for (std::size_t k = k0; k < n; ++k) {
            const double u = scale / s.r[k];
            double v = x[0] + x[1] * u + (q > 2 ? x[2] * u * u : 0.0);
            ss += (v - s.speed[k]) * (v - s.speed[k]);
        }
        *rms = std::sqrt(ss / static_cast<double>(m));
        return x[0];
    };
    double rms1 = 0.0, rms2 = 0.0;
    const double v1 = fit(1, &rms1);
    const double v2 = fit(2, &rms2);
    if (omega_bound < 0) {
        omega_bound = 0.0;
        for (std::size_t k = k0; k < n; ++k) omega_bound = std::max(omega_bound, std::abs(s.omega[k]));
    }
    SpeedEstimate e;
    e.v_inf = v2;
    e.error = std::abs(v2 - v1) + rms2 + std::abs(omega_bound / s.r.back());
    return e;
}

//=============================================================================
// Combined estimate

struct AsymptoticEstimate {
    double theta_inf = 0.0;
    double theta_bound = 0.0;
    double v_inf = 0.0;
    double v_bound = 0.0;
    double omega_bound = 0.0;
};

struct EscapeReport {
    EscapeCertificate certificate;
    OmegaBound omega;
    AsymptoticEstimate estimate;
};

/// Certificate from the first node where the escape hypothesis holds, then
/// the angular momentum bound and the limiting direction and speed with v₀ = ṙ(t₁)/2.
inline EscapeReport escape_report(const PolarSeries& s, const PrimarySystem& sys, double tail_fraction = 0.25)
{
    const FarField& ff = sys.far_field();
    const double m = sys.total_mass();
    EscapeReport rep;
    const auto k1 = first_escape_node(s, m, ff.R1);
    if (!k1) {
        rep.certificate.t1 = s.t.back();
        rep.certificate.r1 = s.r.back();
        rep.certificate.rdot1 = s.rdot.back();
        rep.certificate.threshold = escape_threshold(m, s.r.back());
        rep.certificate.v_floor = 0.5 * s.rdot.back();
        rep.estimate.theta_inf = s.theta.back();
        rep.estimate.theta_bound = std::numeric_limits<double>::infinity();
        rep.estimate.v_inf = s.speed.back();
        rep.estimate.v_bound = std::numeric_limits<double>::infinity();
        rep.estimate.omega_bound = std::numeric_limits<double>::infinity();
        return rep;
    }
    const double t1 = s.t[*k1];
    rep.certificate = check_escape(s, m, ff.R1, t1);
    const double v0 = rep.certificate.v_floor;
    rep.omega = angular_momentum_bound(s, t1, v0, ff.alpha2);
    const auto a = limit_angle(s, t1, v0, rep.omega.bound, ff.alpha2);
    rep.estimate.theta_inf = a.theta_inf;
    rep.estimate.theta_bound = a.bound;
    rep.estimate.omega_bound = rep.omega.bound;
    const std::size_t tail = s.size() - *k1;
    const double frac = std::min(1.0, std::max(tail_fraction, 10.0 / static_cast<double>(s.size())));
    if (tail >= 10) {
        const auto v = limit_speed(s, std::min(frac, static_cast<double>(tail) / s.size()), rep.omega.bound);
        rep.estimate.v_inf = v.v_inf;
        rep.estimate.v_bound = v.error;
    } else {
        rep.estimate.v_inf = s.speed.back();
        rep.estimate.v_bound = std::numeric_limits<double>::infinity();
    }
    return rep;
}

} // namespace hyperflow
