#pragma once

#include <array>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/numeric/odeint.hpp>
#include <cmath>
#include <limits>
#include <vector>

#include "action.hpp"
#include "core.hpp"
#include "ephemeris.hpp"
#include "path.hpp"

namespace hyperflow {

struct IntegratorOptions {
    double rtol = 1e-10;
    double atol = 1e-12;
    /// Largest allowed step; 0 means unbounded.
    double max_step = 0.0;
    /// Output samples when no explicit output times are given.
    std::size_t samples = 1001;
    /// Explicit output times (monotone in the integration direction).
    std::vector<double> output_times;
    /// Stop when the body comes closer than this to a primary.
    double near_primary_floor = 1e-9;
};

struct IntegrationResult {
    Path path;
    std::vector<Vec> velocity;
    bool collision = false;
    std::size_t body = 0;
    double t_stop = 0.0;
    Vec z_stop = 0.0, v_stop = 0.0;
};

/// Adaptive Dormand–Prince 5(4) integration of z̈ = ∂_z U(z, t) with dense output.
inline IntegrationResult integrate_ode(const PrimarySystem& sys, Vec z0, Vec v0, double t0, double t1,
                                       const IntegratorOptions& opts = {})
{
    namespace odeint = boost::numeric::odeint;
    using State = std::array<double, 4>;
    if (!(opts.rtol > 0) || !(opts.atol > 0)) throw InvalidArgument("integrate_ode: tolerances must be positive");
    if (t1 == t0) throw InvalidArgument("integrate_ode: empty time span");
    const auto q0 = sys.positions(t0);
    for (std::size_t i = 0; i < q0.size(); ++i)
        if (z0 == q0[i]) throw SingularityError(i, t0);

    // The integration runs in elapsed time s = dir·(t − t0) ≥ 0; the equation of
    // motion is invariant under time reversal, so only the velocity flips sign.
    const double dir = t1 > t0 ? 1.0 : -1.0;
    auto phys = [&](double s) { return t0 + dir * s; };
    std::vector<Vec> q(sys.size());
    auto rhs = [&](const State& st, State& ds, double s) {
        sys.positions(phys(s), q.data());
        const Vec z(st[0], st[1]);
        Vec a = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) {
            const Vec d = z - q[i];
            const double r = std::abs(d);
            a -= sys.mass(i) * d / (r * r * r);
        }
        ds = {st[2], st[3], a.real(), a.imag()};
    };
    auto closest = [&](const State& st, double t, std::size_t& body) {
        sys.positions(t, q.data());
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < q.size(); ++i) {
            const double d = std::abs(Vec(st[0], st[1]) - q[i]);
            if (d < best) {
                best = d;
                body = i;
            }
        }
        return best;
    };

    std::vector<double> outs = opts.output_times;
    if (outs.empty()) {
        const std::size_t n = std::max<std::size_t>(opts.samples, 2);
        outs.resize(n);
        for (std::size_t k = 0; k < n; ++k) outs[k] = t0 + (t1 - t0) * static_cast<double>(k) / (n - 1);
        outs.back() = t1;
    }
    for (std::size_t k = 0; k < outs.size(); ++k) {
        if (dir * (outs[k] - t0) < 0 || dir * (outs[k] - t1) > 0 || (k > 0 && dir * (outs[k] - outs[k - 1]) < 0))
            throw InvalidArgument("integrate_ode: output times must be ordered along the integration direction");
    }

    const double span = std::abs(t1 - t0);
    const double max_dt = opts.max_step > 0 ? opts.max_step : span;
    auto stepper = odeint::make_dense_output(opts.atol, opts.rtol, max_dt, odeint::runge_kutta_dopri5<State>());
    State st{z0.real(), z0.imag(), dir * v0.real(), dir * v0.imag()};
    stepper.initialize(st, 0.0, std::min(1e-3 * span, 1e-3));

    IntegrationResult res;
    auto emit = [&](double t, const State& x) {
        res.path.t.push_back(t);
        res.path.z.emplace_back(x[0], x[1]);
        res.velocity.emplace_back(dir * x[2], dir * x[3]);
    };
    std::size_t next = 0;
    while (next < outs.size() && outs[next] == t0) emit(outs[next++], st);
    State cur{};
    while (next < outs.size()) {
        const auto [sa, sb] = stepper.do_step(rhs);
        while (next < outs.size() && dir * (outs[next] - t0) <= sb) {
            stepper.calc_state(dir * (outs[next] - t0), cur);
            emit(outs[next], cur);
            ++next;
        }
        std::size_t body = 0;
        const State& end = stepper.current_state();
        const double tb = phys(sb);
        const double dclose = closest(end, tb, body);
        const bool underflow = sb - sa < 1e-14 * std::max(1.0, std::abs(tb));
        if (underflow && dclose > 1e-3 * sys.guard_scale())
            throw NumericalFailure("integrate_ode: step size underflow at t = " + std::to_string(tb));
        if (dclose < opts.near_primary_floor || underflow) {
            res.collision = true;
            res.body = body;
            res.t_stop = tb;
            res.z_stop = Vec(end[0], end[1]);
            res.v_stop = dir * Vec(end[2], end[3]);
            return res;
        }
    }
    res.t_stop = res.path.t.back();
    res.z_stop = res.path.z.back();
    res.v_stop = res.velocity.back();
    return res;
}

/// Max over interior nodes of |second-difference acceleration − force|,
/// normalized by the largest force magnitude at those nodes.
inline double el_residual(const PrimarySystem& sys, const Path& p)
{
    if (p.size() < 3) throw InvalidArgument("el_residual: at least one interior node required");
    double worst = 0.0, fmax = 0.0;
    for (std::size_t k = 1; k + 1 < p.size(); ++k) {
        const double h0 = p.t[k] - p.t[k - 1], h1 = p.t[k + 1] - p.t[k];
        const Vec acc = 2.0 * ((p.z[k + 1] - p.z[k]) / h1 - (p.z[k] - p.z[k - 1]) / h0) / (h0 + h1);
        const Vec F = force(sys, p.z[k], p.t[k]);
        worst = std::max(worst, std::abs(acc - F));
        fmax = std::max(fmax, std::abs(F));
    }
    return worst / fmax;
}

//=============================================================================

/// Hyperbolic (or radial) Kepler orbit about a fixed mass m at the origin.
/// Energy h > 0, angular momentum ell, periapsis direction `orientation`,
/// periapsis time t_peri. For ell = 0 the motion is radial along
/// −e^{i orientation}, reaching the origin at t_peri.
class KeplerConic {
  public:
    KeplerConic(double m, double h, double ell, double orientation, double t_peri = 0.0)
        : m_(m), h_(h), ell_(ell), rot_(std::polar(1.0, orientation)), tp_(t_peri)
    {
        if (!(h > 0)) throw Unsupported("kepler_conic: only the hyperbolic branch h > 0 is supported");
        if (!(m > 0)) throw InvalidArgument("kepler_conic: mass must be positive");
        a_ = m / (2 * h);
        e_ = std::sqrt(1.0 + 2.0 * h * ell * ell / (m * m));
        b_ = a_ * std::sqrt(e_ * e_ - 1.0);
        n_ = std::sqrt(m / (a_ * a_ * a_));
    }
    double eccentricity() const { return e_; }
    double v_inf() const { return std::sqrt(2.0 * h_); }
    double energy() const { return h_; }
    double angular_momentum() const { return ell_; }

    /// Hyperbolic anomaly at time t (safeguarded Newton on e sinh H − H = M).
    double anomaly(double t) const
    {
        const double M = n_ * (t - tp_);
        if (M == 0.0) return 0.0;
        const double sgn = M > 0 ? 1.0 : -1.0;
        const double Ma = std::abs(M);
        // Bracket [lo, hi] for H >= 0 solving f(H) = e sinh H − H − Ma = 0.
        double lo = 0.0, hi = std::max(1.0, std::asinh(Ma / e_) + 1.0);
        while (e_ * std::sinh(hi) - hi - Ma < 0) hi *= 2;
        double H = e_ > 1.0 + 1e-12 ? std::asinh(Ma / e_) : std::cbrt(6.0 * Ma);
        H = std::clamp(H, lo, hi);
        for (int it = 0; it < 200; ++it) {
            const double f = e_ * std::sinh(H) - H - Ma;
            if (f > 0)
                hi = H;
            else
                lo = H;
            const double fp = e_ * std::cosh(H) - 1.0;
            double Hn = fp > 0 ? H - f / fp : 0.5 * (lo + hi);
            if (!(Hn > lo && Hn < hi)) Hn = 0.5 * (lo + hi);
            if (std::abs(Hn - H) <= 1e-15 * std::max(1.0, H)) {
                H = Hn;
                break;
            }
            H = Hn;
            if (hi - lo <= 1e-15 * std::max(1.0, hi)) break;
        }
        return sgn * H;
    }

    void state(double t, Vec& z, Vec& v) const
    {
        const double H = anomaly(t);
        const double ch = std::cosh(H), sh = std::sinh(H);
        const double denom = e_ * ch - 1.0;
        const double Hdot = n_ / denom;
        const double sgn = ell_ < 0 ? -1.0 : 1.0;
        const Vec zp(a_ * (e_ - ch), sgn * b_ * sh);
        const Vec vp(-a_ * sh * Hdot, sgn * b_ * ch * Hdot);
        z = rot_ * zp;
        v = rot_ * vp;
    }
    Vec position(double t) const
    {
        Vec z, v;
        state(t, z, v);
        return z;
    }

  private:
    double m_, h_, ell_;
    Vec rot_;
    double tp_;
    double a_, e_, b_, n_;
};

inline KeplerConic kepler_conic(double m, double h, double ell, double orientation, double t_peri = 0.0)
{
    return KeplerConic(m, h, ell, orientation, t_peri);
}

struct RadialOracle {
    double action;
    double duration;
};

/// Zero-angular-momentum escape with ṙ = √(2h + 2m/r) from r0 to r1:
/// duration = ∫ dr/ṙ and action = ∫ (½ṙ² + m/r + h)/ṙ dr.
inline RadialOracle kepler_oracle_radial_action(double m, double h, double r0, double r1)
{
    if (!(r0 > 0) || !(r1 > r0)) throw InvalidArgument("kepler_oracle_radial_action: need 0 < r0 < r1");
    if (!(h > 0) || m < 0) throw InvalidArgument("kepler_oracle_radial_action: need h > 0 and m >= 0");
    using boost::math::quadrature::gauss_kronrod;
    auto rdot = [&](double r) { return std::sqrt(2 * h + 2 * m / r); };
    auto integrand_t = [&](double r) { return 1.0 / rdot(r); };
    auto integrand_a = [&](double r) {
        const double v = rdot(r);
        return (0.5 * v * v + m / r + h) / v;
    };
    double err = 0.0;
    const double D = gauss_kronrod<double, 61>::integrate(integrand_t, r0, r1, 20, 1e-13, &err);
    const double A = gauss_kronrod<double, 61>::integrate(integrand_a, r0, r1, 20, 1e-13, &err);
    return {A, D};
}

} // namespace hyperflow
