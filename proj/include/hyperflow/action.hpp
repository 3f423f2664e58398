#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "core.hpp"
#include "ephemeris.hpp"
#include "path.hpp"

namespace hyperflow {

struct ActionBreakdown {
    double kinetic = 0.0;
    double potential = 0.0;
    double h_term = 0.0;
    double total = 0.0;
};

/// Symmetric 2x2 block [[xx, xy], [xy, yy]].
struct Sym2 {
    double xx = 0.0, xy = 0.0, yy = 0.0;
    Sym2& operator+=(const Sym2& o)
    {
        xx += o.xx;
        xy += o.xy;
        yy += o.yy;
        return *this;
    }
    Sym2 operator*(double s) const { return {xx * s, xy * s, yy * s}; }
    Vec apply(Vec v) const { return {xx * v.real() + xy * v.imag(), xy * v.real() + yy * v.imag()}; }
};

struct ActionOptions {
    /// Segments closer than this fraction of the guard scale to a primary are
    /// integrated adaptively.
    double near_fraction = 0.05;
    /// Segments whose relative displacement exceeds this multiple of their
    /// distance to a primary are integrated adaptively as well.
    double stretch_ratio = 0.5;
    double adaptive_rtol = 1e-13;
    int max_depth = 48;
};

struct ActionDerivatives {
    ActionBreakdown value;
    /// ∂A/∂z_k for every node, as ∂/∂x + i ∂/∂y.
    std::vector<Vec> grad;
    /// dA/dD for uniform time dilation about the first node.
    double d_duration = 0.0;
    /// dA/dσ for a rigid shift of all node times by σ.
    double d_shift = 0.0;
    /// Hessian blocks: hdiag[k] = ∂²A/∂z_k², hoff[k] = ∂²A/∂z_k∂z_{k+1}.
    std::vector<Sym2> hdiag, hoff;
    /// Same blocks with each point-mass Hessian replaced by its positive part.
    std::vector<Sym2> hdiag_pd, hoff_pd;
};

//=============================================================================

inline double potential_U(const PrimarySystem& sys, Vec z, double t)
{
    const auto q = sys.positions(t);
    double U = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double d = std::abs(z - q[i]);
        if (d == 0.0) throw SingularityError(i, t);
        U += sys.mass(i) / d;
    }
    return U;
}

/// W = U − m/|z|.
inline double split_W(const PrimarySystem& sys, Vec z, double t)
{
    if (std::abs(z) == 0.0) throw InvalidArgument("split_W: |z| must be positive");
    const auto q = sys.positions(t);
    double W = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (z == q[i]) throw SingularityError(i, t);
        W += sys.mass(i) * remainder_potential(z, q[i]);
    }
    return W;
}

/// ∂_z U, the acceleration felt by the massless body.
inline Vec force(const PrimarySystem& sys, Vec z, double t)
{
    const auto q = sys.positions(t);
    Vec g = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        const Vec d = z - q[i];
        const double r = std::abs(d);
        if (r == 0.0) throw SingularityError(i, t);
        g -= sys.mass(i) * d / (r * r * r);
    }
    return g;
}

/// ∂_z W.
inline Vec grad_W(const PrimarySystem& sys, Vec z, double t)
{
    if (std::abs(z) == 0.0) throw InvalidArgument("grad_W: |z| must be positive");
    const auto q = sys.positions(t);
    Vec g = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (z == q[i]) throw SingularityError(i, t);
        g += sys.mass(i) * remainder_gradient(z, q[i]);
    }
    return g;
}

//=============================================================================

/// Evaluates the discrete action and its derivatives. Holds scratch buffers,
/// so one instance should not be shared between threads.
class ActionEvaluator {
  public:
    explicit ActionEvaluator(const PrimarySystem& sys, ActionOptions opts = {})
        : sys_(sys), opts_(opts), q_(sys.size()), v_(sys.size()), a_(sys.size()), qa_(sys.size()),
          near_(opts.near_fraction * sys.guard_scale())
    {
    }

    const PrimarySystem& system() const { return sys_; }

    ActionBreakdown action(const Path& p, double h)
    {
        ActionDerivatives d;
        run(p, h, d, false, false, false);
        return d.value;
    }

    /// Fills value and gradient; optionally time derivatives and Hessian blocks.
    void derivatives(const Path& p, double h, ActionDerivatives& out, bool time_derivs, bool hessian)
    {
        run(p, h, out, true, time_derivs, hessian);
    }

  private:
    struct Point {
        double U;
        Vec g;
        double dUdt;
        Sym2 H;
        Sym2 Hpd;
        double dmin;
    };

    Point eval(Vec z, double t, bool need_dt, bool need_hess)
    {
        if (need_dt)
            sys_.states(t, q_.data(), v_.data(), a_.data());
        else
            sys_.positions(t, q_.data());
        Point pt{0.0, 0.0, 0.0, {}, {}, std::numeric_limits<double>::infinity()};
        for (std::size_t i = 0; i < q_.size(); ++i) {
            const Vec d = z - q_[i];
            const double r2 = std::norm(d);
            const double r = std::sqrt(r2);
            if (r == 0.0) throw SingularityError(i, t);
            const double m = sys_.mass(i);
            const double inv3 = 1.0 / (r2 * r);
            pt.U += m / r;
            pt.g -= m * inv3 * d;
            if (need_dt) pt.dUdt += m * inv3 * dot(d, v_[i]);
            if (need_hess) {
                const double inv5 = inv3 / r2;
                const double dx = d.real(), dy = d.imag();
                pt.H += Sym2{m * inv5 * (3 * dx * dx - r2), m * inv5 * 3 * dx * dy, m * inv5 * (3 * dy * dy - r2)};
                pt.Hpd += Sym2{2 * m * inv5 * dx * dx, 2 * m * inv5 * dx * dy, 2 * m * inv5 * dy * dy};
            }
            pt.dmin = std::min(pt.dmin, r);
        }
        return pt;
    }

    double panel_value(Vec za, Vec zb, double ta, double tb, double ua, double ub)
    {
        double s = 0.0;
        for (int j = 0; j < 4; ++j) {
            const double u = ua + (ub - ua) * GaussLegendre4::nodes[j];
            s += GaussLegendre4::weights[j] * eval((1 - u) * za + u * zb, ta + u * (tb - ta), false, false).U;
        }
        return s * (ub - ua);
    }

    void subdivide(Vec za, Vec zb, double ta, double tb, double ua, double ub, double whole, double tol, int depth,
                   std::vector<std::pair<double, double>>& leaves)
    {
        const double um = 0.5 * (ua + ub);
        const double left = panel_value(za, zb, ta, tb, ua, um);
        const double right = panel_value(za, zb, ta, tb, um, ub);
        if (depth >= opts_.max_depth || std::abs(left + right - whole) <= tol) {
            leaves.emplace_back(ua, um);
            leaves.emplace_back(um, ub);
            return;
        }
        subdivide(za, zb, ta, tb, ua, um, left, tol, depth + 1, leaves);
        subdivide(za, zb, ta, tb, um, ub, right, tol, depth + 1, leaves);
    }

    bool needs_adaptive(Vec za, Vec zb, double ta, double tb, double gl_dmin)
    {
        if (gl_dmin < near_) return true;
        sys_.positions(ta, qa_.data());
        sys_.positions(tb, q_.data());
        for (std::size_t i = 0; i < q_.size(); ++i) {
            const double da = std::abs(za - qa_[i]), db = std::abs(zb - q_[i]);
            const double d = std::min({da, db, gl_dmin});
            if (d < near_) return true;
            const double stretch = std::abs((zb - q_[i]) - (za - qa_[i]));
            if (stretch > opts_.stretch_ratio * d) return true;
        }
        return false;
    }

    void run(const Path& p, double h, ActionDerivatives& out, bool grad, bool time_derivs, bool hessian)
    {
        const std::size_t n = p.size();
        if (n < 2 || p.z.size() != n) throw InvalidArgument("action: path needs at least 2 nodes");
        out.value = {};
        if (grad) out.grad.assign(n, Vec(0.0));
        if (hessian) {
            out.hdiag.assign(n, Sym2{});
            out.hoff.assign(n - 1, Sym2{});
            out.hdiag_pd.assign(n, Sym2{});
            out.hoff_pd.assign(n - 1, Sym2{});
        }
        out.d_duration = 0.0;
        out.d_shift = 0.0;
        const double t0 = p.t.front();
        double kinetic = 0.0, potential = 0.0, work = 0.0, shift = 0.0;
        std::vector<std::pair<double, double>> leaves;
        for (std::size_t k = 0; k + 1 < n; ++k) {
            const double ta = p.t[k], tb = p.t[k + 1], dt = tb - ta;
            if (!(dt > 0)) throw InvalidArgument("action: node times must be strictly increasing");
            const Vec za = p.z[k], zb = p.z[k + 1], dz = zb - za;
            kinetic += std::norm(dz) / (2 * dt);
            if (grad) {
                out.grad[k] -= dz / dt;
                out.grad[k + 1] += dz / dt;
            }
            if (hessian) {
                const double c = 1.0 / dt;
                out.hdiag[k] += Sym2{c, 0, c};
                out.hdiag[k + 1] += Sym2{c, 0, c};
                out.hoff[k] += Sym2{-c, 0, -c};
                out.hdiag_pd[k] += Sym2{c, 0, c};
                out.hdiag_pd[k + 1] += Sym2{c, 0, c};
                out.hoff_pd[k] += Sym2{-c, 0, -c};
            }

            // Base rule, also used to decide whether to subdivide.
            double base = 0.0, gl_dmin = std::numeric_limits<double>::infinity();
            Point pts[4];
            for (int j = 0; j < 4; ++j) {
                const double u = GaussLegendre4::nodes[j];
                pts[j] = eval((1 - u) * za + u * zb, ta + u * dt, time_derivs, hessian);
                base += GaussLegendre4::weights[j] * pts[j].U;
                gl_dmin = std::min(gl_dmin, pts[j].dmin);
            }
            leaves.clear();
            if (needs_adaptive(za, zb, ta, tb, gl_dmin)) {
                const double tol = opts_.adaptive_rtol * std::max(std::abs(base), 1e-300);
                subdivide(za, zb, ta, tb, 0.0, 1.0, base, tol, 1, leaves);
            }
            auto accumulate = [&](double u, double w, const Point& pt) {
                const double W = w * dt;
                potential += W * pt.U;
                if (grad) {
                    out.grad[k] += (W * (1 - u)) * pt.g;
                    out.grad[k + 1] += (W * u) * pt.g;
                }
                if (time_derivs) {
                    work += W * pt.dUdt * (ta + u * dt - t0);
                    shift += W * pt.dUdt;
                }
                if (hessian) {
                    out.hdiag[k] += pt.H * (W * (1 - u) * (1 - u));
                    out.hdiag[k + 1] += pt.H * (W * u * u);
                    out.hoff[k] += pt.H * (W * u * (1 - u));
                    out.hdiag_pd[k] += pt.Hpd * (W * (1 - u) * (1 - u));
                    out.hdiag_pd[k + 1] += pt.Hpd * (W * u * u);
                    out.hoff_pd[k] += pt.Hpd * (W * u * (1 - u));
                }
            };
            if (leaves.empty()) {
                for (int j = 0; j < 4; ++j) accumulate(GaussLegendre4::nodes[j], GaussLegendre4::weights[j], pts[j]);
            } else {
                for (const auto& [ua, ub] : leaves) {
                    for (int j = 0; j < 4; ++j) {
                        const double u = ua + (ub - ua) * GaussLegendre4::nodes[j];
                        const Point pt = eval((1 - u) * za + u * zb, ta + u * dt, time_derivs, hessian);
                        accumulate(u, GaussLegendre4::weights[j] * (ub - ua), pt);
                    }
                }
            }
        }
        const double D = p.t.back() - t0;
        out.value.kinetic = kinetic;
        out.value.potential = potential;
        out.value.h_term = h * D;
        out.value.total = kinetic + potential + h * D;
        if (time_derivs) {
            out.d_duration = (-kinetic + potential + work + h * D) / D;
            out.d_shift = shift;
        }
    }

    const PrimarySystem& sys_;
    ActionOptions opts_;
    std::vector<Vec> q_, v_, a_, qa_;
    double near_;
};

inline ActionBreakdown action(const PrimarySystem& sys, const Path& p, double h, ActionOptions opts = {})
{
    ActionEvaluator ev(sys, opts);
    return ev.action(p, h);
}

struct ActionGradient {
    /// Gradient at interior nodes 1..n-2.
    std::vector<Vec> interior;
    double d_duration = 0.0;
};

inline ActionGradient action_gradient(const PrimarySystem& sys, const Path& p, double h, ActionOptions opts = {})
{
    ActionEvaluator ev(sys, opts);
    ActionDerivatives d;
    ev.derivatives(p, h, d, true, false);
    ActionGradient g;
    if (p.size() > 2) g.interior.assign(d.grad.begin() + 1, d.grad.end() - 1);
    g.d_duration = d.d_duration;
    return g;
}

//=============================================================================

struct DistanceRecord {
    double d_min = std::numeric_limits<double>::infinity();
    double t = 0.0;
    std::size_t body = 0;
};

/// Minimum distance from a piecewise-linear path to the primaries. Each
/// segment is sampled and the promising samples are refined by golden section.
/// If `only` is a valid body index, the other primaries are ignored.
inline DistanceRecord min_primary_distance(const PrimarySystem& sys, const Path& p,
                                           std::size_t only = static_cast<std::size_t>(-1), int samples = 8)
{
    const std::size_t nb = sys.size();
    std::vector<Vec> q(nb);
    auto dist = [&](double s, std::size_t i) {
        sys.positions(s, q.data());
        return std::abs(p.at(s) - q[i]);
    };
    struct Cand {
        double d, t;
        std::size_t seg, body;
    };
    std::vector<Cand> cands;
    DistanceRecord best;
    for (std::size_t k = 0; k + 1 < p.size(); ++k) {
        const double ta = p.t[k], tb = p.t[k + 1];
        for (int j = 0; j <= samples; ++j) {
            const double u = static_cast<double>(j) / samples;
            const double s = ta + u * (tb - ta);
            sys.positions(s, q.data());
            const Vec z = (1 - u) * p.z[k] + u * p.z[k + 1];
            for (std::size_t i = 0; i < nb; ++i) {
                if (only < nb && i != only) continue;
                const double d = std::abs(z - q[i]);
                cands.push_back({d, s, k, i});
                if (d < best.d_min) best = {d, s, i};
            }
        }
    }
    if (best.d_min == 0.0) return best;
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.d < b.d; });
    const std::size_t limit = std::min<std::size_t>(cands.size(), 16);
    for (std::size_t c = 0; c < limit; ++c) {
        const auto& cd = cands[c];
        if (cd.d > 2.0 * best.d_min + 1e-300 && c > 0) break;
        const double ta = p.t[cd.seg], tb = p.t[cd.seg + 1];
        const double step = (tb - ta) / samples;
        double a = std::max(p.t_begin(), cd.t - step), b = std::min(p.t_end(), cd.t + step);
        const double g = 0.5 * (std::sqrt(5.0) - 1.0);
        double x1 = b - g * (b - a), x2 = a + g * (b - a);
        double f1 = dist(x1, cd.body), f2 = dist(x2, cd.body);
        for (int it = 0; it < 80 && (b - a) > 1e-15 * std::max(1.0, std::abs(a)); ++it) {
            if (f1 < f2) {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - g * (b - a);
                f1 = dist(x1, cd.body);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + g * (b - a);
                f2 = dist(x2, cd.body);
            }
        }
        const double s = f1 < f2 ? x1 : x2;
        const double d = std::min(f1, f2);
        if (d < best.d_min) best = {d, s, cd.body};
    }
    return best;
}

} // namespace hyperflow
