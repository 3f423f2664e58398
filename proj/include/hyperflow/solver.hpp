#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "action.hpp"
#include "core.hpp"
#include "ephemeris.hpp"
#include "optimize.hpp"
#include "path.hpp"
#include "verify.hpp"

namespace hyperflow {

struct FixedEndProblem {
    Vec x = 0.0, y = 0.0;
    double t1 = 0.0, t2 = 1.0;
    double h = 0.0;
};

enum class MinimizeStatus { converged, max_iter, stalled, collision_suspected };

inline const char* to_string(MinimizeStatus s)
{
    switch (s) {
    case MinimizeStatus::converged: return "converged";
    case MinimizeStatus::max_iter: return "max-iter";
    case MinimizeStatus::stalled: return "stalled";
    case MinimizeStatus::collision_suspected: return "collision-suspected";
    }
    return "unknown";
}

struct MinimizeOptions {
    /// Stationarity tolerance: max nodal gradient per unit time, relative to the largest force.
    double tol = 1e-8;
    int max_iter = 10000;
    int memory = 8;
    /// Collision guard as a fraction of the system's guard scale.
    double guard_fraction = 1e-3;
    /// Grid density far from the primaries, in nodes per ephemeris period.
    double nodes_per_period = 64;
    /// Inside this radius the grid keeps its full density; beyond it the
    /// density decays like 1/|z|. Zero selects 2·R0.
    double grade_radius = 0.0;
    /// Extra grid density near the primaries, in nodes per local Kepler time
    /// |z − q_i|^{3/2}/√m_i. Zero disables it.
    double approach_nodes = 0.0;
    /// Grid doubling stops once the action changes by less than this.
    double refine_rtol = 1e-6;
    int max_refine = 3;
    int phase_grid = 8;
    /// Golden-section stop width for phases and durations, as a fraction of the period.
    double phase_tol = 1e-4;
    /// Stop the duration enumeration after this many consecutive non-improving
    /// candidates (0 disables the limit; the rigorous cutoff always applies).
    int patience = 0;
    int n_cap = 100000;
    int threads = 1;
    ActionOptions action;
    /// JSON-lines iteration log, one record per accepted step.
    std::ostream* log = nullptr;
    /// Extra feasibility constraint enforced by step rejection.
    std::function<bool(const Path&)> admissible;
    /// Called with every accepted iterate.
    std::function<void(const Path&)> on_accept;
};

struct MinimizeResult {
    Path path;
    ActionBreakdown action;
    double grad_norm = 0.0;
    double el_residual = 0.0;
    DistanceRecord dmin;
    int iterations = 0;
    int rejected_steps = 0;
    MinimizeStatus status = MinimizeStatus::max_iter;
    /// Actions of the successive grid levels when refinement was requested.
    std::vector<double> refinement_history;
    std::vector<std::string> notes;
};

inline double collision_guard(const PrimarySystem& sys, const MinimizeOptions& opts)
{
    return opts.guard_fraction * sys.guard_scale();
}

//=============================================================================
// Grids

inline double grade_radius(const PrimarySystem& sys, const MinimizeOptions& opts)
{
    return opts.grade_radius > 0 ? opts.grade_radius : 2.0 * sys.R0();
}

/// Node times on [t1, t2] for a path whose distance from the origin is given by `radius`.
inline std::vector<double> standard_grid(const PrimarySystem& sys, double t1, double t2,
                                         const std::function<double(double)>& radius, const MinimizeOptions& opts)
{
    if (!(t2 > t1)) throw InvalidArgument("standard_grid: t2 must exceed t1");
    const double base = opts.nodes_per_period / sys.period();
    const double Rg = grade_radius(sys, opts);
    auto density = [&](double t) {
        const double r = radius(t);
        return base * std::min(1.0, Rg / std::max(r, 1e-300));
    };
    return graded_times(t1, t2, density, 8);
}

/// Resample a path onto the standard grid built from its own radius profile,
/// denser near the primaries when opts.approach_nodes is set.
inline Path regrid(const PrimarySystem& sys, const Path& p, const MinimizeOptions& opts)
{
    auto radius = [&](double t) { return std::abs(p.at(t)); };
    std::vector<double> times;
    if (opts.approach_nodes > 0) {
        const double base = opts.nodes_per_period / sys.period();
        const double Rg = grade_radius(sys, opts);
        const double floor_d = opts.guard_fraction * sys.guard_scale();
        std::vector<Vec> q(sys.size());
        auto density = [&](double t) {
            const Vec z = p.at(t);
            double rho = base * std::min(1.0, Rg / std::max(std::abs(z), 1e-300));
            sys.positions(t, q.data());
            for (std::size_t i = 0; i < q.size(); ++i) {
                const double d = std::max(std::abs(z - q[i]), floor_d);
                rho = std::max(rho, opts.approach_nodes * std::sqrt(sys.mass(i)) / (d * std::sqrt(d)));
            }
            return rho;
        };
        // Integrate the density on the path's own nodes, each split in four,
        // merged with a uniform partition.
        std::vector<double> part;
        const int fine = 4096;
        for (int k = 0; k <= fine; ++k) part.push_back(p.t_begin() + p.duration() * k / fine);
        for (std::size_t k = 0; k + 1 < p.size(); ++k)
            for (int j = 1; j < 4; ++j) part.push_back(p.t[k] + (p.t[k + 1] - p.t[k]) * j / 4);
        part.insert(part.end(), p.t.begin(), p.t.end());
        std::sort(part.begin(), part.end());
        part.erase(std::unique(part.begin(), part.end()), part.end());
        part.front() = p.t_begin();
        part.back() = p.t_end();
        times = graded_times_on(part, density, 8);
    } else {
        times = standard_grid(sys, p.t_begin(), p.t_end(), radius, opts);
    }
    Path out = resample(p, times);
    out.z.front() = p.z.front();
    out.z.back() = p.z.back();
    return out;
}

//=============================================================================
// Optimizer adapter for a path with pinned endpoints.

class PathProblem {
  public:
    PathProblem(const PrimarySystem& sys, const Path& guess, double h, const MinimizeOptions& opts)
        : ev_(sys, opts.action), path_(guess), h_(h), admissible_(opts.admissible)
    {
        const std::size_t n = path_.size();
        w_.assign(n, 0.0);
        for (std::size_t k = 1; k + 1 < n; ++k) w_[k] = 0.5 * (path_.t[k + 1] - path_.t[k - 1]);
    }

    std::size_t variables() const { return path_.size() > 2 ? 2 * (path_.size() - 2) : 0; }

    void pack(std::vector<double>& x) const
    {
        x.resize(variables());
        for (std::size_t k = 1; k + 1 < path_.size(); ++k) {
            x[2 * (k - 1)] = path_.z[k].real();
            x[2 * (k - 1) + 1] = path_.z[k].imag();
        }
    }
    void unpack(const std::vector<double>& x, Path& p) const
    {
        for (std::size_t k = 1; k + 1 < p.size(); ++k) p.z[k] = Vec(x[2 * (k - 1)], x[2 * (k - 1) + 1]);
    }

    double evaluate(const std::vector<double>& x, std::vector<double>& g)
    {
        unpack(x, path_);
        ev_.derivatives(path_, h_, d_, false, true);
        g.resize(x.size());
        const std::size_t n = path_.size();
        double fscale = 0.0;
        for (std::size_t k = 1; k + 1 < n; ++k) {
            const Vec gk = d_.grad[k];
            g[2 * (k - 1)] = gk.real();
            g[2 * (k - 1) + 1] = gk.imag();
            const Vec kin = (path_.z[k] - path_.z[k - 1]) / (path_.t[k] - path_.t[k - 1]) -
                            (path_.z[k + 1] - path_.z[k]) / (path_.t[k + 1] - path_.t[k]);
            fscale = std::max(fscale, std::abs(gk - kin) / w_[k]);
        }
        force_scale_ = fscale;
        return d_.value.total;
    }

    bool admissible(const std::vector<double>& x)
    {
        if (!admissible_) return true;
        trial_ = path_;
        unpack(x, trial_);
        return admissible_(trial_);
    }

    void prepare()
    {
        const std::size_t n = path_.size();
        if (n < 3) return;
        auto slice = [&](const std::vector<Sym2>& diag, const std::vector<Sym2>& off) {
            std::vector<Sym2> dd(diag.begin() + 1, diag.end() - 1);
            std::vector<Sym2> oo(off.begin() + 1, off.end() - 1);
            return solver_.factor(dd, oo);
        };
        if (slice(d_.hdiag, d_.hoff)) return;
        if (slice(d_.hdiag_pd, d_.hoff_pd)) return;
        std::vector<Sym2> dd(n - 2), oo(n > 3 ? n - 3 : 0);
        for (std::size_t k = 1; k + 1 < n; ++k) {
            const double c = 1.0 / (path_.t[k] - path_.t[k - 1]) + 1.0 / (path_.t[k + 1] - path_.t[k]);
            dd[k - 1] = Sym2{c, 0, c};
            if (k + 2 < n) {
                const double o = -1.0 / (path_.t[k + 1] - path_.t[k]);
                oo[k - 1] = Sym2{o, 0, o};
            }
        }
        solver_.factor(dd, oo);
    }

    void precondition(std::vector<double>& r)
    {
        const std::size_t m = r.size() / 2;
        buf_.resize(m);
        for (std::size_t k = 0; k < m; ++k) buf_[k] = Vec(r[2 * k], r[2 * k + 1]);
        solver_.solve(buf_);
        for (std::size_t k = 0; k < m; ++k) {
            r[2 * k] = buf_[k].real();
            r[2 * k + 1] = buf_[k].imag();
        }
    }

    /// Largest nodal gradient per unit time, relative to the largest nodal force.
    double stationarity(const std::vector<double>& g) const
    {
        double worst = 0.0;
        for (std::size_t k = 1; k + 1 < path_.size(); ++k)
            worst = std::max(worst, std::hypot(g[2 * (k - 1)], g[2 * (k - 1) + 1]) / w_[k]);
        return worst / std::max(force_scale_, 1e-300);
    }

    const Path& path() const { return path_; }
    const ActionDerivatives& derivatives() const { return d_; }

  private:
    ActionEvaluator ev_;
    Path path_, trial_;
    double h_;
    std::function<bool(const Path&)> admissible_;
    std::vector<double> w_;
    ActionDerivatives d_;
    BlockTridiagonal solver_;
    std::vector<Vec> buf_;
    double force_scale_ = 1.0;
};

//=============================================================================

/// Descend the discrete action from `guess` with both endpoints held fixed.
inline MinimizeResult minimize_fixed_end(const PrimarySystem& sys, const FixedEndProblem& prob, const Path& guess,
                                         const MinimizeOptions& opts = {})
{
    if (!(prob.t2 > prob.t1)) throw InvalidArgument("minimize_fixed_end: t2 must exceed t1");
    if (!std::isfinite(std::abs(prob.x)) || !std::isfinite(std::abs(prob.y)))
        throw InvalidArgument("minimize_fixed_end: endpoints must be finite");
    if (prob.h < 0) throw InvalidArgument("minimize_fixed_end: h must be nonnegative");
    guess.validate();
    auto close = [](double a, double b) { return std::abs(a - b) <= 1e-12 * (1.0 + std::abs(a)); };
    if (!close(guess.t.front(), prob.t1) || !close(guess.t.back(), prob.t2))
        throw InvalidArgument("minimize_fixed_end: guess times do not match the problem");
    if (std::abs(guess.z.front() - prob.x) > 1e-12 * (1.0 + std::abs(prob.x)) ||
        std::abs(guess.z.back() - prob.y) > 1e-12 * (1.0 + std::abs(prob.y)))
        throw InvalidArgument("minimize_fixed_end: guess endpoints do not match the problem");

    Path start = guess;
    start.z.front() = prob.x;
    start.z.back() = prob.y;
    PathProblem pp(sys, start, prob.h, opts);
    std::vector<double> x;
    pp.pack(x);

    OptimOptions oo;
    oo.max_iter = opts.max_iter;
    oo.memory = opts.memory;
    oo.tol = opts.tol;
    if (opts.log || opts.on_accept) {
        oo.on_iterate = [&](int it, double value, double stat) {
            if (opts.on_accept) opts.on_accept(pp.path());
            if (!opts.log) return;
            const double d = min_primary_distance(sys, pp.path(), static_cast<std::size_t>(-1), 2).d_min;
            *opts.log << "{\"iter\":" << it << ",\"action\":" << format_double(value)
                      << ",\"grad_norm\":" << format_double(stat) << ",\"d_min\":" << format_double(d) << "}\n";
        };
    }
    OptimReport rep;
    try {
        rep = lbfgs_minimize(pp, x, oo);
    } catch (const SingularityError& e) {
        throw NumericalFailure(std::string("minimize_fixed_end: the initial guess hits a primary (") + e.what() + ")");
    }
    if (!std::isfinite(rep.value))
        throw NumericalFailure("minimize_fixed_end: non-finite action after " + std::to_string(rep.iterations) +
                               " iterations");

    MinimizeResult res;
    res.path = pp.path();
    res.action = pp.derivatives().value;
    res.grad_norm = rep.stationarity;
    res.iterations = rep.iterations;
    res.rejected_steps = rep.rejected_steps;
    res.el_residual = res.path.size() >= 3 ? el_residual(sys, res.path) : 0.0;
    res.dmin = min_primary_distance(sys, res.path);
    switch (rep.status) {
    case OptimStatus::converged: res.status = MinimizeStatus::converged; break;
    case OptimStatus::max_iter: res.status = MinimizeStatus::max_iter; break;
    case OptimStatus::stalled: res.status = MinimizeStatus::stalled; break;
    }
    if (res.dmin.d_min <= collision_guard(sys, opts)) res.status = MinimizeStatus::collision_suspected;
    return res;
}

/// Same path on a grid whose density is multiplied by `factor`. The graded
/// grid is rebuilt rather than bisected so that spacing stays smooth.
inline Path densify(const PrimarySystem& sys, const Path& p, double factor, MinimizeOptions opts)
{
    opts.nodes_per_period *= factor;
    opts.approach_nodes *= factor;
    return regrid(sys, p, opts);
}

/// Solve, then double the grid density until the action settles (at most opts.max_refine times).
inline MinimizeResult minimize_refined(const PrimarySystem& sys, const FixedEndProblem& prob, const Path& guess,
                                       const MinimizeOptions& opts = {})
{
    MinimizeResult res = minimize_fixed_end(sys, prob, guess, opts);
    res.refinement_history = {res.action.total};
    double factor = 1.0;
    for (int level = 0; level < opts.max_refine; ++level) {
        if (res.status == MinimizeStatus::collision_suspected) break;
        factor *= 2.0;
        MinimizeResult next = minimize_fixed_end(sys, prob, densify(sys, res.path, factor, opts), opts);
        const double change = std::abs(next.action.total - res.action.total) / std::max(std::abs(next.action.total), 1e-300);
        auto history = std::move(res.refinement_history);
        history.push_back(next.action.total);
        res = std::move(next);
        res.refinement_history = std::move(history);
        if (change < opts.refine_rtol) break;
    }
    return res;
}

} // namespace hyperflow
