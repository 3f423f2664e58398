#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <vector>

#include "action.hpp"
#include "core.hpp"

namespace hyperflow {

//=============================================================================
// Block tridiagonal factorization with 2x2 blocks, used as the initial
// inverse-Hessian of the quasi-Newton iteration.

struct Mat2 {
    double a = 0, b = 0, c = 0, d = 0; // [[a, b], [c, d]]
    static Mat2 from(const Sym2& s) { return {s.xx, s.xy, s.xy, s.yy}; }
    double det() const { return a * d - b * c; }
    Mat2 inverse() const
    {
        const double id = 1.0 / det();
        return {d * id, -b * id, -c * id, a * id};
    }
    Mat2 operator*(const Mat2& o) const
    {
        return {a * o.a + b * o.c, a * o.b + b * o.d, c * o.a + d * o.c, c * o.b + d * o.d};
    }
    Mat2 operator-(const Mat2& o) const { return {a - o.a, b - o.b, c - o.c, d - o.d}; }
    Mat2 transpose() const { return {a, c, b, d}; }
    Vec operator*(Vec v) const { return {a * v.real() + b * v.imag(), c * v.real() + d * v.imag()}; }
};

class BlockTridiagonal {
  public:
    /// diag[k], k = 0..n-1 and off[k] couples k and k+1. Returns false if a
    /// pivot is not positive definite.
    bool factor(const std::vector<Sym2>& diag, const std::vector<Sym2>& off)
    {
        const std::size_t n = diag.size();
        inv_pivot_.resize(n);
        off_.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            Mat2 S = Mat2::from(diag[k]);
            if (k > 0) {
                const Mat2 B = Mat2::from(off[k - 1]);
                S = S - B.transpose() * inv_pivot_[k - 1] * B;
            }
            if (!(S.a > 0) || !(S.det() > 0) || !std::isfinite(S.det())) return false;
            inv_pivot_[k] = S.inverse();
            if (k + 1 < n) off_[k] = Mat2::from(off[k]);
        }
        return true;
    }

    /// Solve in place.
    void solve(std::vector<Vec>& r) const
    {
        const std::size_t n = r.size();
        std::vector<Vec> y(n);
        for (std::size_t k = 0; k < n; ++k) {
            Vec rhs = r[k];
            if (k > 0) rhs -= off_[k - 1].transpose() * y[k - 1];
            y[k] = inv_pivot_[k] * rhs;
        }
        // y holds S_k^{-1}(r_k − B^T y_{k−1}); back substitution.
        for (std::size_t k = n; k-- > 0;) {
            if (k + 1 < n) y[k] -= inv_pivot_[k] * (off_[k] * r[k + 1]);
            r[k] = y[k];
        }
    }

  private:
    std::vector<Mat2> inv_pivot_, off_;
};

//=============================================================================

enum class OptimStatus { converged, max_iter, stalled };

inline const char* to_string(OptimStatus s)
{
    switch (s) {
    case OptimStatus::converged: return "converged";
    case OptimStatus::max_iter: return "max-iter";
    case OptimStatus::stalled: return "stalled";
    }
    return "unknown";
}

struct OptimOptions {
    int max_iter = 10000;
    int memory = 8;
    double tol = 1e-8;
    double armijo = 1e-4;
    int max_backtracks = 60;
    /// Called after every accepted step: (iteration, value, stationarity).
    std::function<void(int, double, double)> on_iterate;
};

struct OptimReport {
    OptimStatus status = OptimStatus::max_iter;
    int iterations = 0;
    int rejected_steps = 0;
    double value = 0.0;
    double stationarity = 0.0;
};

/// Preconditioned limited-memory BFGS with backtracking Armijo search.
///
/// Problem must provide:
///   double evaluate(const std::vector<double>& x, std::vector<double>& g);
///   bool admissible(const std::vector<double>& x);
///   void prepare();                         // precondition at the last evaluated point
///   void precondition(std::vector<double>& r);
///   double stationarity(const std::vector<double>& g);
/// evaluate may throw SingularityError, which rejects the trial step.
template <class Problem>
OptimReport lbfgs_minimize(Problem& prob, std::vector<double>& x, const OptimOptions& opts)
{
    const std::size_t n = x.size();
    OptimReport rep;
    std::vector<double> g(n), gn(n), xn(n), d(n), r(n);
    double f = prob.evaluate(x, g);
    if (!std::isfinite(f)) throw NumericalFailure("objective is not finite at the initial point");
    prob.prepare();
    std::deque<std::vector<double>> S, Y;
    std::deque<double> Rho;
    auto dotv = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        return s;
    };
    rep.value = f;
    rep.stationarity = prob.stationarity(g);
    if (n == 0 || rep.stationarity <= opts.tol) {
        rep.status = OptimStatus::converged;
        return rep;
    }
    for (int it = 0; it < opts.max_iter; ++it) {
        // Two-loop recursion with the problem's preconditioner as H0.
        r = g;
        std::vector<double> alpha(S.size());
        for (std::size_t i = S.size(); i-- > 0;) {
            alpha[i] = Rho[i] * dotv(S[i], r);
            for (std::size_t j = 0; j < n; ++j) r[j] -= alpha[i] * Y[i][j];
        }
        prob.precondition(r);
        for (std::size_t i = 0; i < S.size(); ++i) {
            const double beta = Rho[i] * dotv(Y[i], r);
            for (std::size_t j = 0; j < n; ++j) r[j] += S[i][j] * (alpha[i] - beta);
        }
        for (std::size_t j = 0; j < n; ++j) d[j] = -r[j];
        double slope = dotv(g, d);
        if (!(slope < 0)) {
            S.clear();
            Y.clear();
            Rho.clear();
            r = g;
            prob.precondition(r);
            for (std::size_t j = 0; j < n; ++j) d[j] = -r[j];
            slope = dotv(g, d);
            if (!(slope < 0)) {
                for (std::size_t j = 0; j < n; ++j) d[j] = -g[j];
                slope = dotv(g, d);
            }
        }
        double step = 1.0, fn = 0.0;
        bool accepted = false;
        for (int bt = 0; bt < opts.max_backtracks; ++bt) {
            for (std::size_t j = 0; j < n; ++j) xn[j] = x[j] + step * d[j];
            bool ok = prob.admissible(xn);
            if (ok) {
                try {
                    fn = prob.evaluate(xn, gn);
                    ok = std::isfinite(fn);
                } catch (const SingularityError&) {
                    ok = false;
                }
            }
            if (ok && fn <= f + opts.armijo * step * slope) {
                accepted = true;
                break;
            }
            // Once the predicted decrease is below the resolution of f, a step
            // that keeps f within its rounding envelope is judged by the
            // stationarity measure instead.
            const bool unresolved = -step * slope <= 1e-12 * std::max(1.0, std::abs(f));
            if (ok && unresolved && fn <= f + 1e-14 * std::max(1.0, std::abs(f)) &&
                prob.stationarity(gn) < rep.stationarity) {
                accepted = true;
                break;
            }
            ++rep.rejected_steps;
            if (unresolved && -step * slope <= 1e-15 * std::max(1.0, std::abs(f))) break;
            step *= 0.5;
        }
        if (!accepted) {
            // Re-establish the cached state at the current point.
            f = prob.evaluate(x, g);
            prob.prepare();
            rep.status = OptimStatus::stalled;
            rep.iterations = it;
            rep.value = f;
            rep.stationarity = prob.stationarity(g);
            return rep;
        }
        std::vector<double> s(n), y(n);
        for (std::size_t j = 0; j < n; ++j) {
            s[j] = xn[j] - x[j];
            y[j] = gn[j] - g[j];
        }
        const double sy = dotv(s, y);
        if (sy > 1e-12 * std::sqrt(dotv(s, s) * dotv(y, y))) {
            S.push_back(std::move(s));
            Y.push_back(std::move(y));
            Rho.push_back(1.0 / sy);
            if (static_cast<int>(S.size()) > opts.memory) {
                S.pop_front();
                Y.pop_front();
                Rho.pop_front();
            }
        }
        x.swap(xn);
        g.swap(gn);
        f = fn;
        prob.prepare();
        rep.iterations = it + 1;
        rep.value = f;
        rep.stationarity = prob.stationarity(g);
        if (opts.on_iterate) opts.on_iterate(rep.iterations, f, rep.stationarity);
        if (rep.stationarity <= opts.tol) {
            rep.status = OptimStatus::converged;
            return rep;
        }
    }
    rep.status = OptimStatus::max_iter;
    return rep;
}

} // namespace hyperflow
