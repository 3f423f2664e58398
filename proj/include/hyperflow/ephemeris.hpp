#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"

namespace hyperflow {

/// Trajectories of the primaries. Implementations are pure functions of t.
class Orbit {
  public:
    virtual ~Orbit() = default;
    virtual std::size_t size() const = 0;
    virtual double period() const = 0;
    virtual void positions(double t, Vec* q) const = 0;
    virtual void states(double t, Vec* q, Vec* v, Vec* a) const = 0;
};

/// Two bodies on circles about their barycenter (placed at the origin).
class CircularBinaryOrbit final : public Orbit {
  public:
    CircularBinaryOrbit(double m1, double m2, double d, double phase)
        : r1_(m2 / (m1 + m2) * d), r2_(m1 / (m1 + m2) * d), omega_(std::sqrt((m1 + m2) / (d * d * d))),
          phase_(phase)
    {
    }
    std::size_t size() const override { return 2; }
    double period() const override { return two_pi / omega_; }
    double angular_speed() const { return omega_; }
    void positions(double t, Vec* q) const override
    {
        const Vec e = std::polar(1.0, omega_ * t + phase_);
        q[0] = r1_ * e;
        q[1] = -r2_ * e;
    }
    void states(double t, Vec* q, Vec* v, Vec* a) const override
    {
        const Vec e = std::polar(1.0, omega_ * t + phase_);
        const Vec iw(0.0, omega_);
        q[0] = r1_ * e;
        q[1] = -r2_ * e;
        for (int k = 0; k < 2; ++k) {
            v[k] = iw * q[k];
            a[k] = iw * v[k];
        }
    }

  private:
    double r1_, r2_, omega_, phase_;
};

/// One body fixed at the origin with a declared period.
class StaticCenterOrbit final : public Orbit {
  public:
    explicit StaticCenterOrbit(double period) : period_(period) {}
    std::size_t size() const override { return 1; }
    double period() const override { return period_; }
    void positions(double, Vec* q) const override { q[0] = 0.0; }
    void states(double, Vec* q, Vec* v, Vec* a) const override { q[0] = v[0] = a[0] = 0.0; }

  private:
    double period_;
};

/// Truncated complex Fourier series per body:
/// q(t) = Σ_j c_j exp(2πi j t/T), with the Nyquist mode carried as a cosine.
class FourierOrbit final : public Orbit {
  public:
    struct Mode {
        int freq;
        Vec coeff;
        bool nyquist;
    };

    /// samples[k][i] = position of body i at t = k T / n.
    FourierOrbit(const std::vector<std::vector<Vec>>& samples, double period) : period_(period)
    {
        const std::size_t n = samples.size();
        const std::size_t nb = samples.front().size();
        modes_.resize(nb);
        const int lo = -static_cast<int>(n / 2);
        const int hi = static_cast<int>((n - 1) / 2);
        for (std::size_t i = 0; i < nb; ++i) {
            double cmax = 0.0;
            std::vector<Mode> all;
            for (int j = lo; j <= hi; ++j) {
                Vec c = 0.0;
                for (std::size_t k = 0; k < n; ++k)
                    c += samples[k][i] * std::polar(1.0, -two_pi * j * static_cast<double>(k) / n);
                c /= static_cast<double>(n);
                const bool nyq = (n % 2 == 0) && j == lo;
                all.push_back({j, c, nyq});
                cmax = std::max(cmax, std::abs(c));
            }
            for (const auto& m : all)
                if (std::abs(m.coeff) > 1e-17 * cmax) modes_[i].push_back(m);
        }
    }
    std::size_t size() const override { return modes_.size(); }
    double period() const override { return period_; }
    void positions(double t, Vec* q) const override { evaluate(t, q, nullptr, nullptr); }
    void states(double t, Vec* q, Vec* v, Vec* a) const override { evaluate(t, q, v, a); }

  private:
    void evaluate(double t, Vec* q, Vec* v, Vec* a) const
    {
        const double w = two_pi / period_;
        for (std::size_t i = 0; i < modes_.size(); ++i) {
            Vec pq = 0.0, pv = 0.0, pa = 0.0;
            for (const auto& m : modes_[i]) {
                const double phase = w * m.freq * t;
                const double f = w * m.freq;
                if (m.nyquist) {
                    const double c = std::cos(phase), s = std::sin(phase);
                    pq += m.coeff * c;
                    pv += -m.coeff * (f * s);
                    pa += -m.coeff * (f * f * c);
                } else {
                    const Vec e = m.coeff * std::polar(1.0, phase);
                    pq += e;
                    pv += Vec(0.0, f) * e;
                    pa += -(f * f) * e;
                }
            }
            q[i] = pq;
            if (v) v[i] = pv;
            if (a) a[i] = pa;
        }
    }

    double period_;
    std::vector<std::vector<Mode>> modes_;
};

/// q'(s) = a · q(t0 + b s). Covers blow-up rescaling and time reflection.
class AffineOrbit final : public Orbit {
  public:
    AffineOrbit(std::shared_ptr<const Orbit> base, double a, double t0, double b)
    {
        if (auto inner = std::dynamic_pointer_cast<const AffineOrbit>(base)) {
            base_ = inner->base_;
            a_ = inner->a_ * a;
            t0_ = inner->t0_ + inner->b_ * t0;
            b_ = inner->b_ * b;
        } else {
            base_ = std::move(base);
            a_ = a;
            t0_ = t0;
            b_ = b;
        }
    }
    std::size_t size() const override { return base_->size(); }
    double period() const override { return base_->period() / std::abs(b_); }
    void positions(double s, Vec* q) const override
    {
        base_->positions(t0_ + b_ * s, q);
        for (std::size_t i = 0; i < size(); ++i) q[i] *= a_;
    }
    void states(double s, Vec* q, Vec* v, Vec* acc) const override
    {
        base_->states(t0_ + b_ * s, q, v, acc);
        for (std::size_t i = 0; i < size(); ++i) {
            q[i] *= a_;
            v[i] *= a_ * b_;
            acc[i] *= a_ * b_ * b_;
        }
    }

  private:
    std::shared_ptr<const Orbit> base_;
    double a_ = 1.0, t0_ = 0.0, b_ = 1.0;
};

/// 1/|z − q| − 1/|z| without cancellation.
inline double remainder_potential(Vec z, Vec q)
{
    const double a = std::abs(z), b = std::abs(z - q);
    const double diff = (2.0 * dot(z, q) - std::norm(q)) / (a + b); // |z| − |z − q|
    return diff / (a * b);
}

/// ∂_z [1/|z − q| − 1/|z|] without cancellation.
inline Vec remainder_gradient(Vec z, Vec q)
{
    const double a = std::abs(z), b = std::abs(z - q);
    const double ba = -(2.0 * dot(z, q) - std::norm(q)) / (a + b); // |z − q| − |z|
    const double inv_a3_minus_inv_b3 = ba * (a * a + a * b + b * b) / (a * a * a * b * b * b);
    return z * inv_a3_minus_inv_b3 + q / (b * b * b);
}

/// Far-field constants: for |z| ≥ R1, |W| ≤ alpha1/|z|² ≤ m/|z| and
/// |∇W| ≤ alpha2/|z|³ ≤ m/|z|².
struct FarField {
    double R1 = 0.0;
    double alpha1 = 0.0;
    double alpha2 = 0.0;
};

struct SystemOptions {
    bool validate = true;
    double newton_tol = 1e-8;
    int check_points = 256;
    double far_margin = 1.1;
};

class PrimarySystem {
  public:
    PrimarySystem(std::vector<double> masses, std::shared_ptr<const Orbit> orbit, SystemOptions opts = {})
        : masses_(std::move(masses)), orbit_(std::move(orbit)), opts_(opts)
    {
        if (!orbit_) throw InvalidArgument("PrimarySystem: null orbit");
        if (masses_.size() != orbit_->size() || masses_.empty())
            throw InvalidArgument("PrimarySystem: mass count does not match orbit");
        for (double m : masses_)
            if (!(m > 0.0) || !std::isfinite(m)) throw InvalidArgument("PrimarySystem: masses must be positive");
        if (!(orbit_->period() > 0.0)) throw InvalidArgument("PrimarySystem: period must be positive");
        total_mass_ = 0.0;
        for (double m : masses_) total_mass_ += m;
        measure_geometry();
        if (opts_.validate) validate();
        far_ = compute_far_field(opts_.far_margin);
        if (far_.R1 > 1e3 * R0_)
            warnings_.push_back("far-field radius R1 = " + std::to_string(far_.R1) + " exceeds 1e3 R0");
    }

    std::size_t size() const { return masses_.size(); }
    double mass(std::size_t i) const { return masses_[i]; }
    const std::vector<double>& masses() const { return masses_; }
    double total_mass() const { return total_mass_; }
    double period() const { return orbit_->period(); }
    /// Minimum pairwise separation (infinite for a single body).
    double rho0() const { return rho0_; }
    double R0() const { return R0_; }
    /// sup over t and i of |q_i(t)|.
    double sup_radius() const { return sup_q_; }
    const FarField& far_field() const { return far_; }
    double newton_residual() const { return newton_residual_; }
    const std::vector<std::string>& warnings() const { return warnings_; }
    const std::shared_ptr<const Orbit>& orbit() const { return orbit_; }
    const SystemOptions& options() const { return opts_; }

    /// Length scale used by collision guards: ρ₀, or R₀ for a lone primary.
    double guard_scale() const { return std::isfinite(rho0_) ? rho0_ : R0_; }

    void positions(double t, Vec* q) const { orbit_->positions(t, q); }
    void states(double t, Vec* q, Vec* v, Vec* a) const { orbit_->states(t, q, v, a); }
    std::vector<Vec> positions(double t) const
    {
        std::vector<Vec> q(size());
        orbit_->positions(t, q.data());
        return q;
    }

    /// Far-field constants recomputed with a given safety margin.
    FarField compute_far_field(double margin) const
    {
        const int n_ang = 256, n_time = 64;
        std::vector<double> radii;
        for (int k = 0; k <= 24; ++k) radii.push_back(R0_ * std::pow(2.0, k / 4.0));
        radii.push_back(1e3 * R0_);
        radii.push_back(1e5 * R0_);
        std::vector<double> supW(radii.size(), 0.0), supG(radii.size(), 0.0);
        std::vector<Vec> q(size());
        const double T = period();
        for (int it = 0; it < n_time; ++it) {
            const double t = T * it / n_time;
            positions(t, q.data());
            for (std::size_t kr = 0; kr < radii.size(); ++kr) {
                const double r = radii[kr];
                for (int ia = 0; ia < n_ang; ++ia) {
                    const Vec z = std::polar(r, two_pi * ia / n_ang);
                    double W = 0.0;
                    Vec gW = 0.0;
                    for (std::size_t i = 0; i < size(); ++i) {
                        W += masses_[i] * remainder_potential(z, q[i]);
                        gW += masses_[i] * remainder_gradient(z, q[i]);
                    }
                    supW[kr] = std::max(supW[kr], std::abs(W) * r * r);
                    supG[kr] = std::max(supG[kr], std::abs(gW) * r * r * r);
                }
            }
        }
        // Suffix maxima give sup over |z| >= radii[k] on the sampled shells.
        for (std::size_t k = radii.size() - 1; k-- > 0;) {
            supW[k] = std::max(supW[k], supW[k + 1]);
            supG[k] = std::max(supG[k], supG[k + 1]);
        }
        const double floor_R = std::sqrt(2.0) * R0_;
        FarField ff;
        for (std::size_t k = 0; k < radii.size(); ++k) {
            const double R = std::max(radii[k], floor_R);
            const double a1 = margin * supW[k], a2 = margin * supG[k];
            if (a1 <= total_mass_ * R && a2 <= total_mass_ * R) {
                ff = {R, a1, a2};
                return ff;
            }
        }
        const double R = radii.back();
        ff = {R, margin * supW.back(), margin * supG.back()};
        ff.R1 = std::max({R, ff.alpha1 / total_mass_, ff.alpha2 / total_mass_});
        return ff;
    }

  private:
    void measure_geometry()
    {
        const int n = 2048;
        const double T = period();
        std::vector<Vec> q(size());
        rho0_ = std::numeric_limits<double>::infinity();
        sup_q_ = 0.0;
        for (int k = 0; k < n; ++k) {
            positions(T * k / n, q.data());
            for (std::size_t i = 0; i < size(); ++i) {
                if (!std::isfinite(q[i].real()) || !std::isfinite(q[i].imag()))
                    throw ValidationError("ephemeris evaluates to a non-finite position");
                sup_q_ = std::max(sup_q_, std::abs(q[i]));
                for (std::size_t j = i + 1; j < size(); ++j) rho0_ = std::min(rho0_, std::abs(q[i] - q[j]));
            }
        }
        R0_ = sup_q_ + 1.0;
    }

    void validate()
    {
        if (!(rho0_ > 0.0)) throw ValidationError("primaries collide (rho0 = 0)");
        const int n = opts_.check_points;
        const double T = period();
        std::vector<Vec> q(size()), v(size()), a(size()), qT(size());
        double worst = 0.0, worst_period = 0.0;
        for (int k = 0; k < n; ++k) {
            const double t = T * k / n;
            states(t, q.data(), v.data(), a.data());
            positions(t + T, qT.data());
            for (std::size_t i = 0; i < size(); ++i) {
                Vec res = a[i];
                for (std::size_t j = 0; j < size(); ++j) {
                    if (j == i) continue;
                    const Vec d = q[i] - q[j];
                    const double r = std::abs(d);
                    res += masses_[j] * d / (r * r * r);
                }
                worst = std::max(worst, std::abs(res));
                worst_period = std::max(worst_period, std::abs(qT[i] - q[i]) / (1.0 + std::abs(q[i])));
            }
        }
        newton_residual_ = worst;
        if (worst_period > 1e-10)
            throw ValidationError("ephemeris is not periodic: mismatch " + std::to_string(worst_period));
        if (!(worst <= opts_.newton_tol))
            throw ValidationError("Newton residual too large: max residual " + std::to_string(worst));
    }

    std::vector<double> masses_;
    std::shared_ptr<const Orbit> orbit_;
    SystemOptions opts_;
    double total_mass_ = 0.0;
    double rho0_ = 0.0;
    double R0_ = 1.0;
    double sup_q_ = 0.0;
    double newton_residual_ = 0.0;
    FarField far_;
    std::vector<std::string> warnings_;
};

//=============================================================================

inline PrimarySystem make_circular_binary(double m1, double m2, double d, double phase = 0.0, SystemOptions opts = {})
{
    if (!(m1 > 0) || !(m2 > 0) || !(d > 0))
        throw InvalidArgument("make_circular_binary: masses and separation must be positive");
    return PrimarySystem({m1, m2}, std::make_shared<CircularBinaryOrbit>(m1, m2, d, phase), opts);
}

inline PrimarySystem make_static_center(double m, double period = 1.0, SystemOptions opts = {})
{
    if (!(m > 0)) throw InvalidArgument("make_static_center: mass must be positive");
    if (!(period > 0)) throw InvalidArgument("make_static_center: period must be positive");
    return PrimarySystem({m}, std::make_shared<StaticCenterOrbit>(period), opts);
}

struct OrbitSample {
    double t;
    std::vector<Vec> bodies;
};

/// Build a system from uniformly spaced samples over one period.
/// A trailing sample at t = T is accepted and must repeat the first one.
inline PrimarySystem load_sampled_periodic(std::vector<OrbitSample> samples, double T, std::vector<double> masses,
                                           SystemOptions opts = {})
{
    if (!(T > 0)) throw InvalidArgument("load_sampled_periodic: period must be positive");
    if (samples.size() >= 2 && std::abs(samples.back().t - T) <= 1e-9 * T) {
        const auto& first = samples.front().bodies;
        const auto& last = samples.back().bodies;
        if (first.size() != last.size()) throw FormatError("sample body counts differ");
        for (std::size_t i = 0; i < first.size(); ++i)
            if (std::abs(first[i] - last[i]) > 1e-8 * (1.0 + std::abs(first[i])))
                throw FormatError("endpoint mismatch: samples at t=0 and t=T differ (data not periodic)");
        samples.pop_back();
    }
    const std::size_t n = samples.size();
    if (n < 16) throw InvalidArgument("load_sampled_periodic: at least 16 samples per body required");
    const std::size_t nb = samples.front().bodies.size();
    if (nb == 0 || masses.size() != nb) throw InvalidArgument("load_sampled_periodic: mass count mismatch");
    std::vector<std::vector<Vec>> grid(n);
    double max_step = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (samples[k].bodies.size() != nb) throw FormatError("sample body counts differ");
        const double expected = T * static_cast<double>(k) / n;
        if (std::abs(samples[k].t - expected) > 1e-9 * T)
            throw FormatError("samples must be uniform over [0,T) starting at t=0");
        grid[k] = samples[k].bodies;
        if (k > 0)
            for (std::size_t i = 0; i < nb; ++i) max_step = std::max(max_step, std::abs(grid[k][i] - grid[k - 1][i]));
    }
    for (std::size_t i = 0; i < nb; ++i)
        if (std::abs(grid[0][i] - grid[n - 1][i]) > 10.0 * max_step + 1e-12)
            throw FormatError("endpoint mismatch: wrap-around jump exceeds sample spacing (data not periodic)");
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < nb; ++i)
            for (std::size_t j = i + 1; j < nb; ++j)
                if (grid[k][i] == grid[k][j]) throw ValidationError("collision in sampled data");
    return PrimarySystem(std::move(masses), std::make_shared<FourierOrbit>(grid, T), opts);
}

/// q^λ(s) = λ^{2/3} q(s/λ); period becomes λT.
inline PrimarySystem blow_up_system(const PrimarySystem& sys, double lambda)
{
    if (!(lambda > 0)) throw InvalidArgument("blow_up_system: lambda must be positive");
    if (lambda == 1.0) return sys;
    auto orbit = std::make_shared<AffineOrbit>(sys.orbit(), std::pow(lambda, 2.0 / 3.0), 0.0, 1.0 / lambda);
    return PrimarySystem(sys.masses(), orbit, sys.options());
}

/// q̃(t) = q(2 t_x − t), again a periodic solution.
inline PrimarySystem reflect_time(const PrimarySystem& sys, double t_x)
{
    auto orbit = std::make_shared<AffineOrbit>(sys.orbit(), 1.0, 2.0 * t_x, -1.0);
    return PrimarySystem(sys.masses(), orbit, sys.options());
}

inline FarField far_field_constants(const PrimarySystem& sys, double margin = 1.1)
{
    return sys.compute_far_field(margin);
}

} // namespace hyperflow
