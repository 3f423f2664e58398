#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace hyperflow {

// Planar points and vectors are complex numbers: x + i y.
using Vec = std::complex<double>;

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

inline double dot(Vec a, Vec b) { return a.real() * b.real() + a.imag() * b.imag(); }
inline double cross(Vec a, Vec b) { return a.real() * b.imag() - a.imag() * b.real(); }

/// Reduce an angle to [0, 2π).
inline double wrap_angle(double a)
{
    double r = std::fmod(a, two_pi);
    if (r < 0) r += two_pi;
    if (r >= two_pi) r = 0.0;
    return r;
}

/// Signed angular distance a − b reduced to (−π, π].
inline double angle_diff(double a, double b)
{
    double d = std::remainder(a - b, two_pi);
    if (d <= -pi) d += two_pi;
    return d;
}

//=============================================================================
// Error kinds. Each maps to one failure category of the public operations.

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
  public:
    using Error::Error;
};

class FormatError : public Error {
  public:
    using Error::Error;
};

class ValidationError : public Error {
  public:
    using Error::Error;
};

class NotFound : public Error {
  public:
    using Error::Error;
};

class Unsupported : public Error {
  public:
    using Error::Error;
};

class NumericalFailure : public Error {
  public:
    using Error::Error;
};

/// A polar angle lift could not be made continuous: consecutive nodes differ by π or more.
class UnwrapAmbiguity : public NumericalFailure {
  public:
    using NumericalFailure::NumericalFailure;
};

class ContinuationFailure : public Error {
  public:
    using Error::Error;
};

class InitializationFailure : public Error {
  public:
    using Error::Error;
};

class RefinementNeeded : public Error {
  public:
    using Error::Error;
};

/// Raised when a position coincides with a primary.
class SingularityError : public Error {
  public:
    SingularityError(std::size_t body, double time)
        : Error("position coincides with primary " + std::to_string(body) + " at t = " + std::to_string(time)),
          body_(body), time_(time)
    {
    }
    SingularityError(const std::string& what, std::size_t body, double time) : Error(what), body_(body), time_(time) {}
    std::size_t body() const { return body_; }
    double time() const { return time_; }

  private:
    std::size_t body_;
    double time_;
};

//=============================================================================
// Four-point Gauss-Legendre rule on [0, 1].

struct GaussLegendre4 {
    static constexpr std::array<double, 4> nodes = {
        0.5 - 0.5 * 0.8611363115940526, 0.5 - 0.5 * 0.3399810435848563,
        0.5 + 0.5 * 0.3399810435848563, 0.5 + 0.5 * 0.8611363115940526};
    static constexpr std::array<double, 4> weights = {
        0.5 * 0.3478548451374538, 0.5 * 0.6521451548625461,
        0.5 * 0.6521451548625461, 0.5 * 0.3478548451374538};
};

//=============================================================================
// Fornberg's algorithm: weights of the derivative of order `order` at x0
// from values at the (possibly nonuniform) abscissae xs.

inline std::vector<double> fornberg_weights(double x0, const std::vector<double>& xs, int order)
{
    const int n = static_cast<int>(xs.size()) - 1;
    std::vector<std::vector<double>> c(n + 1, std::vector<double>(order + 1, 0.0));
    double c1 = 1.0;
    double c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for (int i = 1; i <= n; ++i) {
        const int mn = std::min(i, order);
        double c2 = 1.0;
        const double c5 = c4;
        c4 = xs[i] - x0;
        for (int j = 0; j < i; ++j) {
            const double c3 = xs[i] - xs[j];
            c2 *= c3;
            if (j == i - 1) {
                for (int k = mn; k >= 1; --k)
                    c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for (int k = mn; k >= 1; --k)
                c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3;
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    std::vector<double> w(n + 1);
    for (int i = 0; i <= n; ++i) w[i] = c[i][order];
    return w;
}

/// First derivative at every node of a sampled function using five-point
/// stencils (centered in the interior, one-sided at the ends).
template <class T>
std::vector<T> differentiate(const std::vector<double>& t, const std::vector<T>& f)
{
    const std::size_t n = t.size();
    if (n < 2) throw InvalidArgument("differentiate: need at least 2 samples");
    std::vector<T> df(n);
    const std::size_t width = std::min<std::size_t>(5, n);
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t lo = k >= width / 2 ? k - width / 2 : 0;
        if (lo + width > n) lo = n - width;
        std::vector<double> xs(t.begin() + lo, t.begin() + lo + width);
        auto w = fornberg_weights(t[k], xs, 1);
        T acc{};
        for (std::size_t j = 0; j < width; ++j) acc += w[j] * f[lo + j];
        df[k] = acc;
    }
    return df;
}

} // namespace hyperflow
