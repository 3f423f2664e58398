#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"

namespace hyperflow {

/// Piecewise-linear trajectory of the massless body.
struct Path {
    std::vector<double> t;
    std::vector<Vec> z;

    Path() = default;
    Path(std::vector<double> times, std::vector<Vec> positions) : t(std::move(times)), z(std::move(positions)) {}

    std::size_t size() const { return t.size(); }
    double t_begin() const { return t.front(); }
    double t_end() const { return t.back(); }
    double duration() const { return t.back() - t.front(); }

    void validate() const
    {
        if (t.size() != z.size()) throw InvalidArgument("Path: times and positions differ in length");
        if (t.size() < 2) throw InvalidArgument("Path: at least 2 nodes required");
        for (std::size_t k = 0; k < t.size(); ++k) {
            if (!std::isfinite(t[k]) || !std::isfinite(z[k].real()) || !std::isfinite(z[k].imag()))
                throw InvalidArgument("Path: non-finite coordinate");
            if (k > 0 && !(t[k] > t[k - 1])) throw InvalidArgument("Path: times must be strictly increasing");
        }
    }

    /// Position at time s by linear interpolation (clamped to the ends).
    Vec at(double s) const
    {
        if (s <= t.front()) return z.front();
        if (s >= t.back()) return z.back();
        const auto it = std::upper_bound(t.begin(), t.end(), s);
        const std::size_t k = static_cast<std::size_t>(it - t.begin()) - 1;
        const double u = (s - t[k]) / (t[k + 1] - t[k]);
        return (1.0 - u) * z[k] + u * z[k + 1];
    }

    double length() const
    {
        double L = 0.0;
        for (std::size_t k = 0; k + 1 < size(); ++k) L += std::abs(z[k + 1] - z[k]);
        return L;
    }
};

/// Restriction of a path to [a, b], with interpolated end nodes.
inline Path subpath(const Path& p, double a, double b)
{
    if (!(b > a) || a < p.t_begin() || b > p.t_end()) throw InvalidArgument("subpath: invalid interval");
    Path out;
    out.t.push_back(a);
    out.z.push_back(p.at(a));
    const double eps = 1e-12 * std::max(1.0, std::abs(b - a));
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p.t[k] > a + eps && p.t[k] < b - eps) {
            out.t.push_back(p.t[k]);
            out.z.push_back(p.z[k]);
        }
    }
    out.t.push_back(b);
    out.z.push_back(p.at(b));
    return out;
}

/// Resample a path at new node times by linear interpolation.
inline Path resample(const Path& p, const std::vector<double>& times)
{
    Path out;
    out.t = times;
    out.z.reserve(times.size());
    for (double s : times) out.z.push_back(p.at(s));
    return out;
}

/// Shift all node times by dt.
inline Path time_shift(Path p, double dt)
{
    for (auto& s : p.t) s += dt;
    return p;
}

/// Uniform time dilation about the start: t ↦ t_0 + (t − t_0)·D_new/D.
inline Path dilate(Path p, double new_duration)
{
    const double t0 = p.t.front();
    const double f = new_duration / p.duration();
    for (auto& s : p.t) s = t0 + (s - t0) * f;
    p.t.back() = t0 + new_duration;
    return p;
}

/// Join b after a. b is shifted so that it starts where a ends; when T > 0
/// the fractional parts (mod T) of the junction times must agree.
inline Path concatenate(const Path& a, const Path& b, double T = 0.0)
{
    a.validate();
    b.validate();
    const Vec ja = a.z.back(), jb = b.z.front();
    if (std::abs(ja - jb) > 1e-12 * (1.0 + std::abs(ja)))
        throw InvalidArgument("concatenate: endpoint mismatch");
    const double shift = a.t_end() - b.t_begin();
    if (T > 0) {
        const double cycles = shift / T;
        if (std::abs(cycles - std::round(cycles)) > 1e-9)
            throw InvalidArgument("concatenate: junction times differ in fractional part");
    }
    Path out = a;
    for (std::size_t k = 1; k < b.size(); ++k) {
        out.t.push_back(b.t[k] + shift);
        out.z.push_back(b.z[k]);
    }
    return out;
}

/// Straight segment from x to y at constant speed with n + 1 nodes at the given times.
inline Path straight_path(Vec x, Vec y, const std::vector<double>& times)
{
    Path p;
    p.t = times;
    const double t0 = times.front(), D = times.back() - times.front();
    for (double s : times) {
        const double u = (s - t0) / D;
        p.z.push_back((1.0 - u) * x + u * y);
    }
    return p;
}

inline std::vector<double> uniform_times(double t1, double t2, std::size_t segments)
{
    if (segments < 1) throw InvalidArgument("uniform_times: need at least one segment");
    std::vector<double> t(segments + 1);
    for (std::size_t k = 0; k <= segments; ++k) t[k] = t1 + (t2 - t1) * static_cast<double>(k) / segments;
    t.back() = t2;
    return t;
}

/// Node times distributed according to a positive density ρ(t) (nodes per unit
/// time) over a sorted partition of [t1, t2] on which ρ is integrated by
/// Simpson's rule. The partition must resolve the features of ρ.
inline std::vector<double> graded_times_on(const std::vector<double>& ts, const std::function<double(double)>& density,
                                           std::size_t min_segments = 8, double scale = 1.0)
{
    const std::size_t fine = ts.size() - 1;
    std::vector<double> cum(fine + 1, 0.0);
    for (std::size_t k = 0; k < fine; ++k) {
        const double a = density(ts[k]), m = density(0.5 * (ts[k] + ts[k + 1])), b = density(ts[k + 1]);
        cum[k + 1] = cum[k] + (ts[k + 1] - ts[k]) * (a + 4 * m + b) / 6.0;
    }
    const double total = cum.back() * scale;
    const std::size_t n = std::max<std::size_t>(min_segments, static_cast<std::size_t>(std::ceil(total)));
    std::vector<double> out(n + 1);
    out.front() = ts.front();
    out.back() = ts.back();
    std::size_t j = 0;
    for (std::size_t k = 1; k < n; ++k) {
        const double target = cum.back() * static_cast<double>(k) / n;
        while (j + 1 < cum.size() && cum[j + 1] < target) ++j;
        const double u = (target - cum[j]) / (cum[j + 1] - cum[j]);
        out[k] = ts[j] + u * (ts[j + 1] - ts[j]);
    }
    return out;
}

/// Same on a uniform partition of 4096 cells. The map from a uniform
/// parameter to t is smooth, so halving the parameter step halves every step.
inline std::vector<double> graded_times(double t1, double t2, const std::function<double(double)>& density,
                                        std::size_t min_segments = 8, double scale = 1.0)
{
    const int fine = 4096;
    std::vector<double> ts(fine + 1);
    for (int k = 0; k <= fine; ++k) ts[k] = t1 + (t2 - t1) * k / fine;
    return graded_times_on(ts, density, min_segments, scale);
}

/// Insert one midpoint node in every segment.
inline Path refine(const Path& p)
{
    Path out;
    for (std::size_t k = 0; k + 1 < p.size(); ++k) {
        out.t.push_back(p.t[k]);
        out.z.push_back(p.z[k]);
        out.t.push_back(0.5 * (p.t[k] + p.t[k + 1]));
        out.z.push_back(0.5 * (p.z[k] + p.z[k + 1]));
    }
    out.t.push_back(p.t.back());
    out.z.push_back(p.z.back());
    return out;
}

//=============================================================================
// CSV: header "t,x,y", 17 significant digits.

inline std::string format_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_path_csv(std::ostream& os, const Path& p)
{
    os << "t,x,y\n";
    for (std::size_t k = 0; k < p.size(); ++k)
        os << format_double(p.t[k]) << ',' << format_double(p.z[k].real()) << ',' << format_double(p.z[k].imag())
           << '\n';
}

inline void write_path_csv(const std::string& file, const Path& p)
{
    std::ofstream os(file);
    if (!os) throw Error("cannot open " + file + " for writing");
    write_path_csv(os, p);
}

/// Read a path from CSV with leading columns t,x,y (extra columns ignored).
inline Path read_path_csv(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line)) throw FormatError("path CSV: empty input");
    if (line.rfind("t,x,y", 0) != 0) throw FormatError("path CSV: header must start with t,x,y");
    Path p;
    std::size_t row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        double v[3];
        const char* s = line.c_str();
        for (int c = 0; c < 3; ++c) {
            char* end = nullptr;
            v[c] = std::strtod(s, &end);
            if (end == s) throw FormatError("path CSV: bad number on row " + std::to_string(row));
            s = end;
            if (c < 2) {
                if (*s != ',') throw FormatError("path CSV: missing column on row " + std::to_string(row));
                ++s;
            }
        }
        p.t.push_back(v[0]);
        p.z.emplace_back(v[1], v[2]);
    }
    p.validate();
    return p;
}

inline Path read_path_csv(const std::string& file)
{
    std::ifstream is(file);
    if (!is) throw Error("cannot open " + file);
    return read_path_csv(is);
}

} // namespace hyperflow
