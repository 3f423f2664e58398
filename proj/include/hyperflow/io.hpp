#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bihyperbolic.hpp"
#include "hyperbolic.hpp"
#include "minimize.hpp"
#include "verify.hpp"

namespace hyperflow::io {

using json = nlohmann::json;

//=============================================================================
// Configuration

struct EphemerisSpec {
    /// static_center, circular_binary or sampled.
    std::string family = "circular_binary";
    double mass = 1.0;
    /// Requested period; empty keeps the family's own (1 for a static center).
    std::optional<double> period;
    double m1 = 0.5, m2 = 0.5;
    double separation = 1.0;
    double phase = 0.0;
    /// Sampled family: CSV with columns t,x1,y1,x2,y2,... over one period.
    std::string file;
    std::vector<double> masses;
    double far_margin = 1.1;
};

struct HyperbolicBlock {
    double h = 1.0;
    double theta = 0.0;
    Vec x = 0.0;
    double t_x = 0.0;
    Direction direction = Direction::forward;
    int levels = 8;
    double tol_position = 1e-5;
    double tol_velocity = 1e-4;
    bool stop_on_convergence = false;
};

struct BihyperbolicBlock {
    double h = 1.0;
    double theta_minus = 0.0;
    double theta_plus = 0.0;
    TiedClass cls;
    int levels = 12;
    int phase_grid = 8;
    double tol_position = 1e-5;
    double tol_velocity = 1e-4;
};

struct MinimizeBlock {
    /// fixed_end, free_time or tied.
    std::string mode = "fixed_end";
    Vec x = 0.0, y = 0.0;
    double t1 = 0.0, t2 = 1.0;
    double s1 = 0.0;
    std::optional<double> s2;
    double h = 0.0;
    bool refine = true;
    TiedClass cls;
    int phase_grid = 8;
    int subpath_samples = 0;
};

struct VerifyBlock {
    std::string path;
    double h = 0.0;
    int subpath_samples = 20;
    double el_threshold = 1e-2;
    double tail_fraction = 0.25;
};

enum class ProblemKind { none, hyperbolic, bihyperbolic, minimize, verify };

inline const char* to_string(ProblemKind k)
{
    switch (k) {
    case ProblemKind::hyperbolic: return "hyperbolic";
    case ProblemKind::bihyperbolic: return "bihyperbolic";
    case ProblemKind::minimize: return "minimize";
    case ProblemKind::verify: return "verify";
    default: return "none";
    }
}

struct RunConfig {
    EphemerisSpec ephemeris;
    ProblemKind kind = ProblemKind::none;
    HyperbolicBlock hyperbolic;
    BihyperbolicBlock bihyperbolic;
    MinimizeBlock minimize;
    VerifyBlock verify;
    MinimizeOptions solver;
    std::string output_dir = "out";
    std::uint64_t seed = 0;
};

/// Every problem found in a configuration, reported together.
class ConfigErrors : public ValidationError {
  public:
    explicit ConfigErrors(std::vector<std::string> errors)
        : ValidationError(join(errors)), errors_(std::move(errors))
    {
    }
    const std::vector<std::string>& errors() const { return errors_; }

  private:
    static std::string join(const std::vector<std::string>& e)
    {
        std::string s = "invalid configuration:";
        for (const auto& m : e) s += "\n  " + m;
        return s;
    }
    std::vector<std::string> errors_;
};

namespace detail {

    // Reads fields of one JSON object, collecting errors instead of throwing.
    class Reader {
      public:
        Reader(const json& obj, std::string path, std::vector<std::string>& errors)
            : obj_(obj), path_(std::move(path)), errors_(errors)
        {
            if (!obj_.is_object()) fail("", "must be an object");
        }

        bool ok() const { return obj_.is_object(); }
        bool has(const std::string& key) const { return ok() && obj_.contains(key); }

        void number(const std::string& key, double& out, bool required = false)
        {
            seen_.insert(key);
            if (!present(key, required)) return;
            const auto& v = obj_.at(key);
            if (!v.is_number()) return fail(key, "must be a number");
            out = v.get<double>();
            if (!std::isfinite(out)) fail(key, "must be finite");
        }

        void integer(const std::string& key, int& out, bool required = false)
        {
            seen_.insert(key);
            if (!present(key, required)) return;
            const auto& v = obj_.at(key);
            if (!v.is_number_integer()) return fail(key, "must be an integer");
            out = v.get<int>();
        }

        void boolean(const std::string& key, bool& out)
        {
            seen_.insert(key);
            if (!present(key, false)) return;
            const auto& v = obj_.at(key);
            if (!v.is_boolean()) return fail(key, "must be true or false");
            out = v.get<bool>();
        }

        void string(const std::string& key, std::string& out, bool required = false)
        {
            seen_.insert(key);
            if (!present(key, required)) return;
            const auto& v = obj_.at(key);
            if (!v.is_string()) return fail(key, "must be a string");
            out = v.get<std::string>();
        }

        void point(const std::string& key, Vec& out, bool required = false)
        {
            seen_.insert(key);
            if (!present(key, required)) return;
            const auto& v = obj_.at(key);
            if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
                return fail(key, "must be a pair [x, y] of numbers");
            out = Vec(v[0].get<double>(), v[1].get<double>());
            if (!std::isfinite(std::abs(out))) fail(key, "must be finite");
        }

        void numbers(const std::string& key, std::vector<double>& out, bool required = false)
        {
            seen_.insert(key);
            if (!present(key, required)) return;
            const auto& v = obj_.at(key);
            if (!v.is_array()) return fail(key, "must be an array of numbers");
            out.clear();
            for (const auto& e : v) {
                if (!e.is_number()) return fail(key, "must be an array of numbers");
                out.push_back(e.get<double>());
            }
        }

        void require(bool cond, const std::string& key, const std::string& message)
        {
            if (!cond) fail(key, message);
        }

        void fail(const std::string& key, const std::string& message)
        {
            errors_.push_back((key.empty() ? path_ : path_ + "." + key) + ": " + message);
        }

        // Unknown keys are reported so that misspelled options do not pass silently.
        void finish()
        {
            if (!ok()) return;
            for (auto it = obj_.begin(); it != obj_.end(); ++it)
                if (!seen_.count(it.key())) fail(it.key(), "unknown key");
        }

        void skip(const std::string& key) { seen_.insert(key); }

      private:
        bool present(const std::string& key, bool required)
        {
            if (has(key)) return true;
            if (required) fail(key, "is required");
            return false;
        }

        const json& obj_;
        std::string path_;
        std::vector<std::string>& errors_;
        std::set<std::string> seen_;
    };

    inline void read_class(Reader& r, TiedClass& c)
    {
        int i0 = static_cast<int>(c.i0), i1 = static_cast<int>(c.i1);
        r.integer("i0", i0);
        r.integer("i1", i1);
        r.integer("nu_target", c.nu_target);
        r.require(i0 >= 0 && i1 >= 0, "i0", "primary indices must be non-negative");
        r.require(i0 != i1, "i1", "i0 and i1 must differ");
        r.require(c.nu_target != 0, "nu_target", "must be a nonzero integer");
        c.i0 = static_cast<std::size_t>(std::max(i0, 0));
        c.i1 = static_cast<std::size_t>(std::max(i1, 0));
    }

    inline bool angle_ok(double a) { return a >= 0 && a < two_pi; }

} // namespace detail

/// Parse and validate a configuration. Relative file names are resolved
/// against base_dir. Throws FormatError for malformed JSON and ConfigErrors
/// listing every semantic problem.
inline RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = ".")
{
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t k = 0; k + 1 < e.byte && k < text.size(); ++k) {
            if (text[k] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw FormatError("config: malformed JSON at line " + std::to_string(line) + ", column " +
                          std::to_string(col) + ": " + e.what());
    }

    RunConfig cfg;
    std::vector<std::string> errors;
    detail::Reader top(doc, "config", errors);
    if (!top.ok()) throw ConfigErrors(errors);

    // Ephemeris.
    if (!top.has("ephemeris")) {
        top.fail("ephemeris", "is required");
    } else {
        auto& e = cfg.ephemeris;
        detail::Reader r(doc.at("ephemeris"), "ephemeris", errors);
        r.string("family", e.family, true);
        if (r.has("period")) {
            double T = 0.0;
            r.number("period", T);
            r.require(T > 0, "period", "must be positive");
            e.period = T;
        }
        r.number("far_margin", e.far_margin);
        r.require(e.family != "sampled" || e.period, "period", "is required for sampled ephemerides");
        r.require(e.far_margin > 1, "far_margin", "must exceed 1");
        if (e.family == "static_center") {
            r.number("mass", e.mass);
            r.require(e.mass > 0, "mass", "must be positive");
        } else if (e.family == "circular_binary") {
            r.number("m1", e.m1);
            r.number("m2", e.m2);
            r.number("separation", e.separation);
            r.number("phase", e.phase);
            r.require(e.m1 > 0 && e.m2 > 0, "m1", "masses must be positive");
            r.require(e.separation > 0, "separation", "must be positive");
        } else if (e.family == "sampled") {
            r.string("file", e.file, true);
            r.numbers("masses", e.masses, true);
            for (double m : e.masses) r.require(m > 0, "masses", "masses must be positive");
            if (!e.file.empty()) {
                const auto f = std::filesystem::path(e.file).is_absolute() ? std::filesystem::path(e.file)
                                                                          : base_dir / e.file;
                if (!std::filesystem::exists(f))
                    r.fail("file", "file not found: " + f.string());
                else
                    e.file = f.string();
            }
        } else if (r.ok()) {
            r.fail("family", "must be static_center, circular_binary or sampled");
        }
        r.skip("mass");
        r.skip("m1");
        r.skip("m2");
        r.skip("separation");
        r.skip("phase");
        r.skip("file");
        r.skip("masses");
        r.finish();
    }
    top.skip("ephemeris");

    // Problem block: at most one.
    std::vector<ProblemKind> found;
    for (auto k : {ProblemKind::hyperbolic, ProblemKind::bihyperbolic, ProblemKind::minimize, ProblemKind::verify}) {
        top.skip(to_string(k));
        if (top.has(to_string(k))) found.push_back(k);
    }
    if (found.size() > 1) {
        std::string names;
        for (auto k : found) names += std::string(names.empty() ? "" : ", ") + to_string(k);
        top.fail("", "exactly one problem block is allowed, found " + names);
    }
    if (found.size() == 1) cfg.kind = found.front();

    if (top.has("hyperbolic")) {
        auto& b = cfg.hyperbolic;
        detail::Reader r(doc.at("hyperbolic"), "hyperbolic", errors);
        std::string dir = "forward";
        r.number("h", b.h, true);
        r.number("theta", b.theta, true);
        r.point("x", b.x, true);
        r.number("t_x", b.t_x);
        r.string("direction", dir);
        r.integer("levels", b.levels);
        r.number("tol_position", b.tol_position);
        r.number("tol_velocity", b.tol_velocity);
        r.boolean("stop_on_convergence", b.stop_on_convergence);
        r.require(b.h > 0, "h", "h must be positive");
        r.require(detail::angle_ok(b.theta), "theta", "must lie in [0, 2pi)");
        r.require(dir == "forward" || dir == "backward", "direction", "must be forward or backward");
        r.require(b.levels >= 2, "levels", "must be at least 2");
        r.require(b.tol_position > 0 && b.tol_velocity > 0, "tol_position", "tolerances must be positive");
        b.direction = dir == "backward" ? Direction::backward : Direction::forward;
        r.finish();
    }
    if (top.has("bihyperbolic")) {
        auto& b = cfg.bihyperbolic;
        detail::Reader r(doc.at("bihyperbolic"), "bihyperbolic", errors);
        r.number("h", b.h, true);
        r.number("theta_minus", b.theta_minus, true);
        r.number("theta_plus", b.theta_plus, true);
        detail::read_class(r, b.cls);
        r.integer("levels", b.levels);
        r.integer("phase_grid", b.phase_grid);
        r.number("tol_position", b.tol_position);
        r.number("tol_velocity", b.tol_velocity);
        r.require(b.h > 0, "h", "h must be positive");
        r.require(detail::angle_ok(b.theta_minus), "theta_minus", "must lie in [0, 2pi)");
        r.require(detail::angle_ok(b.theta_plus), "theta_plus", "must lie in [0, 2pi)");
        r.require(b.levels >= 2, "levels", "must be at least 2");
        r.require(b.phase_grid >= 1, "phase_grid", "must be at least 1");
        r.require(b.tol_position > 0 && b.tol_velocity > 0, "tol_position", "tolerances must be positive");
        r.finish();
    }
    if (top.has("minimize")) {
        auto& b = cfg.minimize;
        detail::Reader r(doc.at("minimize"), "minimize", errors);
        r.string("mode", b.mode);
        r.point("x", b.x, true);
        r.point("y", b.y, true);
        r.number("h", b.h, true);
        r.boolean("refine", b.refine);
        r.integer("subpath_samples", b.subpath_samples);
        r.require(b.subpath_samples >= 0, "subpath_samples", "must be non-negative");
        if (b.mode == "fixed_end") {
            r.number("t1", b.t1);
            r.number("t2", b.t2, true);
            r.require(b.t2 > b.t1, "t2", "must exceed t1");
            r.require(b.h >= 0, "h", "must be non-negative");
        } else if (b.mode == "free_time") {
            r.number("s1", b.s1);
            if (r.has("s2")) {
                double s2 = 0.0;
                r.number("s2", s2);
                b.s2 = s2;
            }
            r.require(b.h > 0, "h", "h must be positive");
        } else if (b.mode == "tied") {
            detail::read_class(r, b.cls);
            r.integer("phase_grid", b.phase_grid);
            r.require(b.phase_grid >= 1, "phase_grid", "must be at least 1");
            r.require(b.h > 0, "h", "h must be positive");
        } else {
            r.fail("mode", "must be fixed_end, free_time or tied");
        }
        for (const char* k : {"t1", "t2", "s1", "s2", "i0", "i1", "nu_target", "phase_grid"}) r.skip(k);
        r.finish();
    }
    if (top.has("verify")) {
        auto& b = cfg.verify;
        detail::Reader r(doc.at("verify"), "verify", errors);
        r.string("path", b.path, true);
        r.number("h", b.h, true);
        r.integer("subpath_samples", b.subpath_samples);
        r.number("el_threshold", b.el_threshold);
        r.number("tail_fraction", b.tail_fraction);
        r.require(b.h >= 0, "h", "must be non-negative");
        r.require(b.subpath_samples >= 0, "subpath_samples", "must be non-negative");
        r.require(b.tail_fraction > 0 && b.tail_fraction <= 1, "tail_fraction", "must lie in (0, 1]");
        if (!b.path.empty()) {
            const auto f = std::filesystem::path(b.path).is_absolute() ? std::filesystem::path(b.path)
                                                                      : base_dir / b.path;
            if (!std::filesystem::exists(f))
                r.fail("path", "file not found: " + f.string());
            else
                b.path = f.string();
        }
        r.finish();
    }

    if (top.has("solver")) {
        auto& s = cfg.solver;
        detail::Reader r(doc.at("solver"), "solver", errors);
        r.number("tol", s.tol);
        r.integer("max_iter", s.max_iter);
        r.number("nodes_per_period", s.nodes_per_period);
        r.number("guard_fraction", s.guard_fraction);
        r.integer("max_refine", s.max_refine);
        r.integer("patience", s.patience);
        r.integer("threads", s.threads);
        r.require(s.tol > 0, "tol", "must be positive");
        r.require(s.max_iter > 0, "max_iter", "must be positive");
        r.require(s.nodes_per_period >= 4, "nodes_per_period", "must be at least 4");
        r.require(s.guard_fraction > 0 && s.guard_fraction < 1, "guard_fraction", "must lie in (0, 1)");
        r.require(s.max_refine >= 0, "max_refine", "must be non-negative");
        r.require(s.patience >= 0, "patience", "must be non-negative");
        r.require(s.threads >= 1, "threads", "must be at least 1");
        r.finish();
    }
    top.skip("solver");
    top.string("output_dir", cfg.output_dir);
    if (top.has("seed")) {
        top.skip("seed");
        const auto& v = doc.at("seed");
        if (v.is_number_unsigned())
            cfg.seed = v.get<std::uint64_t>();
        else if (v.is_number_integer() && v.get<long long>() >= 0)
            cfg.seed = static_cast<std::uint64_t>(v.get<long long>());
        else
            top.fail("seed", "must be a non-negative integer");
    }
    top.finish();
    if (!errors.empty()) throw ConfigErrors(errors);
    return cfg;
}

inline RunConfig load_config(const std::string& file)
{
    std::ifstream is(file);
    if (!is) throw NotFound("config file not found: " + file);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str(), std::filesystem::path(file).parent_path());
}

/// Read t,x1,y1,...,xN,yN rows for one period.
inline std::vector<OrbitSample> read_samples_csv(const std::string& file)
{
    std::ifstream is(file);
    if (!is) throw NotFound("cannot open " + file);
    std::string line;
    if (!std::getline(is, line)) throw FormatError(file + ": empty sample file");
    std::vector<OrbitSample> out;
    std::size_t row = 1, cols = 0;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        std::vector<double> v;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            char* end = nullptr;
            const double d = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str()) throw FormatError(file + ": bad number on row " + std::to_string(row));
            v.push_back(d);
        }
        if (v.size() < 3 || v.size() % 2 == 0)
            throw FormatError(file + ": row " + std::to_string(row) + " must hold t and (x, y) per body");
        if (cols == 0) cols = v.size();
        if (v.size() != cols) throw FormatError(file + ": row " + std::to_string(row) + " has a different width");
        OrbitSample s;
        s.t = v[0];
        for (std::size_t k = 1; k < v.size(); k += 2) s.bodies.emplace_back(v[k], v[k + 1]);
        out.push_back(std::move(s));
    }
    return out;
}

inline PrimarySystem build_system(const EphemerisSpec& e)
{
    SystemOptions so;
    so.far_margin = e.far_margin;
    if (e.family == "static_center") return make_static_center(e.mass, e.period.value_or(1.0), so);
    if (e.family == "circular_binary") {
        // The circular binary's period follows from its masses and separation;
        // a requested period is reached by the blow-up rescaling.
        const auto base = make_circular_binary(e.m1, e.m2, e.separation, e.phase, so);
        if (!e.period || std::abs(base.period() - *e.period) <= 1e-12 * *e.period) return base;
        return blow_up_system(base, *e.period / base.period());
    }
    if (e.family == "sampled") return load_sampled_periodic(read_samples_csv(e.file), *e.period, e.masses, so);
    throw InvalidArgument("unknown ephemeris family " + e.family);
}

/// Checks that need the built system.
inline std::vector<std::string> validate_against_system(const RunConfig& c, const PrimarySystem& sys)
{
    std::vector<std::string> errors;
    auto check_class = [&](const TiedClass& cls, const std::string& where) {
        if (cls.i0 >= sys.size() || cls.i1 >= sys.size())
            errors.push_back(where + ".i0: primary index out of range for " + std::to_string(sys.size()) +
                             " primaries");
    };
    if (c.kind == ProblemKind::bihyperbolic) check_class(c.bihyperbolic.cls, "bihyperbolic");
    if (c.kind == ProblemKind::minimize && c.minimize.mode == "tied") {
        check_class(c.minimize.cls, "minimize");
        const double R0 = tied_core_radius(sys);
        if (std::abs(c.minimize.x) < R0 || std::abs(c.minimize.y) < R0)
            errors.push_back("minimize.x: tied endpoints must satisfy |x|, |y| >= R0 = " + format_double(R0));
    }
    if (c.kind == ProblemKind::minimize && c.minimize.mode == "free_time") {
        const double T = sys.period();
        if (!(c.minimize.s1 >= 0 && c.minimize.s1 < T)) errors.push_back("minimize.s1: must lie in [0, T)");
        if (c.minimize.s2 && !(*c.minimize.s2 >= 0 && *c.minimize.s2 < T))
            errors.push_back("minimize.s2: must lie in [0, T)");
    }
    return errors;
}

//=============================================================================
// Output

inline json angle_json(double raw) { return {{"raw", raw}, {"mod_2pi", wrap_angle(raw)}}; }

inline json vec_json(Vec v) { return json::array({v.real(), v.imag()}); }

inline json system_json(const PrimarySystem& sys)
{
    const auto& ff = sys.far_field();
    return {{"bodies", sys.size()},
            {"masses", sys.masses()},
            {"total_mass", sys.total_mass()},
            {"period", sys.period()},
            {"rho0", std::isfinite(sys.rho0()) ? json(sys.rho0()) : json(nullptr)},
            {"R0", sys.R0()},
            {"sup_radius", sys.sup_radius()},
            {"far_field", {{"R1", ff.R1}, {"alpha1", ff.alpha1}, {"alpha2", ff.alpha2}}},
            {"newton_residual", sys.newton_residual()},
            {"warnings", sys.warnings()}};
}

inline json action_json(const ActionBreakdown& a)
{
    return {{"kinetic", a.kinetic}, {"potential", a.potential}, {"h_term", a.h_term}, {"total", a.total}};
}

inline json dmin_json(const DistanceRecord& d) { return {{"value", d.d_min}, {"t", d.t}, {"body", d.body}}; }

inline json escape_json(const EscapeReport& r)
{
    const auto& c = r.certificate;
    const auto& e = r.estimate;
    return {{"certificate",
             {{"valid", c.valid},
              {"violations", c.violations},
              {"t1", c.t1},
              {"r1", c.r1},
              {"rdot1", c.rdot1},
              {"threshold", c.threshold},
              {"v_floor", c.v_floor},
              {"min_rdot_after", c.min_rdot_after}}},
            {"omega", {{"bound", r.omega.bound}, {"measured_sup", r.omega.measured_sup}, {"satisfied", r.omega.satisfied}}},
            {"estimate",
             {{"v_inf", e.v_inf},
              {"v_bound", e.v_bound},
              {"theta_inf", angle_json(e.theta_inf)},
              {"theta_bound", e.theta_bound}}}};
}

inline json result_json(const MinimizeResult& r)
{
    return {{"action", action_json(r.action)},
            {"grad_norm", r.grad_norm},
            {"el_residual", r.el_residual},
            {"dmin", dmin_json(r.dmin)},
            {"iterations", r.iterations},
            {"rejected_steps", r.rejected_steps},
            {"status", to_string(r.status)},
            {"refinement_history", r.refinement_history},
            {"nodes", r.path.size()},
            {"notes", r.notes}};
}

inline json collision_json(const std::optional<CollisionEvent>& ev)
{
    if (!ev) return nullptr;
    return {{"body", ev->i0},
            {"t0", ev->t0},
            {"d_min", ev->d_min},
            {"binary_energy", ev->E0},
            {"exponent", {{"minus", ev->exponent_minus}, {"plus", ev->exponent_plus}}},
            {"coefficient", {{"minus", ev->coefficient_minus}, {"plus", ev->coefficient_plus}}},
            {"sigma_minus", angle_json(std::arg(ev->sigma_minus))},
            {"sigma_plus", angle_json(std::arg(ev->sigma_plus))}};
}

inline json subpath_json(const SubpathReport& r)
{
    json samples = json::array();
    for (const auto& s : r.samples)
        samples.push_back({{"t_a", s.t_a}, {"t_b", s.t_b}, {"excess", s.excess}});
    return {{"max_excess", r.samples.empty() ? json(nullptr) : json(r.max_excess)}, {"samples", samples}};
}

/// Writes one run's artifacts under a directory.
class ArtifactWriter {
  public:
    explicit ArtifactWriter(std::filesystem::path dir) : dir_(std::move(dir))
    {
        std::filesystem::create_directories(dir_ / "plotdata");
    }

    const std::filesystem::path& dir() const { return dir_; }

    /// solution.csv with columns t,x,y,vx,vy.
    void solution(const Path& p, const std::vector<Vec>& v) const
    {
        std::ofstream os(dir_ / "solution.csv");
        os << "t,x,y,vx,vy\n";
        for (std::size_t k = 0; k < p.size(); ++k)
            os << format_double(p.t[k]) << ',' << format_double(p.z[k].real()) << ',' << format_double(p.z[k].imag())
               << ',' << format_double(v[k].real()) << ',' << format_double(v[k].imag()) << '\n';
    }

    /// diagnostics.csv with columns t,r,theta,rdot,omega,speed,dmin.
    void diagnostics(const PrimarySystem& sys, const Path& p, const std::vector<Vec>& v) const
    {
        std::ofstream os(dir_ / "diagnostics.csv");
        os << "t,r,theta,rdot,omega,speed,dmin\n";
        std::vector<Vec> q(sys.size());
        double theta = 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) {
            const Vec z = p.z[k];
            const double r = std::abs(z);
            theta = k == 0 || r == 0 || p.z[k - 1] == 0.0 ? std::arg(z) : theta + std::arg(z / p.z[k - 1]);
            sys.positions(p.t[k], q.data());
            double d = std::numeric_limits<double>::infinity();
            for (const Vec& qi : q) d = std::min(d, std::abs(z - qi));
            os << format_double(p.t[k]) << ',' << format_double(r) << ',' << format_double(theta) << ','
               << format_double(r > 0 ? dot(z, v[k]) / r : 0.0) << ',' << format_double(cross(z, v[k])) << ','
               << format_double(std::abs(v[k])) << ',' << format_double(d) << '\n';
        }
    }

    /// Whitespace-separated tables with a commented header, plus a gnuplot script.
    void plotdata(const PrimarySystem& sys, const Path* p) const
    {
        const auto pd = dir_ / "plotdata";
        double a = 0.0, b = sys.period();
        if (p) {
            a = p->t_begin();
            b = p->t_end();
            std::ofstream os(pd / "trajectory.dat");
            os << "# t x y\n";
            for (std::size_t k = 0; k < p->size(); ++k)
                os << format_double(p->t[k]) << ' ' << format_double(p->z[k].real()) << ' '
                   << format_double(p->z[k].imag()) << '\n';
        }
        {
            // Primary tracks over the same interval, capped at 20000 samples.
            const std::size_t n = static_cast<std::size_t>(std::clamp((b - a) / sys.period() * 256.0, 256.0, 20000.0));
            std::ofstream os(pd / "primaries.dat");
            os << "# t";
            for (std::size_t i = 0; i < sys.size(); ++i) os << " x" << i << " y" << i;
            os << '\n';
            std::vector<Vec> q(sys.size());
            for (std::size_t k = 0; k <= n; ++k) {
                const double t = a + (b - a) * k / n;
                sys.positions(t, q.data());
                os << format_double(t);
                for (const Vec& qi : q) os << ' ' << format_double(qi.real()) << ' ' << format_double(qi.imag());
                os << '\n';
            }
        }
        std::ofstream gp(pd / "plot.gp");
        gp << "set size ratio -1\nset key outside\n";
        gp << "plot ";
        for (std::size_t i = 0; i < sys.size(); ++i)
            gp << "'primaries.dat' using " << 2 + 2 * i << ':' << 3 + 2 * i << " with lines title 'primary " << i
               << "', ";
        if (p)
            gp << "'trajectory.dat' using 2:3 with lines lw 2 title 'trajectory'\n";
        else
            gp << "1/0 notitle\n";
    }

    /// Continuation history as a whitespace table.
    void table(const std::string& name, const std::vector<std::string>& columns,
               const std::vector<std::vector<double>>& rows) const
    {
        std::ofstream os(dir_ / "plotdata" / name);
        os << '#';
        for (const auto& c : columns) os << ' ' << c;
        os << '\n';
        for (const auto& r : rows) {
            for (std::size_t k = 0; k < r.size(); ++k) os << (k ? " " : "") << format_double(r[k]);
            os << '\n';
        }
    }

    void summary(const json& j) const { write_json("summary.json", j); }
    void error(const json& j) const { write_json("error.json", j); }

  private:
    void write_json(const std::string& name, const json& j) const
    {
        std::ofstream os(dir_ / name);
        os << j.dump(2) << '\n';
    }

    std::filesystem::path dir_;
};

} // namespace hyperflow::io
