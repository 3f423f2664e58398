#pragma once

#include <iostream>
#include <string>

#include "io.hpp"

namespace hyperflow::io {

enum ExitCode : int { exit_ok = 0, exit_validation = 2, exit_continuation = 3, exit_numerical = 4 };

/// Error record written as error.json and echoed on stderr.
inline json error_json(const std::string& kind, int code, const std::string& message,
                       const std::vector<std::string>& errors = {})
{
    return {{"status", "error"}, {"kind", kind}, {"exit_code", code}, {"message", message}, {"errors", errors}};
}

namespace detail {

    inline void write_path_artifacts(const ArtifactWriter& w, const PrimarySystem& sys, const Path& p,
                                     const std::vector<Vec>& v)
    {
        w.solution(p, v);
        w.diagnostics(sys, p, v);
        w.plotdata(sys, &p);
    }

    inline json history_json(const std::vector<ContinuationStep>& h)
    {
        json a = json::array();
        for (const auto& s : h)
            a.push_back({{"level", s.level},
                         {"radius", s.radius},
                         {"action", s.action},
                         {"duration", s.duration},
                         {"periods", s.periods},
                         {"arrival_phase", s.s2},
                         {"tau_y", s.tau_y},
                         {"action_bound", s.action_bound},
                         {"action_bound_ok", s.action_bound_ok},
                         {"radial_floor_violations", s.radial_floor_violations},
                         {"window_radius", s.window_radius},
                         {"diff_position", s.diff_position},
                         {"diff_velocity", s.diff_velocity},
                         {"extrap_position", s.extrap_position},
                         {"extrap_velocity", s.extrap_velocity},
                         {"status", to_string(s.status)},
                         {"solves", s.solves}});
        return a;
    }

    inline json history_json(const std::vector<BiStep>& h)
    {
        json a = json::array();
        for (const auto& s : h)
            a.push_back({{"level", s.level},
                         {"radius", s.radius},
                         {"action", s.action},
                         {"untied_action", s.untied_action},
                         {"t1", s.t1},
                         {"t2", s.t2},
                         {"s_x", s.crossing.s_x},
                         {"s_y", s.crossing.s_y},
                         {"tau_x", s.tau_x},
                         {"tau_y", s.tau_y},
                         {"nu", s.nu},
                         {"collision_dips", s.collision_dips},
                         {"floor_violations_in", s.floor_violations_in},
                         {"floor_violations_out", s.floor_violations_out},
                         {"class_invariant", s.class_invariant},
                         {"diff_position", s.diff_position},
                         {"diff_velocity", s.diff_velocity},
                         {"extrap_position", s.extrap_position},
                         {"extrap_velocity", s.extrap_velocity},
                         {"status", to_string(s.status)},
                         {"solves", s.solves}});
        return a;
    }

    inline void history_table(const ArtifactWriter& w, const std::vector<ContinuationStep>& h)
    {
        std::vector<std::vector<double>> rows;
        for (const auto& s : h)
            rows.push_back({double(s.level), s.radius, s.action, s.tau_y, s.diff_position, s.diff_velocity,
                            s.extrap_position, s.extrap_velocity});
        w.table("history.dat", {"level", "radius", "action", "tau_y", "dp", "dv", "ep", "ev"}, rows);
    }

    inline void history_table(const ArtifactWriter& w, const std::vector<BiStep>& h)
    {
        std::vector<std::vector<double>> rows;
        for (const auto& s : h)
            rows.push_back({double(s.level), s.radius, s.action, s.untied_action, s.nu, s.crossing.s_x,
                            s.crossing.s_y, s.tau_x, s.tau_y, s.diff_position, s.diff_velocity, s.extrap_position,
                            s.extrap_velocity});
        w.table("history.dat",
                {"level", "radius", "action", "untied", "nu", "s_x", "s_y", "tau_x", "tau_y", "dp", "dv", "ep", "ev"},
                rows);
    }

    inline MinimizeResult fresh_solve(const PrimarySystem& sys, const FixedEndProblem& fp, const MinimizeOptions& o)
    {
        const auto seeds = hyperflow::detail::fresh_seeds(sys, fp.x, fp.y, fp.t1, fp.t2, o);
        auto r = hyperflow::detail::solve_seeds(sys, fp, seeds, o, nullptr);
        if (!r) throw NumericalFailure("minimize: every starting guess failed");
        return std::move(*r);
    }

    inline json base_summary(const std::string& command, const RunConfig& c, const PrimarySystem& sys)
    {
        return {{"schema_version", 1},
                {"command", command},
                {"status", "ok"},
                {"seed", c.seed},
                {"system", system_json(sys)}};
    }

    // Unit-period frame used by the continuation drivers.
    struct UnitFrame {
        double lambda = 1.0;
        PrimarySystem sys;
    };

    inline UnitFrame unit_frame(const PrimarySystem& sys)
    {
        const double T = sys.period();
        if (std::abs(T - 1.0) <= 1e-14) return {1.0, sys};
        return {1.0 / T, blow_up_system(sys, 1.0 / T)};
    }

    inline int run_hyperbolic(const RunConfig& c, const PrimarySystem& sys, const ArtifactWriter& w)
    {
        const auto& b = c.hyperbolic;
        const auto f = unit_frame(sys);
        const double a = std::pow(f.lambda, 2.0 / 3.0);
        HyperbolicQuery q{rescaled_energy(b.h, f.lambda), b.theta, b.x * a, b.t_x * f.lambda, b.direction};
        auto sched = default_schedule(f.sys, q.x, b.levels);
        sched.tol_position = b.tol_position;
        sched.tol_velocity = b.tol_velocity;
        HyperbolicOptions o;
        o.minimize = c.solver;
        o.stop_on_convergence = b.stop_on_convergence;

        HyperbolicSolution s;
        int code = exit_ok;
        std::string failure;
        try {
            s = solve_hyperbolic(f.sys, q, sched, o);
        } catch (const HyperbolicContinuationFailure& e) {
            s = e.partial();
            code = exit_continuation;
            failure = e.what();
        }
        s = rescale_general_period(std::move(s), f.lambda);

        json j = base_summary("hyperbolic", c, sys);
        if (code != exit_ok) {
            j["status"] = "continuation_failure";
            j["message"] = failure;
        }
        j["query"] = {{"h", b.h},
                      {"theta", angle_json(b.theta)},
                      {"x", vec_json(b.x)},
                      {"t_x", b.t_x},
                      {"direction", b.direction == Direction::forward ? "forward" : "backward"}};
        j["schedule"] = {{"unit_period_scale", f.lambda},
                         {"R2", sched.R2 / a},
                         {"levels", b.levels},
                         {"tol_position", sched.tol_position},
                         {"tol_velocity", sched.tol_velocity}};
        j["action"] = action_json(action(sys, s.path, b.h, c.solver.action));
        j["el_residual"] = el_residual(sys, s.path);
        j["dmin"] = dmin_json(min_primary_distance(sys, s.path));
        j["interior_dmin"] = s.interior_dmin;
        j["converged"] = s.converged;
        j["verified"] = s.verified;
        j["target"] = {{"speed", s.target_speed}, {"theta", angle_json(s.target_angle)}};
        j["escape"] = escape_json(s.escape);
        j["history"] = history_json(s.history);
        j["notes"] = s.notes;
        write_path_artifacts(w, sys, s.path, s.velocity);
        history_table(w, s.history);
        w.summary(j);
        if (code != exit_ok) w.error(error_json("continuation", code, failure));
        return code;
    }

    inline int run_bihyperbolic(const RunConfig& c, const PrimarySystem& sys, const ArtifactWriter& w)
    {
        const auto& b = c.bihyperbolic;
        const auto f = unit_frame(sys);
        BiQuery q{rescaled_energy(b.h, f.lambda), b.theta_minus, b.theta_plus, b.cls};
        auto sched = default_bi_schedule(f.sys, b.levels);
        sched.tol_position = b.tol_position;
        sched.tol_velocity = b.tol_velocity;
        BiOptions o;
        o.tied.minimize = c.solver;
        o.tied.phase_grid = b.phase_grid;

        BihyperbolicSolution s;
        int code = exit_ok;
        std::string failure;
        try {
            s = solve_bihyperbolic(f.sys, q, sched, o);
        } catch (const BihyperbolicContinuationFailure& e) {
            s = e.partial();
            code = exit_continuation;
            failure = e.what();
        }
        s = rescale_general_period(std::move(s), f.lambda);

        json j = base_summary("bihyperbolic", c, sys);
        if (code != exit_ok) {
            j["status"] = "continuation_failure";
            j["message"] = failure;
        }
        j["query"] = {{"h", b.h},
                      {"theta_minus", angle_json(b.theta_minus)},
                      {"theta_plus", angle_json(b.theta_plus)},
                      {"i0", b.cls.i0},
                      {"i1", b.cls.i1},
                      {"nu_target", b.cls.nu_target}};
        j["schedule"] = {{"unit_period_scale", f.lambda},
                         {"R2", sched.R2 / std::pow(f.lambda, 2.0 / 3.0)},
                         {"levels", b.levels},
                         {"phase_grid", b.phase_grid},
                         {"tol_position", sched.tol_position},
                         {"tol_velocity", sched.tol_velocity}};
        j["action"] = action_json(action(sys, s.path, b.h, c.solver.action));
        j["untied_action"] = s.untied_action;
        j["el_residual"] = s.el_residual;
        j["minimizer_status"] = to_string(s.status);
        j["dmin"] = dmin_json(s.dmin);
        j["converged"] = s.converged;
        j["verified"] = {{"outgoing", s.verified_out}, {"incoming", s.verified_in}};
        j["winding"] = {{"nu", s.nu},
                        {"nu_target", b.cls.nu_target},
                        {"tied", is_tied(s.nu)},
                        {"class_invariant", s.class_invariant},
                        {"core_radius", s.core_radius},
                        {"s_x", s.crossing.s_x},
                        {"s_y", s.crossing.s_y}};
        auto bracket = [](const Bracket& br) {
            return json{{"min", br.lo}, {"max", br.hi}, {"positive", br.positive()}};
        };
        j["brackets"] = {{"core_time", bracket(s.core_time)},
                         {"exit_time", bracket(s.exit_time)},
                         {"entry_time", bracket(s.entry_time)}};
        j["collision"] = {{"dips", s.collision_dips}, {"fit", collision_json(s.collision_fit)}};
        j["target"] = {{"speed", s.target_speed},
                       {"theta_minus", angle_json(s.theta_minus)},
                       {"theta_plus", angle_json(s.theta_plus)}};
        j["escape"] = {{"outgoing", escape_json(s.outgoing)}, {"incoming", escape_json(s.incoming)}};
        j["history"] = history_json(s.history);
        j["notes"] = s.notes;
        write_path_artifacts(w, sys, s.path, s.velocity);
        history_table(w, s.history);
        w.summary(j);
        if (code != exit_ok) w.error(error_json("continuation", code, failure));
        return code;
    }

    inline int run_minimize(const RunConfig& c, const PrimarySystem& sys, const ArtifactWriter& w)
    {
        const auto& b = c.minimize;
        json j = base_summary("minimize", c, sys);
        j["query"] = {{"mode", b.mode}, {"x", vec_json(b.x)}, {"y", vec_json(b.y)}, {"h", b.h}};
        MinimizeResult r;
        if (b.mode == "fixed_end") {
            const FixedEndProblem fp{b.x, b.y, b.t1, b.t2, b.h};
            auto best = fresh_solve(sys, fp, c.solver);
            r = b.refine && c.solver.max_refine > 0 ? minimize_refined(sys, fp, best.path, c.solver) : std::move(best);
            j["query"]["t1"] = b.t1;
            j["query"]["t2"] = b.t2;
        } else if (b.mode == "free_time") {
            const FreeTimeProblem fp{b.x, b.y, b.s1, b.s2, b.h, c.solver.n_cap};
            auto ft = minimize_free_time(sys, fp, c.solver);
            j["free_time"] = {{"periods", ft.n},
                              {"arrival_phase", ft.s2},
                              {"duration", ft.duration},
                              {"solves", ft.solves.size()},
                              {"basins", ft.basins}};
            j["query"]["s1"] = b.s1;
            j["query"]["s2"] = b.s2 ? json(*b.s2) : json(nullptr);
            r = std::move(ft.result);
        } else {
            TiedOptions o;
            o.minimize = c.solver;
            o.phase_grid = b.phase_grid;
            auto t = minimize_tied(sys, b.x, b.y, b.h, b.cls, o);
            j["winding"] = {{"nu", t.nu},
                            {"nu_target", b.cls.nu_target},
                            {"tied", is_tied(t.nu)},
                            {"class_invariant", t.class_invariant},
                            {"core_radius", t.core_radius},
                            {"s_x", t.crossing.s_x},
                            {"s_y", t.crossing.s_y}};
            j["tied"] = {{"t1", t.t1},
                         {"t2", t.t2},
                         {"length", t.length},
                         {"untied_action", t.untied_action},
                         {"untied_nu", t.untied_nu},
                         {"collision_dips", t.collision_dips},
                         {"collision_fit", collision_json(t.collision_fit)},
                         {"solves", t.solves.size()},
                         {"notes", t.notes}};
            r = std::move(t.result);
        }
        j["result"] = result_json(r);
        j["action"] = action_json(r.action);
        j["el_residual"] = r.el_residual;
        j["dmin"] = dmin_json(r.dmin);
        if (b.subpath_samples > 0)
            j["subpath"] = subpath_json(check_subpath_minimality(sys, r.path, b.h, b.subpath_samples, c.solver, c.seed));
        const auto v = differentiate(r.path.t, r.path.z);
        write_path_artifacts(w, sys, r.path, v);
        w.summary(j);
        return exit_ok;
    }

    inline int run_verify(const RunConfig& c, const PrimarySystem& sys, const ArtifactWriter& w)
    {
        const auto& b = c.verify;
        const Path p = read_path_csv(b.path);
        const auto v = differentiate(p.t, p.z);
        json j = base_summary("verify", c, sys);
        j["query"] = {{"path", std::filesystem::path(b.path).filename().string()},
                      {"h", b.h},
                      {"nodes", p.size()},
                      {"el_threshold", b.el_threshold}};
        const double el = el_residual(sys, p);
        j["action"] = action_json(action(sys, p, b.h, c.solver.action));
        j["el_residual"] = el;
        j["el_ok"] = el <= b.el_threshold;
        const auto d = min_primary_distance(sys, p);
        j["dmin"] = dmin_json(d);
        j["collision_free"] = d.d_min > collision_guard(sys, c.solver);
        if (b.subpath_samples > 0)
            j["subpath"] = subpath_json(check_subpath_minimality(sys, p, b.h, b.subpath_samples, c.solver, c.seed));
        if (std::abs(p.z.back()) >= sys.far_field().R1) {
            try {
                j["escape"] = escape_json(escape_report(polar_series(p, v), sys, b.tail_fraction));
            } catch (const Error& e) {
                j["escape"] = nullptr;
                j["notes"] = {std::string("escape report unavailable: ") + e.what()};
            }
        }
        write_path_artifacts(w, sys, p, v);
        w.summary(j);
        return exit_ok;
    }

    inline int run_ephemeris_check(const RunConfig& c, const PrimarySystem& sys, const ArtifactWriter& w)
    {
        json j = base_summary("ephemeris check", c, sys);
        j["family"] = c.ephemeris.family;
        j["tied_core_radius"] = tied_core_radius(sys);
        j["collision_guard"] = collision_guard(sys, c.solver);
        w.plotdata(sys, nullptr);
        w.summary(j);
        return exit_ok;
    }

} // namespace detail

/// Run one subcommand on a parsed configuration. Returns the exit code; all
/// artifacts, including error.json on failure, go to c.output_dir.
inline int run(const std::string& command, const RunConfig& c, std::ostream& err = std::cerr)
{
    std::optional<ArtifactWriter> w;
    auto fail = [&](const std::string& kind, int code, const std::string& message,
                    const std::vector<std::string>& errors = {}) {
        const json j = error_json(kind, code, message, errors);
        if (w) w->error(j);
        err << j.dump() << '\n';
        return code;
    };
    try {
        w.emplace(c.output_dir);
        if (command != "ephemeris check") {
            if (c.kind == ProblemKind::none)
                return fail("validation", exit_validation, "configuration has no " + command + " block");
            if (command != to_string(c.kind))
                return fail("validation", exit_validation,
                            std::string("configuration holds a ") + to_string(c.kind) + " block, not " + command);
        }
        std::optional<PrimarySystem> sys;
        try {
            sys.emplace(build_system(c.ephemeris));
        } catch (const NumericalFailure& e) {
            return fail("validation", exit_validation, std::string("ephemeris: ") + e.what());
        }
        const auto errors = validate_against_system(c, *sys);
        if (!errors.empty()) return fail("validation", exit_validation, "invalid configuration", errors);
        if (command == "ephemeris check") return detail::run_ephemeris_check(c, *sys, *w);
        if (command == "hyperbolic") return detail::run_hyperbolic(c, *sys, *w);
        if (command == "bihyperbolic") return detail::run_bihyperbolic(c, *sys, *w);
        if (command == "minimize") return detail::run_minimize(c, *sys, *w);
        if (command == "verify") return detail::run_verify(c, *sys, *w);
        return fail("validation", exit_validation, "unknown command " + command);
    } catch (const ConfigErrors& e) {
        return fail("validation", exit_validation, "invalid configuration", e.errors());
    } catch (const ValidationError& e) {
        return fail("validation", exit_validation, e.what());
    } catch (const InvalidArgument& e) {
        return fail("validation", exit_validation, e.what());
    } catch (const FormatError& e) {
        return fail("validation", exit_validation, e.what());
    } catch (const NotFound& e) {
        return fail("validation", exit_validation, e.what());
    } catch (const ContinuationFailure& e) {
        return fail("continuation", exit_continuation, e.what());
    } catch (const std::exception& e) {
        return fail("numerical", exit_numerical, e.what());
    }
}

} // namespace hyperflow::io
