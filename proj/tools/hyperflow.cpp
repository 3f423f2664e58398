#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "hyperflow/run.hpp"

using namespace hyperflow;

namespace {

struct Flags {
    std::string config;
    std::string out;
    int threads = 0;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

void add_flags(CLI::App* cmd, Flags& f)
{
    cmd->add_option("--config", f.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", f.out, "Output directory (overrides output_dir)");
    cmd->add_option("--threads", f.threads, "Worker threads for phase grids")->check(CLI::PositiveNumber);
    cmd->add_option_function<std::uint64_t>(
        "--seed",
        [&f](const std::uint64_t& s) {
            f.seed = s;
            f.seed_given = true;
        },
        "Seed for randomized checks");
}

int dispatch(const std::string& command, const Flags& f)
{
    io::RunConfig cfg;
    try {
        cfg = io::load_config(f.config);
    } catch (const io::ConfigErrors& e) {
        std::cerr << io::error_json("validation", io::exit_validation, "invalid configuration", e.errors()).dump()
                  << '\n';
        return io::exit_validation;
    } catch (const Error& e) {
        std::cerr << io::error_json("validation", io::exit_validation, e.what()).dump() << '\n';
        return io::exit_validation;
    }
    if (!f.out.empty()) cfg.output_dir = f.out;
    if (f.threads > 0) cfg.solver.threads = f.threads;
    if (f.seed_given) cfg.seed = f.seed;
    const int code = io::run(command, cfg);
    if (code == io::exit_ok) std::cout << "wrote " << cfg.output_dir << '\n';
    return code;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"hyperflow: hyperbolic and bi-hyperbolic trajectories of the restricted (N+1)-body problem "
                 "by action minimization"};
    app.require_subcommand(1);

    Flags flags;
    std::string command;
    auto* eph = app.add_subcommand("ephemeris", "Ephemeris utilities");
    eph->require_subcommand(1);
    auto* check = eph->add_subcommand("check", "Build the primary system and report its constants");
    add_flags(check, flags);
    check->callback([&] { command = "ephemeris check"; });
    for (const char* name : {"minimize", "hyperbolic", "bihyperbolic", "verify"}) {
        const char* help = std::string(name) == "minimize"       ? "Fixed-end, free-time or tied minimization"
                           : std::string(name) == "hyperbolic"   ? "Hyperbolic continuation along a ray"
                           : std::string(name) == "bihyperbolic" ? "Bi-hyperbolic continuation in a tied class"
                                                                 : "Check a path CSV";
        auto* sub = app.add_subcommand(name, help);
        add_flags(sub, flags);
        sub->callback([&command, name] { command = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : io::exit_validation;
    }
    return dispatch(command, flags);
}
