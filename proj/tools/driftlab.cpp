// driftlab <simulate|convergence|bounds|check> --config <file> [--seed N] [--out DIR]

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "driftlab/commands.hpp"
#include "driftlab/config.hpp"

int main(int argc, char** argv) {
    using namespace driftlab;
    CLI::App app{"Filtering experiments with expert opinions"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    for (const char* name : {"simulate", "convergence", "bounds", "check"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "YAML scenario file (baseline defaults when omitted)");
        sub->add_option("--seed", seed, "overrides run.seed");
        sub->add_option("--out", out_dir, "overrides run.output_dir");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfigError;
    }

    ScenarioConfig cfg;
    try {
        if (!config_path.empty()) cfg = load_config(config_path);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfigError;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIoError;
    }
    if (seed) cfg.run.seed = *seed;
    if (out_dir) cfg.run.output_dir = *out_dir;
    cfg.run.mode = parse_mode(app.get_subcommands().front()->get_name());
    return run_command(cfg.run.mode, cfg, std::cout, std::cerr);
}
