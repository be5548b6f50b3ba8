#include <cstdio>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "snmm/cli.hpp"

namespace {

struct SubArgs {
    std::string config_path;
    std::optional<unsigned long long> seed;
    std::optional<int> threads;
    std::optional<std::string> output_directory;
};

void add_common_options(CLI::App* sub, SubArgs& args) {
    sub->add_option("config", args.config_path, "JSON run configuration")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", args.seed, "override the configured random seed");
    sub->add_option("--threads", args.threads,
                    "cap worker parallelism (default: all available cores)");
    sub->add_option("--output", args.output_directory,
                    "override the configured output directory");
}

int dispatch(snmm::CliCommand command, const SubArgs& args) {
    snmm::CliOverrides overrides;
    overrides.seed = args.seed;
    overrides.threads = args.threads;
    overrides.output_directory = args.output_directory;
    const snmm::CliRun run = snmm::run_cli(command, args.config_path, overrides);
    std::fputs(run.console_text.c_str(), run.exit_code == 0 ? stdout : stderr);
    return run.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"g-estimation of structural nested mean models under interference"};
    app.require_subcommand(1);

    SubArgs estimate_args, simulate_args, validate_args;
    CLI::App* estimate =
        app.add_subcommand("estimate", "fit a model to a panel and write reports");
    add_common_options(estimate, estimate_args);
    CLI::App* simulate =
        app.add_subcommand("simulate", "run a Monte Carlo study and write reports");
    add_common_options(simulate, simulate_args);
    CLI::App* validate =
        app.add_subcommand("validate", "check a configuration and its inputs; write nothing");
    add_common_options(validate, validate_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (estimate->parsed()) return dispatch(snmm::CliCommand::Estimate, estimate_args);
        if (simulate->parsed()) return dispatch(snmm::CliCommand::Simulate, simulate_args);
        return dispatch(snmm::CliCommand::Validate, validate_args);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 1;
    }
}
