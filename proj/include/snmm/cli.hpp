#pragma once

#include <optional>
#include <string>
#include <vector>

#include "snmm/errors.hpp"

namespace snmm {

// Config-driven front end. A run is described by one JSON document (comments
// with // or /* */ are allowed) and executed by a subcommand:
//
//   estimate   load panel/structure files, fit the blip model, attach the
//              configured variance, evaluate estimands, write reports
//   simulate   run a Monte Carlo study (network, cluster, or the
//              naive-comparison head-to-head) and write its report
//   validate   parse the config and check it against the referenced data
//              without estimating anything
//
// estimate/simulate write two files into the output directory,
// <basename>.txt (human-readable) and <basename>.json (machine-readable).
// The machine report embeds the fully resolved config and seed, contains no
// timestamps or environment details, and is byte-identical across runs of
// the same effective config.
enum class CliCommand { Estimate, Simulate, Validate };

CliCommand cli_command_from_name(const std::string& name);

// Command-line overrides; everything else lives in the config document.
struct CliOverrides {
    std::optional<unsigned long long> seed;
    std::optional<int> threads;
    std::optional<std::string> output_directory;
};

// Outcome of one run. exit_code follows the documented contract:
//   0  success
//   2  malformed inputs: config schema, JSON syntax, file loading, unknown
//      names, panel shape errors
//   3  inputs loaded but the statistics refused: model violations
//      (zero-constraint, leakage), positivity, identification, solve or
//      resampling failures
// console_text is what the binary prints (on failure: a one-line
// machine-readable error envelope). written_files lists the report files
// created, in write order.
struct CliRun {
    int exit_code = 0;
    std::string console_text;
    std::vector<std::string> written_files;
};

// Executes a subcommand against a config file on disk. Data paths inside the
// config resolve relative to the config file's directory; the output
// directory resolves relative to the working directory.
CliRun run_cli(CliCommand command, const std::string& config_path,
               const CliOverrides& overrides = CliOverrides{});

// Same, with the config text supplied directly; base_dir plays the config
// directory's role for relative data paths.
CliRun run_cli_text(CliCommand command, const std::string& config_text,
                    const std::string& base_dir,
                    const CliOverrides& overrides = CliOverrides{});

// The exit-code classification used by the error envelope.
int exit_code_for(ErrorCode code);

}  // namespace snmm
