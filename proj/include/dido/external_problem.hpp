#pragma once

#include "dido/problem.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace dido {

/// Wraps an external simulator behind the oracle interface.
///
/// The command template is run through /bin/sh with the placeholders {input},
/// {output} and {dim} substituted. The input file holds the dimension on line 1
/// and the coordinates, whitespace separated, on line 2. The command must write
/// `feasible 0|1` on line 1 of the output file and, for feasible points,
/// `objective <decimal>` on line 2. Results are cached on the exact bytes of the
/// input coordinates, so one point costs at most one invocation.
struct ExternalCommandConfig {
    std::string command_template;
    int dimension = 0;
    std::filesystem::path workdir;
    double timeout_seconds = 600.0;
    int retries = 0;
    int max_concurrency = 1;
    std::optional<Box> suggested_box;
};

/// Error raised by the wrapper; carries the exit status and captured output.
class ExternalCommandError : public OracleError {
public:
    ExternalCommandError(const std::string& what, int exit_code, std::string captured)
        : OracleError(what), exit_code_(exit_code), captured_(std::move(captured)) {}

    /// -1 when the process did not exit normally (timeout, signal, spawn failure).
    int exit_code() const { return exit_code_; }
    const std::string& captured_output() const { return captured_; }

private:
    int exit_code_;
    std::string captured_;
};

struct ExternalCommandStats {
    std::uint64_t invocations = 0;
    std::uint64_t cache_hits = 0;
};

class ExternalSimulator;

struct ExternalProblem {
    DataInformedProblem problem;
    std::shared_ptr<ExternalSimulator> simulator;

    ExternalCommandStats stats() const;
};

ExternalProblem external_problem_from_command(const ExternalCommandConfig& config);

}  // namespace dido
