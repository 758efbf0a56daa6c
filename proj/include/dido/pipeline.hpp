#pragma once

#include "dido/external_problem.hpp"
#include "dido/feasibility.hpp"
#include "dido/io.hpp"
#include "dido/objective.hpp"
#include "dido/optimizer.hpp"
#include "dido/problem.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dido::pipeline {

namespace fs = std::filesystem;
using io::json;

inline constexpr int kSchemaVersion = 1;

enum class ProblemKind { harmonic_ball, disc_quadratic, external };

struct ProblemConfig {
    ProblemKind kind = ProblemKind::harmonic_ball;
    int dimension = 10;
    /// Overrides the suggested initial box with [-h, h]^d.
    std::optional<double> box_half_width;
    std::optional<std::uint64_t> evaluation_budget;
    // external only
    std::string command;
    fs::path workdir;
    double timeout_seconds = 600.0;
    int retries = 0;
    int max_concurrency = 1;
};

struct SurrogateConfig {
    int n_target = 5000;
    /// Extra points sampled the same way and held out for testing.
    int n_test = 2000;
    std::vector<int> hidden{512, 256, 128};
    nn::TrainSettings train;
    surrogate::FeasibleSamplingSettings sampling;

    double test_fraction() const;
};

struct PipelineConfig {
    int schema_version = kSchemaVersion;
    std::uint64_t seed = 0;
    fs::path output_dir = "dido-run";
    /// Worker threads for multi-start descent; the DIDO_WORKERS variable overrides it.
    int workers = 1;
    ProblemConfig problem;
    classifier::ClassifierIterationConfig classifier;
    SurrogateConfig surrogate;
    optimizer::BarrierConfig optimizer;
};

/// Defaults for a built-in benchmark of dimension d.
PipelineConfig default_config(ProblemKind kind, int dimension);

json config_to_json(const PipelineConfig& config);
/// Missing keys take the defaults of the selected problem; unknown keys are errors.
PipelineConfig config_from_json(const json& doc);
PipelineConfig load_config(const fs::path& path);

std::string_view to_string(ProblemKind k);
ProblemKind parse_problem_kind(std::string_view s);

/// Stage seeds: derive_seed(global seed, stage name).
std::uint64_t stage_seed(const PipelineConfig& config, std::string_view stage);

struct ResolvedProblem {
    DataInformedProblem problem;
    std::optional<ExternalProblem> external;
};
ResolvedProblem resolve_problem(const ProblemConfig& config);

/// classifier::ClassifierIterationConfig with the initial box filled in.
classifier::ClassifierIterationConfig classifier_config(const PipelineConfig& config,
                                                        const DataInformedProblem& problem);

struct StageRecord {
    std::string name;
    std::string started;
    std::string finished;
    std::vector<std::string> artifacts;  // relative to the output directory
    std::uint64_t feasibility_calls = 0;
    std::uint64_t objective_calls = 0;
    bool resumed = false;
    json summary;
};

json stage_to_json(const StageRecord& s);
StageRecord stage_from_json(const json& doc);

struct ClassifierStageResult {
    classifier::ClassifierState state;
    StageRecord record;
};
struct SurrogateStageResult {
    surrogate::SurrogateDataset dataset;
    surrogate::FitReport fit;
    StageRecord record;
};
struct OptimizeStageResult {
    optimizer::OptimizationReport report;
    StageRecord record;
};

ClassifierStageResult run_classifier_stage(const PipelineConfig& config,
                                           const DataInformedProblem& problem, const fs::path& dir);
SurrogateStageResult run_surrogate_stage(const PipelineConfig& config,
                                         const DataInformedProblem& problem,
                                         const classifier::ClassifierState& state,
                                         const fs::path& dir);
OptimizeStageResult run_optimize_stage(const PipelineConfig& config,
                                       const DataInformedProblem& problem,
                                       const classifier::ClassifierState& state,
                                       const surrogate::ObjectiveSurrogate& objective,
                                       const Matrix& starts_raw, const fs::path& dir);

/// Classifier artifacts: model.json, training_set.csv, state.json.
void save_classifier(const fs::path& dir, const classifier::ClassifierState& state);
/// Accepts the classifier directory or its model.json.
classifier::ClassifierState load_classifier(const fs::path& path);
void save_surrogate(const fs::path& dir, const surrogate::ObjectiveSurrogate& s);
/// Accepts the surrogate directory or its model.json.
surrogate::ObjectiveSurrogate load_surrogate(const fs::path& path);
/// x_* columns of the surrogate dataset, train split only when split.json is present.
Matrix load_surrogate_starts(const fs::path& surrogate_dir);

json candidate_to_json(const optimizer::OptimizationCandidate& c);
json report_to_json(const optimizer::OptimizationReport& r);

struct RunOptions {
    bool resume = false;
};

struct RunAllResult {
    ClassifierStageResult classifier;
    SurrogateStageResult surrogate;
    OptimizeStageResult optimize;
    fs::path manifest;
};

/// Classifier, surrogate and optimizer stages in order; the manifest is written last.
RunAllResult run_all(const PipelineConfig& config, const RunOptions& options = {});

/// Merges stage records into <out>/manifest.json (written atomically).
fs::path write_manifest(const PipelineConfig& config, const std::vector<StageRecord>& stages);

std::string timestamp_now();

}  // namespace dido::pipeline
