#pragma once

#include "dido/feasibility.hpp"
#include "dido/field.hpp"
#include "dido/lmc.hpp"
#include "dido/nn.hpp"
#include "dido/problem.hpp"

#include <vector>

namespace dido::surrogate {

struct FeasibleSamplingSettings {
    lmc::LmcConfig lmc{.step_size = 1e-3, .inverse_temperature = 1e3, .total_steps = 2000};
    /// Upper bound on LMC rounds; each round runs one chain per missing point.
    int max_cycles = 20;
    /// A round whose true-feasible yield falls below this aborts the sampling.
    double min_yield = 0.01;
};

struct FeasibleSample {
    Matrix points;  // raw coordinates, all true-feasible
    std::size_t oracle_calls = 0;
    std::size_t accepted = 0;
    int cycles = 0;
    double yield_rate() const {
        return oracle_calls == 0 ? 1.0 : static_cast<double>(accepted) / static_cast<double>(oracle_calls);
    }
};

/// Classifier-guided LMC towards f_c = 1 from `seeds_std` (standardized
/// coordinates), filtered by the true oracle and repeated with fresh noise
/// until n_target true-feasible points are collected.
FeasibleSample sample_feasible(const FieldPtr& classifier_std, const Standardizer& stats,
                               const Matrix& seeds_std, const DataInformedProblem& oracle,
                               int n_target, const FeasibleSamplingSettings& settings,
                               std::uint64_t seed);

/// Seeds are the classifier training points predicted feasible.
FeasibleSample sample_feasible_inputs(const classifier::ClassifierState& state,
                                      const DataInformedProblem& oracle, int n_target,
                                      const FeasibleSamplingSettings& settings, std::uint64_t seed);

struct SurrogateDataset {
    Matrix points;  // raw coordinates
    Matrix inputs;  // standardized with input_stats
    Vector raw_targets;
    Vector standardized_targets;
    Standardizer input_stats;
    TargetStandardizer target_stats;
    std::size_t dropped = 0;

    std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
};

/// Evaluates the objective at every point; non-finite values are dropped.
SurrogateDataset build_surrogate_dataset(const Matrix& points, const DataInformedProblem& oracle);
/// Same, from already-known objective values.
SurrogateDataset make_surrogate_dataset(const Matrix& points, const Vector& values);

/// Regression surrogate together with the coordinate maps it was trained under.
struct ObjectiveSurrogate {
    nn::MlpModel model;
    Standardizer input_stats;
    TargetStandardizer target_stats;

    /// Raw coordinates to standardized target units.
    FieldPtr raw_field() const;
    /// Objective estimate in original units.
    Vector predict(const Matrix& raw_points) const;
    /// Gradient of the estimate in original units with respect to raw coordinates.
    Matrix gradient(const Matrix& raw_points) const;
};

struct FitReport {
    ObjectiveSurrogate surrogate;
    double train_rmse = 0.0;  // standardized targets
    double test_rmse = 0.0;
    double train_rmse_raw = 0.0;
    double test_rmse_raw = 0.0;
    std::vector<nn::EpochRecord> history;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> test_indices;
    bool degenerate = false;
};

/// Random train/test split, then Adam on MSE over standardized targets.
FitReport fit_objective(const SurrogateDataset& dataset, const std::vector<int>& hidden,
                        const nn::TrainSettings& settings, double test_fraction,
                        std::uint64_t seed);

/// Deterministic split of n indices; test gets round(test_fraction * n) of them.
void split_indices(std::size_t n, double test_fraction, std::uint64_t seed,
                   std::vector<std::size_t>& train, std::vector<std::size_t>& test);

}  // namespace dido::surrogate
