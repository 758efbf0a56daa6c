#pragma once

#include "dido/feasibility.hpp"
#include "dido/field.hpp"
#include "dido/objective.hpp"
#include "dido/problem.hpp"

#include <optional>
#include <vector>

namespace dido::optimizer {

struct BarrierSchedule {
    double t0 = 1.0;
    double gamma = 10.0;
    int stages = 3;
};

struct BarrierConfig {
    double t = 100.0;
    /// When set, replaces t by t0 * gamma^k for k = 0..stages-1.
    std::optional<BarrierSchedule> schedule;
    double step_size = 1e-2;
    /// Step budget per barrier stage.
    int max_steps = 1000;
    double grad_tolerance = 1e-6;
    int max_starts = 2000;
    int max_halvings = 50;
    /// Keep every accepted iterate (tests and diagnostics).
    bool record_trajectory = false;
    /// Starts are processed in fixed chunks of this many rows.
    int chunk_size = 256;
    int workers = 1;

    void validate() const;
    std::vector<double> barrier_parameters() const;
};

/// The two surrogates on a common coordinate system. The regressor is in the
/// units it was trained in; `target` converts them back to original units.
struct SurrogatePair {
    FieldPtr regressor;
    FieldPtr classifier;
    Standardizer coords;   // raw point = coords.invert(optimization point)
    TargetStandardizer target;
};

/// Surrogates on the classifier's standardized coordinates.
SurrogatePair make_surrogate_pair(const classifier::ClassifierState& state,
                                  const surrogate::ObjectiveSurrogate& objective);

struct BarrierBatch {
    Vector values;
    Matrix gradients;
    Vector classifier;  // f_c at each row
    Vector regressor;   // f_o at each row
};

/// f_o(x) - (1/t) log(f_c(x) - 0.5) and its gradient for every row.
/// Throws DomainError if f_c <= 0.5 at any row.
BarrierBatch barrier_value_and_grad(const ScalarField& regressor, const ScalarField& classifier,
                                    const Matrix& points, double t);

struct GdResult {
    Vector point;
    int steps = 0;
    bool stalled = false;    // backtracking exhausted at the surrogate boundary
    bool converged = false;  // gradient norm below tolerance
    double barrier_value = 0.0;
    double gradient_norm = 0.0;
    std::vector<Vector> trajectory;       // accepted iterates, start included
    std::vector<double> barrier_values;   // barrier at each trajectory entry
    std::vector<int> stage_of_iterate;
};

/// Gradient descent on the barrier from every row of `starts`, which must be
/// strictly interior. A trial step is halved until the iterate stays interior
/// and the barrier does not increase.
std::vector<GdResult> gd_solve_batch(const ScalarField& regressor, const ScalarField& classifier,
                                     const Matrix& starts, const BarrierConfig& config);
GdResult gd_solve(const ScalarField& regressor, const ScalarField& classifier, const Vector& start,
                  const BarrierConfig& config);

struct OptimizationCandidate {
    Vector point;       // original coordinates
    Vector point_std;   // optimization coordinates
    double surrogate_value = 0.0;  // original units
    double classifier_probability = 0.0;
    bool true_feasible = false;
    std::optional<double> true_objective;
    std::size_t start_index = 0;
    int steps_taken = 0;
    bool stalled = false;
    bool converged = false;
};

struct OptimizationReport {
    std::vector<OptimizationCandidate> candidates;  // ranked
    std::size_t starts_given = 0;
    std::size_t starts_used = 0;
    std::size_t starts_rejected = 0;
    std::size_t falsely_feasible = 0;
    double false_feasible_fraction = 0.0;
    std::vector<double> barrier_parameters;

    const OptimizationCandidate* best_feasible() const;
};

/// Feasible candidates by true objective, then infeasible ones by surrogate
/// value, ties by start index.
bool candidate_less(const OptimizationCandidate& a, const OptimizationCandidate& b);

/// Multi-start barrier descent from raw-coordinate starts, validated against the oracle.
OptimizationReport optimize_multi_start(const SurrogatePair& surrogates, const Matrix& starts_raw,
                                        const DataInformedProblem& oracle,
                                        const BarrierConfig& config);

}  // namespace dido::optimizer
