#pragma once

#include "dido/types.hpp"

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dido {

/// min f(x) subject to x in Omega, where both f and the indicator of Omega are
/// only available as point-wise procedures. Copies share the call counters.
class DataInformedProblem {
public:
    using Feasibility = std::function<bool(const Vector&)>;
    using Objective = std::function<double(const Vector&)>;

    DataInformedProblem(std::string name, int dimension, Feasibility feasibility,
                        Objective objective, std::optional<Box> suggested_box = std::nullopt,
                        std::optional<std::uint64_t> evaluation_budget = std::nullopt);

    const std::string& name() const { return name_; }
    int dimension() const { return dimension_; }
    const std::optional<Box>& suggested_box() const { return box_; }
    std::optional<std::uint64_t> evaluation_budget() const { return budget_; }
    void set_evaluation_budget(std::optional<std::uint64_t> budget) { budget_ = budget; }

    /// I_Omega(x). Counts one evaluation; throws OracleError when the budget is spent.
    bool is_feasible(const Vector& x) const;
    /// f(x). Counts one evaluation.
    double objective(const Vector& x) const;

    /// Row-wise labels (1.0 feasible, 0.0 infeasible).
    Vector feasibility_labels(const Matrix& points) const;
    Vector objective_values(const Matrix& points) const;

    std::uint64_t feasibility_calls() const { return counters_->feasibility.load(); }
    std::uint64_t objective_calls() const { return counters_->objective.load(); }
    std::uint64_t total_calls() const { return feasibility_calls() + objective_calls(); }

private:
    struct Counters {
        std::atomic<std::uint64_t> feasibility{0};
        std::atomic<std::uint64_t> objective{0};
    };

    void charge(std::atomic<std::uint64_t>& counter) const;
    void check_dimension(const Vector& x) const;

    std::string name_;
    int dimension_;
    Feasibility feasibility_;
    Objective objective_;
    std::optional<Box> box_;
    std::optional<std::uint64_t> budget_;
    std::shared_ptr<Counters> counters_;
};

/// f(x) = -(x_1^2 - (1/(d-1)) sum_{i>=2} x_i^2).
double harmonic_objective(const Vector& x);
Vector harmonic_gradient(const Vector& x);
/// ||x||_2 <= 1, inclusive.
bool in_unit_ball(const Vector& x);

/// Half-width h such that about half of the uniform samples of [-h, h]^d fall
/// in the unit ball. d = 100 returns 0.173; other dimensions are calibrated by
/// a fixed-seed Monte Carlo bisection.
double ball_box_half_width(int d);

/// Harmonic objective on the unit ball in R^d (d >= 2), minimum -1 at +-e_1.
DataInformedProblem harmonic_ball_problem(int d);
/// The d = 2 member of the harmonic family.
DataInformedProblem disc_quadratic_problem();

/// Central-difference Laplacian of f at x with step h.
double laplacian_check(const DataInformedProblem::Objective& f, const Vector& x, double h);
double laplacian_check(const DataInformedProblem& problem, const Vector& x, double h);

}  // namespace dido
