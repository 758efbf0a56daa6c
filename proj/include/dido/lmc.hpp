#pragma once

#include "dido/field.hpp"
#include "dido/types.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace dido::lmc {

struct EnergyBatch {
    Vector values;
    Matrix gradients;
};

/// Differentiable energy E(x) over batches of states.
class Energy {
public:
    virtual ~Energy() = default;
    virtual EnergyBatch evaluate(const Matrix& states) const = 0;
};

/// E(x) = (f(x) - target)^2 for a probability field f; gradient 2 (f - target) grad f.
class ProbabilityTargetEnergy final : public Energy {
public:
    ProbabilityTargetEnergy(FieldPtr classifier, double target);
    EnergyBatch evaluate(const Matrix& states) const override;
    double target() const { return target_; }

private:
    FieldPtr classifier_;
    double target_;
};

class FunctionEnergy final : public Energy {
public:
    using Fn = std::function<EnergyBatch(const Matrix&)>;
    explicit FunctionEnergy(Fn fn) : fn_(std::move(fn)) {}
    EnergyBatch evaluate(const Matrix& states) const override { return fn_(states); }

private:
    Fn fn_;
};

/// Concentrates samples on the surrogate boundary f = 0.5.
ProbabilityTargetEnergy boundary_energy(FieldPtr classifier);
/// Concentrates samples in the surrogate feasible region f = 1.
ProbabilityTargetEnergy feasible_energy(FieldPtr classifier);

enum class EnergyKind { boundary, feasible, custom };

struct LmcConfig {
    double step_size = 1e-3;                 // alpha
    double inverse_temperature = 1e4;        // beta
    int total_steps = 2000;                  // T
    std::optional<Box> clamp_box;
    /// Chains whose norm exceeds this are reset to their initial state. When
    /// unset, 10x the diagonal of the initial states' bounding box is used.
    std::optional<double> divergence_radius;

    void validate() const;
};

struct LmcRun {
    Matrix initial_states;
    Matrix final_states;
    std::uint64_t seed = 0;
    /// Mean energy at steps 0..T (T + 1 entries).
    std::vector<double> mean_energy;
    /// Per chain: number of divergence resets.
    std::vector<int> resets;

    std::size_t reset_chains() const;
};

/// Runs x <- x - alpha grad E(x) + sqrt(2 alpha / beta) xi for T steps on every row.
/// The noise of a chain is addressed by (seed, chain id, step, coordinate), so it
/// does not depend on row order or batch composition. Chain ids default to the
/// row indices. Throws SamplingError on a non-finite energy or gradient.
LmcRun lmc_run(const Matrix& initial, const Energy& energy, const LmcConfig& config,
               std::uint64_t seed, std::span<const std::uint64_t> chain_ids = {});

}  // namespace dido::lmc
