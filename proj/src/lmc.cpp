#include "dido/lmc.hpp"

#include "dido/random.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace dido::lmc {

ProbabilityTargetEnergy::ProbabilityTargetEnergy(FieldPtr classifier, double target)
    : classifier_(std::move(classifier)), target_(target) {
    if (!classifier_) {
        throw ConfigError("energy needs a classifier field");
    }
}

EnergyBatch ProbabilityTargetEnergy::evaluate(const Matrix& states) const {
    FieldEvaluation f = classifier_->evaluate(states);
    const Vector residual = f.values.array() - target_;
    EnergyBatch e;
    e.values = residual.array().square();
    e.gradients = std::move(f.gradients);
    e.gradients.array().colwise() *= 2.0 * residual.array();
    return e;
}

ProbabilityTargetEnergy boundary_energy(FieldPtr classifier) {
    return ProbabilityTargetEnergy(std::move(classifier), 0.5);
}

ProbabilityTargetEnergy feasible_energy(FieldPtr classifier) {
    return ProbabilityTargetEnergy(std::move(classifier), 1.0);
}

void LmcConfig::validate() const {
    if (!(step_size >= 0.0) || !std::isfinite(step_size)) {
        throw ConfigError("LMC step size must be finite and nonnegative");
    }
    if (!(inverse_temperature > 0.0)) {
        throw ConfigError("LMC inverse temperature must be positive");
    }
    if (total_steps < 1) {
        throw ConfigError("LMC needs at least one step");
    }
    if (clamp_box) {
        clamp_box->validate();
    }
}

std::size_t LmcRun::reset_chains() const {
    std::size_t n = 0;
    for (const int r : resets) {
        n += r > 0 ? 1 : 0;
    }
    return n;
}

namespace {

void check_finite(const EnergyBatch& e, const Matrix& states, int step) {
    for (Eigen::Index i = 0; i < states.rows(); ++i) {
        if (std::isfinite(e.values[i]) && e.gradients.row(i).allFinite()) {
            continue;
        }
        std::ostringstream msg;
        msg << "non-finite energy or gradient at step " << step << ", chain " << i << ", state [";
        for (Eigen::Index j = 0; j < states.cols(); ++j) {
            msg << (j ? ", " : "") << states(i, j);
        }
        msg << "]";
        throw SamplingError(msg.str());
    }
}

double default_divergence_radius(const Matrix& initial) {
    if (initial.rows() == 0) {
        return 0.0;
    }
    const Vector lo = initial.colwise().minCoeff().transpose();
    const Vector hi = initial.colwise().maxCoeff().transpose();
    return 10.0 * (hi - lo).norm();
}

}  // namespace

LmcRun lmc_run(const Matrix& initial, const Energy& energy, const LmcConfig& config,
               std::uint64_t seed, std::span<const std::uint64_t> chain_ids) {
    config.validate();
    if (!chain_ids.empty() && chain_ids.size() != static_cast<std::size_t>(initial.rows())) {
        throw ShapeError("lmc_run: chain id count does not match the number of chains");
    }
    if (config.clamp_box) {
        require_columns(initial, config.clamp_box->dim(), "lmc clamp box");
    }
    const Eigen::Index n = initial.rows();
    const Eigen::Index d = initial.cols();
    const CounterRng noise(seed);
    const double noise_scale = std::sqrt(2.0 * config.step_size / config.inverse_temperature);
    const double radius = config.divergence_radius.value_or(default_divergence_radius(initial));
    const bool guard = radius > 0.0;

    LmcRun run;
    run.initial_states = initial;
    run.seed = seed;
    run.resets.assign(static_cast<std::size_t>(n), 0);
    run.mean_energy.reserve(static_cast<std::size_t>(config.total_steps) + 1);

    Matrix x = initial;
    if (n == 0) {
        run.final_states = x;
        run.mean_energy.assign(static_cast<std::size_t>(config.total_steps) + 1, 0.0);
        return run;
    }
    const auto d_u = static_cast<std::uint64_t>(d);
    for (int step = 0; step < config.total_steps; ++step) {
        const EnergyBatch e = energy.evaluate(x);
        check_finite(e, x, step);
        run.mean_energy.push_back(e.values.mean());
        x.noalias() -= config.step_size * e.gradients;
        if (noise_scale > 0.0) {
            const std::uint64_t base = static_cast<std::uint64_t>(step) * d_u;
            for (Eigen::Index i = 0; i < n; ++i) {
                const std::uint64_t stream =
                    chain_ids.empty() ? static_cast<std::uint64_t>(i) : chain_ids[i];
                for (Eigen::Index j = 0; j < d; ++j) {
                    x(i, j) += noise_scale * noise.normal(stream, base + static_cast<std::uint64_t>(j));
                }
            }
        }
        if (config.clamp_box) {
            config.clamp_box->clamp_rows(x);
        }
        if (guard) {
            for (Eigen::Index i = 0; i < n; ++i) {
                if (!(x.row(i).norm() <= radius)) {
                    x.row(i) = initial.row(i);
                    run.resets[static_cast<std::size_t>(i)] += 1;
                }
            }
        }
    }
    const EnergyBatch e = energy.evaluate(x);
    check_finite(e, x, config.total_steps);
    run.mean_energy.push_back(e.values.mean());
    run.final_states = std::move(x);
    return run;
}

}  // namespace dido::lmc
