#include "dido/optimizer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

namespace dido::optimizer {

void BarrierConfig::validate() const {
    if (!(t > 0.0)) {
        throw ConfigError("barrier parameter t must be positive");
    }
    if (schedule) {
        if (!(schedule->t0 > 0.0) || !(schedule->gamma >= 1.0) || schedule->stages < 1) {
            throw ConfigError("barrier schedule needs t0 > 0, gamma >= 1 and at least one stage");
        }
    }
    if (!(step_size > 0.0) || max_steps < 0 || !(grad_tolerance > 0.0)) {
        throw ConfigError("gradient descent needs a positive step, tolerance and step budget");
    }
    if (max_starts < 1 || max_halvings < 0 || chunk_size < 1 || workers < 1) {
        throw ConfigError("invalid max_starts, max_halvings, chunk_size or workers");
    }
}

std::vector<double> BarrierConfig::barrier_parameters() const {
    if (!schedule) {
        return {t};
    }
    std::vector<double> ts;
    double value = schedule->t0;
    for (int k = 0; k < schedule->stages; ++k) {
        ts.push_back(value);
        value *= schedule->gamma;
    }
    return ts;
}

SurrogatePair make_surrogate_pair(const classifier::ClassifierState& state,
                                  const surrogate::ObjectiveSurrogate& objective) {
    SurrogatePair pair;
    pair.classifier = state.field();
    pair.regressor = on_standardized_coordinates(objective.raw_field(), state.input_stats);
    pair.coords = state.input_stats;
    pair.target = objective.target_stats;
    return pair;
}

namespace {

// Barrier on every row; rows with f_c <= 0.5 get +inf and a zero gradient.
BarrierBatch evaluate_barrier(const ScalarField& regressor, const ScalarField& classifier,
                              const Matrix& points, double t) {
    const FieldEvaluation c = classifier.evaluate(points);
    const FieldEvaluation o = regressor.evaluate(points);
    BarrierBatch out;
    out.classifier = c.values;
    out.regressor = o.values;
    out.values.resize(points.rows());
    out.gradients.resize(points.rows(), points.cols());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const double slack = c.values[i] - 0.5;
        if (!(slack > 0.0)) {
            out.values[i] = std::numeric_limits<double>::infinity();
            out.gradients.row(i).setZero();
            continue;
        }
        out.values[i] = o.values[i] - std::log(slack) / t;
        out.gradients.row(i) = o.gradients.row(i) - c.gradients.row(i) / (t * slack);
    }
    return out;
}

Matrix gather(const Matrix& m, const std::vector<Eigen::Index>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        out.row(static_cast<Eigen::Index>(k)) = m.row(rows[k]);
    }
    return out;
}

}  // namespace

BarrierBatch barrier_value_and_grad(const ScalarField& regressor, const ScalarField& classifier,
                                    const Matrix& points, double t) {
    if (!(t > 0.0)) {
        throw DomainError("barrier parameter t must be positive");
    }
    BarrierBatch b = evaluate_barrier(regressor, classifier, points, t);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        if (!(b.classifier[i] > 0.5)) {
            std::ostringstream msg;
            msg << "barrier evaluated outside the surrogate feasible region: f_c = "
                << b.classifier[i] << " at row " << i;
            throw DomainError(msg.str());
        }
    }
    return b;
}

std::vector<GdResult> gd_solve_batch(const ScalarField& regressor, const ScalarField& classifier,
                                     const Matrix& starts, const BarrierConfig& config) {
    config.validate();
    const Eigen::Index n = starts.rows();
    std::vector<GdResult> results(static_cast<std::size_t>(n));
    if (n == 0) {
        return results;
    }
    Matrix x = starts;
    const std::vector<double> ts = config.barrier_parameters();
    const Vector start_fc = classifier.values(starts);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(start_fc[i] > 0.5)) {
            std::ostringstream msg;
            msg << "start " << i << " is not interior: f_c = " << start_fc[i];
            throw DomainError(msg.str());
        }
    }

    for (std::size_t stage = 0; stage < ts.size(); ++stage) {
        const double t = ts[stage];
        BarrierBatch cur = evaluate_barrier(regressor, classifier, x, t);
        std::vector<double> step(static_cast<std::size_t>(n), config.step_size);
        std::vector<int> halvings(static_cast<std::size_t>(n), 0);
        std::vector<int> stage_steps(static_cast<std::size_t>(n), 0);
        std::vector<Eigen::Index> active;
        for (Eigen::Index i = 0; i < n; ++i) {
            auto& r = results[static_cast<std::size_t>(i)];
            r.stalled = false;
            r.converged = false;
            r.gradient_norm = cur.gradients.row(i).norm();
            r.barrier_value = cur.values[i];
            if (config.record_trajectory) {
                if (stage == 0) {
                    r.trajectory.push_back(x.row(i).transpose());
                    r.barrier_values.push_back(cur.values[i]);
                    r.stage_of_iterate.push_back(0);
                }
            }
            if (r.gradient_norm <= config.grad_tolerance) {
                r.converged = true;
            } else if (config.max_steps > 0) {
                active.push_back(i);
            }
        }
        while (!active.empty()) {
            Matrix trial(static_cast<Eigen::Index>(active.size()), x.cols());
            for (std::size_t k = 0; k < active.size(); ++k) {
                const Eigen::Index i = active[k];
                trial.row(static_cast<Eigen::Index>(k)) =
                    x.row(i) - step[static_cast<std::size_t>(i)] * cur.gradients.row(i);
            }
            const BarrierBatch next = evaluate_barrier(regressor, classifier, trial, t);
            std::vector<Eigen::Index> still;
            for (std::size_t k = 0; k < active.size(); ++k) {
                const Eigen::Index i = active[k];
                const auto ui = static_cast<std::size_t>(i);
                const auto kk = static_cast<Eigen::Index>(k);
                auto& r = results[ui];
                const bool ok = next.classifier[kk] > 0.5 && next.values[kk] <= cur.values[i];
                if (ok) {
                    x.row(i) = trial.row(kk);
                    cur.values[i] = next.values[kk];
                    cur.gradients.row(i) = next.gradients.row(kk);
                    cur.classifier[i] = next.classifier[kk];
                    cur.regressor[i] = next.regressor[kk];
                    ++stage_steps[ui];
                    ++r.steps;
                    halvings[ui] = 0;
                    step[ui] = std::min(config.step_size, 2.0 * step[ui]);
                    r.gradient_norm = cur.gradients.row(i).norm();
                    r.barrier_value = cur.values[i];
                    if (config.record_trajectory) {
                        r.trajectory.push_back(x.row(i).transpose());
                        r.barrier_values.push_back(cur.values[i]);
                        r.stage_of_iterate.push_back(static_cast<int>(stage));
                    }
                    if (r.gradient_norm <= config.grad_tolerance) {
                        r.converged = true;
                        continue;
                    }
                    if (stage_steps[ui] >= config.max_steps) {
                        continue;
                    }
                } else {
                    step[ui] *= 0.5;
                    if (++halvings[ui] > config.max_halvings) {
                        r.stalled = true;
                        continue;
                    }
                }
                still.push_back(i);
            }
            active.swap(still);
        }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        results[static_cast<std::size_t>(i)].point = x.row(i).transpose();
    }
    return results;
}

GdResult gd_solve(const ScalarField& regressor, const ScalarField& classifier, const Vector& start,
                  const BarrierConfig& config) {
    Matrix s(1, start.size());
    s.row(0) = start.transpose();
    return gd_solve_batch(regressor, classifier, s, config).front();
}

const OptimizationCandidate* OptimizationReport::best_feasible() const {
    for (const auto& c : candidates) {
        if (c.true_feasible) {
            return &c;
        }
    }
    return nullptr;
}

bool candidate_less(const OptimizationCandidate& a, const OptimizationCandidate& b) {
    if (a.true_feasible != b.true_feasible) {
        return a.true_feasible;
    }
    const double ka = a.true_feasible ? *a.true_objective : a.surrogate_value;
    const double kb = b.true_feasible ? *b.true_objective : b.surrogate_value;
    if (ka != kb) {
        return ka < kb;
    }
    return a.start_index < b.start_index;
}

OptimizationReport optimize_multi_start(const SurrogatePair& surrogates, const Matrix& starts_raw,
                                        const DataInformedProblem& oracle,
                                        const BarrierConfig& config) {
    config.validate();
    require_columns(starts_raw, oracle.dimension(), "optimize_multi_start starts");
    OptimizationReport report;
    report.barrier_parameters = config.barrier_parameters();
    report.starts_given = static_cast<std::size_t>(starts_raw.rows());
    const Eigen::Index used = std::min<Eigen::Index>(starts_raw.rows(), config.max_starts);
    const Matrix starts_std = surrogates.coords.apply(starts_raw.topRows(used));
    const Vector fc = surrogates.classifier->values(starts_std);
    std::vector<Eigen::Index> interior;
    for (Eigen::Index i = 0; i < used; ++i) {
        if (fc[i] > 0.5) {
            interior.push_back(i);
        }
    }
    report.starts_rejected = static_cast<std::size_t>(used) - interior.size();
    report.starts_used = interior.size();
    if (interior.empty()) {
        std::ostringstream msg;
        msg << "none of the " << used << " starts is interior (f_c > 0.5); " << report.starts_rejected
            << " rejected";
        throw DomainError(msg.str());
    }
    if (report.starts_rejected > 0) {
        spdlog::info("{} of {} starts rejected as surrogate-infeasible", report.starts_rejected, used);
    }

    const Matrix interior_starts = gather(starts_std, interior);
    const auto chunk = static_cast<Eigen::Index>(config.chunk_size);
    const Eigen::Index n_chunks = (interior_starts.rows() + chunk - 1) / chunk;
    std::vector<GdResult> results(interior.size());
    std::atomic<Eigen::Index> next_chunk{0};
    auto worker = [&] {
        for (Eigen::Index c = next_chunk++; c < n_chunks; c = next_chunk++) {
            const Eigen::Index begin = c * chunk;
            const Eigen::Index rows = std::min(chunk, interior_starts.rows() - begin);
            auto part = gd_solve_batch(*surrogates.regressor, *surrogates.classifier,
                                       interior_starts.middleRows(begin, rows), config);
            std::move(part.begin(), part.end(), results.begin() + begin);
        }
    };
    const int workers = static_cast<int>(std::min<Eigen::Index>(config.workers, n_chunks));
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back(worker);
        }
        for (auto& th : pool) {
            th.join();
        }
    }

    Matrix terminal(static_cast<Eigen::Index>(results.size()), starts_raw.cols());
    for (std::size_t k = 0; k < results.size(); ++k) {
        terminal.row(static_cast<Eigen::Index>(k)) = results[k].point.transpose();
    }
    const Vector f_c = surrogates.classifier->values(terminal);
    const Vector f_o = surrogates.regressor->values(terminal);
    const Matrix raw = surrogates.coords.invert(terminal);
    report.candidates.reserve(results.size());
    for (std::size_t k = 0; k < results.size(); ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        OptimizationCandidate c;
        c.point_std = results[k].point;
        c.point = raw.row(kk).transpose();
        c.surrogate_value = surrogates.target.invert(f_o[kk]);
        c.classifier_probability = f_c[kk];
        c.true_feasible = oracle.is_feasible(c.point);
        if (c.true_feasible) {
            c.true_objective = oracle.objective(c.point);
        } else {
            ++report.falsely_feasible;
        }
        c.start_index = static_cast<std::size_t>(interior[k]);
        c.steps_taken = results[k].steps;
        c.stalled = results[k].stalled;
        c.converged = results[k].converged;
        report.candidates.push_back(std::move(c));
    }
    std::sort(report.candidates.begin(), report.candidates.end(), candidate_less);
    report.false_feasible_fraction =
        static_cast<double>(report.falsely_feasible) / static_cast<double>(report.candidates.size());
    return report;
}

}  // namespace dido::optimizer
