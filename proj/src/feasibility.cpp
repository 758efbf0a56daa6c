#include "dido/feasibility.hpp"

#include "dido/random.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>

namespace dido::classifier {

void ClassifierIterationConfig::validate() const {
    initial_box.validate();
    if (n0 < 1 || n1 < 1) {
        throw ConfigError("n0 and n1 must be at least 1");
    }
    if (!(accuracy_threshold > 0.0 && accuracy_threshold <= 1.0)) {
        throw ConfigError("accuracy_threshold must lie in (0, 1]");
    }
    if (!(perturb_sigma >= 0.0)) {
        throw ConfigError("perturb_sigma must be nonnegative");
    }
    if (max_iterations < 1 || n_eval < 1) {
        throw ConfigError("max_iterations and n_eval must be at least 1");
    }
    if (!(search.band > 0.0 && search.band <= 0.5)) {
        throw ConfigError("boundary band must lie in (0, 0.5]");
    }
    if (!(balance_tolerance >= 0.0 && balance_tolerance <= 0.5)) {
        throw ConfigError("balance_tolerance must lie in [0, 0.5]");
    }
    if (hidden.empty()) {
        throw ConfigError("classifier needs at least one hidden layer");
    }
    if (search.pool_factor < 1) {
        throw ConfigError("boundary search pool factor must be at least 1");
    }
    search.lmc.validate();
}

std::string_view to_string(ChainInit c) {
    switch (c) {
        case ChainInit::training_nearest: return "training_nearest";
        case ChainInit::box_nearest: return "box_nearest";
        case ChainInit::pooled: return "pooled";
    }
    return "pooled";
}

ChainInit parse_chain_init(std::string_view s) {
    if (s == "training_nearest") return ChainInit::training_nearest;
    if (s == "box_nearest") return ChainInit::box_nearest;
    if (s == "pooled") return ChainInit::pooled;
    throw ConfigError("unknown chain initialization '" + std::string(s) + "'");
}

FieldPtr ClassifierState::field() const { return std::make_shared<MlpField>(model); }

FieldPtr ClassifierState::raw_field() const { return on_raw_coordinates(field(), input_stats); }

nn::LabeledDataset ClassifierState::training_data() const {
    nn::LabeledDataset data{input_stats.apply(points), labels, {}};
    if (class_weighted) {
        data.weights = class_balance_weights(labels);
    }
    return data;
}

Matrix sample_uniform_box(const Box& box, int n, std::uint64_t seed) {
    box.validate();
    if (n < 0) {
        throw DomainError("sample count must be nonnegative");
    }
    Rng rng(seed);
    Matrix out(n, box.dim());
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < box.dim(); ++j) {
            out(i, j) = rng.uniform(box.lower[j], box.upper[j]);
        }
    }
    return out;
}

InitialDataset build_initial_dataset(const DataInformedProblem& oracle, const Box& box, int n0,
                                     std::uint64_t seed, double balance_tolerance,
                                     int max_resamples) {
    box.validate();
    if (box.dim() != oracle.dimension()) {
        throw ShapeError("initial box dimension does not match the problem");
    }
    if (n0 < 1) {
        throw DomainError("initial sample size must be at least 1");
    }
    InitialDataset out;
    for (int attempt = 0; attempt <= max_resamples; ++attempt) {
        out.points = sample_uniform_box(box, n0, derive_seed(seed, static_cast<std::uint64_t>(attempt)));
        out.labels = oracle.feasibility_labels(out.points);
        out.feasible_fraction = out.labels.mean();
        out.resamples = attempt;
        const double minority = std::min(out.feasible_fraction, 1.0 - out.feasible_fraction);
        if (minority >= balance_tolerance) {
            out.class_weighted = false;
            return out;
        }
        if (attempt < max_resamples && minority > 0.0) {
            spdlog::warn("initial sample is imbalanced (feasible fraction {:.4f}); resampling",
                         out.feasible_fraction);
        }
        if (minority == 0.0 && attempt == max_resamples) {
            std::ostringstream msg;
            msg << "every initial sample of the box is "
                << (out.feasible_fraction > 0.5 ? "feasible" : "infeasible") << " after "
                << max_resamples + 1 << " draws; choose a different initial box";
            throw DomainError(msg.str());
        }
    }
    spdlog::warn("initial sample still imbalanced (feasible fraction {:.4f}); using class-weighted BCE",
                 out.feasible_fraction);
    out.class_weighted = true;
    return out;
}

Vector class_balance_weights(const Vector& labels) {
    const double n = static_cast<double>(labels.size());
    const double pos = labels.sum();
    const double neg = n - pos;
    Vector w(labels.size());
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
        const double count = labels[i] > 0.5 ? pos : neg;
        w[i] = n / (2.0 * count);
    }
    return w;
}

std::vector<bool> feasible_verdicts(const Vector& probabilities) {
    std::vector<bool> out(static_cast<std::size_t>(probabilities.size()));
    for (Eigen::Index i = 0; i < probabilities.size(); ++i) {
        out[static_cast<std::size_t>(i)] = probabilities[i] >= 0.5;
    }
    return out;
}

Matrix nearest_boundary_rows(const Vector& probabilities, const Matrix& points, int n) {
    if (probabilities.size() != points.rows()) {
        throw ShapeError("nearest_boundary_rows: probability count does not match rows");
    }
    std::vector<std::size_t> order = iota_indices(static_cast<std::size_t>(points.rows()));
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(std::max(n, 0)), order.size());
    auto closer = [&](std::size_t a, std::size_t b) {
        const double da = std::abs(probabilities[static_cast<Eigen::Index>(a)] - 0.5);
        const double db = std::abs(probabilities[static_cast<Eigen::Index>(b)] - 0.5);
        return da < db || (da == db && a < b);
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      closer);
    Matrix out(static_cast<Eigen::Index>(take), points.cols());
    for (std::size_t i = 0; i < take; ++i) {
        out.row(static_cast<Eigen::Index>(i)) = points.row(static_cast<Eigen::Index>(order[i]));
    }
    return out;
}

BoundaryAccuracy boundary_accuracy(const FieldPtr& classifier, const Standardizer& stats,
                                   const DataInformedProblem& oracle, const Matrix& starts,
                                   const lmc::LmcConfig& lmc, double sigma, double band,
                                   std::uint64_t seed) {
    if (starts.rows() == 0) {
        throw SamplingError("boundary accuracy needs at least one start point");
    }
    const auto energy = lmc::boundary_energy(classifier);
    const lmc::LmcRun run = lmc::lmc_run(starts, energy, lmc, derive_seed(seed, "lmc"));
    const Vector probs = classifier->values(run.final_states);

    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        if (std::abs(probs[i] - 0.5) <= band) {
            keep.push_back(i);
        }
    }
    BoundaryAccuracy acc;
    acc.lmc_states = run.final_states;
    acc.n_sampled = static_cast<std::size_t>(starts.rows());
    acc.n_in_band = keep.size();
    if (static_cast<double>(keep.size()) < 0.1 * static_cast<double>(starts.rows())) {
        std::ostringstream msg;
        msg << "only " << keep.size() << " of " << starts.rows()
            << " boundary LMC samples satisfy |f - 0.5| <= " << band
            << "; retune the LMC step size or inverse temperature";
        throw SamplingError(msg.str());
    }
    const CounterRng noise(derive_seed(seed, "perturb"));
    Matrix perturbed(static_cast<Eigen::Index>(keep.size()), starts.cols());
    for (Eigen::Index r = 0; r < perturbed.rows(); ++r) {
        for (Eigen::Index j = 0; j < perturbed.cols(); ++j) {
            perturbed(r, j) = run.final_states(keep[static_cast<std::size_t>(r)], j) +
                              sigma * noise.normal(static_cast<std::uint64_t>(r),
                                                   static_cast<std::uint64_t>(j));
        }
    }
    const Vector predicted = classifier->values(perturbed);
    const Vector labels = oracle.feasibility_labels(stats.invert(perturbed));
    for (Eigen::Index r = 0; r < perturbed.rows(); ++r) {
        const bool pred = predicted[r] >= 0.5;
        const bool truth = labels[r] > 0.5;
        acc.n_correct += pred == truth ? 1 : 0;
    }
    acc.accuracy = static_cast<double>(acc.n_correct) / static_cast<double>(keep.size());
    return acc;
}

Matrix boundary_chain_starts(const ClassifierState& state, int n, std::uint64_t seed) {
    const BoundarySearch& search = state.search;
    const FieldPtr field = state.field();
    Matrix candidates;
    if (search.init != ChainInit::box_nearest) {
        candidates = state.input_stats.apply(state.points);
    }
    if (search.init != ChainInit::training_nearest) {
        const Matrix pool = state.input_stats.apply(
            sample_uniform_box(search.box, n * search.pool_factor, derive_seed(seed, "pool")));
        const Eigen::Index old = candidates.rows();
        candidates.conservativeResize(old + pool.rows(), pool.cols());
        candidates.bottomRows(pool.rows()) = pool;
    }
    return nearest_boundary_rows(field->values(candidates), candidates, n);
}

BoundaryAccuracy perturbed_boundary_accuracy(const ClassifierState& state,
                                             const DataInformedProblem& oracle, double sigma,
                                             int n_eval, std::uint64_t seed) {
    if (state.size() == 0) {
        throw SamplingError("classifier has no training data");
    }
    const Matrix starts = boundary_chain_starts(state, n_eval, seed);
    return boundary_accuracy(state.field(), state.input_stats, oracle, starts, state.search.lmc,
                             sigma, state.search.band, seed);
}

namespace {

std::string row_key(const Matrix& m, Eigen::Index row) {
    std::string key;
    key.resize(static_cast<std::size_t>(m.cols()) * sizeof(double));
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        const double v = m(row, j);
        std::memcpy(key.data() + static_cast<std::size_t>(j) * sizeof(double), &v, sizeof(double));
    }
    return key;
}

}  // namespace

ClassifierState iterate_classifier(const DataInformedProblem& oracle,
                                   const ClassifierIterationConfig& config, std::uint64_t seed,
                                   const IterationCallback& on_iteration) {
    config.validate();
    if (config.initial_box.dim() != oracle.dimension()) {
        throw ShapeError("initial box dimension does not match the problem");
    }
    const int d = oracle.dimension();
    const InitialDataset initial =
        build_initial_dataset(oracle, config.initial_box, config.n0, derive_seed(seed, "initial"),
                              config.balance_tolerance, config.max_resamples);
    spdlog::info("initial classifier sample: {} points, feasible fraction {:.4f}",
                 initial.points.rows(), initial.feasible_fraction);

    ClassifierState state;
    state.search = config.search;
    if (state.search.box.dim() == 0) {
        state.search.box = config.initial_box;
    }
    state.input_stats = Standardizer::fit(initial.points);
    state.class_weighted = initial.class_weighted;
    std::unordered_set<std::string> seen;
    {
        std::vector<Eigen::Index> unique_rows;
        for (Eigen::Index i = 0; i < initial.points.rows(); ++i) {
            if (seen.insert(row_key(initial.points, i)).second) {
                unique_rows.push_back(i);
            }
        }
        state.points.resize(static_cast<Eigen::Index>(unique_rows.size()), d);
        state.labels.resize(static_cast<Eigen::Index>(unique_rows.size()));
        for (std::size_t k = 0; k < unique_rows.size(); ++k) {
            state.points.row(static_cast<Eigen::Index>(k)) = initial.points.row(unique_rows[k]);
            state.labels[static_cast<Eigen::Index>(k)] = initial.labels[unique_rows[k]];
        }
    }
    Rng init_rng(derive_seed(seed, "weights"));
    state.model = nn::MlpModel::initialized(nn::architecture(d, config.hidden),
                                            nn::OutputHead::sigmoid, init_rng);

    ClassifierState best;
    bool have_best = false;
    for (int t = 0; t < config.max_iterations; ++t) {
        state.iteration = t;
        nn::TrainSettings settings = t == 0 ? config.initial_train : config.retrain;
        settings.seed = derive_seed(seed, "train-" + std::to_string(t));
        nn::train(state.model, state.training_data(), settings);

        const std::uint64_t eval_seed = derive_seed(seed, "eval-" + std::to_string(t));
        const BoundaryAccuracy acc =
            perturbed_boundary_accuracy(state, oracle, config.perturb_sigma, config.n_eval, eval_seed);
        state.history.push_back(AccuracyRecord{t, state.size(), config.perturb_sigma, acc.accuracy,
                                               acc.n_in_band, eval_seed});
        state.final_accuracy = acc.accuracy;
        state.final_eval_seed = eval_seed;
        state.converged = acc.accuracy >= config.accuracy_threshold;
        spdlog::info("classifier iteration {}: {} training points, perturbed accuracy {:.4f} ({} in band)",
                     t, state.size(), acc.accuracy, acc.n_in_band);
        if (on_iteration) {
            on_iteration(state);
        }
        if (state.converged) {
            return state;
        }
        if (!have_best || acc.accuracy > best.final_accuracy) {
            best = state;
            have_best = true;
        }
        if (t + 1 == config.max_iterations) {
            break;
        }

        // Boundary enrichment. The evaluation chains are not yet in the training
        // set, so they double as the new boundary samples.
        Matrix boundary_std;
        if (config.n1 <= acc.lmc_states.rows()) {
            boundary_std = acc.lmc_states.topRows(config.n1);
        } else {
            const std::uint64_t s_seed = derive_seed(seed, "boundary-" + std::to_string(t));
            const lmc::LmcRun run =
                lmc::lmc_run(boundary_chain_starts(state, config.n1, s_seed),
                             lmc::boundary_energy(state.field()), state.search.lmc, s_seed);
            if (run.reset_chains() > 0) {
                spdlog::warn("{} boundary chains diverged and were reset", run.reset_chains());
            }
            boundary_std = run.final_states;
        }
        const Matrix added = state.input_stats.invert(boundary_std);
        const Vector added_labels = oracle.feasibility_labels(added);

        std::vector<Eigen::Index> fresh;
        for (Eigen::Index i = 0; i < added.rows(); ++i) {
            if (seen.insert(row_key(added, i)).second) {
                fresh.push_back(i);
            }
        }
        const Eigen::Index old_n = state.points.rows();
        const auto grow = static_cast<Eigen::Index>(fresh.size());
        state.points.conservativeResize(old_n + grow, d);
        state.labels.conservativeResize(old_n + grow);
        for (Eigen::Index k = 0; k < grow; ++k) {
            state.points.row(old_n + k) = added.row(fresh[static_cast<std::size_t>(k)]);
            state.labels[old_n + k] = added_labels[fresh[static_cast<std::size_t>(k)]];
        }
    }
    best.history = state.history;
    best.converged = false;
    spdlog::warn("classifier did not reach accuracy {:.3f} in {} iterations; best {:.4f} at iteration {}",
                 config.accuracy_threshold, config.max_iterations, best.final_accuracy,
                 best.iteration);
    return best;
}

FeasibilityPrediction predict_feasible(const ClassifierState& state, const Matrix& points) {
    require_columns(points, state.model.input_dim(), "predict_feasible");
    FeasibilityPrediction p;
    p.probabilities = nn::forward(state.model, state.input_stats.apply(points));
    p.feasible = feasible_verdicts(p.probabilities);
    return p;
}

}  // namespace dido::classifier
