#include "dido/objective.hpp"

#include "dido/random.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dido::surrogate {

FeasibleSample sample_feasible(const FieldPtr& classifier_std, const Standardizer& stats,
                               const Matrix& seeds_std, const DataInformedProblem& oracle,
                               int n_target, const FeasibleSamplingSettings& settings,
                               std::uint64_t seed) {
    if (n_target < 0) {
        throw DomainError("n_target must be nonnegative");
    }
    FeasibleSample out;
    out.points.resize(0, oracle.dimension());
    if (n_target == 0) {
        return out;
    }
    if (seeds_std.rows() == 0) {
        throw SamplingError("feasible sampling needs at least one predicted-feasible seed point");
    }
    require_columns(seeds_std, oracle.dimension(), "sample_feasible seeds");
    settings.lmc.validate();
    const auto energy = lmc::feasible_energy(classifier_std);
    std::vector<Vector> kept;
    kept.reserve(static_cast<std::size_t>(n_target));
    std::uint64_t next_chain = 0;
    const auto n_seeds = static_cast<std::uint64_t>(seeds_std.rows());

    for (int cycle = 0; cycle < settings.max_cycles && static_cast<int>(kept.size()) < n_target;
         ++cycle) {
        const int missing = n_target - static_cast<int>(kept.size());
        Matrix starts(missing, seeds_std.cols());
        std::vector<std::uint64_t> ids(static_cast<std::size_t>(missing));
        for (int i = 0; i < missing; ++i) {
            ids[static_cast<std::size_t>(i)] = next_chain;
            starts.row(i) = seeds_std.row(static_cast<Eigen::Index>(next_chain % n_seeds));
            ++next_chain;
        }
        const lmc::LmcRun run = lmc::lmc_run(starts, energy, settings.lmc, seed, ids);
        const Matrix raw = stats.invert(run.final_states);
        std::size_t accepted = 0;
        for (Eigen::Index i = 0; i < raw.rows(); ++i) {
            ++out.oracle_calls;
            if (oracle.is_feasible(raw.row(i).transpose())) {
                kept.emplace_back(raw.row(i).transpose());
                ++accepted;
            }
        }
        out.cycles = cycle + 1;
        const double yield = static_cast<double>(accepted) / static_cast<double>(raw.rows());
        spdlog::info("feasible sampling round {}: {} of {} chains true-feasible ({:.3f})", cycle,
                     accepted, raw.rows(), yield);
        if (yield < settings.min_yield) {
            std::ostringstream msg;
            msg << "true-feasible yield " << yield << " is below " << settings.min_yield
                << " in sampling round " << cycle << "; retrain the classifier";
            throw SamplingError(msg.str());
        }
    }
    out.accepted = kept.size();
    out.points.resize(static_cast<Eigen::Index>(kept.size()), oracle.dimension());
    for (std::size_t i = 0; i < kept.size(); ++i) {
        out.points.row(static_cast<Eigen::Index>(i)) = kept[i].transpose();
    }
    if (static_cast<int>(kept.size()) < n_target) {
        spdlog::warn("feasible sampling stopped after {} rounds with {} of {} points", out.cycles,
                     kept.size(), n_target);
    }
    return out;
}

FeasibleSample sample_feasible_inputs(const classifier::ClassifierState& state,
                                      const DataInformedProblem& oracle, int n_target,
                                      const FeasibleSamplingSettings& settings,
                                      std::uint64_t seed) {
    const Matrix std_points = state.input_stats.apply(state.points);
    const Vector probs = state.field()->values(std_points);
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
        if (probs[i] >= 0.5) {
            rows.push_back(i);
        }
    }
    Matrix seeds(static_cast<Eigen::Index>(rows.size()), std_points.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        seeds.row(static_cast<Eigen::Index>(k)) = std_points.row(rows[k]);
    }
    if (n_target > 0 && rows.empty()) {
        throw SamplingError("no classifier training point is predicted feasible");
    }
    return sample_feasible(state.field(), state.input_stats, seeds, oracle, n_target, settings,
                           seed);
}

SurrogateDataset make_surrogate_dataset(const Matrix& points, const Vector& values) {
    if (points.rows() != values.size()) {
        throw ShapeError("surrogate dataset: point and value counts differ");
    }
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        if (std::isfinite(values[i])) {
            keep.push_back(i);
        } else {
            spdlog::warn("dropping point {} with non-finite objective value", i);
        }
    }
    SurrogateDataset ds;
    ds.dropped = static_cast<std::size_t>(values.size()) - keep.size();
    ds.points.resize(static_cast<Eigen::Index>(keep.size()), points.cols());
    ds.raw_targets.resize(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
        ds.points.row(static_cast<Eigen::Index>(k)) = points.row(keep[k]);
        ds.raw_targets[static_cast<Eigen::Index>(k)] = values[keep[k]];
    }
    if (keep.empty()) {
        ds.input_stats = Standardizer::identity(static_cast<int>(points.cols()));
        ds.inputs = ds.points;
        ds.standardized_targets = ds.raw_targets;
        return ds;
    }
    ds.input_stats = Standardizer::fit(ds.points);
    ds.inputs = ds.input_stats.apply(ds.points);
    ds.target_stats = TargetStandardizer::fit(ds.raw_targets);
    ds.standardized_targets = ds.target_stats.apply(ds.raw_targets);
    return ds;
}

SurrogateDataset build_surrogate_dataset(const Matrix& points, const DataInformedProblem& oracle) {
    require_columns(points, oracle.dimension(), "build_surrogate_dataset");
    return make_surrogate_dataset(points, oracle.objective_values(points));
}

FieldPtr ObjectiveSurrogate::raw_field() const {
    return on_raw_coordinates(std::make_shared<MlpField>(model), input_stats);
}

Vector ObjectiveSurrogate::predict(const Matrix& raw_points) const {
    return target_stats.invert(nn::forward(model, input_stats.apply(raw_points)));
}

Matrix ObjectiveSurrogate::gradient(const Matrix& raw_points) const {
    return raw_field()->evaluate(raw_points).gradients * target_stats.scale;
}

void split_indices(std::size_t n, double test_fraction, std::uint64_t seed,
                   std::vector<std::size_t>& train, std::vector<std::size_t>& test) {
    std::vector<std::size_t> order = iota_indices(n);
    Rng rng(seed);
    rng.shuffle(order);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
}

FitReport fit_objective(const SurrogateDataset& dataset, const std::vector<int>& hidden,
                        const nn::TrainSettings& settings, double test_fraction,
                        std::uint64_t seed) {
    if (dataset.size() < 10) {
        std::ostringstream msg;
        msg << "surrogate dataset has " << dataset.size() << " points; at least 10 are needed";
        throw DomainError(msg.str());
    }
    if (!(test_fraction > 0.0 && test_fraction <= 0.5)) {
        throw DomainError("test fraction must lie in (0, 0.5]");
    }
    if (hidden.empty()) {
        throw ConfigError("surrogate needs at least one hidden layer");
    }
    FitReport report;
    split_indices(dataset.size(), test_fraction, derive_seed(seed, "split"), report.train_indices,
                  report.test_indices);
    const nn::LabeledDataset all{dataset.inputs, dataset.standardized_targets, {}};
    const nn::LabeledDataset train_set = all.subset(report.train_indices);
    const nn::LabeledDataset test_set = all.subset(report.test_indices);

    Rng init(derive_seed(seed, "weights"));
    report.surrogate.model = nn::MlpModel::initialized(
        nn::architecture(static_cast<int>(dataset.inputs.cols()), hidden), nn::OutputHead::linear,
        init);
    report.surrogate.input_stats = dataset.input_stats;
    report.surrogate.target_stats = dataset.target_stats;
    report.degenerate = dataset.target_stats.degenerate;
    if (report.degenerate) {
        spdlog::warn("objective values have zero variance; normalized RMSE is trivially small");
    }
    nn::TrainSettings s = settings;
    s.seed = derive_seed(seed, "train");
    report.history = nn::train(report.surrogate.model, train_set, s, &test_set).history;
    report.train_rmse = nn::evaluate_loss(report.surrogate.model, train_set);
    report.test_rmse = nn::evaluate_loss(report.surrogate.model, test_set);
    report.train_rmse_raw = report.train_rmse * dataset.target_stats.scale;
    report.test_rmse_raw = report.test_rmse * dataset.target_stats.scale;
    return report;
}

}  // namespace dido::surrogate
