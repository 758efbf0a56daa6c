#pragma once

#include "dido/field.hpp"
#include "dido/lmc.hpp"
#include "dido/nn.hpp"
#include "dido/problem.hpp"

#include <functional>
#include <string_view>
#include <vector>

namespace dido::classifier {

/// Where the boundary-search chains of each iteration start.
enum class ChainInit {
    /// The current training points with the smallest |f - 0.5|.
    training_nearest,
    /// The points with the smallest |f - 0.5| among a fresh uniform draw of the
    /// initial box (classifier evaluations only, no oracle calls).
    box_nearest,
    /// Smallest |f - 0.5| among the training points and a fresh box draw together.
    pooled,
};

std::string_view to_string(ChainInit c);
ChainInit parse_chain_init(std::string_view s);

/// How boundary LMC chains are placed and run.
struct BoundarySearch {
    lmc::LmcConfig lmc{.step_size = 1e-3, .inverse_temperature = 1e4, .total_steps = 2000};
    ChainInit init = ChainInit::pooled;
    Box box;  // raw coordinates, used by box_nearest and pooled
    /// Box pool size as a multiple of the chain count.
    int pool_factor = 50;
    double band = 0.1;
};

struct ClassifierIterationConfig {
    Box initial_box;
    int n0 = 3000;
    int n1 = 2000;
    /// Standard deviation of the stopping-criterion perturbation, in standardized
    /// coordinates (variance 0.1).
    double perturb_sigma = 0.31622776601683794;
    double accuracy_threshold = 0.95;
    /// Maximum number of trained classifiers (iteration 0 included).
    int max_iterations = 15;
    /// Minimum acceptable minority-class fraction of the initial sample.
    double balance_tolerance = 0.25;
    int max_resamples = 5;
    /// Boundary points drawn for each accuracy evaluation.
    int n_eval = 2000;
    std::vector<int> hidden{256, 128, 64};
    nn::TrainSettings initial_train{.epochs = 300};
    nn::TrainSettings retrain{.epochs = 200};
    /// box defaults to initial_box when left empty.
    BoundarySearch search;

    void validate() const;
};

struct AccuracyRecord {
    int iteration = 0;
    std::size_t n_train = 0;
    double sigma = 0.0;
    double accuracy = 0.0;
    std::size_t n_evaluated = 0;
    std::uint64_t eval_seed = 0;
};

struct ClassifierState {
    nn::MlpModel model;
    /// Frozen after the initial sample; the model sees standardized inputs.
    Standardizer input_stats;
    Matrix points;  // raw coordinates
    Vector labels;  // I_Omega at insertion time
    bool class_weighted = false;
    int iteration = 0;
    std::vector<AccuracyRecord> history;
    bool converged = false;
    double final_accuracy = 0.0;
    std::uint64_t final_eval_seed = 0;
    BoundarySearch search;

    std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
    /// Classifier on standardized coordinates.
    FieldPtr field() const;
    /// Classifier on raw coordinates.
    FieldPtr raw_field() const;
    nn::LabeledDataset training_data() const;
};

Matrix sample_uniform_box(const Box& box, int n, std::uint64_t seed);

struct InitialDataset {
    Matrix points;
    Vector labels;
    double feasible_fraction = 0.0;
    int resamples = 0;
    /// Set when the classes stayed imbalanced after every resample.
    bool class_weighted = false;
};

/// Uniform sample of the box labelled by the oracle. An imbalanced draw is
/// redrawn up to max_resamples times before falling back to class weighting.
/// Throws DomainError when every draw has a single class.
InitialDataset build_initial_dataset(const DataInformedProblem& oracle, const Box& box, int n0,
                                     std::uint64_t seed, double balance_tolerance = 0.25,
                                     int max_resamples = 5);

/// Per-sample weights inversely proportional to class frequency, normalized to mean 1.
Vector class_balance_weights(const Vector& labels);

struct BoundaryAccuracy {
    double accuracy = 0.0;
    std::size_t n_sampled = 0;
    std::size_t n_in_band = 0;
    std::size_t n_correct = 0;
    /// Unperturbed LMC end points (standardized coordinates), all chains.
    Matrix lmc_states;
};

/// Runs boundary LMC from `starts` (standardized coordinates), keeps the final
/// states with |f - 0.5| <= band, perturbs them by N(0, sigma^2 I), labels with
/// the oracle and returns the fraction where (f >= 0.5) agrees with the label.
/// Throws SamplingError when fewer than 10% of the chains land in the band.
BoundaryAccuracy boundary_accuracy(const FieldPtr& classifier, const Standardizer& stats,
                                   const DataInformedProblem& oracle, const Matrix& starts,
                                   const lmc::LmcConfig& lmc, double sigma, double band,
                                   std::uint64_t seed);

/// Chain starts (standardized coordinates) for n chains per state.search.
Matrix boundary_chain_starts(const ClassifierState& state, int n, std::uint64_t seed);

/// boundary_accuracy from boundary_chain_starts(state, n_eval, seed).
BoundaryAccuracy perturbed_boundary_accuracy(const ClassifierState& state,
                                             const DataInformedProblem& oracle, double sigma,
                                             int n_eval, std::uint64_t seed);

/// Rows of `points` with the n smallest |p - 0.5| (ties by row index).
Matrix nearest_boundary_rows(const Vector& probabilities, const Matrix& points, int n);

using IterationCallback = std::function<void(const ClassifierState&)>;

/// Iterative classifier training with boundary enrichment. When the threshold is
/// never reached, returns the best-scoring iteration with converged = false.
ClassifierState iterate_classifier(const DataInformedProblem& oracle,
                                   const ClassifierIterationConfig& config, std::uint64_t seed,
                                   const IterationCallback& on_iteration = {});

struct FeasibilityPrediction {
    Vector probabilities;
    std::vector<bool> feasible;  // probability >= 0.5
};

FeasibilityPrediction predict_feasible(const ClassifierState& state, const Matrix& points);
std::vector<bool> feasible_verdicts(const Vector& probabilities);

}  // namespace dido::classifier
