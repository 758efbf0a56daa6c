#pragma once

#include "dido/random.hpp"
#include "dido/types.hpp"

#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace dido::nn {

enum class Activation { gelu };
enum class OutputHead { linear, sigmoid };
enum class LossKind { mse, bce };

std::string_view to_string(Activation a);
std::string_view to_string(OutputHead h);
Activation parse_activation(std::string_view s);
OutputHead parse_output_head(std::string_view s);

/// Fully connected network f(x) = W[H-1] s(... s(W[0] x + b[0]) ...) + b[H-1],
/// with s = GELU on hidden layers and an optional sigmoid on the scalar output.
/// weights[l] has shape layer_sizes[l+1] x layer_sizes[l].
struct MlpModel {
    std::vector<int> layer_sizes;
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
    Activation activation = Activation::gelu;
    OutputHead output_head = OutputHead::linear;

    /// All parameters zero.
    static MlpModel zeros(std::vector<int> layer_sizes, OutputHead head);
    /// Gaussian weights with standard deviation 1/sqrt(fan_in), zero biases.
    static MlpModel initialized(std::vector<int> layer_sizes, OutputHead head, Rng& rng);

    int input_dim() const { return layer_sizes.front(); }
    int layer_count() const { return static_cast<int>(weights.size()); }
    std::size_t parameter_count() const;
    /// Throws ShapeError if the shape chain is inconsistent or the output is not scalar.
    void validate() const;

    /// Flat parameter vector (weights row-major, then biases), for tests and checks.
    Vector flatten() const;
    void unflatten(const Vector& params);
};

/// [input_dim, hidden..., 1].
std::vector<int> architecture(int input_dim, std::span<const int> hidden);

double gelu(double x);
double gelu_derivative(double x);
double sigmoid(double z);

/// One output per batch row.
Vector forward(const MlpModel& model, const Matrix& batch);

/// Weighted losses take an optional per-sample weight vector (empty = unweighted):
/// L = (1/n) sum_i w_i l_i.
double loss_mse(const Vector& predictions, const Vector& targets, const Vector& weights = {});
double loss_rmse(const Vector& predictions, const Vector& targets);
/// Probabilities are clamped to [1e-12, 1 - 1e-12] before the logarithms.
double loss_bce(const Vector& probabilities, const Vector& labels, const Vector& weights = {});

struct GradientBundle {
    std::vector<Matrix> weight_grads;
    std::vector<Vector> bias_grads;
    std::optional<Matrix> input_grads;  // gradient of the loss w.r.t. each input row
    double loss = 0.0;

    static GradientBundle zeros_like(const MlpModel& model);
    Vector flatten() const;
};

/// Exact reverse-mode gradient of the loss over the batch. For sigmoid heads
/// with BCE the output-layer error is (p - q) / n of the unclamped loss.
GradientBundle backward(const MlpModel& model, const Matrix& batch, LossKind loss,
                        const Vector& targets, bool with_input_grads = false,
                        const Vector& weights = {});

/// Per-row gradient of the network output with respect to its input.
Matrix input_gradient(const MlpModel& model, const Matrix& batch);

struct OutputsAndGradients {
    Vector values;
    Matrix gradients;
};
OutputsAndGradients forward_with_input_gradient(const MlpModel& model, const Matrix& batch);

// ---------------------------------------------------------------------------
// Adam

struct AdamSettings {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamSettings settings;
    std::vector<Matrix> weight_m, weight_v;
    std::vector<Vector> bias_m, bias_v;
    std::uint64_t step_count = 0;

    static AdamState for_model(const MlpModel& model, AdamSettings settings = {});
};

/// Bias-corrected Adam update of every parameter; increments step_count.
void adam_step(MlpModel& model, const GradientBundle& grads, AdamState& state);

// ---------------------------------------------------------------------------
// Training

struct LabeledDataset {
    Matrix inputs;
    Vector targets;
    Vector weights;  // optional per-sample loss weights

    std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
    LabeledDataset subset(std::span<const std::size_t> rows) const;
};

enum class LrSchedule { constant, cosine };

struct TrainSettings {
    int epochs = 200;
    int batch_size = 128;
    AdamSettings adam;
    LrSchedule schedule = LrSchedule::constant;
    /// Cosine schedule decays to learning_rate * final_lr_fraction at the last epoch.
    double final_lr_fraction = 0.01;
    std::uint64_t seed = 0;
};

struct EpochRecord {
    int epoch = 0;
    /// RMSE for linear heads, BCE for sigmoid heads (mean over the epoch's mini-batches).
    double train_loss = 0.0;
    std::optional<double> test_loss;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::uint64_t adam_steps = 0;
};

LossKind loss_for(const MlpModel& model);

/// Mini-batch Adam on MSE (linear head) or BCE (sigmoid head). The optional
/// test set is evaluated on a full pass after each epoch. Throws TrainingError on
/// an empty dataset or a non-finite loss.
TrainResult train(MlpModel& model, const LabeledDataset& data, const TrainSettings& settings,
                  const LabeledDataset* test = nullptr);

/// Loss (RMSE or BCE) of the model on a full dataset.
double evaluate_loss(const MlpModel& model, const LabeledDataset& data);

}  // namespace dido::nn
