#include "dido/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace dido::nn {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kBceClamp = 1e-12;
// Largest number of rows pushed through the network at once; bounds the tape size.
constexpr Eigen::Index kRowBlock = 2048;

double normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double sigmoid_derivative(double z) {
    const double e = std::exp(-std::abs(z));
    const double d = 1.0 + e;
    return e / (d * d);
}

double clamp_open_unit(double p) {
    constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    return std::clamp(p, std::numeric_limits<double>::min(), hi);
}

// Intermediate values of one forward pass, kept for the reverse sweep.
struct Tape {
    std::vector<Matrix> layer_inputs;  // input to layer l, n x m_l
    std::vector<Matrix> pre;           // pre-activation of hidden layer l
    std::vector<Matrix> cdf;           // Phi(pre) of hidden layer l
    Vector out_pre;
    Vector out;
};

Tape run_forward(const MlpModel& model, const Matrix& batch) {
    require_columns(batch, model.input_dim(), "mlp forward");
    const int layers = model.layer_count();
    Tape tape;
    tape.layer_inputs.reserve(layers);
    tape.pre.reserve(layers - 1);
    tape.cdf.reserve(layers - 1);
    tape.layer_inputs.push_back(batch);
    for (int l = 0; l + 1 < layers; ++l) {
        Matrix z = tape.layer_inputs.back() * model.weights[l].transpose();
        z.rowwise() += model.biases[l].transpose();
        Matrix phi = z.unaryExpr([](double v) { return normal_cdf(v); });
        tape.layer_inputs.push_back(z.cwiseProduct(phi));
        tape.pre.push_back(std::move(z));
        tape.cdf.push_back(std::move(phi));
    }
    const int last = layers - 1;
    tape.out_pre = tape.layer_inputs.back() * model.weights[last].transpose();
    tape.out_pre.array() += model.biases[last][0];
    if (model.output_head == OutputHead::sigmoid) {
        tape.out = tape.out_pre.unaryExpr([](double z) { return clamp_open_unit(sigmoid(z)); });
    } else {
        tape.out = tape.out_pre;
    }
    return tape;
}

// Reverse sweep from dL/d(out_pre). Fills parameter grads when `grads` is set and
// returns the input gradient when `want_input` is set.
std::optional<Matrix> run_backward(const MlpModel& model, const Tape& tape, Matrix delta,
                                   GradientBundle* grads, bool want_input) {
    for (int l = model.layer_count() - 1; l >= 0; --l) {
        if (grads != nullptr) {
            grads->weight_grads[l].noalias() += delta.transpose() * tape.layer_inputs[l];
            grads->bias_grads[l].noalias() += delta.colwise().sum().transpose();
        }
        if (l == 0 && !want_input) {
            break;
        }
        Matrix upstream = delta * model.weights[l];
        if (l == 0) {
            return upstream;
        }
        const Matrix& z = tape.pre[l - 1];
        const Matrix& phi = tape.cdf[l - 1];
        const Matrix dgelu = phi.array() + z.array() * (z.array().square() * -0.5).exp() * kInvSqrt2Pi;
        delta = upstream.cwiseProduct(dgelu);
    }
    return std::nullopt;
}

void check_same_length(const Vector& a, const Vector& b, const char* what) {
    if (a.size() != b.size()) {
        std::ostringstream msg;
        msg << what << ": length mismatch (" << a.size() << " vs " << b.size() << ")";
        throw ShapeError(msg.str());
    }
    if (a.size() == 0) {
        throw ShapeError(std::string(what) + ": empty input");
    }
}

const Vector& weights_or_ones(const Vector& weights, Eigen::Index n, Vector& storage,
                              const char* what) {
    if (weights.size() == 0) {
        storage = Vector::Ones(n);
        return storage;
    }
    if (weights.size() != n) {
        throw ShapeError(std::string(what) + ": weight vector length mismatch");
    }
    return weights;
}

}  // namespace

std::string_view to_string(Activation) { return "gelu"; }

std::string_view to_string(OutputHead h) {
    return h == OutputHead::sigmoid ? "sigmoid" : "linear";
}

Activation parse_activation(std::string_view s) {
    if (s == "gelu") {
        return Activation::gelu;
    }
    throw ConfigError("unknown activation '" + std::string(s) + "'");
}

OutputHead parse_output_head(std::string_view s) {
    if (s == "sigmoid") {
        return OutputHead::sigmoid;
    }
    if (s == "linear") {
        return OutputHead::linear;
    }
    throw ConfigError("unknown output head '" + std::string(s) + "'");
}

MlpModel MlpModel::zeros(std::vector<int> layer_sizes, OutputHead head) {
    MlpModel m;
    m.layer_sizes = std::move(layer_sizes);
    m.output_head = head;
    if (m.layer_sizes.size() < 2) {
        throw ShapeError("an MLP needs at least an input and an output size");
    }
    for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
        m.weights.push_back(Matrix::Zero(m.layer_sizes[l + 1], m.layer_sizes[l]));
        m.biases.push_back(Vector::Zero(m.layer_sizes[l + 1]));
    }
    m.validate();
    return m;
}

MlpModel MlpModel::initialized(std::vector<int> layer_sizes, OutputHead head, Rng& rng) {
    MlpModel m = zeros(std::move(layer_sizes), head);
    for (auto& w : m.weights) {
        const double sd = 1.0 / std::sqrt(static_cast<double>(w.cols()));
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                w(i, j) = sd * rng.normal();
            }
        }
    }
    return m;
}

std::size_t MlpModel::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
    }
    return n;
}

void MlpModel::validate() const {
    if (layer_sizes.size() < 2) {
        throw ShapeError("layer_sizes must list input and output sizes");
    }
    if (std::any_of(layer_sizes.begin(), layer_sizes.end(), [](int s) { return s < 1; })) {
        throw ShapeError("layer sizes must be positive");
    }
    if (layer_sizes.back() != 1) {
        throw ShapeError("the network output must be scalar");
    }
    const std::size_t h = layer_sizes.size() - 1;
    if (weights.size() != h || biases.size() != h) {
        throw ShapeError("weight and bias counts must equal the layer count");
    }
    for (std::size_t l = 0; l < h; ++l) {
        if (weights[l].rows() != layer_sizes[l + 1] || weights[l].cols() != layer_sizes[l] ||
            biases[l].size() != layer_sizes[l + 1]) {
            std::ostringstream msg;
            msg << "layer " << l << " has shape " << weights[l].rows() << "x" << weights[l].cols()
                << " (bias " << biases[l].size() << "), expected " << layer_sizes[l + 1] << "x"
                << layer_sizes[l];
            throw ShapeError(msg.str());
        }
    }
}

Vector MlpModel::flatten() const {
    Vector out(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index k = 0;
    for (const auto& w : weights) {
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                out[k++] = w(i, j);
            }
        }
    }
    for (const auto& b : biases) {
        out.segment(k, b.size()) = b;
        k += b.size();
    }
    return out;
}

void MlpModel::unflatten(const Vector& params) {
    if (params.size() != static_cast<Eigen::Index>(parameter_count())) {
        throw ShapeError("parameter vector length mismatch");
    }
    Eigen::Index k = 0;
    for (auto& w : weights) {
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                w(i, j) = params[k++];
            }
        }
    }
    for (auto& b : biases) {
        b = params.segment(k, b.size());
        k += b.size();
    }
}

std::vector<int> architecture(int input_dim, std::span<const int> hidden) {
    std::vector<int> sizes{input_dim};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(1);
    return sizes;
}

double gelu(double x) { return x * normal_cdf(x); }

double gelu_derivative(double x) {
    return normal_cdf(x) + x * std::exp(-0.5 * x * x) * kInvSqrt2Pi;
}

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

Vector forward(const MlpModel& model, const Matrix& batch) {
    require_columns(batch, model.input_dim(), "mlp forward");
    Vector out(batch.rows());
    for (Eigen::Index start = 0; start < batch.rows(); start += kRowBlock) {
        const Eigen::Index len = std::min(kRowBlock, batch.rows() - start);
        out.segment(start, len) = run_forward(model, batch.middleRows(start, len)).out;
    }
    return out;
}

double loss_mse(const Vector& predictions, const Vector& targets, const Vector& weights) {
    check_same_length(predictions, targets, "loss_mse");
    Vector ones;
    const Vector& w = weights_or_ones(weights, predictions.size(), ones, "loss_mse");
    return (w.array() * (predictions - targets).array().square()).sum() /
           static_cast<double>(predictions.size());
}

double loss_rmse(const Vector& predictions, const Vector& targets) {
    return std::sqrt(loss_mse(predictions, targets));
}

double loss_bce(const Vector& probabilities, const Vector& labels, const Vector& weights) {
    check_same_length(probabilities, labels, "loss_bce");
    Vector ones;
    const Vector& w = weights_or_ones(weights, probabilities.size(), ones, "loss_bce");
    double total = 0.0;
    for (Eigen::Index i = 0; i < probabilities.size(); ++i) {
        const double p = std::clamp(probabilities[i], kBceClamp, 1.0 - kBceClamp);
        const double q = labels[i];
        total -= w[i] * (q * std::log(p) + (1.0 - q) * std::log(1.0 - p));
    }
    return total / static_cast<double>(probabilities.size());
}

GradientBundle GradientBundle::zeros_like(const MlpModel& model) {
    GradientBundle g;
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        g.weight_grads.push_back(Matrix::Zero(model.weights[l].rows(), model.weights[l].cols()));
        g.bias_grads.push_back(Vector::Zero(model.biases[l].size()));
    }
    return g;
}

Vector GradientBundle::flatten() const {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l < weight_grads.size(); ++l) {
        n += weight_grads[l].size() + bias_grads[l].size();
    }
    Vector out(n);
    Eigen::Index k = 0;
    for (const auto& w : weight_grads) {
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                out[k++] = w(i, j);
            }
        }
    }
    for (const auto& b : bias_grads) {
        out.segment(k, b.size()) = b;
        k += b.size();
    }
    return out;
}

GradientBundle backward(const MlpModel& model, const Matrix& batch, LossKind loss,
                        const Vector& targets, bool with_input_grads, const Vector& weights) {
    if (targets.size() != batch.rows()) {
        throw ShapeError("backward: target count does not match batch rows");
    }
    const Tape tape = run_forward(model, batch);
    Vector ones;
    const Vector& w = weights_or_ones(weights, batch.rows(), ones, "backward");
    const double inv_n = 1.0 / static_cast<double>(batch.rows());
    const bool sigmoid_head = model.output_head == OutputHead::sigmoid;

    Vector delta(batch.rows());
    GradientBundle grads = GradientBundle::zeros_like(model);
    if (loss == LossKind::mse) {
        grads.loss = loss_mse(tape.out, targets, weights);
        for (Eigen::Index i = 0; i < delta.size(); ++i) {
            double d = 2.0 * w[i] * (tape.out[i] - targets[i]) * inv_n;
            if (sigmoid_head) {
                d *= sigmoid_derivative(tape.out_pre[i]);
            }
            delta[i] = d;
        }
    } else {
        grads.loss = loss_bce(tape.out, targets, weights);
        for (Eigen::Index i = 0; i < delta.size(); ++i) {
            if (sigmoid_head) {
                delta[i] = w[i] * (sigmoid(tape.out_pre[i]) - targets[i]) * inv_n;
            } else {
                const double p = std::clamp(tape.out[i], kBceClamp, 1.0 - kBceClamp);
                const double q = targets[i];
                delta[i] = -w[i] * (q / p - (1.0 - q) / (1.0 - p)) * inv_n;
            }
        }
    }
    grads.input_grads = run_backward(model, tape, delta, &grads, with_input_grads);
    return grads;
}

OutputsAndGradients forward_with_input_gradient(const MlpModel& model, const Matrix& batch) {
    require_columns(batch, model.input_dim(), "mlp input gradient");
    OutputsAndGradients out{Vector(batch.rows()), Matrix(batch.rows(), batch.cols())};
    for (Eigen::Index start = 0; start < batch.rows(); start += kRowBlock) {
        const Eigen::Index len = std::min(kRowBlock, batch.rows() - start);
        const Tape tape = run_forward(model, batch.middleRows(start, len));
        Vector delta(len);
        if (model.output_head == OutputHead::sigmoid) {
            delta = tape.out_pre.unaryExpr([](double z) { return sigmoid_derivative(z); });
        } else {
            delta.setOnes();
        }
        out.values.segment(start, len) = tape.out;
        out.gradients.middleRows(start, len) = *run_backward(model, tape, delta, nullptr, true);
    }
    return out;
}

Matrix input_gradient(const MlpModel& model, const Matrix& batch) {
    return forward_with_input_gradient(model, batch).gradients;
}

AdamState AdamState::for_model(const MlpModel& model, AdamSettings settings) {
    AdamState s;
    s.settings = settings;
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        s.weight_m.push_back(Matrix::Zero(model.weights[l].rows(), model.weights[l].cols()));
        s.weight_v.push_back(Matrix::Zero(model.weights[l].rows(), model.weights[l].cols()));
        s.bias_m.push_back(Vector::Zero(model.biases[l].size()));
        s.bias_v.push_back(Vector::Zero(model.biases[l].size()));
    }
    return s;
}

namespace {

template <typename Param>
void adam_update(Param& param, const Param& grad, Param& m, Param& v, const AdamSettings& s,
                 double bias1, double bias2) {
    m = s.beta1 * m + (1.0 - s.beta1) * grad;
    v = s.beta2 * v + (1.0 - s.beta2) * grad.cwiseProduct(grad);
    param.array() -= s.learning_rate * (m.array() / bias1) /
                     ((v.array() / bias2).sqrt() + s.epsilon);
}

}  // namespace

void adam_step(MlpModel& model, const GradientBundle& grads, AdamState& state) {
    const std::size_t h = model.weights.size();
    if (grads.weight_grads.size() != h || grads.bias_grads.size() != h ||
        state.weight_m.size() != h || state.bias_m.size() != h) {
        throw ShapeError("adam_step: layer count mismatch");
    }
    for (std::size_t l = 0; l < h; ++l) {
        if (grads.weight_grads[l].rows() != model.weights[l].rows() ||
            grads.weight_grads[l].cols() != model.weights[l].cols() ||
            grads.bias_grads[l].size() != model.biases[l].size() ||
            state.weight_m[l].rows() != model.weights[l].rows() ||
            state.weight_m[l].cols() != model.weights[l].cols()) {
            throw ShapeError("adam_step: parameter shape mismatch");
        }
    }
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bias1 = 1.0 - std::pow(state.settings.beta1, t);
    const double bias2 = 1.0 - std::pow(state.settings.beta2, t);
    for (std::size_t l = 0; l < h; ++l) {
        adam_update(model.weights[l], grads.weight_grads[l], state.weight_m[l], state.weight_v[l],
                    state.settings, bias1, bias2);
        adam_update(model.biases[l], grads.bias_grads[l], state.bias_m[l], state.bias_v[l],
                    state.settings, bias1, bias2);
    }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> rows) const {
    LabeledDataset out;
    out.inputs.resize(static_cast<Eigen::Index>(rows.size()), inputs.cols());
    out.targets.resize(static_cast<Eigen::Index>(rows.size()));
    if (weights.size() > 0) {
        out.weights.resize(static_cast<Eigen::Index>(rows.size()));
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(rows[i]);
        out.inputs.row(static_cast<Eigen::Index>(i)) = inputs.row(r);
        out.targets[static_cast<Eigen::Index>(i)] = targets[r];
        if (weights.size() > 0) {
            out.weights[static_cast<Eigen::Index>(i)] = weights[r];
        }
    }
    return out;
}

LossKind loss_for(const MlpModel& model) {
    return model.output_head == OutputHead::sigmoid ? LossKind::bce : LossKind::mse;
}

double evaluate_loss(const MlpModel& model, const LabeledDataset& data) {
    const Vector out = forward(model, data.inputs);
    if (loss_for(model) == LossKind::bce) {
        return loss_bce(out, data.targets, data.weights);
    }
    return std::sqrt(loss_mse(out, data.targets, data.weights));
}

TrainResult train(MlpModel& model, const LabeledDataset& data, const TrainSettings& settings,
                  const LabeledDataset* test) {
    if (data.size() == 0) {
        throw TrainingError("cannot train on an empty dataset");
    }
    require_columns(data.inputs, model.input_dim(), "train");
    if (data.targets.size() != data.inputs.rows()) {
        throw ShapeError("train: target count does not match input rows");
    }
    if (settings.epochs < 0 || settings.batch_size < 1) {
        throw ConfigError("train: epochs must be >= 0 and batch_size >= 1");
    }
    const LossKind loss = loss_for(model);
    const bool weighted = data.weights.size() > 0;
    AdamState state = AdamState::for_model(model, settings.adam);
    Rng rng(settings.seed);
    std::vector<std::size_t> order = iota_indices(data.size());
    const auto batch = static_cast<std::size_t>(settings.batch_size);

    TrainResult result;
    result.history.reserve(static_cast<std::size_t>(settings.epochs));
    Matrix xb;
    Vector yb;
    Vector wb;
    for (int epoch = 0; epoch < settings.epochs; ++epoch) {
        double lr = settings.adam.learning_rate;
        if (settings.schedule == LrSchedule::cosine && settings.epochs > 1) {
            const double floor = settings.adam.learning_rate * settings.final_lr_fraction;
            const double progress = static_cast<double>(epoch) / (settings.epochs - 1);
            lr = floor + 0.5 * (settings.adam.learning_rate - floor) *
                             (1.0 + std::cos(std::numbers::pi * progress));
        }
        state.settings.learning_rate = lr;
        rng.shuffle(order);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t len = std::min(batch, order.size() - start);
            xb.resize(static_cast<Eigen::Index>(len), data.inputs.cols());
            yb.resize(static_cast<Eigen::Index>(len));
            if (weighted) {
                wb.resize(static_cast<Eigen::Index>(len));
            }
            for (std::size_t i = 0; i < len; ++i) {
                const auto r = static_cast<Eigen::Index>(order[start + i]);
                xb.row(static_cast<Eigen::Index>(i)) = data.inputs.row(r);
                yb[static_cast<Eigen::Index>(i)] = data.targets[r];
                if (weighted) {
                    wb[static_cast<Eigen::Index>(i)] = data.weights[r];
                }
            }
            const GradientBundle grads =
                backward(model, xb, loss, yb, false, weighted ? wb : Vector{});
            if (!std::isfinite(grads.loss)) {
                std::ostringstream msg;
                msg << "non-finite training loss at epoch " << epoch << ", batch offset " << start;
                throw TrainingError(msg.str());
            }
            loss_sum += grads.loss * static_cast<double>(len);
            adam_step(model, grads, state);
        }
        EpochRecord rec;
        rec.epoch = epoch;
        const double mean_loss = loss_sum / static_cast<double>(data.size());
        rec.train_loss = loss == LossKind::mse ? std::sqrt(mean_loss) : mean_loss;
        if (test != nullptr && test->size() > 0) {
            rec.test_loss = evaluate_loss(model, *test);
        }
        result.history.push_back(rec);
    }
    result.adam_steps = state.step_count;
    return result;
}

}  // namespace dido::nn
