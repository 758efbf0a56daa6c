#include "helpers.hpp"

#include "dido/nn.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace dido;
using namespace dido::nn;
using testing::relative_error;

namespace {

MlpModel one_layer(double w, double b, OutputHead head = OutputHead::linear) {
    MlpModel m = MlpModel::zeros({1, 1}, head);
    m.weights[0](0, 0) = w;
    m.biases[0][0] = b;
    return m;
}

Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v[i++] = x;
    return v;
}

double loss_of(const MlpModel& m, const Matrix& x, LossKind kind, const Vector& y) {
    const Vector out = forward(m, x);
    return kind == LossKind::mse ? loss_mse(out, y) : loss_bce(out, y);
}

// central differences over the flat parameter vector
Vector fd_parameter_gradient(const MlpModel& model, const Matrix& x, LossKind kind, const Vector& y,
                             double h = 1e-5) {
    const Vector theta = model.flatten();
    Vector g(theta.size());
    MlpModel probe = model;
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
        Vector t = theta;
        t[k] = theta[k] + h;
        probe.unflatten(t);
        const double up = loss_of(probe, x, kind, y);
        t[k] = theta[k] - h;
        probe.unflatten(t);
        const double down = loss_of(probe, x, kind, y);
        g[k] = (up - down) / (2 * h);
    }
    return g;
}

Matrix fd_input_gradient(const MlpModel& model, const Matrix& x, double h = 1e-5) {
    Matrix g(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            Matrix up = x.row(i);
            Matrix down = x.row(i);
            up(0, j) += h;
            down(0, j) -= h;
            g(i, j) = (forward(model, up)[0] - forward(model, down)[0]) / (2 * h);
        }
    }
    return g;
}

double max_relative_error(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b,
                          double floor = 1e-6) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            worst = std::max(worst, relative_error(a(i, j), b(i, j), floor));
        }
    }
    return worst;
}

MlpModel random_model(Rng& rng, int d, OutputHead head) {
    const int layers = 1 + static_cast<int>(rng.index(3));
    std::vector<int> sizes{d};
    for (int l = 1; l < layers; ++l) sizes.push_back(2 + static_cast<int>(rng.index(15)));
    sizes.push_back(1);
    MlpModel m = MlpModel::initialized(sizes, head, rng);
    for (auto& b : m.biases) b = testing::random_vector(rng, b.size(), 0.3);
    return m;
}

}  // namespace

TEST_CASE("gelu values") {
    CHECK(gelu(0.0) == 0.0);
    CHECK(std::abs(gelu(10.0) - 10.0) < 1e-9);
    // long-double erf series as the reference
    for (double x : {-3.0, -1.0, -0.25, 0.5, 1.0, 2.0}) {
        const long double expect = static_cast<long double>(x) * testing::series_normal_cdf(x);
        CHECK(std::abs(gelu(x) - static_cast<double>(expect)) < 1e-14);
    }
    CHECK(gelu(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-14));
}

TEST_CASE("gelu derivative matches finite differences") {
    for (double x = -4.0; x <= 4.0; x += 0.37) {
        const double fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
        CHECK(std::abs(gelu_derivative(x) - fd) < 1e-8);
    }
}

TEST_CASE("forward examples") {
    Matrix x(3, 4);
    x << 1, 2, 3, 4, -1, 0, 5, 2, 0.5, 0.5, 0.5, 0.5;
    const MlpModel lin = MlpModel::zeros({4, 8, 1}, OutputHead::linear);
    const MlpModel sig = MlpModel::zeros({4, 8, 1}, OutputHead::sigmoid);
    CHECK(forward(lin, x).isZero());
    for (double p : forward(sig, x)) CHECK(p == 0.5);

    Matrix three(1, 1);
    three << 3.0;
    CHECK(forward(one_layer(2.0, 1.0), three)[0] == 7.0);
}

TEST_CASE("forward rejects a dimension mismatch") {
    const MlpModel m = MlpModel::zeros({3, 4, 1}, OutputHead::linear);
    CHECK_THROWS_AS(forward(m, Matrix::Zero(2, 2)), ShapeError);
    CHECK_THROWS_AS(input_gradient(m, Matrix::Zero(2, 4)), ShapeError);
}

TEST_CASE("forward is pure and sigmoid outputs stay in the open interval") {
    Rng rng(5);
    MlpModel m = MlpModel::initialized({3, 16, 16, 1}, OutputHead::sigmoid, rng);
    for (auto& w : m.weights) w *= 40.0;
    const Matrix x = testing::random_matrix(rng, 200, 3, 5.0);
    const Vector a = forward(m, x);
    const Vector b = forward(m, x);
    CHECK(a == b);
    for (double p : a) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
}

TEST_CASE("model validation") {
    MlpModel m = MlpModel::zeros({2, 3, 1}, OutputHead::linear);
    CHECK_NOTHROW(m.validate());
    CHECK(m.parameter_count() == 2 * 3 + 3 + 3 + 1);
    m.weights[1] = Matrix::Zero(1, 4);
    CHECK_THROWS_AS(m.validate(), ShapeError);
    CHECK_THROWS_AS(MlpModel::zeros({2, 3, 2}, OutputHead::linear).validate(), ShapeError);
}

TEST_CASE("flatten round trip") {
    Rng rng(1);
    MlpModel m = MlpModel::initialized({3, 5, 4, 1}, OutputHead::linear, rng);
    const Vector theta = m.flatten();
    CHECK(static_cast<std::size_t>(theta.size()) == m.parameter_count());
    MlpModel z = MlpModel::zeros({3, 5, 4, 1}, OutputHead::linear);
    z.unflatten(theta);
    CHECK(z.flatten() == theta);
    CHECK_THROWS_AS(z.unflatten(Vector::Zero(3)), ShapeError);
}

TEST_CASE("loss examples") {
    CHECK(loss_mse(vec({1, 2}), vec({1, 2})) == 0.0);
    CHECK(loss_mse(vec({2}), vec({0})) == 4.0);
    CHECK(loss_mse(vec({1, 3}), vec({0, 0})) == 5.0);
    CHECK(loss_rmse(vec({1, 2}), vec({1, 2})) == 0.0);
    CHECK(loss_rmse(vec({2}), vec({0})) == 2.0);
    CHECK(loss_rmse(vec({1, 3}), vec({0, 0})) == std::sqrt(5.0));
    CHECK(std::abs(loss_bce(vec({0.999999}), vec({1}))) < 1e-5);
    CHECK(std::abs(loss_bce(vec({0.5}), vec({1})) - std::numbers::ln2) < 1e-12);
    CHECK(std::abs(loss_bce(vec({0.5, 0.5}), vec({0, 1})) - std::numbers::ln2) < 1e-12);
}

TEST_CASE("loss errors and clamping") {
    CHECK_THROWS_AS(loss_mse(vec({1, 2}), vec({1})), ShapeError);
    CHECK_THROWS_AS(loss_rmse(vec({1}), vec({1, 2})), ShapeError);
    CHECK_THROWS_AS(loss_bce(vec({0.5}), vec({1, 0})), ShapeError);
    CHECK_THROWS_AS(loss_mse(Vector{}, Vector{}), ShapeError);
    const double saturated = loss_bce(vec({0.0, 1.0}), vec({1, 0}));
    CHECK(std::isfinite(saturated));
    // the upper clamp 1 - 1e-12 is not exact in binary
    const double oracle = 0.5 * (-std::log(1e-12) - std::log(1.0 - (1.0 - 1e-12)));
    CHECK(saturated == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("weighted losses") {
    CHECK(loss_mse(vec({1, 3}), vec({0, 0}), vec({2, 0})) == 1.0);
    CHECK(std::abs(loss_bce(vec({0.5, 0.9}), vec({1, 1}), vec({1, 0})) - std::numbers::ln2 / 2) < 1e-12);
}

TEST_CASE("mse is the square of rmse") {
    Rng rng(99);
    for (int k = 0; k < 50; ++k) {
        const auto n = 1 + static_cast<Eigen::Index>(rng.index(20));
        const Vector p = testing::random_vector(rng, n);
        const Vector t = testing::random_vector(rng, n);
        const double r = loss_rmse(p, t);
        CHECK(loss_mse(p, t) == doctest::Approx(r * r).epsilon(1e-14));
        CHECK(loss_mse(p, t) >= 0.0);
    }
}

TEST_CASE("backward examples") {
    Matrix x(1, 1);
    x << 1.0;
    const GradientBundle g = backward(one_layer(2.0, 0.0), x, LossKind::mse, vec({0}));
    CHECK(g.weight_grads[0](0, 0) == 4.0);
    CHECK(g.loss == 4.0);
    CHECK_FALSE(g.input_grads.has_value());

    Rng rng(3);
    const MlpModel m = MlpModel::initialized({3, 6, 1}, OutputHead::linear, rng);
    const Matrix batch = testing::random_matrix(rng, 8, 3);
    const GradientBundle zero = backward(m, batch, LossKind::mse, forward(m, batch), true);
    CHECK(zero.flatten().isZero());
    REQUIRE(zero.input_grads.has_value());
    CHECK(zero.input_grads->rows() == 8);
    CHECK(zero.input_grads->cols() == 3);
    CHECK_THROWS_AS(backward(m, batch, LossKind::mse, Vector::Zero(7)), ShapeError);
}

TEST_CASE("gradient bundle mirrors the model") {
    Rng rng(8);
    const MlpModel m = MlpModel::initialized({4, 7, 5, 1}, OutputHead::sigmoid, rng);
    const GradientBundle g = GradientBundle::zeros_like(m);
    REQUIRE(g.weight_grads.size() == m.weights.size());
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
        CHECK(g.weight_grads[l].rows() == m.weights[l].rows());
        CHECK(g.weight_grads[l].cols() == m.weights[l].cols());
        CHECK(g.bias_grads[l].size() == m.biases[l].size());
    }
}

TEST_CASE("parameter gradients match finite differences") {
    Rng rng(2024);
    for (int trial = 0; trial < 40; ++trial) {
        const int d = 1 + static_cast<int>(rng.index(4));
        const bool classify = trial % 2 == 1;
        const MlpModel m = random_model(rng, d, classify ? OutputHead::sigmoid : OutputHead::linear);
        const Matrix x = testing::random_matrix(rng, 6, d);
        Vector y(6);
        for (Eigen::Index i = 0; i < 6; ++i) {
            y[i] = classify ? static_cast<double>(rng.index(2)) : rng.normal();
        }
        const LossKind kind = classify ? LossKind::bce : LossKind::mse;
        const Vector exact = backward(m, x, kind, y).flatten();
        const Vector fd = fd_parameter_gradient(m, x, kind, y);
        CHECK(max_relative_error(exact, fd) < 1e-4);
    }
}

TEST_CASE("input gradients match finite differences") {
    Rng rng(77);
    for (int trial = 0; trial < 40; ++trial) {
        const int d = 1 + static_cast<int>(rng.index(5));
        const MlpModel m = random_model(rng, d, trial % 2 ? OutputHead::sigmoid : OutputHead::linear);
        const Matrix x = testing::random_matrix(rng, 5, d);
        CHECK(max_relative_error(input_gradient(m, x), fd_input_gradient(m, x)) < 1e-4);
        const auto both = forward_with_input_gradient(m, x);
        CHECK(both.values == forward(m, x));
        CHECK(both.gradients == input_gradient(m, x));
    }
}

TEST_CASE("input gradient examples") {
    Matrix x(4, 3);
    x << 1, 2, 3, -4, 0, 2, 0, 0, 0, 9, 9, -9;
    CHECK(input_gradient(MlpModel::zeros({3, 5, 1}, OutputHead::linear), x).isZero());
    MlpModel affine = MlpModel::zeros({3, 1}, OutputHead::linear);
    affine.weights[0] << 0.5, -2.0, 3.0;
    affine.biases[0] << 1.0;
    const Matrix g = input_gradient(affine, x);
    for (Eigen::Index i = 0; i < 4; ++i) {
        CHECK(g.row(i) == affine.weights[0]);
    }
}

TEST_CASE("adam with a zero gradient leaves parameters unchanged") {
    Rng rng(4);
    MlpModel m = MlpModel::initialized({2, 3, 1}, OutputHead::linear, rng);
    const Vector before = m.flatten();
    AdamState s = AdamState::for_model(m);
    adam_step(m, GradientBundle::zeros_like(m), s);
    CHECK(m.flatten() == before);
    CHECK(s.step_count == 1);
}

TEST_CASE("adam first and second steps") {
    // scalar oracle of the bias-corrected recurrence
    const AdamSettings a{0.01, 0.9, 0.999, 1e-8};
    const double g = -3.0;
    MlpModel m = one_layer(1.0, 0.5);
    AdamState s = AdamState::for_model(m, a);
    CHECK(s.weight_m[0].isZero());
    CHECK(s.weight_v[0].isZero());
    GradientBundle grads = GradientBundle::zeros_like(m);
    grads.weight_grads[0](0, 0) = g;
    grads.bias_grads[0][0] = 2.0;
    adam_step(m, grads, s);
    CHECK(std::abs(m.weights[0](0, 0) - (1.0 + a.learning_rate)) < 1e-8);
    CHECK(std::abs(m.biases[0][0] - (0.5 - a.learning_rate)) < 1e-8);

    const double m1 = (1 - a.beta1) * g;
    const double v1 = (1 - a.beta2) * g * g;
    const double m2 = a.beta1 * m1 + (1 - a.beta1) * g;
    const double v2 = a.beta2 * v1 + (1 - a.beta2) * g * g;
    const double mhat = m2 / (1 - a.beta1 * a.beta1);
    const double vhat = v2 / (1 - a.beta2 * a.beta2);
    const double step2 = a.learning_rate * mhat / (std::sqrt(vhat) + a.epsilon);
    const double w1 = m.weights[0](0, 0);
    adam_step(m, grads, s);
    CHECK(s.step_count == 2);
    CHECK(std::abs((m.weights[0](0, 0) - w1) - (-step2)) < 1e-15);
}

TEST_CASE("adam rejects mismatched gradients") {
    MlpModel m = MlpModel::zeros({2, 3, 1}, OutputHead::linear);
    AdamState s = AdamState::for_model(m);
    const GradientBundle other = GradientBundle::zeros_like(MlpModel::zeros({2, 4, 1}, OutputHead::linear));
    CHECK_THROWS_AS(adam_step(m, other, s), ShapeError);
}

TEST_CASE("training with zero learning rate is bit-identical") {
    Rng rng(6);
    MlpModel m = MlpModel::initialized({3, 8, 1}, OutputHead::linear, rng);
    nn::LabeledDataset data{testing::random_matrix(rng, 50, 3), testing::random_vector(rng, 50), {}};
    const Vector before = m.flatten();
    TrainSettings ts;
    ts.epochs = 5;
    ts.batch_size = 16;
    ts.adam.learning_rate = 0.0;
    const TrainResult r = train(m, data, ts);
    CHECK(m.flatten() == before);
    CHECK(r.history.size() == 5);
    CHECK(r.adam_steps == 5 * 4);
}

TEST_CASE("training on a constant target") {
    Rng rng(10);
    MlpModel m = MlpModel::initialized({2, 16, 1}, OutputHead::linear, rng);
    nn::LabeledDataset data{testing::random_matrix(rng, 200, 2), Vector::Constant(200, 1.5), {}};
    TrainSettings ts;
    ts.epochs = 3000;
    ts.batch_size = 50;
    ts.adam.learning_rate = 1e-2;
    ts.schedule = LrSchedule::cosine;
    const TrainResult r = train(m, data, ts);
    CHECK(evaluate_loss(m, data) < 1e-3);
    CHECK(r.history.back().train_loss < 1e-2);
}

TEST_CASE("training on separable data") {
    // two clusters with margin; labels by the sign of x0 + x1
    Rng rng(12);
    const int n = 200;
    Matrix x(n, 2);
    Vector y(n);
    for (int i = 0; i < n; ++i) {
        double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1);
        const double s = a + b;
        if (std::abs(s) < 0.3) {
            const double shift = (s >= 0 ? 0.3 : -0.3) - s;
            a += shift / 2;
            b += shift / 2;
        }
        x(i, 0) = a;
        x(i, 1) = b;
        y[i] = a + b > 0 ? 1.0 : 0.0;
    }
    MlpModel m = MlpModel::initialized({2, 16, 1}, OutputHead::sigmoid, rng);
    TrainSettings ts;
    ts.epochs = 300;
    ts.batch_size = 32;
    ts.adam.learning_rate = 1e-2;
    nn::LabeledDataset data{x, y, {}};
    train(m, data, ts);
    CHECK(evaluate_loss(m, data) < 0.1);
    const Vector p = forward(m, x);
    int correct = 0;
    for (int i = 0; i < n; ++i) correct += (p[i] >= 0.5) == (y[i] == 1.0);
    CHECK(correct == n);
}

TEST_CASE("training records test loss and checks its inputs") {
    Rng rng(13);
    MlpModel m = MlpModel::initialized({2, 4, 1}, OutputHead::linear, rng);
    nn::LabeledDataset data{testing::random_matrix(rng, 20, 2), testing::random_vector(rng, 20), {}};
    nn::LabeledDataset test{testing::random_matrix(rng, 10, 2), testing::random_vector(rng, 10), {}};
    TrainSettings ts;
    ts.epochs = 3;
    const TrainResult r = train(m, data, ts, &test);
    for (const auto& e : r.history) {
        REQUIRE(e.test_loss.has_value());
        CHECK(std::isfinite(*e.test_loss));
    }
    CHECK(r.history.back().test_loss.value() == doctest::Approx(evaluate_loss(m, test)));
    nn::LabeledDataset empty{Matrix(0, 2), Vector(0), {}};
    CHECK_THROWS_AS(train(m, empty, ts), TrainingError);
    nn::LabeledDataset wrong{Matrix::Zero(5, 3), Vector::Zero(5), {}};
    CHECK_THROWS_AS(train(m, wrong, ts), ShapeError);
}

TEST_CASE("training aborts on a non-finite loss") {
    MlpModel m = MlpModel::zeros({1, 1}, OutputHead::linear);
    Matrix x(2, 1);
    x << 1.0, 2.0;
    nn::LabeledDataset data{x, vec({std::nan(""), 0.0}), {}};
    TrainSettings ts;
    ts.epochs = 1;
    CHECK_THROWS_AS(train(m, data, ts), TrainingError);
}

TEST_CASE("training is deterministic for a fixed seed") {
    Rng rng(14);
    const MlpModel init = MlpModel::initialized({3, 8, 1}, OutputHead::linear, rng);
    nn::LabeledDataset data{testing::random_matrix(rng, 64, 3), testing::random_vector(rng, 64), {}};
    TrainSettings ts;
    ts.epochs = 4;
    ts.batch_size = 10;
    ts.seed = 42;
    MlpModel a = init, b = init;
    train(a, data, ts);
    train(b, data, ts);
    CHECK(a.flatten() == b.flatten());
}
