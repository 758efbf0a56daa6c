#include "helpers.hpp"

#include "dido/external_problem.hpp"
#include "dido/lmc.hpp"
#include "dido/optimizer.hpp"
#include "dido/pipeline.hpp"
#include "dido/runtime.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

using namespace dido;
namespace pl = dido::pipeline;
namespace fs = std::filesystem;
using Eigen::Index;

#ifndef DIDO_TEST_DATA_DIR
#error "DIDO_TEST_DATA_DIR must point at tests/data"
#endif

namespace {

// tolerances
constexpr double kHarmonicBest = -0.9;
constexpr double kHarmonicMinutes = 30.0;
constexpr double kTrainRmse = 0.02;
constexpr double kTestRmse = 0.05;
constexpr double kClassifierAccuracy = 0.95;
constexpr int kClassifierIterations = 15;
constexpr double kRadialLo = 0.9, kRadialHi = 1.1, kRadialFraction = 0.95;
constexpr double kTrendAllowance = 0.02;
constexpr double kLmcMean = 0.05, kLmcVariance = 0.10, kLmcSeconds = 120.0;
constexpr double kGradientError = 1e-4;
constexpr double kLossTolerance = 1e-12;
constexpr double kDiscObjective = 0.05, kDiscBoundary = 0.05;
constexpr double kMedianProbability = 0.9;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string strf(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

double best_objective(const pl::RunAllResult& r) {
    const auto* b = r.optimize.report.best_feasible();
    return b ? *b->true_objective : INFINITY;
}

double outer_crossing(const ScalarField& raw, const Vector& u, double r_max, int scan = 3000) {
    // outermost r with f(r u) >= 0.5, refined by bisection
    double last_in = std::nan("");
    Matrix x(1, u.size());
    for (int k = scan; k >= 0; --k) {
        const double r = r_max * k / scan;
        x.row(0) = (r * u).transpose();
        if (raw.values(x)[0] >= 0.5) {
            last_in = r;
            break;
        }
    }
    if (std::isnan(last_in) || last_in >= r_max) return last_in;
    double lo = last_in, hi = last_in + r_max / scan;
    for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        x.row(0) = (mid * u).transpose();
        (raw.values(x)[0] >= 0.5 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// shared runs -------------------------------------------------------------

struct HarmonicRun {
    pl::PipelineConfig config;
    pl::RunAllResult result;
    double seconds = 0.0;
};

const HarmonicRun& harmonic10() {
    static const HarmonicRun run = [] {
        HarmonicRun h;
        h.config = pl::default_config(pl::ProblemKind::harmonic_ball, 10);
        h.config.output_dir = testing::temp_dir("acceptance-harmonic10");
        const auto t0 = std::chrono::steady_clock::now();
        h.result = pl::run_all(h.config);
        h.seconds = seconds_since(t0);
        return h;
    }();
    return run;
}

const pl::RunAllResult& disc_run(const std::string& name) {
    static std::map<std::string, pl::RunAllResult> cache;
    if (auto it = cache.find(name); it != cache.end()) return it->second;
    pl::PipelineConfig c = pl::default_config(pl::ProblemKind::disc_quadratic, 2);
    c.output_dir = testing::temp_dir(name);
    return cache.emplace(name, pl::run_all(c)).first->second;
}

// criteria ----------------------------------------------------------------

Outcome ac1() {
    const HarmonicRun& h = harmonic10();
    const double best = best_objective(h.result);
    const bool main_ok = best <= kHarmonicBest && h.seconds <= kHarmonicMinutes * 60.0;

    pl::PipelineConfig c = pl::default_config(pl::ProblemKind::harmonic_ball, 100);
    c.output_dir = testing::temp_dir("acceptance-harmonic100");
    c.classifier.n0 = 2000;
    c.classifier.n1 = 1000;
    c.classifier.n_eval = 500;
    c.classifier.hidden = {128, 64};
    c.classifier.max_iterations = 3;
    c.classifier.initial_train.epochs = 150;
    c.classifier.retrain.epochs = 80;
    c.surrogate.n_target = 1000;
    c.surrogate.n_test = 200;
    c.surrogate.hidden = {128, 64};
    c.surrogate.train.epochs = 200;
    c.optimizer.max_starts = 200;
    c.optimizer.max_steps = 300;
    const auto t0 = std::chrono::steady_clock::now();
    bool smoke_ok = false;
    std::string smoke;
    try {
        const auto r = pl::run_all(c);
        const auto& ds = r.surrogate.dataset;
        double best_train = INFINITY;
        for (std::size_t i : r.surrogate.fit.train_indices) {
            best_train = std::min(best_train, ds.raw_targets[static_cast<Index>(i)]);
        }
        const double b = best_objective(r);
        smoke_ok = b < best_train;
        smoke = strf("d=100 smoke best %.4f vs best training sample %.4f in %.0f s", b, best_train,
                    seconds_since(t0));
    } catch (const std::exception& e) {
        smoke = std::string("d=100 smoke failed: ") + e.what();
    }
    return {main_ok && smoke_ok,
            strf("d=10 best true objective %.4f (<= %.2f) in %.1f min (<= %.0f); ", best, kHarmonicBest,
                h.seconds / 60.0, kHarmonicMinutes) +
                smoke};
}

Outcome ac2() {
    const auto& fit = harmonic10().result.surrogate.fit;
    return {fit.train_rmse <= kTrainRmse && fit.test_rmse <= kTestRmse,
            strf("normalized RMSE train %.4f (<= %.2f), test %.4f (<= %.2f) on %zu / %zu points",
                fit.train_rmse, kTrainRmse, fit.test_rmse, kTestRmse, fit.train_indices.size(),
                fit.test_indices.size())};
}

Outcome ac3() {
    const auto& st = harmonic10().result.classifier.state;
    const bool reached = st.converged && st.final_accuracy >= kClassifierAccuracy &&
                         static_cast<int>(st.history.size()) <= kClassifierIterations;
    const FieldPtr raw = st.raw_field();
    Rng rng(303);
    int inside = 0;
    for (int k = 0; k < 200; ++k) {
        const double r = outer_crossing(*raw, testing::random_direction(rng, 10), 2.0);
        if (r >= kRadialLo && r <= kRadialHi) ++inside;
    }
    return {reached && inside >= static_cast<int>(std::ceil(kRadialFraction * 200)),
            strf("accuracy %.4f after %zu iterations; crossing in [%.1f, %.1f] on %d of 200 directions",
                st.final_accuracy, st.history.size(), kRadialLo, kRadialHi, inside)};
}

Outcome ac4() {
    pl::PipelineConfig c = pl::default_config(pl::ProblemKind::harmonic_ball, 10);
    c.seed = 4;
    auto k = pl::classifier_config(c, harmonic_ball_problem(10));
    k.accuracy_threshold = 1.0;  // run every iteration
    k.max_iterations = 6;
    const DataInformedProblem oracle = harmonic_ball_problem(10);
    const auto st = classifier::iterate_classifier(oracle, k, pl::stage_seed(c, "classifier"));
    std::vector<double> acc;
    std::string seq;
    for (const auto& h : st.history) {
        acc.push_back(h.accuracy);
        seq += strf("%s%.4f", seq.empty() ? "" : " ", h.accuracy);
    }
    bool ok = acc.size() >= 3 && std::abs(k.perturb_sigma * k.perturb_sigma - 0.1) < 1e-12;
    for (std::size_t i = 0; i + 2 < acc.size(); ++i) {
        for (std::size_t a = i; a < i + 3; ++a) {
            for (std::size_t b = a + 1; b < i + 3; ++b) {
                if (acc[b] < acc[a] - kTrendAllowance) ok = false;
            }
        }
    }
    return {ok, "accuracy at sigma^2 = 0.1: " + seq};
}

Outcome ac5() {
    const lmc::FunctionEnergy e([](const Matrix& x) {
        lmc::EnergyBatch b;
        b.values = 0.5 * x.rowwise().squaredNorm();
        b.gradients = x;
        return b;
    });
    lmc::LmcConfig c{.step_size = 1e-3, .inverse_temperature = 1.0, .total_steps = 10000};
    const auto t0 = std::chrono::steady_clock::now();
    const auto run = lmc::lmc_run(Matrix::Zero(10000, 2), e, c, 55);
    const double secs = seconds_since(t0);
    const Matrix& x = run.final_states;
    bool ok = secs <= kLmcSeconds;
    std::string detail;
    for (Index j = 0; j < 2; ++j) {
        const double mean = x.col(j).mean();
        const double var = (x.col(j).array() - mean).square().mean();
        ok = ok && std::abs(mean) <= kLmcMean && std::abs(var - 1.0) <= kLmcVariance;
        detail += strf("coordinate %d mean %+.4f variance %.4f; ", static_cast<int>(j), mean, var);
    }
    return {ok, detail + strf("%.1f s", secs)};
}

Outcome ac6() {
    Rng rng(606);
    int param_ok = 0, input_ok = 0, barrier_ok = 0;
    const double h = 1e-5;
    auto close = [](double a, double b) { return testing::relative_error(a, b, 1e-6) < kGradientError; };
    for (int k = 0; k < 100; ++k) {
        const int d = 1 + static_cast<int>(rng.index(5));
        const bool bce = k % 2 == 1;
        const auto head = bce ? nn::OutputHead::sigmoid : nn::OutputHead::linear;
        nn::MlpModel m = nn::MlpModel::initialized({d, 6, 4, 1}, head, rng);
        const Matrix x = testing::random_matrix(rng, 5, d);
        Vector y(5);
        for (Index i = 0; i < 5; ++i) y[i] = bce ? static_cast<double>(rng.index(2)) : rng.normal();
        const auto loss_kind = bce ? nn::LossKind::bce : nn::LossKind::mse;
        auto loss = [&](const nn::MlpModel& mm, const Matrix& xx) {
            const Vector p = nn::forward(mm, xx);
            return bce ? nn::loss_bce(p, y) : nn::loss_mse(p, y);
        };
        const auto g = nn::backward(m, x, loss_kind, y, true);
        // one random parameter
        const Vector theta = m.flatten();
        const Vector grad = g.flatten();
        const auto p = static_cast<Index>(rng.index(static_cast<std::uint64_t>(theta.size())));
        nn::MlpModel up = m, down = m;
        Vector tu = theta, td = theta;
        tu[p] += h;
        td[p] -= h;
        up.unflatten(tu);
        down.unflatten(td);
        if (close(grad[p], (loss(up, x) - loss(down, x)) / (2 * h))) ++param_ok;
        // one random input coordinate
        const auto i = static_cast<Index>(rng.index(5));
        const auto j = static_cast<Index>(rng.index(static_cast<std::uint64_t>(d)));
        Matrix xu = x, xd = x;
        xu(i, j) += h;
        xd(i, j) -= h;
        if (close((*g.input_grads)(i, j), (loss(m, xu) - loss(m, xd)) / (2 * h))) ++input_ok;
        // barrier composition
        nn::MlpModel reg = nn::MlpModel::initialized({d, 8, 1}, nn::OutputHead::linear, rng);
        nn::MlpModel cls = nn::MlpModel::initialized({d, 8, 1}, nn::OutputHead::sigmoid, rng);
        cls.biases.back()[0] = 3.0;
        const MlpField fo(reg), fc(cls);
        Matrix z = testing::random_matrix(rng, 1, d, 0.3);
        while (fc.values(z)[0] <= 0.55) z *= 0.5;
        const double t = std::pow(10.0, rng.uniform(0.0, 2.0));
        const auto b = optimizer::barrier_value_and_grad(fo, fc, z, t);
        const auto jj = static_cast<Index>(rng.index(static_cast<std::uint64_t>(d)));
        Matrix zu = z, zd = z;
        zu(0, jj) += h;
        zd(0, jj) -= h;
        const double fd = (optimizer::barrier_value_and_grad(fo, fc, zu, t).values[0] -
                           optimizer::barrier_value_and_grad(fo, fc, zd, t).values[0]) / (2 * h);
        if (close(b.gradients(0, jj), fd)) ++barrier_ok;
    }
    return {param_ok == 100 && input_ok == 100 && barrier_ok == 100,
            strf("finite-difference agreement: parameters %d/100, inputs %d/100, barrier %d/100",
                param_ok, input_ok, barrier_ok)};
}

Outcome ac7() {
    auto v = [](std::initializer_list<double> xs) {
        Vector r(static_cast<Index>(xs.size()));
        Index i = 0;
        for (double x : xs) r[i++] = x;
        return r;
    };
    int ok = 0, total = 0;
    auto check = [&](bool c) { ++total; ok += c ? 1 : 0; };
    check(nn::loss_mse(v({1, 2}), v({1, 2})) == 0.0);
    check(nn::loss_mse(v({2}), v({0})) == 4.0);
    check(nn::loss_mse(v({1, 3}), v({0, 0})) == 5.0);
    check(nn::loss_rmse(v({1, 2}), v({1, 2})) == 0.0);
    check(nn::loss_rmse(v({2}), v({0})) == 2.0);
    check(std::abs(nn::loss_rmse(v({1, 3}), v({0, 0})) - std::sqrt(5.0)) <= kLossTolerance);
    check(std::abs(nn::loss_bce(v({0.999999}), v({1}))) < 1e-5);
    check(std::abs(nn::loss_bce(v({0.5}), v({1})) - std::numbers::ln2) <= kLossTolerance);
    check(std::abs(nn::loss_bce(v({0.5, 0.5}), v({0, 1})) - std::numbers::ln2) <= kLossTolerance);
    return {ok == total, strf("%d of %d loss examples match", ok, total)};
}

Outcome ac8() {
    const auto& r = disc_run("acceptance-disc-a");
    const DataInformedProblem disc = disc_quadratic_problem();
    double grid_min = INFINITY;
    const int n = 400;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const Vector x = (Vector(2) << -1.0 + 2.0 * i / (n - 1), -1.0 + 2.0 * j / (n - 1)).finished();
            if (in_unit_ball(x)) grid_min = std::min(grid_min, harmonic_objective(x));
        }
    }
    const double best = best_objective(r);
    const FieldPtr raw = r.classifier.state.raw_field();
    double worst = 0.0;
    for (int k = 0; k < 360; ++k) {
        const double a = 2.0 * std::numbers::pi * k / 360;
        const double rc = outer_crossing(*raw, (Vector(2) << std::cos(a), std::sin(a)).finished(), 2.0);
        worst = std::max(worst, std::isnan(rc) ? INFINITY : std::abs(rc - 1.0));
    }
    return {std::abs(best - grid_min) <= kDiscObjective && worst < kDiscBoundary,
            strf("best %.4f vs grid minimum %.4f (<= %.2f apart); max boundary deviation %.4f on 360 rays "
                "(< %.2f)",
                best, grid_min, kDiscObjective, worst, kDiscBoundary)};
}

Outcome ac9() {
    const auto& rep = harmonic10().result.optimize.report;
    const DataInformedProblem fresh = harmonic_ball_problem(10);
    std::vector<double> probs;
    bool partition = !rep.candidates.empty();
    std::size_t false_feasible = 0;
    for (const auto& c : rep.candidates) {
        probs.push_back(c.classifier_probability);
        const bool truth = fresh.is_feasible(c.point);
        partition = partition && c.true_feasible == truth && c.true_objective.has_value() == truth &&
                    c.classifier_probability >= 0.5;
        if (truth) partition = partition && *c.true_objective == fresh.objective(c.point);
        if (!truth) ++false_feasible;
    }
    partition = partition && false_feasible == rep.falsely_feasible &&
                std::abs(rep.false_feasible_fraction -
                         static_cast<double>(false_feasible) / static_cast<double>(rep.candidates.size())) < 1e-15;
    std::sort(probs.begin(), probs.end());
    const double median = probs.empty() ? INFINITY
                          : probs.size() % 2 ? probs[probs.size() / 2]
                                             : 0.5 * (probs[probs.size() / 2 - 1] + probs[probs.size() / 2]);
    return {median < kMedianProbability && partition,
            strf("median candidate probability %.4f (< %.1f); %zu of %zu candidates falsely feasible; "
                "partition %s",
                median, kMedianProbability, false_feasible, rep.candidates.size(),
                partition ? "consistent" : "inconsistent")};
}

Outcome ac10() {
    ExternalCommandConfig cfg;
    cfg.command_template = std::string("sh ") + DIDO_TEST_DATA_DIR + "/ball_stub.sh {input} {output}";
    cfg.dimension = 3;
    cfg.workdir = testing::temp_dir("acceptance-external");
    cfg.timeout_seconds = 30.0;
    const ExternalProblem ext = external_problem_from_command(cfg);
    const DataInformedProblem ball = harmonic_ball_problem(3);
    Rng rng(1010);
    const Matrix x = testing::random_matrix(rng, 100, 3, 0.7);
    int agree = 0;
    for (Index i = 0; i < x.rows(); ++i) {
        const Vector xi = x.row(i).transpose();
        const bool f = ext.problem.is_feasible(xi);
        bool same = f == ball.is_feasible(xi);
        if (same && f) same = std::abs(ext.problem.objective(xi) - ball.objective(xi)) < 1e-12;
        agree += same ? 1 : 0;
    }
    const auto before = ext.stats().invocations;
    ext.problem.is_feasible(x.row(0).transpose());
    const bool cached = ext.stats().invocations == before;

    int failures = 0;
    auto expect_failure = [&](const std::string& command, double timeout, int code) {
        ExternalCommandConfig c = cfg;
        c.command_template = command;
        c.timeout_seconds = timeout;
        try {
            external_problem_from_command(c).problem.is_feasible(Vector::Zero(3));
        } catch (const ExternalCommandError& e) {
            if (code == 0 || e.exit_code() == code) ++failures;
        }
    };
    expect_failure("exit 3", 30.0, 3);
    expect_failure("sleep 30", 0.3, -1);
    expect_failure("echo maybe > {output}", 30.0, 0);
    expect_failure("true", 30.0, 0);
    return {agree == 100 && cached && failures == 4,
            strf("%d/100 points agree with the built-in ball; cache hit %s; %d/4 failure paths reported",
                agree, cached ? "yes" : "no", failures)};
}

Outcome ac11() {
    const auto& a = disc_run("acceptance-disc-a");
    const auto& b = disc_run("acceptance-disc-b");
    bool same = a.optimize.report.candidates.size() == b.optimize.report.candidates.size();
    for (std::size_t i = 0; same && i < a.optimize.report.candidates.size(); ++i) {
        const auto& ca = a.optimize.report.candidates[i];
        const auto& cb = b.optimize.report.candidates[i];
        same = ca.start_index == cb.start_index && ca.point == cb.point;
    }
    int csv = 0, csv_same = 0;
    const fs::path da = testing::temp_dir_path("acceptance-disc-a");
    const fs::path db = testing::temp_dir_path("acceptance-disc-b");
    for (const auto& e : fs::recursive_directory_iterator(da)) {
        if (e.path().extension() != ".csv") continue;
        ++csv;
        const fs::path other = db / fs::relative(e.path(), da);
        if (fs::exists(other) && testing::slurp(e.path()) == testing::slurp(other)) ++csv_same;
    }
    return {same && csv > 0 && csv == csv_same,
            strf("rankings %s over %zu candidates; %d of %d CSV files identical", same ? "identical" : "differ",
                a.optimize.report.candidates.size(), csv_same, csv)};
}

}  // namespace

int main() {
    tune_allocator();
    spdlog::set_level(spdlog::level::warn);
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"AC1", ac1}, {"AC2", ac2}, {"AC3", ac3},  {"AC4", ac4},  {"AC5", ac5}, {"AC6", ac6},
        {"AC7", ac7}, {"AC8", ac8}, {"AC9", ac9}, {"AC10", ac10}, {"AC11", ac11}};
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::printf("%s %s %s\n", name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
