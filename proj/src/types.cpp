#include "dido/types.hpp"

#include <cmath>
#include <sstream>

namespace dido {

Box Box::cube(int dim, double half_width) {
    if (dim < 1) {
        throw DomainError("box dimension must be positive");
    }
    return Box{Vector::Constant(dim, -half_width), Vector::Constant(dim, half_width)};
}

void Box::validate() const {
    if (lower.size() == 0 || lower.size() != upper.size()) {
        throw DomainError("box bounds must be nonempty and of equal length");
    }
    for (Eigen::Index i = 0; i < lower.size(); ++i) {
        if (!std::isfinite(lower[i]) || !std::isfinite(upper[i])) {
            std::ostringstream msg;
            msg << "box axis " << i << " has non-finite bounds";
            throw DomainError(msg.str());
        }
        if (!(lower[i] < upper[i])) {
            std::ostringstream msg;
            msg << "degenerate box: axis " << i << " has lower " << lower[i] << " >= upper "
                << upper[i];
            throw DomainError(msg.str());
        }
    }
}

bool Box::contains(const Vector& x) const {
    if (x.size() != lower.size()) {
        return false;
    }
    return (x.array() >= lower.array()).all() && (x.array() <= upper.array()).all();
}

double Box::diagonal() const { return (upper - lower).norm(); }

void Box::clamp_rows(Matrix& points) const {
    require_columns(points, lower.size(), "clamp box");
    for (Eigen::Index j = 0; j < points.cols(); ++j) {
        points.col(j) = points.col(j).cwiseMax(lower[j]).cwiseMin(upper[j]);
    }
}

Standardizer Standardizer::identity(int dim) {
    return Standardizer{Vector::Zero(dim), Vector::Ones(dim)};
}

Standardizer Standardizer::fit(const Matrix& rows) {
    if (rows.rows() == 0) {
        throw DomainError("cannot fit standardization on an empty batch");
    }
    Standardizer s;
    s.mean = rows.colwise().mean().transpose();
    s.scale.resize(rows.cols());
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
        const double var = (rows.col(j).array() - s.mean[j]).square().mean();
        const double sd = std::sqrt(var);
        s.scale[j] = sd > 0.0 ? sd : 1.0;
    }
    return s;
}

Matrix Standardizer::apply(const Matrix& rows) const {
    require_columns(rows, mean.size(), "standardizer");
    return (rows.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
}

Matrix Standardizer::invert(const Matrix& rows) const {
    require_columns(rows, mean.size(), "standardizer");
    Matrix out = rows.array().rowwise() * scale.transpose().array();
    out.rowwise() += mean.transpose();
    return out;
}

Vector Standardizer::apply_point(const Vector& x) const {
    if (x.size() != mean.size()) {
        throw ShapeError("standardizer: point dimension mismatch");
    }
    return ((x - mean).array() / scale.array()).matrix();
}

Vector Standardizer::invert_point(const Vector& z) const {
    if (z.size() != mean.size()) {
        throw ShapeError("standardizer: point dimension mismatch");
    }
    return (z.array() * scale.array()).matrix() + mean;
}

TargetStandardizer TargetStandardizer::fit(const Vector& targets) {
    if (targets.size() == 0) {
        throw DomainError("cannot fit target standardization on an empty vector");
    }
    TargetStandardizer s;
    s.mean = targets.mean();
    const double sd = std::sqrt((targets.array() - s.mean).square().mean());
    if (sd > 0.0) {
        s.scale = sd;
    } else {
        s.scale = 1.0;
        s.degenerate = true;
    }
    return s;
}

Vector TargetStandardizer::apply(const Vector& y) const {
    return ((y.array() - mean) / scale).matrix();
}

Vector TargetStandardizer::invert(const Vector& z) const {
    return (z.array() * scale + mean).matrix();
}

void require_columns(const Matrix& batch, Eigen::Index expected, const char* what) {
    if (batch.cols() != expected) {
        std::ostringstream msg;
        msg << what << ": expected " << expected << " columns, got " << batch.cols();
        throw ShapeError(msg.str());
    }
}

}  // namespace dido
