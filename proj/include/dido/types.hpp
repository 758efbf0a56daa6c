#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dido {

/// Batches are n rows (points) by d columns (coordinates).
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Mismatched dimensions between a model, a batch or a target vector.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// An argument outside the domain of the operation (degenerate box, barrier
/// evaluated outside the surrogate feasible region, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Failure reported by a feasibility or objective oracle.
class OracleError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

class SamplingError : public Error {
public:
    using Error::Error;
};

/// Axis-aligned box [lower, upper] in R^d.
struct Box {
    Vector lower;
    Vector upper;

    static Box cube(int dim, double half_width);

    int dim() const { return static_cast<int>(lower.size()); }
    /// Throws DomainError if the bounds are non-finite or lower >= upper on any axis.
    void validate() const;
    bool contains(const Vector& x) const;
    double diagonal() const;
    /// Projects every row of `points` into the box, in place.
    void clamp_rows(Matrix& points) const;
};

/// Per-coordinate affine standardization z = (x - mean) / scale.
struct Standardizer {
    Vector mean;
    Vector scale;

    static Standardizer identity(int dim);
    /// Column means and population standard deviations; zero-variance columns
    /// get scale 1.
    static Standardizer fit(const Matrix& rows);

    int dim() const { return static_cast<int>(mean.size()); }
    Matrix apply(const Matrix& rows) const;
    Matrix invert(const Matrix& rows) const;
    Vector apply_point(const Vector& x) const;
    Vector invert_point(const Vector& z) const;
};

/// Scalar version of Standardizer used for regression targets.
struct TargetStandardizer {
    double mean = 0.0;
    double scale = 1.0;
    bool degenerate = false;  // zero target variance

    static TargetStandardizer fit(const Vector& targets);

    Vector apply(const Vector& y) const;
    Vector invert(const Vector& z) const;
    double apply(double y) const { return (y - mean) / scale; }
    double invert(double z) const { return z * scale + mean; }
};

void require_columns(const Matrix& batch, Eigen::Index expected, const char* what);

}  // namespace dido
