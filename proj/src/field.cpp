#include "dido/field.hpp"

namespace dido {

MlpField::MlpField(nn::MlpModel model) : model_(std::move(model)) { model_.validate(); }

Vector MlpField::values(const Matrix& points) const { return nn::forward(model_, points); }

FieldEvaluation MlpField::evaluate(const Matrix& points) const {
    auto out = nn::forward_with_input_gradient(model_, points);
    return FieldEvaluation{std::move(out.values), std::move(out.gradients)};
}

AffineInputField::AffineInputField(FieldPtr inner, Vector scale, Vector offset)
    : inner_(std::move(inner)), scale_(std::move(scale)), offset_(std::move(offset)) {
    if (!inner_ || scale_.size() != inner_->dim() || offset_.size() != inner_->dim()) {
        throw ShapeError("affine field: scale/offset must match the inner field dimension");
    }
}

Matrix AffineInputField::map(const Matrix& points) const {
    require_columns(points, scale_.size(), "affine field");
    Matrix mapped = points.array().rowwise() * scale_.transpose().array();
    mapped.rowwise() += offset_.transpose();
    return mapped;
}

Vector AffineInputField::values(const Matrix& points) const { return inner_->values(map(points)); }

FieldEvaluation AffineInputField::evaluate(const Matrix& points) const {
    FieldEvaluation e = inner_->evaluate(map(points));
    e.gradients.array().rowwise() *= scale_.transpose().array();
    return e;
}

FunctionField::FunctionField(int dim, ValueFn value, GradFn gradient)
    : dim_(dim), value_(std::move(value)), gradient_(std::move(gradient)) {}

Vector FunctionField::values(const Matrix& points) const {
    require_columns(points, dim_, "function field");
    Vector out(points.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        out[i] = value_(points.row(i).transpose());
    }
    return out;
}

FieldEvaluation FunctionField::evaluate(const Matrix& points) const {
    require_columns(points, dim_, "function field");
    FieldEvaluation e{Vector(points.rows()), Matrix(points.rows(), dim_)};
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const Vector x = points.row(i).transpose();
        e.values[i] = value_(x);
        e.gradients.row(i) = gradient_(x).transpose();
    }
    return e;
}

FieldPtr on_raw_coordinates(FieldPtr standardized_field, const Standardizer& stats) {
    // z = (x - mean) / scale
    Vector a = stats.scale.cwiseInverse();
    Vector c = -stats.mean.cwiseQuotient(stats.scale);
    return std::make_shared<AffineInputField>(std::move(standardized_field), std::move(a),
                                              std::move(c));
}

FieldPtr on_standardized_coordinates(FieldPtr raw_field, const Standardizer& stats) {
    // x = scale * z + mean
    return std::make_shared<AffineInputField>(std::move(raw_field), stats.scale, stats.mean);
}

}  // namespace dido
