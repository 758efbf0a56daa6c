#pragma once

#include "dido/nn.hpp"
#include "dido/types.hpp"

#include <functional>
#include <memory>

namespace dido {

struct FieldEvaluation {
    Vector values;
    Matrix gradients;  // one gradient row per batch row
};

/// Differentiable scalar function evaluated on batches of points. Implementations
/// must be safe to call concurrently (const evaluation only).
class ScalarField {
public:
    virtual ~ScalarField() = default;
    virtual int dim() const = 0;
    virtual Vector values(const Matrix& points) const = 0;
    virtual FieldEvaluation evaluate(const Matrix& points) const = 0;
};

using FieldPtr = std::shared_ptr<const ScalarField>;

/// An MLP seen as a field on its own input coordinates.
class MlpField final : public ScalarField {
public:
    explicit MlpField(nn::MlpModel model);

    int dim() const override { return model_.input_dim(); }
    Vector values(const Matrix& points) const override;
    FieldEvaluation evaluate(const Matrix& points) const override;
    const nn::MlpModel& model() const { return model_; }

private:
    nn::MlpModel model_;
};

/// h(x) = inner(scale * x + offset) (elementwise), gradient scale * inner'.
class AffineInputField final : public ScalarField {
public:
    AffineInputField(FieldPtr inner, Vector scale, Vector offset);

    int dim() const override { return static_cast<int>(scale_.size()); }
    Vector values(const Matrix& points) const override;
    FieldEvaluation evaluate(const Matrix& points) const override;

private:
    Matrix map(const Matrix& points) const;

    FieldPtr inner_;
    Vector scale_;
    Vector offset_;
};

/// Field defined by per-point callbacks; used for analytic fields.
class FunctionField final : public ScalarField {
public:
    using ValueFn = std::function<double(const Vector&)>;
    using GradFn = std::function<Vector(const Vector&)>;

    FunctionField(int dim, ValueFn value, GradFn gradient);

    int dim() const override { return dim_; }
    Vector values(const Matrix& points) const override;
    FieldEvaluation evaluate(const Matrix& points) const override;

private:
    int dim_;
    ValueFn value_;
    GradFn gradient_;
};

/// Field on raw coordinates for a model trained on standardized inputs.
FieldPtr on_raw_coordinates(FieldPtr standardized_field, const Standardizer& stats);
/// Field on standardized coordinates for a function of raw coordinates.
FieldPtr on_standardized_coordinates(FieldPtr raw_field, const Standardizer& stats);

}  // namespace dido
