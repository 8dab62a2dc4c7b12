#pragma once

#include <vector>

#include "cmr/law.hpp"
#include "cmr/model.hpp"

namespace cmr {

/// A matrix-valued instrument attached to one block: a param_dim x output_dim
/// coefficient per cell of the block's conditioning partition.
struct BlockField {
    Partition part;
    std::vector<Matrix> coef;  // aligned with part.keys
    std::vector<bool> degenerate;  // cells where a pseudoinverse truncated

    const Matrix& at_cell(int c) const { return coef[c]; }
};

/// One coefficient field per block of a model. Contracted against the block
/// residuals it produces the R^d score combination
///   S(z, theta) = sum_j coef_j(x_j(z)) g_j(z, theta).
struct ScoreField {
    std::vector<BlockField> blocks;

    /// Evaluate the combination at a support point of the law the field was
    /// built on. Throws ContractViolation when z falls in no known cell.
    Vector evaluate(const MomentModel& model, const Vector& z,
                    const Vector& theta) const;

    /// L2(P) norm of the pointwise difference of two fields' combinations,
    /// both evaluated at model.theta0.
    static double l2_distance(const ScoreField& a, const ScoreField& b,
                              const MomentModel& model, const DiscreteLaw& law);
};

/// Zero-coefficient field with the partitions of the model's blocks.
ScoreField zero_field(const MomentModel& model, const DiscreteLaw& law);

/// E[S S'] of the field's combination at model.theta0, symmetrized.
Matrix efficient_information(const MomentModel& model, const DiscreteLaw& law,
                             const ScoreField& field);

}  // namespace cmr
