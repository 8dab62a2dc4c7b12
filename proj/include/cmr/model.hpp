#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cmr/law.hpp"
#include "cmr/matrix_ops.hpp"

namespace cmr {

enum class JacobianMode { Analytic, FiniteDifference };

/// One conditional moment restriction E[g(Z, theta) | X_cond] = 0. The
/// conditioning coordinates may differ between blocks and may be empty
/// (a marginal restriction).
struct MomentBlock {
    std::string family;  // registry name, informational
    int output_dim = 1;
    std::vector<int> cond;  // sorted coordinate indices into Z
    std::function<Vector(const Vector& z, const Vector& theta)> eval;
    /// Pointwise derivative d g / d theta' (output_dim x param_dim), only
    /// consulted in Analytic mode. May be empty.
    std::function<Matrix(const Vector& z, const Vector& theta)> pointwise_jacobian;
    /// False for indicator-type residuals whose pointwise derivative does not
    /// exist; such blocks reject Analytic mode at validation.
    bool smooth = true;
    /// Absolute finite-difference step for this block's conditional Jacobian
    /// (> 0 overrides the relative default; lattice-valued responses need a
    /// step that brackets the atom).
    double fd_step = 0.0;
};

/// A system of moment restriction blocks sharing one parameter vector.
struct MomentModel {
    int param_dim = 0;
    int z_dim = 0;
    Vector theta0;
    JacobianMode mode = JacobianMode::FiniteDifference;
    std::vector<MomentBlock> blocks;
    /// Set by the missing-data builder: inf of the selection probability.
    std::optional<double> min_selection_prob;

    int block_count() const { return static_cast<int>(blocks.size()); }
    int total_output_dim() const;
};

/// Structural checks that need no law: dimensions positive, conditioning
/// indices in range and sorted, Analytic mode only with smooth blocks that
/// carry a pointwise Jacobian. Throws ContractViolation.
void validate_model(const MomentModel& model);

/// Checks that theta0 satisfies every block restriction under the law:
/// max |E[g_j | cell]| <= tol on every cell. Throws ContractViolation.
void validate_against_law(const MomentModel& model, const DiscreteLaw& law,
                          double tol = 1e-10);

/// All blocks stacked into one R^p vector at (z, theta). Evaluator errors
/// are rethrown with the offending block index.
Vector stack_moments(const MomentModel& model, const Vector& z,
                     const Vector& theta);

/// Derivative of the conditional expectation: cellwise
/// d/dtheta' E[g_j(Z, theta) | cell], an output_dim x param_dim matrix.
/// In Analytic mode this is E[pointwise_jacobian | cell]; otherwise a central
/// finite difference of theta -> E[g_j(Z, theta) | cell].
CondTable block_conditional_jacobian(const MomentModel& model,
                                     const DiscreteLaw& law, int block,
                                     const Vector& theta);

/// Centered conditional variance of block j at theta.
CondTable block_cond_variance(const MomentModel& model, const DiscreteLaw& law,
                              int block, const Vector& theta);

struct BlockDiagnostics {
    int block = 0;
    double sup_variance_norm = 0.0;   // max over cells of max |entry| of V
    int singular_variance_cells = 0;  // cells where V is rank-deficient
    double worst_condition = 0.0;     // max condition number over cells
    bool joint_second_moment_ok = true;  // E[g g'|joint cell] full rank
    bool single_block_info_nonsingular = true;
    Matrix single_block_info;
};

/// Model-level regularity diagnostics evaluated at theta0. Collects, never
/// throws: bounded conditional variances, cellwise invertibility, full rank
/// of the joint-cell second moments, nonsingular single-block information,
/// and the bounded-selection margin when the model carries one.
struct DiagnosticsReport {
    std::vector<BlockDiagnostics> blocks;
    std::optional<double> selection_beta;  // 1 - inf pi, when applicable
    bool bounded_selection_ok = true;
    bool restrictions_hold = true;  // E[g_j|cell] = 0 at theta0

    bool ok() const;
};

DiagnosticsReport check_assumptions(const MomentModel& model,
                                    const DiscreteLaw& law);

}  // namespace cmr
