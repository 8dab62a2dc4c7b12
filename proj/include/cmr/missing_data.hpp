#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cmr/law.hpp"
#include "cmr/model.hpp"
#include "cmr/score_field.hpp"

namespace cmr {

/// Declares an inverse-probability-weighted two-block system for data missing
/// at random: a weighted residual block conditioned on the always-observed
/// covariates and a weighted selection-indicator block conditioned on the
/// variables driving selection.
struct MissingDataSpec {
    enum class Variant { Response, Regressor };
    Variant variant = Variant::Response;

    std::string rho_family = "mean";  // "mean" | "quantile"
    double tau = 0.5;                 // quantile level
    Vector alpha0;

    std::vector<int> y_coords;      // response coordinates of Z
    std::vector<int> xstar_coords;  // conditioning covariates of the residual
    std::vector<int> w_coords;      // conditioning covariates of selection
    int delta_coord = -1;           // observation indicator coordinate

    /// Selection probability: a table over W cells (known mode) or a logistic
    /// index exp(u)/(1+exp(u)), u = gamma'(1, W) (parametric mode).
    bool parametric = false;
    std::map<std::vector<double>, double> pi_table;
    Vector gamma0;

    int residual_dim() const { return static_cast<int>(y_coords.size()); }

    double pi_at(const std::vector<double>& w_key) const;
    Vector dpi_dgamma(const std::vector<double>& w_key) const;  // parametric only

    /// The complete-data residual and its pointwise derivative (mean family).
    Vector rho(const Vector& z, const Vector& alpha) const;
    Matrix rho_jacobian(const Vector& z, const Vector& alpha) const;
    bool rho_smooth() const { return rho_family == "mean"; }
};

void validate_spec(const MissingDataSpec& spec, int z_dim);

/// The two observable blocks: weighted residual (delta/pi) rho(Y, X*, alpha)
/// conditioned on X*, and selection residual delta/pi - 1 conditioned on W.
/// Sets min_selection_prob on the model; selection probability zero on a
/// populated cell is rejected.
MomentModel build_observational_model(const MissingDataSpec& spec,
                                      const DiscreteLaw& law);

/// The blocks alone, without checking the restrictions against a law.
/// Estimation uses this on empirical laws, where the restrictions only hold
/// after re-centering.
MomentModel observational_blocks(const MissingDataSpec& spec, int z_dim);

struct ContractionOptions {
    double tol = 1e-10;  // L2(P) increment of a1 * weighted residual
    int max_iter = 500;
    /// Subtract the weighted conditional residual mean per cell before
    /// solving. A no-op on laws satisfying the restrictions exactly; plug-in
    /// fits on empirical laws need it.
    bool recenter = false;
    /// When false, hitting max_iter returns the last iterate with
    /// converged = false instead of raising an error.
    bool throw_on_max_iter = true;
};

struct ContractionTrace {
    std::vector<double> increments;
    std::vector<double> ratios;  // consecutive increment ratios
    double beta = 0.0;           // sup over W cells of 1 - pi
    bool converged = false;
    int iterations = 0;
};

struct ContractionResult {
    BlockField a1;     // fixed point, per X* cell
    BlockField drive;  // the selection-free driving term
    ContractionTrace trace;
};

/// Successive approximation for the first-block coefficients, started from
/// the driving term. The iteration map contracts with factor
/// beta = sup(1 - pi) < 1; the residual second moment on each X* cell must
/// be truly invertible (no pseudoinverse fallback here). Non-convergence
/// within max_iter raises NumericalFailure.
ContractionResult contraction_solve_a1(const MissingDataSpec& spec,
                                       const DiscreteLaw& law,
                                       const ContractionOptions& opts = {});

/// Second-block coefficients induced by a first-block field:
/// per W cell, -E[a1(X*) rho | W].
BlockField a2_from_a1(const MissingDataSpec& spec, const DiscreteLaw& law,
                      const BlockField& a1, bool recenter = false);

/// Fixed-point residual of a candidate first-block field: the scaled L2(P)
/// distance between one application of the successive-approximation map and
/// the field itself. Zero exactly at the fixed point.
double contraction_residual(const MissingDataSpec& spec, const DiscreteLaw& law,
                            const BlockField& a1);

/// Both coefficient blocks as a ScoreField over the observational model.
ScoreField missing_data_score(const MissingDataSpec& spec, const DiscreteLaw& law,
                              const ContractionOptions& opts = {});

struct ParametricSelectionScore {
    ScoreField alpha_score;  // identical to the known-selection field
    ScoreField gamma_score;  // zero on the residual block
    Matrix cross_moment;     // E[S_alpha S_gamma'], zero by orthogonality
    ContractionTrace trace;
};

/// Efficient score blocks when the selection probability carries its own
/// parameter: the alpha part solves the same fixed point as in the known
/// case, the gamma part loads only on the selection block with coefficient
/// dpi/dgamma / (1 - pi). Cells with pi = 1 are rejected (the gamma
/// coefficient is undefined there).
ParametricSelectionScore parametric_selection_score(const MissingDataSpec& spec,
                                                    const DiscreteLaw& law);

}  // namespace cmr
