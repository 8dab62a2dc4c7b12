#pragma once

#include <utility>
#include <vector>

#include "cmr/law.hpp"
#include "cmr/model.hpp"
#include "cmr/score_field.hpp"

namespace cmr {

struct BackfitOptions {
    double tol = 1e-10;  // L2(P) increment of the score combination
    int max_iter = 500;
};

struct BackfitTrace {
    std::vector<double> score_increments;               // one per sweep
    std::vector<std::vector<double>> block_increments;  // per block, per sweep
    bool converged = false;
    int iterations = 0;
    bool experimental_cycle = false;  // true on the >2-block cyclic path
};

/// Single-block optimal instruments: per cell of each block,
/// -(d/dtheta' E[g|cell])' V(g|cell)^+. Rank-deficient cells fall back to the
/// pseudoinverse and are flagged degenerate.
ScoreField rho_projection(const MomentModel& model, const DiscreteLaw& law);

/// One sweep of the two-block alternating projection at model.theta0.
/// Reads only the first-block coefficients of `prev`; returns both blocks
/// updated (second block recomputed from the new first block).
ScoreField backfit_step(const MomentModel& model, const DiscreteLaw& law,
                        const ScoreField& prev);

/// Iterate backfit_step from a zero first-block field until the L2(P)
/// increment of the score combination drops below tol. Individual block
/// coefficients need not settle; only the combination is monitored, and the
/// per-block increments are recorded for reporting. Models with more than
/// two blocks use the cyclic generalization and mark the trace experimental.
std::pair<ScoreField, BackfitTrace> backfit_solve(const MomentModel& model,
                                                  const DiscreteLaw& law,
                                                  const BackfitOptions& opts = {});

/// Independent zero-iteration solution of the two-block stationarity system:
/// all cell coefficients of both blocks stacked into one unknown vector, the
/// system imposed pointwise on the support with sqrt-probability row weights,
/// solved by minimum-norm least squares.
ScoreField oracle_projection(const MomentModel& model, const DiscreteLaw& law);

struct SequentialResult {
    MomentModel transformed_model;  // residualized first block, original second
    ScoreField transformed_field;   // single-block fields of the transformed model
    ScoreField original_field;      // same combination on the original blocks
};

/// Closed form for two nested blocks (every second-block cell lies inside one
/// first-block cell): residualize the first block on the second conditioning
/// level, then apply single-block projections. Requires an invertible
/// second-block conditional variance on every cell.
SequentialResult sequential_closed_form(const MomentModel& model,
                                        const DiscreteLaw& law);

}  // namespace cmr
