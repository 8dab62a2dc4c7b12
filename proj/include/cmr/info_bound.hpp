#pragma once

#include <optional>
#include <vector>

#include "cmr/instruments.hpp"
#include "cmr/law.hpp"
#include "cmr/model.hpp"
#include "cmr/score_field.hpp"

namespace cmr {

struct InfoStep {
    int k = 0;
    Matrix info;
    double gap = 0.0;  // spectral norm of info_k - info_{k-1}
    bool degenerate = false;
};

struct InfoBoundSequence {
    std::vector<InfoStep> steps;
    /// First k from which every later gap stayed below stop_tol; needs at
    /// least two such trailing steps, unset when the sequence never settles.
    std::optional<int> converged_at;
    double final_gap = 0.0;
    Matrix final_info;
};

/// Information of the unconditional moment system built from the stacked
/// instruments: J' V^+ J with J = E[d/dtheta' of the stacked combination]
/// assembled cellwise and V = E[(W g)(W g)'] at theta0. A zero V sets
/// *degenerate and yields a zero matrix. Construction verifies
/// E[W g] = 0 at theta0.
Matrix fisher_info_unconditional(const MomentModel& model, const DiscreteLaw& law,
                                 const StackedInstruments& stacked,
                                 bool* degenerate = nullptr);

/// The nondecreasing information sequence over nested instrument sets
/// k = 1..k_max, always computed to full depth: several consecutive members
/// can be redundant while later ones still add information, so a flat
/// stretch is no stopping certificate. converged_at reports where the gaps
/// drop below stop_tol for good.
InfoBoundSequence info_bound_sequence(const MomentModel& model,
                                      const DiscreteLaw& law,
                                      const InstrumentFamily& family, int k_max,
                                      double stop_tol = 1e-10);

/// Information attainable with a fixed conditional-instrument field b:
/// M' V^+ M where m = sum_j b_j g_j, M = E[d m / d theta'] and V = E[m m'].
Matrix info_for_instruments(const MomentModel& model, const DiscreteLaw& law,
                            const ScoreField& b);

}  // namespace cmr
