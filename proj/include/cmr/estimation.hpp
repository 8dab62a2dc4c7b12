#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "cmr/law.hpp"
#include "cmr/missing_data.hpp"
#include "cmr/model.hpp"
#include "cmr/score_field.hpp"

namespace cmr {

struct SearchOptions {
    /// Point-accuracy target: steps shrink two decades below this before the
    /// search stops. No start reaching that within max_iter sweeps raises
    /// NumericalFailure carrying the best point found.
    double tol = 1e-8;
    int max_iter = 500;  // outer sweeps per start
    int restarts = 3;    // random restarts around the supplied start
};

/// First-stage estimate: minimizes the squared norm of the stacked sample
/// moments with cell-indicator instruments over each block's observed
/// conditioning cells, by derivative-free coordinate search with shrinking
/// steps. Restart perturbations are seeded from the sample seed. Requires
/// sample size >= 10 * param_dim.
Vector preliminary_estimator(const MomentModel& model, const SampleSet& sample,
                             const Vector& init, const SearchOptions& opts = {});

/// A fitted score field together with its fallback rule for cells that never
/// occurred in the sample: such lookups use the single-block projection field
/// at the nearest populated cell (ties broken lexicographically).
struct PlugInField {
    ScoreField fitted;    // backfit (or contraction) field on the empirical law
    ScoreField fallback;  // single-block projection field on the empirical law
    int iterations_used = 0;
    bool converged = false;

    /// Coefficient for block j at conditioning key `key`.
    const Matrix& instrument(int block, const std::vector<double>& key) const;

    /// S(z, theta) = sum_j coef_j(x_j(z)) g_j(z, theta) with fallback lookups.
    Vector score(const MomentModel& model, const Vector& z,
                 const Vector& theta) const;
};

/// Estimated efficient score field on the empirical law of the sample, with
/// every block re-centered at theta_tilde so the empirical law satisfies the
/// restrictions exactly. Runs the two-block backfit, or the missing-data
/// contraction when a spec is supplied, for at most m_star sweeps.
PlugInField plug_in_score_field(const MomentModel& model, const SampleSet& sample,
                                const Vector& theta_tilde, int m_star = 25,
                                const MissingDataSpec* spec = nullptr);

struct EstimationResult {
    Vector theta_hat;
    Vector preliminary;
    double objective = 0.0;       // squared norm of the mean fitted score
    int field_iterations = 0;     // sweeps used by the plug-in field
    Matrix variance;              // pinv(mean S S') / n at theta_hat
};

/// Second stage: solves the fitted-score equations by minimizing
/// |mean_i S(z_i, theta)|^2 from the preliminary estimate. A field with all
/// zero coefficients is rejected as degenerate.
EstimationResult efficient_gmm_solve(const MomentModel& model,
                                     const SampleSet& sample,
                                     const PlugInField& field,
                                     const Vector& preliminary,
                                     const SearchOptions& opts = {});

/// Same solver with exact law weights instead of a drawn sample (the sample
/// is the full support, weighted by the law's probabilities).
EstimationResult efficient_gmm_solve_law(const MomentModel& model,
                                         const DiscreteLaw& law,
                                         const PlugInField& field,
                                         const Vector& preliminary,
                                         const SearchOptions& opts = {});

struct MonteCarloReport {
    int n = 0;
    int requested_replications = 0;
    int completed_replications = 0;
    int failures = 0;
    std::uint64_t seed = 0;
    Vector mean_preliminary, mean_efficient;
    Matrix cov_preliminary, cov_efficient;  // empirical, centered at the mean
    Matrix mse_preliminary, mse_efficient;  // second moments around theta0
    Matrix reference;                       // pinv(information) / n
    bool invalid = false;           // more than 5% of replications failed
    bool low_replications = false;  // fewer than 10 completed
};

struct MonteCarloOptions {
    int m_star = 25;
    SearchOptions search;
    std::optional<MissingDataSpec> spec;
};

/// Repeated two-stage estimation on fresh samples. Per-replication seeds are
/// derived from the master seed by a fixed mix, so reports are reproducible
/// for a given seed and replications are independent of execution order.
/// Requires R >= 2; failed replications are excluded and counted.
MonteCarloReport monte_carlo(const MomentModel& model, const DiscreteLaw& law,
                             int n, int replications, std::uint64_t seed,
                             const MonteCarloOptions& opts = {});

}  // namespace cmr
