#include "cmr/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cmr/efficient_score.hpp"
#include "cmr/errors.hpp"

namespace cmr {

namespace {

std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double unit_uniform(std::uint64_t& state) {
    state = mix64(state, 0);
    return static_cast<double>(state >> 11) * 0x1.0p-53;
}

struct CompassOutcome {
    Vector point;
    bool converged = false;
};

/// Compass search: sweep the coordinates, ride any improving direction until
/// it stops paying, halve the step on failure. Derivative-free, so indicator
/// residuals pose no problem. Riding matters in narrow diagonal valleys,
/// where single steps would spend a whole sweep per step. Near a smooth
/// minimum the point error is a small multiple of the final step, so the
/// steps are driven two decades below tol before stopping; running out of
/// sweeps first means non-convergence.
template <typename Objective>
CompassOutcome compass_search(const Objective& objective, Vector point,
                              double tol, int max_iter) {
    const double target = 0.01 * tol;
    Vector steps = Vector::Constant(point.size(), 0.25);
    for (int c = 0; c < point.size(); ++c) steps(c) *= 1.0 + std::abs(point(c));
    double value = objective(point);
    bool converged = false;
    for (int sweep = 0; sweep < max_iter; ++sweep) {
        if (steps.maxCoeff() < target) {
            converged = true;
            break;
        }
        for (int c = 0; c < point.size(); ++c) {
            if (steps(c) < target) continue;
            bool moved = false;
            for (double direction : {1.0, -1.0}) {
                Vector trial = point;
                trial(c) += direction * steps(c);
                double trial_value = objective(trial);
                while (trial_value < value) {
                    point = trial;
                    value = trial_value;
                    moved = true;
                    trial(c) += direction * steps(c);
                    trial_value = objective(trial);
                }
                if (moved) break;
            }
            if (!moved) steps(c) *= 0.5;
        }
    }
    if (!converged) converged = steps.maxCoeff() < target;
    return {std::move(point), converged};
}

std::string point_string(const Vector& point) {
    std::string out = "(";
    for (int c = 0; c < point.size(); ++c) {
        if (c) out += ", ";
        out += std::to_string(point(c));
    }
    return out + ")";
}

template <typename Objective>
Vector multi_start_search(const Objective& objective, const Vector& init,
                          const SearchOptions& opts, std::uint64_t seed) {
    if (opts.tol <= 0.0) throw ContractViolation("search: tol must be positive");
    if (opts.max_iter < 1) throw ContractViolation("search: max_iter must be positive");
    if (opts.restarts < 0) {
        throw ContractViolation("search: restarts must be nonnegative");
    }
    CompassOutcome best = compass_search(objective, init, opts.tol, opts.max_iter);
    double best_value = objective(best.point);
    bool any_converged = best.converged;
    std::uint64_t state = mix64(seed, 0x5eedULL);
    for (int r = 0; r < opts.restarts; ++r) {
        Vector start = init;
        for (int c = 0; c < start.size(); ++c) {
            start(c) += (unit_uniform(state) - 0.5) * (1.0 + std::abs(init(c)));
        }
        CompassOutcome candidate =
            compass_search(objective, start, opts.tol, opts.max_iter);
        const double value = objective(candidate.point);
        // An unconverged run never displaces a converged one; its value is a
        // snapshot of a still-moving iterate.
        const bool better = value < best_value;
        if ((candidate.converged && !any_converged) ||
            (candidate.converged == any_converged && better)) {
            best = std::move(candidate);
            best_value = value;
            any_converged = any_converged || best.converged;
        }
    }
    if (!any_converged) {
        throw NumericalFailure(
            "search: no start converged within max_iter sweeps; best point " +
            point_string(best.point) + " with objective " +
            std::to_string(best_value));
    }
    return best.point;
}

/// Stacked sample moments with cell-indicator instruments over the observed
/// conditioning cells: component (j, cell) holds the cell share times the
/// cell mean of the block residual.
struct IndicatorMoments {
    DiscreteLaw law;  // empirical law of the sample
    std::vector<Partition> parts;
    int total = 0;

    Vector stacked(const MomentModel& model, const Vector& theta) const {
        Vector out(total);
        int offset = 0;
        for (std::size_t j = 0; j < parts.size(); ++j) {
            const auto& part = parts[j];
            const int pj = model.blocks[j].output_dim;
            std::vector<Vector> sums(static_cast<std::size_t>(part.cells()),
                                     Vector::Zero(pj));
            for (int i = 0; i < law.size(); ++i) {
                sums[static_cast<std::size_t>(part.cell_of[static_cast<std::size_t>(i)])] +=
                    law.prob(i) * model.blocks[j].eval(law.point(i), theta);
            }
            for (int c = 0; c < part.cells(); ++c) {
                out.segment(offset, pj) = sums[static_cast<std::size_t>(c)];
                offset += pj;
            }
        }
        return out;
    }
};

IndicatorMoments indicator_moments(const MomentModel& model,
                                   const DiscreteLaw& emp) {
    IndicatorMoments m{emp, {}, 0};
    for (const auto& block : model.blocks) {
        m.parts.push_back(partition_by(emp, block.cond));
        m.total += m.parts.back().cells() * block.output_dim;
    }
    return m;
}

/// Shift every block by its conditional mean at theta_tilde so the law
/// satisfies the restrictions exactly at theta_tilde.
MomentModel recenter_model(const MomentModel& model, const DiscreteLaw& law,
                           const Vector& theta_tilde) {
    MomentModel centered = model;
    centered.theta0 = theta_tilde;
    for (std::size_t j = 0; j < model.blocks.size(); ++j) {
        const auto& block = model.blocks[j];
        const CondTable mean = cond_expectation(
            law,
            [&](const Vector& z) -> Matrix { return block.eval(z, theta_tilde); },
            block.cond);
        auto original = block.eval;
        centered.blocks[j].eval = [original, mean](const Vector& z,
                                                   const Vector& theta) {
            const int cell = mean.part.find(subvector(z, mean.part.cond));
            if (cell < 0) {
                throw ContractViolation("recentered block: point outside the fitted law");
            }
            return Vector(original(z, theta) -
                          mean.value[static_cast<std::size_t>(cell)].col(0));
        };
        // The shift is constant in theta, so pointwise derivatives carry over.
    }
    return centered;
}

}  // namespace

Vector preliminary_estimator(const MomentModel& model, const SampleSet& sample,
                             const Vector& init, const SearchOptions& opts) {
    validate_model(model);
    if (init.size() != model.param_dim) {
        throw ContractViolation("preliminary_estimator: init length differs from param_dim");
    }
    if (sample.size() < 10 * model.param_dim) {
        throw ContractViolation("preliminary_estimator: need at least 10 observations per parameter");
    }
    const DiscreteLaw emp = empirical_law(sample);
    const IndicatorMoments moments = indicator_moments(model, emp);
    const auto objective = [&](const Vector& theta) {
        return moments.stacked(model, theta).squaredNorm();
    };
    return multi_start_search(objective, init, opts, mix64(sample.seed, 1));
}

const Matrix& PlugInField::instrument(int block,
                                      const std::vector<double>& key) const {
    const auto& part = fitted.blocks[static_cast<std::size_t>(block)].part;
    const int cell = part.find(key);
    if (cell >= 0) {
        return fitted.blocks[static_cast<std::size_t>(block)]
            .coef[static_cast<std::size_t>(cell)];
    }
    // Never-observed cell: single-block projection at the nearest populated
    // cell, with the lexicographically smaller key on distance ties.
    const int near = part.nearest(key);
    return fallback.blocks[static_cast<std::size_t>(block)]
        .coef[static_cast<std::size_t>(near)];
}

Vector PlugInField::score(const MomentModel& model, const Vector& z,
                          const Vector& theta) const {
    Vector s = Vector::Zero(fitted.blocks[0].coef.empty()
                                ? model.param_dim
                                : fitted.blocks[0].coef[0].rows());
    for (int j = 0; j < model.block_count(); ++j) {
        const auto key = subvector(z, model.blocks[static_cast<std::size_t>(j)].cond);
        s += instrument(j, key) *
             model.blocks[static_cast<std::size_t>(j)].eval(z, theta);
    }
    return s;
}

PlugInField plug_in_score_field(const MomentModel& model, const SampleSet& sample,
                                const Vector& theta_tilde, int m_star,
                                const MissingDataSpec* spec) {
    validate_model(model);
    if (theta_tilde.size() != model.param_dim) {
        throw ContractViolation("plug_in_score_field: theta length differs from param_dim");
    }
    if (m_star < 1) throw ContractViolation("plug_in_score_field: m_star must be positive");
    const DiscreteLaw emp = empirical_law(sample);

    PlugInField field;
    if (spec != nullptr) {
        MissingDataSpec plugged = *spec;
        plugged.alpha0 = theta_tilde;
        ContractionOptions copts;
        copts.max_iter = m_star;
        copts.recenter = true;
        copts.throw_on_max_iter = false;
        const ContractionResult fixed_point = contraction_solve_a1(plugged, emp, copts);
        field.fitted.blocks.push_back(fixed_point.a1);
        field.fitted.blocks.push_back(
            a2_from_a1(plugged, emp, fixed_point.a1, true));
        field.iterations_used = fixed_point.trace.iterations;
        field.converged = fixed_point.trace.converged;

        const MomentModel obs = observational_blocks(plugged, emp.dim());
        field.fallback = rho_projection(recenter_model(obs, emp, theta_tilde), emp);
    } else {
        const MomentModel centered = recenter_model(model, emp, theta_tilde);
        BackfitOptions bopts;
        bopts.max_iter = m_star;
        auto [fitted, trace] = backfit_solve(centered, emp, bopts);
        field.fitted = std::move(fitted);
        field.iterations_used = trace.iterations;
        field.converged = trace.converged;
        field.fallback = rho_projection(centered, emp);
    }
    return field;
}

namespace {

EstimationResult solve_with_weights(const MomentModel& model,
                                    const DiscreteLaw& emp, int n,
                                    const PlugInField& field,
                                    const Vector& preliminary,
                                    const SearchOptions& opts,
                                    std::uint64_t seed) {
    if (preliminary.size() != model.param_dim) {
        throw ContractViolation("efficient_gmm_solve: start length differs from param_dim");
    }
    double coef_norm = 0.0;
    for (const auto& block : field.fitted.blocks) {
        for (const auto& coef : block.coef) coef_norm += coef.cwiseAbs().sum();
    }
    if (coef_norm == 0.0) {
        throw ContractViolation("efficient_gmm_solve: score field is identically zero");
    }

    const auto mean_score = [&](const Vector& theta) {
        Vector acc = Vector::Zero(model.param_dim);
        for (int i = 0; i < emp.size(); ++i) {
            acc += emp.prob(i) * field.score(model, emp.point(i), theta);
        }
        return acc;
    };
    const auto objective = [&](const Vector& theta) {
        return mean_score(theta).squaredNorm();
    };

    EstimationResult result;
    result.preliminary = preliminary;
    result.field_iterations = field.iterations_used;
    result.theta_hat = multi_start_search(objective, preliminary, opts, seed);
    result.objective = objective(result.theta_hat);

    Matrix second = Matrix::Zero(model.param_dim, model.param_dim);
    for (int i = 0; i < emp.size(); ++i) {
        const Vector s = field.score(model, emp.point(i), result.theta_hat);
        second += emp.prob(i) * (s * s.transpose());
    }
    result.variance = pinv(symmetrize(second)) / std::max(n, 1);
    return result;
}

}  // namespace

EstimationResult efficient_gmm_solve(const MomentModel& model,
                                     const SampleSet& sample,
                                     const PlugInField& field,
                                     const Vector& preliminary,
                                     const SearchOptions& opts) {
    const DiscreteLaw emp = empirical_law(sample);
    return solve_with_weights(model, emp, sample.size(), field, preliminary,
                              opts, mix64(sample.seed, 2));
}

EstimationResult efficient_gmm_solve_law(const MomentModel& model,
                                         const DiscreteLaw& law,
                                         const PlugInField& field,
                                         const Vector& preliminary,
                                         const SearchOptions& opts) {
    return solve_with_weights(model, law, 1, field, preliminary, opts,
                              mix64(0xfeedULL, 3));
}

MonteCarloReport monte_carlo(const MomentModel& model, const DiscreteLaw& law,
                             int n, int replications, std::uint64_t seed,
                             const MonteCarloOptions& opts) {
    validate_against_law(model, law);
    if (replications < 2) {
        throw ContractViolation("monte_carlo: need at least two replications");
    }
    if (n < 10 * model.param_dim) {
        throw ContractViolation("monte_carlo: sample size too small for the preliminary stage");
    }

    MonteCarloReport report;
    report.n = n;
    report.requested_replications = replications;
    report.seed = seed;

    // Reference: the exact-law efficient information, inverted and scaled.
    Matrix info;
    if (opts.spec) {
        const ScoreField exact = missing_data_score(*opts.spec, law);
        info = efficient_information(build_observational_model(*opts.spec, law),
                                     law, exact);
    } else {
        const auto [exact, trace] = backfit_solve(model, law);
        info = efficient_information(model, law, exact);
    }
    report.reference = pinv(info) / n;

    const int d = model.param_dim;
    std::vector<Vector> pre, eff;
    pre.reserve(static_cast<std::size_t>(replications));
    eff.reserve(static_cast<std::size_t>(replications));
    for (int r = 0; r < replications; ++r) {
        try {
            SampleSet sample = sample_from(law, n, mix64(seed, static_cast<std::uint64_t>(r)));
            const Vector theta_tilde = preliminary_estimator(
                model, sample, Vector::Zero(d), opts.search);
            const PlugInField field =
                plug_in_score_field(model, sample, theta_tilde, opts.m_star,
                                    opts.spec ? &*opts.spec : nullptr);
            const EstimationResult est = efficient_gmm_solve(
                model, sample, field, theta_tilde, opts.search);
            pre.push_back(theta_tilde);
            eff.push_back(est.theta_hat);
        } catch (const std::exception&) {
            ++report.failures;
        }
    }
    report.completed_replications = static_cast<int>(eff.size());
    report.low_replications = report.completed_replications < 10;
    report.invalid =
        report.failures > 0.05 * static_cast<double>(replications);
    if (report.completed_replications < 2) {
        throw NumericalFailure("monte_carlo: fewer than two replications completed");
    }

    const auto aggregate = [&](const std::vector<Vector>& draws, Vector& mean,
                               Matrix& cov, Matrix& mse) {
        const int m = static_cast<int>(draws.size());
        mean = Vector::Zero(d);
        for (const auto& x : draws) mean += x;
        mean /= m;
        cov = Matrix::Zero(d, d);
        mse = Matrix::Zero(d, d);
        for (const auto& x : draws) {
            cov += (x - mean) * (x - mean).transpose();
            mse += (x - model.theta0) * (x - model.theta0).transpose();
        }
        cov /= m - 1;
        mse /= m;
    };
    aggregate(pre, report.mean_preliminary, report.cov_preliminary,
              report.mse_preliminary);
    aggregate(eff, report.mean_efficient, report.cov_efficient,
              report.mse_efficient);
    return report;
}

}  // namespace cmr
