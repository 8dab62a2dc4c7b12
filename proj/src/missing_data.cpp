#include "cmr/missing_data.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cmr/errors.hpp"

namespace cmr {

namespace {

std::string key_string(const std::vector<double>& key) {
    std::string out = "(";
    for (std::size_t i = 0; i < key.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(key[i]);
    }
    return out + ")";
}

}  // namespace

double MissingDataSpec::pi_at(const std::vector<double>& w_key) const {
    if (parametric) {
        if (gamma0.size() != static_cast<int>(w_key.size()) + 1) {
            throw ContractViolation("selection: gamma length must be 1 + dim(W)");
        }
        double u = gamma0(0);
        for (std::size_t i = 0; i < w_key.size(); ++i) {
            u += gamma0(static_cast<int>(i) + 1) * w_key[i];
        }
        return 1.0 / (1.0 + std::exp(-u));
    }
    const auto it = pi_table.find(w_key);
    if (it == pi_table.end()) {
        throw ContractViolation("selection: no table entry for W cell " +
                                key_string(w_key));
    }
    return it->second;
}

Vector MissingDataSpec::dpi_dgamma(const std::vector<double>& w_key) const {
    if (!parametric) {
        throw ContractViolation("selection: dpi/dgamma needs parametric mode");
    }
    const double pi = pi_at(w_key);
    Vector u(static_cast<int>(w_key.size()) + 1);
    u(0) = 1.0;
    for (std::size_t i = 0; i < w_key.size(); ++i) {
        u(static_cast<int>(i) + 1) = w_key[i];
    }
    return pi * (1.0 - pi) * u;
}

namespace {

Vector design_vector(const MissingDataSpec& spec, const Vector& z) {
    Vector psi(static_cast<int>(spec.xstar_coords.size()) + 1);
    psi(0) = 1.0;
    for (std::size_t i = 0; i < spec.xstar_coords.size(); ++i) {
        psi(static_cast<int>(i) + 1) = z(spec.xstar_coords[i]);
    }
    return psi;
}

}  // namespace

Vector MissingDataSpec::rho(const Vector& z, const Vector& alpha) const {
    const double y = z(y_coords.at(0));
    const double fitted = design_vector(*this, z).dot(alpha);
    Vector r(1);
    if (rho_family == "mean") {
        r(0) = y - fitted;
    } else if (rho_family == "quantile") {
        r(0) = tau - (y <= fitted ? 1.0 : 0.0);
    } else {
        throw ContractViolation("residual family '" + rho_family + "' is unknown");
    }
    return r;
}

Matrix MissingDataSpec::rho_jacobian(const Vector& z, const Vector& alpha) const {
    if (rho_family != "mean") {
        throw ContractViolation("residual family '" + rho_family +
                                "' has no pointwise derivative");
    }
    (void)alpha;
    return -design_vector(*this, z).transpose();
}

void validate_spec(const MissingDataSpec& spec, int z_dim) {
    auto in_range = [&](int c) { return c >= 0 && c < z_dim; };
    if (spec.y_coords.size() != 1) {
        throw ContractViolation("missing-data spec: exactly one response coordinate");
    }
    if (spec.xstar_coords.empty()) {
        throw ContractViolation("missing-data spec: residual conditioning set is empty");
    }
    if (spec.w_coords.empty()) {
        throw ContractViolation("missing-data spec: selection conditioning set is empty");
    }
    for (int c : spec.y_coords) {
        if (!in_range(c)) throw ContractViolation("missing-data spec: response coordinate out of range");
    }
    for (int c : spec.xstar_coords) {
        if (!in_range(c)) throw ContractViolation("missing-data spec: residual coordinate out of range");
    }
    for (int c : spec.w_coords) {
        if (!in_range(c)) throw ContractViolation("missing-data spec: selection coordinate out of range");
    }
    if (!in_range(spec.delta_coord)) {
        throw ContractViolation("missing-data spec: indicator coordinate out of range");
    }
    for (int c : spec.xstar_coords) {
        if (c == spec.delta_coord) {
            throw ContractViolation("missing-data spec: indicator cannot condition the residual");
        }
    }
    for (int c : spec.w_coords) {
        if (c == spec.delta_coord) {
            throw ContractViolation("missing-data spec: indicator cannot drive selection");
        }
    }
    if (spec.rho_family != "mean" && spec.rho_family != "quantile") {
        throw ContractViolation("residual family '" + spec.rho_family + "' is unknown");
    }
    if (spec.rho_family == "quantile" && !(spec.tau > 0.0 && spec.tau < 1.0)) {
        throw ContractViolation("missing-data spec: tau must lie in (0, 1)");
    }
    if (spec.alpha0.size() != static_cast<int>(spec.xstar_coords.size()) + 1) {
        throw ContractViolation("missing-data spec: alpha0 length must be 1 + dim(X*)");
    }
    if (spec.parametric) {
        if (spec.gamma0.size() != static_cast<int>(spec.w_coords.size()) + 1) {
            throw ContractViolation("missing-data spec: gamma0 length must be 1 + dim(W)");
        }
    } else if (spec.pi_table.empty()) {
        throw ContractViolation("missing-data spec: known mode needs a selection table");
    }
}

MomentModel observational_blocks(const MissingDataSpec& spec, int z_dim) {
    validate_spec(spec, z_dim);

    MomentModel model;
    model.param_dim = static_cast<int>(spec.alpha0.size());
    model.z_dim = z_dim;
    model.theta0 = spec.alpha0;
    model.mode = spec.rho_smooth() ? JacobianMode::Analytic
                                   : JacobianMode::FiniteDifference;

    const MissingDataSpec spec_copy = spec;
    const std::vector<int> w_coords = spec.w_coords;
    auto weight = [spec_copy, w_coords](const Vector& z) {
        const double pi = spec_copy.pi_at(subvector(z, w_coords));
        return z(spec_copy.delta_coord) / pi;
    };

    MomentBlock residual;
    residual.family = "ipw-residual";
    residual.output_dim = spec.residual_dim();
    residual.cond = spec.xstar_coords;
    std::sort(residual.cond.begin(), residual.cond.end());
    residual.eval = [spec_copy, weight](const Vector& z, const Vector& theta) {
        return Vector(weight(z) * spec_copy.rho(z, theta));
    };
    residual.smooth = spec.rho_smooth();
    if (residual.smooth) {
        residual.pointwise_jacobian = [spec_copy, weight](const Vector& z,
                                                          const Vector& theta) {
            return Matrix(weight(z) * spec_copy.rho_jacobian(z, theta));
        };
    } else {
        // Indicator residual on a unit value lattice: a half-step bracket
        // turns the conditional-mean derivative into the atom mass.
        residual.fd_step = 0.5;
    }
    model.blocks.push_back(std::move(residual));

    MomentBlock selection;
    selection.family = "ipw-selection";
    selection.output_dim = 1;
    selection.cond = spec.w_coords;
    std::sort(selection.cond.begin(), selection.cond.end());
    selection.eval = [weight](const Vector& z, const Vector& theta) {
        (void)theta;
        Vector g(1);
        g(0) = weight(z) - 1.0;
        return g;
    };
    const int d = model.param_dim;
    selection.pointwise_jacobian = [d](const Vector&, const Vector&) {
        return Matrix(Matrix::Zero(1, d));
    };
    model.blocks.push_back(std::move(selection));
    return model;
}

MomentModel build_observational_model(const MissingDataSpec& spec,
                                      const DiscreteLaw& law) {
    MomentModel model = observational_blocks(spec, law.dim());

    // Selection probabilities per populated W cell; zero is unusable because
    // the weighted residual would be undefined on observed points.
    const Partition wcells = partition_by(law, spec.w_coords);
    double min_pi = 1.0;
    for (int c = 0; c < wcells.cells(); ++c) {
        const double pi = spec.pi_at(wcells.keys[static_cast<std::size_t>(c)]);
        if (!(pi > 0.0) || pi > 1.0) {
            throw ContractViolation("selection probability outside (0, 1] at W cell " +
                                    key_string(wcells.keys[static_cast<std::size_t>(c)]));
        }
        min_pi = std::min(min_pi, pi);
    }
    model.min_selection_prob = min_pi;

    validate_against_law(model, law);
    return model;
}

namespace {

/// Conditional moments of the complete-data residual, estimated with
/// delta/pi weights. At the true law these weighted cell means coincide
/// exactly with the complete-data conditional moments (the indicator has
/// conditional mean pi given everything the integrands depend on), and on an
/// empirical law they remain estimable under missingness at random.
struct WeightedResidualTables {
    Partition xcells, wcells;
    std::vector<double> pi;             // per W cell
    std::vector<double> omega;          // delta / pi per support point
    std::vector<Vector> rho0;           // residual at alpha0 per point
    std::vector<Matrix> second_inv;     // per X* cell: E[(1/pi) rho rho'|X*]^{-1}
    std::vector<Matrix> drive;          // per X* cell: -E[d rho/d alpha'|X*]' * second_inv
};

/// Self-normalized weighted cell average of pointwise matrices.
std::vector<Matrix> weighted_cell_average(const DiscreteLaw& law,
                                          const Partition& part,
                                          const std::vector<double>& omega,
                                          const std::vector<Matrix>& pointwise,
                                          const char* who) {
    std::vector<Matrix> out(static_cast<std::size_t>(part.cells()));
    for (int c = 0; c < part.cells(); ++c) {
        Matrix acc = Matrix::Zero(pointwise[0].rows(), pointwise[0].cols());
        double total = 0.0;
        for (int i : part.members[static_cast<std::size_t>(c)]) {
            const double w = law.prob(i) * omega[static_cast<std::size_t>(i)];
            acc += w * pointwise[static_cast<std::size_t>(i)];
            total += w;
        }
        if (!(total > 0.0)) {
            throw NumericalFailure(std::string(who) + ": no observed mass in cell " +
                                   key_string(part.keys[static_cast<std::size_t>(c)]));
        }
        out[static_cast<std::size_t>(c)] = acc / total;
    }
    return out;
}

WeightedResidualTables residual_tables(const MissingDataSpec& spec,
                                       const DiscreteLaw& law, bool recenter) {
    validate_spec(spec, law.dim());
    WeightedResidualTables t;
    t.xcells = partition_by(law, spec.xstar_coords);
    t.wcells = partition_by(law, spec.w_coords);
    const int p = spec.residual_dim();
    const int n = law.size();

    t.pi.resize(static_cast<std::size_t>(t.wcells.cells()));
    for (int c = 0; c < t.wcells.cells(); ++c) {
        const double pi = spec.pi_at(t.wcells.keys[static_cast<std::size_t>(c)]);
        if (!(pi > 0.0) || pi > 1.0) {
            throw ContractViolation("selection probability outside (0, 1] at W cell " +
                                    key_string(t.wcells.keys[static_cast<std::size_t>(c)]));
        }
        t.pi[static_cast<std::size_t>(c)] = pi;
    }

    t.omega.resize(static_cast<std::size_t>(n));
    t.rho0.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const Vector& z = law.point(i);
        const int cw = t.wcells.cell_of[static_cast<std::size_t>(i)];
        t.omega[static_cast<std::size_t>(i)] =
            z(spec.delta_coord) / t.pi[static_cast<std::size_t>(cw)];
        t.rho0[static_cast<std::size_t>(i)] = spec.rho(z, spec.alpha0);
    }
    if (recenter) {
        // Weighted conditional means vanish afterwards; exact laws at the
        // true parameter are unchanged.
        std::vector<Matrix> as_matrix(t.rho0.begin(), t.rho0.end());
        const std::vector<Matrix> mean = weighted_cell_average(
            law, t.xcells, t.omega, as_matrix, "residual recentering");
        for (int i = 0; i < n; ++i) {
            const int cx = t.xcells.cell_of[static_cast<std::size_t>(i)];
            t.rho0[static_cast<std::size_t>(i)] -=
                mean[static_cast<std::size_t>(cx)].col(0);
        }
    }

    // E[(1/pi) rho rho' | X*], inverted exactly; a rank-deficient cell breaks
    // the contraction geometry and is rejected rather than pseudo-inverted.
    std::vector<Matrix> weighted_outer(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int cw = t.wcells.cell_of[static_cast<std::size_t>(i)];
        weighted_outer[static_cast<std::size_t>(i)] =
            (t.rho0[static_cast<std::size_t>(i)] *
             t.rho0[static_cast<std::size_t>(i)].transpose()) /
            t.pi[static_cast<std::size_t>(cw)];
    }
    const std::vector<Matrix> second =
        weighted_cell_average(law, t.xcells, t.omega, weighted_outer,
                              "residual second moment");
    t.second_inv.resize(second.size());
    for (int c = 0; c < t.xcells.cells(); ++c) {
        const Matrix& s = second[static_cast<std::size_t>(c)];
        if (numerical_rank(s) < p) {
            throw ContractViolation(
                "weighted residual second moment is singular at X* cell " +
                key_string(t.xcells.keys[static_cast<std::size_t>(c)]) +
                "; the fixed point is not defined");
        }
        t.second_inv[static_cast<std::size_t>(c)] = s.inverse();
    }

    // E[d rho / d alpha' | X*]: analytic for the mean family, otherwise a
    // central difference of the weighted conditional mean on the value
    // lattice (half step, matching the observational block).
    std::vector<Matrix> jac(static_cast<std::size_t>(t.xcells.cells()));
    if (spec.rho_smooth()) {
        std::vector<Matrix> pointwise(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            pointwise[static_cast<std::size_t>(i)] =
                spec.rho_jacobian(law.point(i), spec.alpha0);
        }
        jac = weighted_cell_average(law, t.xcells, t.omega, pointwise,
                                    "residual derivative");
    } else {
        const int d = static_cast<int>(spec.alpha0.size());
        for (auto& m : jac) m = Matrix::Zero(p, d);
        for (int coord = 0; coord < d; ++coord) {
            const double h = 0.5;
            Vector up = spec.alpha0, down = spec.alpha0;
            up(coord) += h;
            down(coord) -= h;
            std::vector<Matrix> diff(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) {
                diff[static_cast<std::size_t>(i)] =
                    spec.rho(law.point(i), up) - spec.rho(law.point(i), down);
            }
            const std::vector<Matrix> avg = weighted_cell_average(
                law, t.xcells, t.omega, diff, "residual derivative");
            for (int c = 0; c < t.xcells.cells(); ++c) {
                jac[static_cast<std::size_t>(c)].col(coord) =
                    avg[static_cast<std::size_t>(c)] / (2.0 * h);
            }
        }
    }

    t.drive.resize(static_cast<std::size_t>(t.xcells.cells()));
    for (int c = 0; c < t.xcells.cells(); ++c) {
        t.drive[static_cast<std::size_t>(c)] =
            -jac[static_cast<std::size_t>(c)].transpose() *
            t.second_inv[static_cast<std::size_t>(c)];
    }
    return t;
}

/// One application of the fixed-point map to a first-block field.
std::vector<Matrix> apply_map(const MissingDataSpec& spec, const DiscreteLaw& law,
                              const WeightedResidualTables& t,
                              const std::vector<Matrix>& a1) {
    const int n = law.size();
    const int d = static_cast<int>(spec.alpha0.size());

    // E[a1 rho | W] per selection cell.
    std::vector<Matrix> lifted(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int cx = t.xcells.cell_of[static_cast<std::size_t>(i)];
        lifted[static_cast<std::size_t>(i)] =
            a1[static_cast<std::size_t>(cx)] * t.rho0[static_cast<std::size_t>(i)];
    }
    const std::vector<Matrix> mean_w =
        weighted_cell_average(law, t.wcells, t.omega, lifted, "selection average");

    // E[E[a1 rho|W] ((1-pi)/pi) rho' | X*] * second_inv per residual cell.
    std::vector<Matrix> integrand(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int cw = t.wcells.cell_of[static_cast<std::size_t>(i)];
        const double pi = t.pi[static_cast<std::size_t>(cw)];
        integrand[static_cast<std::size_t>(i)] =
            mean_w[static_cast<std::size_t>(cw)] * ((1.0 - pi) / pi) *
            t.rho0[static_cast<std::size_t>(i)].transpose();
    }
    const std::vector<Matrix> carried =
        weighted_cell_average(law, t.xcells, t.omega, integrand, "residual average");

    std::vector<Matrix> next(static_cast<std::size_t>(t.xcells.cells()),
                             Matrix::Zero(d, spec.residual_dim()));
    for (int c = 0; c < t.xcells.cells(); ++c) {
        next[static_cast<std::size_t>(c)] =
            t.drive[static_cast<std::size_t>(c)] +
            carried[static_cast<std::size_t>(c)] *
                t.second_inv[static_cast<std::size_t>(c)];
    }
    return next;
}

/// L2(P) norm of (a - b) applied to the 1/sqrt(pi)-scaled residual, the
/// metric in which the map contracts.
double scaled_increment(const DiscreteLaw& law, const WeightedResidualTables& t,
                        const std::vector<Matrix>& a,
                        const std::vector<Matrix>& b) {
    double acc = 0.0;
    for (int i = 0; i < law.size(); ++i) {
        const int cx = t.xcells.cell_of[static_cast<std::size_t>(i)];
        const int cw = t.wcells.cell_of[static_cast<std::size_t>(i)];
        const Vector diff = (a[static_cast<std::size_t>(cx)] -
                             b[static_cast<std::size_t>(cx)]) *
                            t.rho0[static_cast<std::size_t>(i)];
        acc += law.prob(i) * t.omega[static_cast<std::size_t>(i)] *
               diff.squaredNorm() / t.pi[static_cast<std::size_t>(cw)];
    }
    return std::sqrt(acc);
}

BlockField to_block_field(const Partition& part, std::vector<Matrix> coef) {
    BlockField field;
    field.part = part;
    field.coef = std::move(coef);
    field.degenerate.assign(static_cast<std::size_t>(part.cells()), false);
    return field;
}

}  // namespace

ContractionResult contraction_solve_a1(const MissingDataSpec& spec,
                                       const DiscreteLaw& law,
                                       const ContractionOptions& opts) {
    if (opts.tol <= 0.0) throw ContractViolation("contraction: tol must be positive");
    if (opts.max_iter < 1) {
        throw ContractViolation("contraction: max_iter must be positive");
    }
    const WeightedResidualTables t = residual_tables(spec, law, opts.recenter);

    ContractionResult result;
    result.trace.beta = 0.0;
    for (double pi : t.pi) {
        result.trace.beta = std::max(result.trace.beta, 1.0 - pi);
    }
    if (result.trace.beta >= 1.0) {
        throw ContractViolation("contraction: selection probability reaches zero");
    }

    std::vector<Matrix> current = t.drive;
    for (int m = 1; m <= opts.max_iter; ++m) {
        std::vector<Matrix> next = apply_map(spec, law, t, current);
        const double inc = scaled_increment(law, t, next, current);
        result.trace.increments.push_back(inc);
        if (result.trace.increments.size() >= 2) {
            const double prev_inc =
                result.trace.increments[result.trace.increments.size() - 2];
            if (prev_inc > 0.0) {
                result.trace.ratios.push_back(inc / prev_inc);
            }
        }
        current = std::move(next);
        result.trace.iterations = m;
        if (inc < opts.tol) {
            result.trace.converged = true;
            break;
        }
    }
    if (!result.trace.converged && opts.throw_on_max_iter) {
        throw NumericalFailure(
            "contraction: no convergence within max_iter despite factor " +
            std::to_string(result.trace.beta));
    }
    result.a1 = to_block_field(t.xcells, std::move(current));
    result.drive = to_block_field(t.xcells, t.drive);
    return result;
}

BlockField a2_from_a1(const MissingDataSpec& spec, const DiscreteLaw& law,
                      const BlockField& a1, bool recenter) {
    const WeightedResidualTables t = residual_tables(spec, law, recenter);
    if (a1.part.cells() != t.xcells.cells()) {
        throw ContractViolation("a2_from_a1: field partition differs from X* cells");
    }
    std::vector<Matrix> lifted(static_cast<std::size_t>(law.size()));
    for (int i = 0; i < law.size(); ++i) {
        const int cx = t.xcells.cell_of[static_cast<std::size_t>(i)];
        lifted[static_cast<std::size_t>(i)] =
            a1.coef[static_cast<std::size_t>(cx)] * t.rho0[static_cast<std::size_t>(i)];
    }
    std::vector<Matrix> mean_w =
        weighted_cell_average(law, t.wcells, t.omega, lifted, "selection average");
    for (auto& m : mean_w) m = -m;
    return to_block_field(t.wcells, std::move(mean_w));
}

double contraction_residual(const MissingDataSpec& spec, const DiscreteLaw& law,
                            const BlockField& a1) {
    const WeightedResidualTables t = residual_tables(spec, law, false);
    if (a1.part.cells() != t.xcells.cells()) {
        throw ContractViolation(
            "contraction_residual: field partition differs from X* cells");
    }
    const std::vector<Matrix> mapped = apply_map(spec, law, t, a1.coef);
    return scaled_increment(law, t, mapped, a1.coef);
}

ScoreField missing_data_score(const MissingDataSpec& spec, const DiscreteLaw& law,
                              const ContractionOptions& opts) {
    ContractionResult fixed_point = contraction_solve_a1(spec, law, opts);
    ScoreField field;
    field.blocks.push_back(fixed_point.a1);
    field.blocks.push_back(a2_from_a1(spec, law, fixed_point.a1, opts.recenter));
    return field;
}

ParametricSelectionScore parametric_selection_score(const MissingDataSpec& spec,
                                                    const DiscreteLaw& law) {
    if (!spec.parametric) {
        throw ContractViolation("parametric_selection_score: spec declares known selection");
    }
    const WeightedResidualTables t = residual_tables(spec, law, false);

    ParametricSelectionScore result;
    {
        ContractionResult fixed_point = contraction_solve_a1(spec, law, {});
        result.trace = fixed_point.trace;
        result.alpha_score.blocks.push_back(fixed_point.a1);
        result.alpha_score.blocks.push_back(a2_from_a1(spec, law, fixed_point.a1));
    }

    // The selection-parameter score loads only on the indicator block, with
    // coefficient dpi/dgamma / (1 - pi); a cell with pi = 1 leaves it
    // undefined because the indicator is degenerate there.
    const int d_gamma = static_cast<int>(spec.gamma0.size());
    std::vector<Matrix> gamma_coef(static_cast<std::size_t>(t.wcells.cells()));
    for (int c = 0; c < t.wcells.cells(); ++c) {
        const double pi = t.pi[static_cast<std::size_t>(c)];
        if (pi >= 1.0) {
            throw ContractViolation(
                "parametric_selection_score: selection probability one at W cell " +
                key_string(t.wcells.keys[static_cast<std::size_t>(c)]) +
                " leaves the selection score undefined");
        }
        gamma_coef[static_cast<std::size_t>(c)] =
            spec.dpi_dgamma(t.wcells.keys[static_cast<std::size_t>(c)]) /
            (1.0 - pi);
    }
    std::vector<Matrix> gamma_zero(
        static_cast<std::size_t>(t.xcells.cells()),
        Matrix::Zero(d_gamma, spec.residual_dim()));
    result.gamma_score.blocks.push_back(
        to_block_field(t.xcells, std::move(gamma_zero)));
    result.gamma_score.blocks.push_back(
        to_block_field(t.wcells, std::move(gamma_coef)));

    // Cross moment under the observational blocks; zero by construction.
    const MomentModel model = build_observational_model(spec, law);
    Matrix cross = Matrix::Zero(static_cast<int>(spec.alpha0.size()), d_gamma);
    for (int i = 0; i < law.size(); ++i) {
        const Vector s_alpha =
            result.alpha_score.evaluate(model, law.point(i), model.theta0);
        const Vector s_gamma =
            result.gamma_score.evaluate(model, law.point(i), model.theta0);
        cross += law.prob(i) * (s_alpha * s_gamma.transpose());
    }
    result.cross_moment = cross;
    return result;
}

}  // namespace cmr
