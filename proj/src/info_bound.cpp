#include "cmr/info_bound.hpp"

#include <string>

#include "cmr/errors.hpp"

namespace cmr {

namespace {

double spectral_norm(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(m);
    return svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
}

struct StackedSystem {
    Matrix jacobian;       // (k p) x d, assembled cellwise
    Matrix second_moment;  // (k p) x (k p)
};

/// J = E[d/dtheta' (W g)] and V = E[(W g)(W g)'] at theta0, instruments held
/// fixed. J uses each block's conditional derivative (so non-smooth residuals
/// are covered) against the per-cell instrument weight, which build_stacked
/// makes constant on every conditioning cell.
StackedSystem assemble(const MomentModel& model, const DiscreteLaw& law,
                       const StackedInstruments& stacked) {
    const int p = model.total_output_dim();
    if (stacked.p != p) {
        throw ContractViolation("stacked instruments built for another model");
    }
    if (static_cast<int>(stacked.w.size()) != law.size()) {
        throw ContractViolation("stacked instruments built for another law");
    }
    const int k = stacked.k;
    StackedSystem sys;
    sys.second_moment = Matrix::Zero(k * p, k * p);

    Vector mean = Vector::Zero(k * p);
    for (int i = 0; i < law.size(); ++i) {
        const Vector g = stack_moments(model, law.point(i), model.theta0);
        const Vector v = stacked.w[static_cast<std::size_t>(i)] * g;
        sys.second_moment += law.prob(i) * (v * v.transpose());
        mean += law.prob(i) * v;
    }
    if (mean.cwiseAbs().maxCoeff() > 1e-8) {
        throw ContractViolation(
            "stacked instruments: E[w g] != 0 at theta0; the model restrictions fail");
    }

    sys.jacobian = Matrix::Zero(k * p, model.param_dim);
    int offset = 0;
    for (int j = 0; j < model.block_count(); ++j) {
        const int pj = model.blocks[static_cast<std::size_t>(j)].output_dim;
        const CondTable d = block_conditional_jacobian(model, law, j, model.theta0);
        for (int s = 0; s < k; ++s) {
            for (int c = 0; c < d.part.cells(); ++c) {
                const int rep = d.part.members[static_cast<std::size_t>(c)].front();
                const double w_val =
                    stacked.w[static_cast<std::size_t>(rep)](s * p + offset, offset);
                sys.jacobian.block(s * p + offset, 0, pj, model.param_dim) +=
                    d.part.prob[static_cast<std::size_t>(c)] * w_val *
                    d.value[static_cast<std::size_t>(c)];
            }
        }
        offset += pj;
    }
    return sys;
}

Matrix info_at_depth(const StackedSystem& sys, int p, int k, bool* degenerate) {
    const Matrix v = sys.second_moment.topLeftCorner(k * p, k * p);
    const Matrix j = sys.jacobian.topRows(k * p);
    const bool zero = v.cwiseAbs().maxCoeff() == 0.0;
    if (degenerate) *degenerate = zero;
    if (zero) return Matrix::Zero(j.cols(), j.cols());
    return symmetrize(j.transpose() * pinv(v) * j);
}

}  // namespace

Matrix fisher_info_unconditional(const MomentModel& model, const DiscreteLaw& law,
                                 const StackedInstruments& stacked,
                                 bool* degenerate) {
    validate_against_law(model, law);
    const StackedSystem sys = assemble(model, law, stacked);
    return info_at_depth(sys, model.total_output_dim(), stacked.k, degenerate);
}

InfoBoundSequence info_bound_sequence(const MomentModel& model,
                                      const DiscreteLaw& law,
                                      const InstrumentFamily& family, int k_max,
                                      double stop_tol) {
    validate_against_law(model, law);
    if (k_max < 1 || k_max > family.size()) {
        throw ContractViolation("info_bound_sequence: k_max must lie in [1, family size]");
    }
    if (stop_tol < 0.0) {
        throw ContractViolation("info_bound_sequence: stop_tol must be nonnegative");
    }
    const StackedInstruments stacked = build_stacked(law, model, family, k_max);
    const StackedSystem sys = assemble(model, law, stacked);
    const int p = model.total_output_dim();

    InfoBoundSequence seq;
    Matrix prev = Matrix::Zero(model.param_dim, model.param_dim);
    for (int k = 1; k <= k_max; ++k) {
        InfoStep step;
        step.k = k;
        step.info = info_at_depth(sys, p, k, &step.degenerate);
        step.gap = spectral_norm(step.info - prev);
        prev = step.info;
        seq.steps.push_back(step);
    }
    // Redundant members can stall the sequence for several consecutive steps
    // before a later member still adds information (nested designs do this
    // with the indicator family), so aborting on a flat stretch would certify
    // a false plateau. Run the full depth, then mark the first k from which
    // the increments stayed below stop_tol for good.
    int last_mover = 0;
    for (const auto& step : seq.steps) {
        if (step.gap > stop_tol) last_mover = step.k;
    }
    if (last_mover + 2 <= k_max) {
        seq.converged_at = std::max(last_mover + 2, 2);
    }
    seq.final_info = seq.steps.back().info;
    seq.final_gap = seq.steps.back().gap;
    return seq;
}

Matrix info_for_instruments(const MomentModel& model, const DiscreteLaw& law,
                            const ScoreField& b) {
    validate_against_law(model, law);
    if (static_cast<int>(b.blocks.size()) != model.block_count()) {
        throw ContractViolation("info_for_instruments: field block count differs from model");
    }
    const int d = model.param_dim;

    // M = E[d/dtheta' sum_j b_j g_j], cellwise against each block's
    // conditional derivative; V = E[m m'] pointwise.
    Matrix m_jac = Matrix::Zero(d, d);
    for (int j = 0; j < model.block_count(); ++j) {
        const CondTable jac = block_conditional_jacobian(model, law, j, model.theta0);
        const auto& field = b.blocks[static_cast<std::size_t>(j)];
        if (field.part.cells() != jac.part.cells()) {
            throw ContractViolation("info_for_instruments: field partition differs from block");
        }
        for (int c = 0; c < jac.part.cells(); ++c) {
            m_jac += jac.part.prob[static_cast<std::size_t>(c)] *
                     field.coef[static_cast<std::size_t>(c)] *
                     jac.value[static_cast<std::size_t>(c)];
        }
    }
    Matrix v = Matrix::Zero(d, d);
    for (int i = 0; i < law.size(); ++i) {
        const Vector m = b.evaluate(model, law.point(i), model.theta0);
        v += law.prob(i) * (m * m.transpose());
    }
    return symmetrize(m_jac.transpose() * pinv(v) * m_jac);
}

}  // namespace cmr
