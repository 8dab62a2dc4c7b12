#include "cmr/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cmr/errors.hpp"

namespace cmr {

int MomentModel::total_output_dim() const {
    int p = 0;
    for (const auto& block : blocks) p += block.output_dim;
    return p;
}

void validate_model(const MomentModel& model) {
    if (model.param_dim <= 0) throw ContractViolation("model: param_dim must be positive");
    if (model.z_dim <= 0) throw ContractViolation("model: z_dim must be positive");
    if (model.theta0.size() != model.param_dim) {
        throw ContractViolation("model: theta0 length differs from param_dim");
    }
    if (model.blocks.empty()) throw ContractViolation("model: no blocks");
    for (std::size_t j = 0; j < model.blocks.size(); ++j) {
        const auto& block = model.blocks[j];
        const std::string tag = "model block " + std::to_string(j);
        if (block.output_dim <= 0) {
            throw ContractViolation(tag + ": output_dim must be positive");
        }
        if (!block.eval) throw ContractViolation(tag + ": missing evaluator");
        if (!std::is_sorted(block.cond.begin(), block.cond.end())) {
            throw ContractViolation(tag + ": conditioning indices must be sorted");
        }
        if (std::adjacent_find(block.cond.begin(), block.cond.end()) !=
            block.cond.end()) {
            throw ContractViolation(tag + ": duplicate conditioning index");
        }
        for (int c : block.cond) {
            if (c < 0 || c >= model.z_dim) {
                throw ContractViolation(tag + ": conditioning index out of range");
            }
        }
        if (model.mode == JacobianMode::Analytic) {
            if (!block.smooth) {
                throw ContractViolation(
                    tag + ": analytic mode is not defined for a non-smooth residual");
            }
            if (!block.pointwise_jacobian) {
                throw ContractViolation(tag + ": analytic mode needs a pointwise Jacobian");
            }
        }
    }
}

namespace {

Vector eval_block(const MomentModel& model, int j, const Vector& z,
                  const Vector& theta) {
    const auto& block = model.blocks[static_cast<std::size_t>(j)];
    Vector g;
    try {
        g = block.eval(z, theta);
    } catch (const std::exception& e) {
        throw ContractViolation("block " + std::to_string(j) +
                                " evaluator failed: " + e.what());
    }
    if (g.size() != block.output_dim) {
        throw ContractViolation("block " + std::to_string(j) +
                                " returned wrong output dimension");
    }
    return g;
}

}  // namespace

void validate_against_law(const MomentModel& model, const DiscreteLaw& law,
                          double tol) {
    validate_model(model);
    if (law.dim() != model.z_dim) {
        throw ContractViolation("model/law dimension mismatch");
    }
    for (int j = 0; j < model.block_count(); ++j) {
        const auto table = cond_expectation(
            law,
            [&](const Vector& z) -> Matrix {
                return eval_block(model, j, z, model.theta0);
            },
            model.blocks[static_cast<std::size_t>(j)].cond);
        for (int c = 0; c < table.part.cells(); ++c) {
            const double worst =
                table.value[static_cast<std::size_t>(c)].cwiseAbs().maxCoeff();
            if (worst > tol) {
                throw ContractViolation(
                    "block " + std::to_string(j) + " violates its restriction at a cell (|E[g|cell]| = " +
                    std::to_string(worst) + ")");
            }
        }
    }
}

Vector stack_moments(const MomentModel& model, const Vector& z,
                     const Vector& theta) {
    if (theta.size() != model.param_dim) {
        throw ContractViolation("stack_moments: theta length differs from param_dim");
    }
    if (z.size() != model.z_dim) {
        throw ContractViolation("stack_moments: point dimension differs from z_dim");
    }
    Vector out(model.total_output_dim());
    int offset = 0;
    for (int j = 0; j < model.block_count(); ++j) {
        const Vector g = eval_block(model, j, z, theta);
        out.segment(offset, g.size()) = g;
        offset += static_cast<int>(g.size());
    }
    return out;
}

CondTable block_conditional_jacobian(const MomentModel& model,
                                     const DiscreteLaw& law, int block,
                                     const Vector& theta) {
    if (block < 0 || block >= model.block_count()) {
        throw ContractViolation("block_conditional_jacobian: block index out of range");
    }
    const auto& blk = model.blocks[static_cast<std::size_t>(block)];
    if (model.mode == JacobianMode::Analytic) {
        if (!blk.smooth || !blk.pointwise_jacobian) {
            throw ContractViolation(
                "block_conditional_jacobian: analytic mode unavailable for this block");
        }
        return cond_expectation(
            law,
            [&](const Vector& z) -> Matrix {
                const Matrix jac = blk.pointwise_jacobian(z, theta);
                if (jac.rows() != blk.output_dim || jac.cols() != model.param_dim) {
                    throw ContractViolation(
                        "block_conditional_jacobian: pointwise Jacobian has wrong shape");
                }
                return jac;
            },
            blk.cond);
    }
    // Finite differences on theta -> E[g(Z, theta) | cell], cell by cell.
    CondTable table;
    table.part = partition_by(law, blk.cond);
    table.value.assign(static_cast<std::size_t>(table.part.cells()),
                       Matrix::Zero(blk.output_dim, model.param_dim));
    for (int coord = 0; coord < model.param_dim; ++coord) {
        const double h = blk.fd_step > 0.0
                             ? blk.fd_step
                             : 1e-6 * (1.0 + std::abs(theta(coord)));
        Vector up = theta, down = theta;
        up(coord) += h;
        down(coord) -= h;
        for (int c = 0; c < table.part.cells(); ++c) {
            Vector acc = Vector::Zero(blk.output_dim);
            for (int i : table.part.members[static_cast<std::size_t>(c)]) {
                acc += law.prob(i) * (eval_block(model, block, law.point(i), up) -
                                      eval_block(model, block, law.point(i), down));
            }
            table.value[static_cast<std::size_t>(c)].col(coord) =
                acc / (2.0 * h * table.part.prob[static_cast<std::size_t>(c)]);
        }
    }
    return table;
}

CondTable block_cond_variance(const MomentModel& model, const DiscreteLaw& law,
                              int block, const Vector& theta) {
    if (block < 0 || block >= model.block_count()) {
        throw ContractViolation("block_cond_variance: block index out of range");
    }
    const auto& blk = model.blocks[static_cast<std::size_t>(block)];
    return cond_variance(
        law, [&](const Vector& z) { return eval_block(model, block, z, theta); },
        blk.cond);
}

bool DiagnosticsReport::ok() const {
    if (!restrictions_hold || !bounded_selection_ok) return false;
    for (const auto& b : blocks) {
        if (!b.joint_second_moment_ok || !b.single_block_info_nonsingular) {
            return false;
        }
        if (!std::isfinite(b.sup_variance_norm)) return false;
    }
    return true;
}

DiagnosticsReport check_assumptions(const MomentModel& model,
                                    const DiscreteLaw& law) {
    validate_model(model);
    DiagnosticsReport report;

    // The restriction check itself must collect rather than throw here.
    report.restrictions_hold = true;
    try {
        validate_against_law(model, law);
    } catch (const ContractViolation&) {
        report.restrictions_hold = false;
    }

    // Joint conditioning level: the union of every block's coordinates.
    std::vector<int> joint;
    for (const auto& block : model.blocks) {
        joint.insert(joint.end(), block.cond.begin(), block.cond.end());
    }
    std::sort(joint.begin(), joint.end());
    joint.erase(std::unique(joint.begin(), joint.end()), joint.end());

    for (int j = 0; j < model.block_count(); ++j) {
        BlockDiagnostics diag;
        diag.block = j;
        const auto variance = block_cond_variance(model, law, j, model.theta0);
        const auto jac = block_conditional_jacobian(model, law, j, model.theta0);
        const int p = model.blocks[static_cast<std::size_t>(j)].output_dim;

        Matrix info = Matrix::Zero(model.param_dim, model.param_dim);
        for (int c = 0; c < variance.part.cells(); ++c) {
            const Matrix& v = variance.value[static_cast<std::size_t>(c)];
            diag.sup_variance_norm =
                std::max(diag.sup_variance_norm, v.cwiseAbs().maxCoeff());
            Eigen::JacobiSVD<Matrix> svd(v);
            const auto& sv = svd.singularValues();
            const double smax = sv.size() ? sv(0) : 0.0;
            const double smin = sv.size() ? sv(sv.size() - 1) : 0.0;
            if (numerical_rank(v) < p) {
                ++diag.singular_variance_cells;
                diag.worst_condition = std::numeric_limits<double>::infinity();
            } else if (smin > 0.0) {
                diag.worst_condition = std::max(diag.worst_condition, smax / smin);
            }
            const Matrix& d = jac.value[static_cast<std::size_t>(c)];
            info += variance.part.prob[static_cast<std::size_t>(c)] *
                    (d.transpose() * pinv(v) * d);
        }
        diag.single_block_info = symmetrize(info);
        diag.single_block_info_nonsingular =
            numerical_rank(diag.single_block_info) == model.param_dim;

        // Second moments at the joint conditioning level must have full rank:
        // the stacked system stays nondegenerate on every joint cell.
        const auto joint_second = cond_expectation(
            law,
            [&](const Vector& z) -> Matrix {
                const Vector g = eval_block(model, j, z, model.theta0);
                return g * g.transpose();
            },
            joint);
        for (int c = 0; c < joint_second.part.cells(); ++c) {
            if (numerical_rank(joint_second.value[static_cast<std::size_t>(c)]) < p) {
                diag.joint_second_moment_ok = false;
            }
        }
        report.blocks.push_back(std::move(diag));
    }

    if (model.min_selection_prob) {
        report.selection_beta = 1.0 - *model.min_selection_prob;
        report.bounded_selection_ok = *report.selection_beta < 1.0;
    }
    return report;
}

}  // namespace cmr
