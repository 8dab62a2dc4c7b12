#include "cmr/efficient_score.hpp"

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

/// Per-cell conditional derivative, centered variance and its pseudoinverse
/// for one block at theta0.
struct BlockMoments {
    Partition part;
    std::vector<Matrix> jac;
    std::vector<Matrix> var;
    std::vector<Matrix> var_pinv;
    std::vector<bool> degenerate;
};

BlockMoments block_moments(const MomentModel& model, const DiscreteLaw& law,
                           int j) {
    BlockMoments bm;
    CondTable jac = block_conditional_jacobian(model, law, j, model.theta0);
    CondTable var = block_cond_variance(model, law, j, model.theta0);
    bm.part = jac.part;
    bm.jac = std::move(jac.value);
    bm.var = std::move(var.value);
    const int p = model.blocks[static_cast<std::size_t>(j)].output_dim;
    bm.var_pinv.reserve(bm.var.size());
    bm.degenerate.reserve(bm.var.size());
    for (const auto& v : bm.var) {
        bm.var_pinv.push_back(pinv(symmetrize(v)));
        bm.degenerate.push_back(numerical_rank(v) < p);
    }
    return bm;
}

BlockField single_block_field(const MomentModel& model, const DiscreteLaw& law,
                              int j) {
    const BlockMoments bm = block_moments(model, law, j);
    BlockField field;
    field.part = bm.part;
    field.degenerate = bm.degenerate;
    field.coef.reserve(bm.jac.size());
    for (std::size_t c = 0; c < bm.jac.size(); ++c) {
        field.coef.push_back(-bm.jac[c].transpose() * bm.var_pinv[c]);
    }
    return field;
}

/// Evaluations of every block residual at theta0 on the whole support.
std::vector<std::vector<Vector>> residuals_at_theta0(const MomentModel& model,
                                                     const DiscreteLaw& law) {
    std::vector<std::vector<Vector>> g(model.blocks.size());
    for (std::size_t j = 0; j < model.blocks.size(); ++j) {
        g[j].reserve(static_cast<std::size_t>(law.size()));
        for (int i = 0; i < law.size(); ++i) {
            g[j].push_back(model.blocks[j].eval(law.point(i), model.theta0));
        }
    }
    return g;
}

/// Cellwise average of a pointwise d x p matrix function, as raw values.
std::vector<Matrix> cell_average(const DiscreteLaw& law, const Partition& part,
                                 const std::vector<Matrix>& pointwise) {
    std::vector<Matrix> avg(static_cast<std::size_t>(part.cells()));
    for (int c = 0; c < part.cells(); ++c) {
        Matrix acc = Matrix::Zero(pointwise[0].rows(), pointwise[0].cols());
        for (int i : part.members[static_cast<std::size_t>(c)]) {
            acc += law.prob(i) * pointwise[static_cast<std::size_t>(i)];
        }
        avg[static_cast<std::size_t>(c)] = acc / part.prob[static_cast<std::size_t>(c)];
    }
    return avg;
}

}  // namespace

ScoreField rho_projection(const MomentModel& model, const DiscreteLaw& law) {
    validate_against_law(model, law);
    ScoreField field;
    for (int j = 0; j < model.block_count(); ++j) {
        field.blocks.push_back(single_block_field(model, law, j));
    }
    return field;
}

ScoreField backfit_step(const MomentModel& model, const DiscreteLaw& law,
                        const ScoreField& prev) {
    if (model.block_count() != 2) {
        throw ContractViolation("backfit_step: defined for exactly two blocks");
    }
    if (prev.blocks.size() != 2) {
        throw ContractViolation("backfit_step: previous field must carry two blocks");
    }
    const BlockMoments m1 = block_moments(model, law, 0);
    const BlockMoments m2 = block_moments(model, law, 1);
    const auto g = residuals_at_theta0(model, law);
    const int n = law.size();

    // First block update: the single-block projection plus two correction
    // terms, both conditional averages against the first residual. The
    // previous first-block combination enters only through its conditional
    // cross moment at the second level.
    std::vector<Matrix> carried(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int c1 = m1.part.cell_of[static_cast<std::size_t>(i)];
        const Vector u = prev.blocks[0].coef[static_cast<std::size_t>(c1)] *
                         g[0][static_cast<std::size_t>(i)];
        carried[static_cast<std::size_t>(i)] =
            u * g[1][static_cast<std::size_t>(i)].transpose();
    }
    const std::vector<Matrix> cross2 = cell_average(law, m2.part, carried);

    std::vector<Matrix> integrand(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int c2 = m2.part.cell_of[static_cast<std::size_t>(i)];
        const Vector r2 = m2.jac[static_cast<std::size_t>(c2)].transpose() *
                          m2.var_pinv[static_cast<std::size_t>(c2)] *
                          g[1][static_cast<std::size_t>(i)];
        const Vector s = cross2[static_cast<std::size_t>(c2)] *
                         m2.var_pinv[static_cast<std::size_t>(c2)] *
                         g[1][static_cast<std::size_t>(i)];
        integrand[static_cast<std::size_t>(i)] =
            (r2 + s) * g[0][static_cast<std::size_t>(i)].transpose();
    }
    const std::vector<Matrix> correction1 = cell_average(law, m1.part, integrand);

    ScoreField next;
    BlockField f1;
    f1.part = m1.part;
    f1.degenerate = m1.degenerate;
    f1.coef.resize(static_cast<std::size_t>(m1.part.cells()));
    for (int c = 0; c < m1.part.cells(); ++c) {
        f1.coef[static_cast<std::size_t>(c)] =
            (-m1.jac[static_cast<std::size_t>(c)].transpose() +
             correction1[static_cast<std::size_t>(c)]) *
            m1.var_pinv[static_cast<std::size_t>(c)];
    }
    next.blocks.push_back(std::move(f1));

    // Second block from the fresh first block.
    std::vector<Matrix> carried_new(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int c1 = m1.part.cell_of[static_cast<std::size_t>(i)];
        const Vector u = next.blocks[0].coef[static_cast<std::size_t>(c1)] *
                         g[0][static_cast<std::size_t>(i)];
        carried_new[static_cast<std::size_t>(i)] =
            u * g[1][static_cast<std::size_t>(i)].transpose();
    }
    const std::vector<Matrix> cross_new = cell_average(law, m2.part, carried_new);

    BlockField f2;
    f2.part = m2.part;
    f2.degenerate = m2.degenerate;
    f2.coef.resize(static_cast<std::size_t>(m2.part.cells()));
    for (int c = 0; c < m2.part.cells(); ++c) {
        f2.coef[static_cast<std::size_t>(c)] =
            (-m2.jac[static_cast<std::size_t>(c)].transpose() -
             cross_new[static_cast<std::size_t>(c)]) *
            m2.var_pinv[static_cast<std::size_t>(c)];
    }
    next.blocks.push_back(std::move(f2));
    return next;
}

namespace {

/// Gauss-Seidel sweep over all blocks: each block in turn gets its
/// single-block projection minus the conditional cross terms against the
/// latest other-block coefficients. For more than two blocks.
ScoreField cyclic_step(const MomentModel& model, const DiscreteLaw& law,
                       const std::vector<BlockMoments>& moments,
                       const std::vector<std::vector<Vector>>& g,
                       ScoreField current) {
    const int n = law.size();
    const int blocks = model.block_count();
    for (int j = 0; j < blocks; ++j) {
        const auto& mj = moments[static_cast<std::size_t>(j)];
        std::vector<Matrix> pointwise(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            Vector other = Vector::Zero(model.param_dim);
            for (int l = 0; l < blocks; ++l) {
                if (l == j) continue;
                const auto& fl = current.blocks[static_cast<std::size_t>(l)];
                const int cl = fl.part.cell_of[static_cast<std::size_t>(i)];
                other += fl.coef[static_cast<std::size_t>(cl)] *
                         g[static_cast<std::size_t>(l)][static_cast<std::size_t>(i)];
            }
            pointwise[static_cast<std::size_t>(i)] =
                other * g[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)]
                            .transpose();
        }
        const std::vector<Matrix> cross = cell_average(law, mj.part, pointwise);
        for (int c = 0; c < mj.part.cells(); ++c) {
            current.blocks[static_cast<std::size_t>(j)]
                .coef[static_cast<std::size_t>(c)] =
                (-mj.jac[static_cast<std::size_t>(c)].transpose() -
                 cross[static_cast<std::size_t>(c)]) *
                mj.var_pinv[static_cast<std::size_t>(c)];
        }
    }
    return current;
}

double block_increment(const DiscreteLaw& law,
                       const std::vector<std::vector<Vector>>& g,
                       const BlockField& next, const BlockField& prev, int j) {
    double acc = 0.0;
    for (int i = 0; i < law.size(); ++i) {
        const int c = next.part.cell_of[static_cast<std::size_t>(i)];
        const Vector diff =
            (next.coef[static_cast<std::size_t>(c)] -
             prev.coef[static_cast<std::size_t>(c)]) *
            g[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
        acc += law.prob(i) * diff.squaredNorm();
    }
    return std::sqrt(acc);
}

}  // namespace

std::pair<ScoreField, BackfitTrace> backfit_solve(const MomentModel& model,
                                                  const DiscreteLaw& law,
                                                  const BackfitOptions& opts) {
    validate_against_law(model, law);
    if (opts.tol <= 0.0) throw ContractViolation("backfit_solve: tol must be positive");
    if (opts.max_iter < 1) {
        throw ContractViolation("backfit_solve: max_iter must be positive");
    }
    const bool cyclic = model.block_count() > 2;
    if (model.block_count() < 2) {
        throw ContractViolation("backfit_solve: needs at least two blocks");
    }

    std::vector<BlockMoments> moments;
    if (cyclic) {
        for (int j = 0; j < model.block_count(); ++j) {
            moments.push_back(block_moments(model, law, j));
        }
    }
    const std::vector<std::vector<Vector>> g = residuals_at_theta0(model, law);

    ScoreField prev = zero_field(model, law);
    BackfitTrace trace;
    trace.experimental_cycle = cyclic;
    trace.block_increments.assign(static_cast<std::size_t>(model.block_count()), {});

    for (int m = 1; m <= opts.max_iter; ++m) {
        ScoreField next = cyclic
                              ? cyclic_step(model, law, moments, g, prev)
                              : backfit_step(model, law, prev);
        const double inc = ScoreField::l2_distance(next, prev, model, law);
        trace.score_increments.push_back(inc);
        for (int j = 0; j < model.block_count(); ++j) {
            trace.block_increments[static_cast<std::size_t>(j)].push_back(
                block_increment(law, g, next.blocks[static_cast<std::size_t>(j)],
                                prev.blocks[static_cast<std::size_t>(j)], j));
        }
        prev = std::move(next);
        trace.iterations = m;
        if (inc < opts.tol) {
            trace.converged = true;
            break;
        }
    }
    return {std::move(prev), std::move(trace)};
}

ScoreField oracle_projection(const MomentModel& model, const DiscreteLaw& law) {
    validate_against_law(model, law);
    if (model.block_count() != 2) {
        throw ContractViolation("oracle_projection: defined for exactly two blocks");
    }
    const BlockMoments m1 = block_moments(model, law, 0);
    const BlockMoments m2 = block_moments(model, law, 1);
    const auto g = residuals_at_theta0(model, law);
    const int n = law.size();
    const int d = model.param_dim;
    const int p1 = model.blocks[0].output_dim;
    const int p2 = model.blocks[1].output_dim;
    const int n1 = m1.part.cells() * p1;  // unknown columns per theta row
    const int n2 = m2.part.cells() * p2;

    // The stationarity system decouples across the parameter coordinates:
    // one coefficient matrix, d right-hand sides. Rows are the two equations
    // at every support point, scaled by sqrt(prob) so the least-squares
    // residual is the L2(P) residual.
    Matrix a = Matrix::Zero(2 * n, n1 + n2);
    Matrix rhs = Matrix::Zero(2 * n, d);

    auto col1 = [&](int cell, int comp) { return cell * p1 + comp; };
    auto col2 = [&](int cell, int comp) { return n1 + cell * p2 + comp; };

    for (int i = 0; i < n; ++i) {
        const double w = std::sqrt(law.prob(i));
        const int c1 = m1.part.cell_of[static_cast<std::size_t>(i)];
        const int c2 = m2.part.cell_of[static_cast<std::size_t>(i)];
        const Vector& g1 = g[0][static_cast<std::size_t>(i)];
        const Vector& g2 = g[1][static_cast<std::size_t>(i)];

        // First equation at z: a1(c1) g1 + E[a2 g2 g1'|c1] V1^+ g1 = rho1.
        {
            const int row = 2 * i;
            for (int comp = 0; comp < p1; ++comp) {
                a(row, col1(c1, comp)) += w * g1(comp);
            }
            const Vector h = m1.var_pinv[static_cast<std::size_t>(c1)] * g1;
            for (int other : m1.part.members[static_cast<std::size_t>(c1)]) {
                const double share =
                    law.prob(other) / m1.part.prob[static_cast<std::size_t>(c1)];
                const double kappa =
                    g[0][static_cast<std::size_t>(other)].dot(h) * share;
                const int c2o = m2.part.cell_of[static_cast<std::size_t>(other)];
                const Vector& g2o = g[1][static_cast<std::size_t>(other)];
                for (int comp = 0; comp < p2; ++comp) {
                    a(row, col2(c2o, comp)) += w * kappa * g2o(comp);
                }
            }
            const Vector rho1 = -m1.jac[static_cast<std::size_t>(c1)].transpose() *
                                m1.var_pinv[static_cast<std::size_t>(c1)] * g1;
            rhs.row(row) = w * rho1.transpose();
        }
        // Second equation at z: a2(c2) g2 + E[a1 g1 g2'|c2] V2^+ g2 = rho2.
        {
            const int row = 2 * i + 1;
            for (int comp = 0; comp < p2; ++comp) {
                a(row, col2(c2, comp)) += w * g2(comp);
            }
            const Vector h = m2.var_pinv[static_cast<std::size_t>(c2)] * g2;
            for (int other : m2.part.members[static_cast<std::size_t>(c2)]) {
                const double share =
                    law.prob(other) / m2.part.prob[static_cast<std::size_t>(c2)];
                const double kappa =
                    g[1][static_cast<std::size_t>(other)].dot(h) * share;
                const int c1o = m1.part.cell_of[static_cast<std::size_t>(other)];
                const Vector& g1o = g[0][static_cast<std::size_t>(other)];
                for (int comp = 0; comp < p1; ++comp) {
                    a(row, col1(c1o, comp)) += w * kappa * g1o(comp);
                }
            }
            const Vector rho2 = -m2.jac[static_cast<std::size_t>(c2)].transpose() *
                                m2.var_pinv[static_cast<std::size_t>(c2)] * g2;
            rhs.row(row) = w * rho2.transpose();
        }
    }

    const Matrix solution = a.completeOrthogonalDecomposition().solve(rhs);

    ScoreField field;
    BlockField f1;
    f1.part = m1.part;
    f1.degenerate = m1.degenerate;
    for (int c = 0; c < m1.part.cells(); ++c) {
        Matrix coef(d, p1);
        for (int comp = 0; comp < p1; ++comp) {
            coef.col(comp) = solution.row(col1(c, comp)).transpose();
        }
        f1.coef.push_back(std::move(coef));
    }
    field.blocks.push_back(std::move(f1));

    BlockField f2;
    f2.part = m2.part;
    f2.degenerate = m2.degenerate;
    for (int c = 0; c < m2.part.cells(); ++c) {
        Matrix coef(d, p2);
        for (int comp = 0; comp < p2; ++comp) {
            coef.col(comp) = solution.row(col2(c, comp)).transpose();
        }
        f2.coef.push_back(std::move(coef));
    }
    field.blocks.push_back(std::move(f2));
    return field;
}

SequentialResult sequential_closed_form(const MomentModel& model,
                                        const DiscreteLaw& law) {
    validate_against_law(model, law);
    if (model.block_count() != 2) {
        throw ContractViolation("sequential_closed_form: defined for exactly two blocks");
    }
    const Partition part1 = partition_by(law, model.blocks[0].cond);
    const Partition part2 = partition_by(law, model.blocks[1].cond);

    // Nesting: every second-level cell must sit inside one first-level cell.
    std::vector<int> coarse_of(static_cast<std::size_t>(part2.cells()), -1);
    for (int c2 = 0; c2 < part2.cells(); ++c2) {
        for (int i : part2.members[static_cast<std::size_t>(c2)]) {
            const int c1 = part1.cell_of[static_cast<std::size_t>(i)];
            if (coarse_of[static_cast<std::size_t>(c2)] < 0) {
                coarse_of[static_cast<std::size_t>(c2)] = c1;
            } else if (coarse_of[static_cast<std::size_t>(c2)] != c1) {
                throw ContractViolation(
                    "sequential_closed_form: second-level cell " +
                    key_string(part2.keys[static_cast<std::size_t>(c2)]) +
                    " straddles first-level cells; conditioning sets are not nested");
            }
        }
    }

    // Residualize the first block on the second level with frozen weights
    // B(cell) = E[g1 g2'|cell] V(g2|cell)^{-1}; the variance must be truly
    // invertible cell by cell.
    const auto g = residuals_at_theta0(model, law);
    CondTable v2 = block_cond_variance(model, law, 1, model.theta0);
    const int p2 = model.blocks[1].output_dim;
    std::vector<Matrix> b(static_cast<std::size_t>(part2.cells()));
    {
        std::vector<Matrix> cross_pt(static_cast<std::size_t>(law.size()));
        for (int i = 0; i < law.size(); ++i) {
            cross_pt[static_cast<std::size_t>(i)] =
                g[0][static_cast<std::size_t>(i)] *
                g[1][static_cast<std::size_t>(i)].transpose();
        }
        const std::vector<Matrix> cross = cell_average(law, part2, cross_pt);
        for (int c2 = 0; c2 < part2.cells(); ++c2) {
            const Matrix& v = v2.value[static_cast<std::size_t>(c2)];
            if (numerical_rank(v) < p2) {
                throw ContractViolation(
                    "sequential_closed_form: singular second-block variance at cell " +
                    key_string(part2.keys[static_cast<std::size_t>(c2)]));
            }
            b[static_cast<std::size_t>(c2)] =
                cross[static_cast<std::size_t>(c2)] * v.inverse();
        }
    }

    // The transformed first block: g1 - B(x2) g2 with B held fixed.
    MomentModel transformed = model;
    {
        const MomentBlock& b1 = model.blocks[0];
        const MomentBlock& b2 = model.blocks[1];
        MomentBlock blk = b1;
        blk.family = b1.family + "-residualized";
        blk.smooth = b1.smooth && b2.smooth;
        blk.fd_step = std::max(b1.fd_step, b2.fd_step);
        auto weight_at = [part2, b](const Vector& z) -> const Matrix& {
            const int c = part2.find(subvector(z, part2.cond));
            if (c < 0) {
                throw ContractViolation(
                    "sequential_closed_form: point falls in no second-level cell");
            }
            return b[static_cast<std::size_t>(c)];
        };
        blk.eval = [b1, b2, weight_at](const Vector& z, const Vector& theta) {
            return Vector(b1.eval(z, theta) - weight_at(z) * b2.eval(z, theta));
        };
        if (b1.pointwise_jacobian && b2.pointwise_jacobian) {
            blk.pointwise_jacobian = [b1, b2, weight_at](const Vector& z,
                                                         const Vector& theta) {
                return Matrix(b1.pointwise_jacobian(z, theta) -
                              weight_at(z) * b2.pointwise_jacobian(z, theta));
            };
        } else {
            blk.pointwise_jacobian = nullptr;
        }
        transformed.blocks[0] = std::move(blk);
    }
    validate_against_law(transformed, law);

    SequentialResult result;
    result.transformed_model = transformed;
    result.transformed_field.blocks.push_back(single_block_field(transformed, law, 0));
    result.transformed_field.blocks.push_back(single_block_field(transformed, law, 1));

    // The same combination on the original blocks: the first coefficient is
    // unchanged, the second absorbs -a1 B cell by cell.
    result.original_field = result.transformed_field;
    const auto& a1 = result.transformed_field.blocks[0];
    auto& a2 = result.original_field.blocks[1];
    for (int c2 = 0; c2 < part2.cells(); ++c2) {
        const int c1 = coarse_of[static_cast<std::size_t>(c2)];
        a2.coef[static_cast<std::size_t>(c2)] -=
            a1.coef[static_cast<std::size_t>(c1)] * b[static_cast<std::size_t>(c2)];
    }
    return result;
}

}  // namespace cmr
