#include <gtest/gtest.h>

#include <cmath>

#include "cmr/builtins.hpp"
#include "cmr/errors.hpp"
#include "cmr/model.hpp"
#include "test_support.hpp"

namespace cmr {
namespace {

using testing::max_abs_diff;
using testing::point4;

TEST(StackMoments, ConcatenatesBlocksInOrder) {
    const Builtin a = make_builtin("DGP-A");
    const Vector z = point4(1.0, 0.0, 1.0, -1.0);
    const Vector g = stack_moments(a.model, z, a.model.theta0);
    ASSERT_EQ(g.size(), 2);
    EXPECT_DOUBLE_EQ(g(0), 1.0);
    EXPECT_DOUBLE_EQ(g(1), -1.0);
}

TEST(StackMoments, UnobservedRowContributesOnlySelectionResidual) {
    // With the selection indicator off, the inverse-probability block
    // vanishes and the selection block equals -1 exactly.
    const Builtin c = make_builtin("DGP-C");
    for (int i = 0; i < c.law.size(); ++i) {
        if (c.law.point(i)(3) != 0.0) continue;
        const Vector g = stack_moments(c.model, c.law.point(i), c.model.theta0);
        ASSERT_EQ(g.size(), 2);
        EXPECT_DOUBLE_EQ(g(0), 0.0);
        EXPECT_DOUBLE_EQ(g(1), -1.0);
    }
}

TEST(StackMoments, RejectsDimensionMismatch) {
    const Builtin a = make_builtin("DGP-A");
    Vector long_theta(2);
    long_theta << 0.0, 0.0;
    EXPECT_THROW(stack_moments(a.model, point4(0, 0, 1, 1), long_theta),
                 ContractViolation);
    Vector short_z(2);
    short_z << 0.0, 0.0;
    EXPECT_THROW(stack_moments(a.model, short_z, a.model.theta0),
                 ContractViolation);
}

TEST(StackMoments, NamesFailingBlock) {
    Builtin a = make_builtin("DGP-A");
    a.model.blocks[1].eval = [](const Vector&, const Vector&) -> Vector {
        throw std::runtime_error("boom");
    };
    try {
        stack_moments(a.model, point4(0, 0, 1, 1), a.model.theta0);
        FAIL() << "expected ContractViolation";
    } catch (const ContractViolation& e) {
        EXPECT_NE(std::string(e.what()).find("block 1"), std::string::npos);
    }
}

TEST(ConditionalJacobian, AnalyticUnitSlopePerCell) {
    const Builtin a = make_builtin("DGP-A");
    const CondTable t =
        block_conditional_jacobian(a.model, a.law, 0, a.model.theta0);
    ASSERT_EQ(t.part.cells(), 2);
    for (int c = 0; c < 2; ++c) {
        ASSERT_EQ(t.at_cell(c).rows(), 1);
        ASSERT_EQ(t.at_cell(c).cols(), 1);
        EXPECT_NEAR(t.at_cell(c)(0, 0), -1.0, 1e-14);
    }
}

TEST(ConditionalJacobian, FiniteDifferenceMatchesAnalytic) {
    Builtin a = make_builtin("DGP-A");
    const CondTable exact =
        block_conditional_jacobian(a.model, a.law, 1, a.model.theta0);
    a.model.mode = JacobianMode::FiniteDifference;
    const CondTable fd =
        block_conditional_jacobian(a.model, a.law, 1, a.model.theta0);
    ASSERT_EQ(fd.part.cells(), exact.part.cells());
    for (int c = 0; c < fd.part.cells(); ++c) {
        EXPECT_LT(max_abs_diff(fd.at_cell(c), exact.at_cell(c)), 1e-6);
    }
}

TEST(ConditionalJacobian, MarginalBlockHasOneCell) {
    Builtin a = make_builtin("DGP-A");
    a.model.blocks[0].cond.clear();
    const CondTable t =
        block_conditional_jacobian(a.model, a.law, 0, a.model.theta0);
    ASSERT_EQ(t.part.cells(), 1);
    EXPECT_NEAR(t.at_cell(0)(0, 0), -1.0, 1e-14);
}

/// Indicator residual on a half-integer lattice: the block carries an
/// absolute step of one half, which brackets the response atom and turns the
/// finite difference into the exact cell-mass increment over the step.
TEST(ConditionalJacobian, LatticeStepRecoversMassDerivative) {
    const Builtin q = make_builtin("DGP-Q");
    for (int j = 0; j < q.model.block_count(); ++j) {
        const CondTable t =
            block_conditional_jacobian(q.model, q.law, j, q.model.theta0);
        for (int c = 0; c < t.part.cells(); ++c) {
            EXPECT_NEAR(t.at_cell(c)(0, 0), -0.25, 1e-12);
        }
    }
}

TEST(CondVarianceOfBlock, UnitResidualVariance) {
    const Builtin a = make_builtin("DGP-A");
    for (int j = 0; j < 2; ++j) {
        const CondTable t =
            block_cond_variance(a.model, a.law, j, a.model.theta0);
        for (int c = 0; c < t.part.cells(); ++c) {
            EXPECT_NEAR(t.at_cell(c)(0, 0), 1.0, 1e-14);
        }
    }
}

TEST(CondVarianceOfBlock, SelectionResidualVarianceIsOddsRatio) {
    // Var((delta - pi)/pi | W) = (1 - pi)/pi; the selection probabilities of
    // the missing-response builtin are 1/2 and 4/5.
    const Builtin c = make_builtin("DGP-C");
    const CondTable t = block_cond_variance(c.model, c.law, 1, c.model.theta0);
    for (int cell = 0; cell < t.part.cells(); ++cell) {
        const double v = t.at_cell(cell)(0, 0);
        const double expected = t.part.keys[cell][1] > 0.5 ? 0.25 : 1.0;
        EXPECT_NEAR(v, expected, 1e-12);
    }
}

TEST(ValidateModel, AcceptsAllBuiltins) {
    for (const auto& name : builtin_names()) {
        EXPECT_NO_THROW(validate_model(make_builtin(name).model)) << name;
    }
}

TEST(ValidateModel, RejectsAnalyticModeForNonSmoothBlocks) {
    Builtin q = make_builtin("DGP-Q");
    q.model.mode = JacobianMode::Analytic;
    EXPECT_THROW(validate_model(q.model), ContractViolation);
}

TEST(ValidateModel, RejectsMalformedBlocks) {
    Builtin a = make_builtin("DGP-A");
    a.model.blocks[0].cond = {1, 0};
    EXPECT_THROW(validate_model(a.model), ContractViolation);

    Builtin b = make_builtin("DGP-A");
    b.model.blocks[0].cond = {0, 0};
    EXPECT_THROW(validate_model(b.model), ContractViolation);

    Builtin c = make_builtin("DGP-A");
    c.model.blocks[0].cond = {9};
    EXPECT_THROW(validate_model(c.model), ContractViolation);

    Builtin d = make_builtin("DGP-A");
    d.model.param_dim = 0;
    d.model.theta0 = Vector();
    EXPECT_THROW(validate_model(d.model), ContractViolation);
}

TEST(ValidateAgainstLaw, DetectsViolatedRestriction) {
    Builtin a = make_builtin("DGP-A");
    EXPECT_NO_THROW(validate_against_law(a.model, a.law));
    a.model.theta0(0) = 0.3;
    EXPECT_THROW(validate_against_law(a.model, a.law), ContractViolation);
}

TEST(CheckAssumptions, CleanModelPasses) {
    const Builtin a = make_builtin("DGP-A");
    const DiagnosticsReport rep = check_assumptions(a.model, a.law);
    ASSERT_EQ(rep.blocks.size(), 2u);
    EXPECT_TRUE(rep.ok());
    EXPECT_TRUE(rep.restrictions_hold);
    EXPECT_FALSE(rep.selection_beta.has_value());
    for (const auto& blk : rep.blocks) {
        EXPECT_NEAR(blk.sup_variance_norm, 1.0, 1e-12);
        EXPECT_EQ(blk.singular_variance_cells, 0);
        EXPECT_TRUE(blk.joint_second_moment_ok);
        EXPECT_TRUE(blk.single_block_info_nonsingular);
    }
}

TEST(CheckAssumptions, ReportsSelectionMargin) {
    const Builtin c = make_builtin("DGP-C");
    const DiagnosticsReport rep = check_assumptions(c.model, c.law);
    ASSERT_TRUE(rep.selection_beta.has_value());
    EXPECT_NEAR(*rep.selection_beta, 0.5, 1e-12);
    EXPECT_TRUE(rep.bounded_selection_ok);
    EXPECT_TRUE(rep.restrictions_hold);
}

TEST(CheckAssumptions, FlagsDegenerateVariance) {
    // Replace one response with a constant: the restriction fails and the
    // cell variance collapses, both of which the report must surface.
    Builtin a = make_builtin("DGP-A");
    std::vector<Vector> support;
    Vector probs(a.law.size());
    for (int i = 0; i < a.law.size(); ++i) {
        Vector z = a.law.point(i);
        z(2) = 1.0;
        support.push_back(z);
        probs(i) = a.law.prob(i);
    }
    // Collapsing z2 duplicates points; merge their masses by hand.
    const DiscreteLaw degenerate = [&] {
        std::vector<Vector> pts;
        std::vector<double> ps;
        for (int i = 0; i < static_cast<int>(support.size()); ++i) {
            bool found = false;
            for (std::size_t k = 0; k < pts.size(); ++k) {
                if (pts[k] == support[i]) {
                    ps[k] += probs(i);
                    found = true;
                }
            }
            if (!found) {
                pts.push_back(support[i]);
                ps.push_back(probs(i));
            }
        }
        Vector pv(static_cast<int>(ps.size()));
        for (std::size_t k = 0; k < ps.size(); ++k) pv(k) = ps[k];
        return DiscreteLaw(pts, pv);
    }();
    const DiagnosticsReport rep = check_assumptions(a.model, degenerate);
    EXPECT_FALSE(rep.ok());
    EXPECT_FALSE(rep.restrictions_hold);
    EXPECT_GT(rep.blocks[0].singular_variance_cells, 0);
}

TEST(RandomCases, SatisfyTheirOwnRestrictions) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const RandomTwoBlockCase rc = random_two_block_case(seed);
        EXPECT_NO_THROW(validate_model(rc.model)) << "seed " << seed;
        EXPECT_NO_THROW(validate_against_law(rc.model, rc.law))
            << "seed " << seed;
    }
}

TEST(RandomCases, DeterministicInSeed) {
    const RandomTwoBlockCase a = random_two_block_case(11);
    const RandomTwoBlockCase b = random_two_block_case(11);
    const RandomTwoBlockCase c = random_two_block_case(12);
    ASSERT_EQ(a.law.size(), b.law.size());
    for (int i = 0; i < a.law.size(); ++i) {
        EXPECT_EQ(a.law.point(i), b.law.point(i));
        EXPECT_EQ(a.law.prob(i), b.law.prob(i));
    }
    bool differs = c.law.size() != a.law.size();
    for (int i = 0; !differs && i < a.law.size(); ++i) {
        differs = a.law.point(i) != c.law.point(i) ||
                  a.law.prob(i) != c.law.prob(i);
    }
    EXPECT_TRUE(differs);
}

}  // namespace
}  // namespace cmr
