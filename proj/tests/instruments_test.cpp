#include <gtest/gtest.h>

#include "cmr/builtins.hpp"
#include "cmr/errors.hpp"
#include "cmr/instruments.hpp"
#include "test_support.hpp"

namespace cmr {
namespace {

using testing::point4;

TEST(DefaultFamily, ConstantPlusOneIndicatorPerSupportPoint) {
    const Builtin a = make_builtin("DGP-A");
    const InstrumentFamily fam = default_family(a.law);
    ASSERT_EQ(fam.size(), 17);
    // Member 0 is the constant.
    EXPECT_DOUBLE_EQ(fam.members[0](a.law.point(5)), 1.0);
    // Member i+1 indicates support point i, in law (lexicographic) order.
    for (int i = 0; i < a.law.size(); ++i) {
        for (int j = 0; j < a.law.size(); ++j) {
            EXPECT_DOUBLE_EQ(fam.members[i + 1](a.law.point(j)),
                             i == j ? 1.0 : 0.0);
        }
    }
}

TEST(PolynomialFamily, GradedLexicographicOrder) {
    // Within a grade the power tuples ascend lexicographically, so the last
    // coordinate moves first: 1, z4, z3, z2, z1 for four coordinates.
    const InstrumentFamily lin = polynomial_family(4, 1);
    ASSERT_EQ(lin.size(), 5);
    const Vector z = point4(2.0, 3.0, 5.0, 7.0);
    EXPECT_DOUBLE_EQ(lin.members[0](z), 1.0);
    EXPECT_DOUBLE_EQ(lin.members[1](z), 7.0);
    EXPECT_DOUBLE_EQ(lin.members[4](z), 2.0);

    const InstrumentFamily quad = polynomial_family(2, 2);
    ASSERT_EQ(quad.size(), 6);
    Vector xy(2);
    xy << 2.0, 3.0;
    EXPECT_DOUBLE_EQ(quad.members[3](xy), 9.0);  // y^2
    EXPECT_DOUBLE_EQ(quad.members[4](xy), 6.0);  // x y
    EXPECT_DOUBLE_EQ(quad.members[5](xy), 4.0);  // x^2
}

TEST(PolynomialFamily, RejectsBadArguments) {
    EXPECT_THROW(polynomial_family(0, 2), ContractViolation);
    EXPECT_THROW(polynomial_family(2, -1), ContractViolation);
}

/// A residual coordinate is mean independent of the other block's
/// conditioning variable, so its projection vanishes on every cell.
TEST(ProjectedInstrument, MeanIndependentMemberProjectsToZero) {
    const Builtin a = make_builtin("DGP-A");
    InstrumentFamily fam;
    fam.name = "custom";
    fam.members = {[](const Vector& z) { return z(2); }};
    const CondTable t = projected_instrument(a.law, a.model, fam, 0, 1);
    ASSERT_EQ(t.part.cells(), 2);
    for (int c = 0; c < t.part.cells(); ++c) {
        EXPECT_NEAR(t.at_cell(c)(0, 0), 0.0, 1e-15);
    }
}

TEST(ProjectedInstrument, FunctionOfOwnConditioningIsReproduced) {
    const Builtin a = make_builtin("DGP-A");
    InstrumentFamily fam;
    fam.members = {[](const Vector& z) { return 3.0 * z(0) - 1.0; }};
    const CondTable t = projected_instrument(a.law, a.model, fam, 0, 0);
    for (int c = 0; c < t.part.cells(); ++c) {
        EXPECT_NEAR(t.at_cell(c)(0, 0), 3.0 * t.part.keys[c][0] - 1.0, 1e-14);
    }
}

TEST(ProjectedInstrument, RejectsOutOfRangeIndices) {
    const Builtin a = make_builtin("DGP-A");
    const InstrumentFamily fam = default_family(a.law);
    EXPECT_THROW(projected_instrument(a.law, a.model, fam, fam.size(), 0),
                 ContractViolation);
    EXPECT_THROW(projected_instrument(a.law, a.model, fam, 0, 2),
                 ContractViolation);
}

TEST(BuildStacked, LevelsHoldBlockwiseProjections) {
    const Builtin a = make_builtin("DGP-A");
    InstrumentFamily fam;
    fam.members = {[](const Vector&) { return 1.0; },
                   [](const Vector& z) { return z(0) > 0.5 ? 1.0 : 0.0; }};
    const StackedInstruments si = build_stacked(a.law, a.model, fam, 2);
    EXPECT_EQ(si.k, 2);
    EXPECT_EQ(si.p, 2);
    ASSERT_EQ(si.w.size(), static_cast<std::size_t>(a.law.size()));
    for (int i = 0; i < a.law.size(); ++i) {
        const Matrix& w = si.w[i];
        ASSERT_EQ(w.rows(), 4);
        ASSERT_EQ(w.cols(), 2);
        // Level one: the constant projects to one on both blocks.
        EXPECT_DOUBLE_EQ(w(0, 0), 1.0);
        EXPECT_DOUBLE_EQ(w(1, 1), 1.0);
        // Level two: the indicator of X1 = 1 is itself on the first block's
        // cells and averages to one half on the second block's cells.
        const double x1 = a.law.point(i)(0);
        EXPECT_DOUBLE_EQ(w(2, 0), x1 > 0.5 ? 1.0 : 0.0);
        EXPECT_DOUBLE_EQ(w(3, 1), 0.5);
        // Off-diagonal entries of every level stay zero.
        EXPECT_DOUBLE_EQ(w(0, 1), 0.0);
        EXPECT_DOUBLE_EQ(w(1, 0), 0.0);
        EXPECT_DOUBLE_EQ(w(2, 1), 0.0);
        EXPECT_DOUBLE_EQ(w(3, 0), 0.0);
    }
}

TEST(BuildStacked, RejectsDepthOutsideFamily) {
    const Builtin a = make_builtin("DGP-A");
    const InstrumentFamily fam = default_family(a.law);
    EXPECT_THROW(build_stacked(a.law, a.model, fam, 0), ContractViolation);
    EXPECT_THROW(build_stacked(a.law, a.model, fam, fam.size() + 1),
                 ContractViolation);
}

}  // namespace
}  // namespace cmr
