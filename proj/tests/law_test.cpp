#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "cmr/builtins.hpp"
#include "cmr/errors.hpp"
#include "cmr/law.hpp"
#include "test_support.hpp"

namespace cmr {
namespace {

using testing::point4;

DiscreteLaw tiny_law() {
    std::vector<Vector> support;
    Vector p(3);
    Vector a(2), b(2), c(2);
    a << 1.0, 0.0;
    b << 0.0, 1.0;
    c << 0.0, 0.0;
    support = {a, b, c};
    p << 0.25, 0.25, 0.5;
    return DiscreteLaw(support, p);
}

TEST(DiscreteLaw, SortsSupportLexicographically) {
    const DiscreteLaw law = tiny_law();
    EXPECT_EQ(law.point(0)(0), 0.0);
    EXPECT_EQ(law.point(0)(1), 0.0);
    EXPECT_EQ(law.point(1)(0), 0.0);
    EXPECT_EQ(law.point(1)(1), 1.0);
    EXPECT_EQ(law.point(2)(0), 1.0);
    // Probabilities travel with their points through the sort.
    EXPECT_DOUBLE_EQ(law.prob(0), 0.5);
    EXPECT_DOUBLE_EQ(law.prob(2), 0.25);
}

TEST(DiscreteLaw, FindLocatesExactPoints) {
    const DiscreteLaw law = tiny_law();
    Vector z(2);
    z << 0.0, 1.0;
    EXPECT_EQ(law.find(z), 1);
    z << 2.0, 2.0;
    EXPECT_EQ(law.find(z), -1);
}

TEST(DiscreteLaw, RejectsBadInput) {
    Vector z1(1), z2(1);
    z1 << 0.0;
    z2 << 1.0;
    Vector p(2);
    p << 0.5, 0.5;
    EXPECT_THROW(DiscreteLaw({z1, z1}, p), ContractViolation);  // duplicate
    Vector neg(2);
    neg << 1.5, -0.5;
    EXPECT_THROW(DiscreteLaw({z1, z2}, neg), ContractViolation);
    Vector off(2);
    off << 0.5, 0.6;
    EXPECT_THROW(DiscreteLaw({z1, z2}, off), ContractViolation);  // sums to 1.1
    EXPECT_THROW(DiscreteLaw({z1}, p), ContractViolation);  // length mismatch
}

TEST(Partition, GroupsByCoordinateValues) {
    const Builtin a = make_builtin("DGP-A");
    const Partition part = partition_by(a.law, {0});
    ASSERT_EQ(part.cells(), 2);
    EXPECT_DOUBLE_EQ(part.prob[0], 0.5);
    EXPECT_DOUBLE_EQ(part.prob[1], 0.5);
    EXPECT_EQ(part.keys[0], std::vector<double>{0.0});
    EXPECT_EQ(part.keys[1], std::vector<double>{1.0});
    for (int i = 0; i < a.law.size(); ++i) {
        EXPECT_EQ(part.cell_of[i], a.law.point(i)(0) > 0.5 ? 1 : 0);
    }
}

TEST(Partition, EmptyConditioningIsOneCell) {
    const Builtin a = make_builtin("DGP-A");
    const Partition part = partition_by(a.law, {});
    ASSERT_EQ(part.cells(), 1);
    EXPECT_DOUBLE_EQ(part.prob[0], 1.0);
    EXPECT_TRUE(part.keys[0].empty());
}

TEST(Partition, NearestPrefersLexicographicallySmallerOnTies) {
    const Builtin a = make_builtin("DGP-A");
    const Partition part = partition_by(a.law, {0});
    EXPECT_EQ(part.nearest({0.5}), 0);       // equidistant to 0 and 1
    EXPECT_EQ(part.nearest({0.9}), 1);       // strictly closer to 1
    EXPECT_EQ(part.nearest({-3.0}), 0);
    EXPECT_EQ(part.find({0.5}), -1);         // not an exact key
}

TEST(Subvector, PicksCoordinatesInOrder) {
    const Vector z = point4(7.0, 8.0, 9.0, 10.0);
    EXPECT_EQ(subvector(z, {1, 3}), (std::vector<double>{8.0, 10.0}));
    EXPECT_TRUE(subvector(z, {}).empty());
}

/// The two residual coordinates of the homoskedastic builtin are independent
/// given the design, so their product has zero conditional mean on every
/// joint cell.
TEST(CondExpectation, ProductOfIndependentResidualsIsZero) {
    const Builtin a = make_builtin("DGP-A");
    const CondTable t = cond_expectation(
        a.law,
        [](const Vector& z) {
            Matrix m(1, 1);
            m(0, 0) = z(2) * z(3);
            return m;
        },
        {0, 1});
    ASSERT_EQ(t.part.cells(), 4);
    for (int c = 0; c < t.part.cells(); ++c) {
        EXPECT_NEAR(t.at_cell(c)(0, 0), 0.0, 1e-15);
    }
}

TEST(CondVariance, CentersBeforeSquaring) {
    // Shift one residual by a constant: variance must not change.
    const Builtin a = make_builtin("DGP-A");
    const auto f = [](const Vector& z) {
        Vector v(1);
        v << z(2) + 5.0;
        return v;
    };
    const CondTable t = cond_variance(a.law, f, {0});
    for (int c = 0; c < t.part.cells(); ++c) {
        EXPECT_NEAR(t.at_cell(c)(0, 0), 1.0, 1e-12);
    }
}

TEST(Expectation, MatchesHandComputedMoment) {
    const DiscreteLaw law = tiny_law();
    const Matrix m = expectation(law, [](const Vector& z) {
        Matrix out(1, 1);
        out(0, 0) = z(0) + 2.0 * z(1);
        return out;
    });
    EXPECT_DOUBLE_EQ(m(0, 0), 0.25 * 1.0 + 0.25 * 2.0);
}

TEST(Sampling, DeterministicForFixedSeed) {
    const Builtin a = make_builtin("DGP-A");
    const SampleSet s1 = sample_from(a.law, 200, 42);
    const SampleSet s2 = sample_from(a.law, 200, 42);
    const SampleSet s3 = sample_from(a.law, 200, 43);
    ASSERT_EQ(s1.size(), 200);
    EXPECT_EQ(s1.seed, 42u);
    bool identical = true, different_seed_differs = false;
    for (int i = 0; i < 200; ++i) {
        identical = identical && s1.rows[i] == s2.rows[i];
        different_seed_differs =
            different_seed_differs || s1.rows[i] != s3.rows[i];
    }
    EXPECT_TRUE(identical);
    EXPECT_TRUE(different_seed_differs);
}

TEST(Sampling, FrequenciesMatchProbabilities) {
    const Builtin a = make_builtin("DGP-A");
    const int n = 100000;
    const DiscreteLaw emp = empirical_law(sample_from(a.law, n, 7));
    // Four standard errors of a binomial(1/16) share.
    const double band = 4.0 * std::sqrt((1.0 / 16.0) * (15.0 / 16.0) / n);
    ASSERT_EQ(emp.size(), 16);
    for (int i = 0; i < emp.size(); ++i) {
        const int j = a.law.find(emp.point(i));
        ASSERT_GE(j, 0);
        EXPECT_NEAR(emp.prob(i), a.law.prob(j), band);
    }
}

TEST(Sampling, RejectsNonPositiveCount) {
    const Builtin a = make_builtin("DGP-A");
    EXPECT_THROW(sample_from(a.law, 0, 1), ContractViolation);
}

TEST(EmpiricalLaw, CountsDistinctRows) {
    SampleSet s;
    Vector a(1), b(1);
    a << 1.0;
    b << 2.0;
    s.rows = {a, b, a, a};
    const DiscreteLaw emp = empirical_law(s);
    ASSERT_EQ(emp.size(), 2);
    EXPECT_DOUBLE_EQ(emp.prob(0), 0.75);
    EXPECT_DOUBLE_EQ(emp.prob(1), 0.25);
}

TEST(LawIo, RoundTripsExactly) {
    const Builtin b = make_builtin("DGP-B");
    std::stringstream ss;
    write_law(b.law, ss);
    const DiscreteLaw back = read_law(ss);
    ASSERT_EQ(back.size(), b.law.size());
    for (int i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back.point(i), b.law.point(i));
        EXPECT_EQ(back.prob(i), b.law.prob(i));
    }
}

TEST(LawIo, SkipsCommentsAndBlankLines) {
    std::stringstream ss("# header\n\n0 0.25\n1 0.75\n");
    const DiscreteLaw law = read_law(ss);
    ASSERT_EQ(law.size(), 2);
    EXPECT_DOUBLE_EQ(law.prob(1), 0.75);
}

TEST(LawIo, RejectsRaggedRows) {
    std::stringstream ss("0 1 0.5\n0 0.5\n");
    EXPECT_THROW(read_law(ss), ContractViolation);
}

TEST(LawIo, SaveAndLoadThroughFiles) {
    const auto path =
        std::filesystem::temp_directory_path() / "cmr_law_roundtrip.txt";
    const Builtin a = make_builtin("DGP-A");
    save_law(a.law, path.string());
    const DiscreteLaw back = load_law(path.string());
    EXPECT_EQ(back.size(), a.law.size());
    std::filesystem::remove(path);
    EXPECT_THROW(load_law(path.string()), ContractViolation);
}

}  // namespace
}  // namespace cmr
