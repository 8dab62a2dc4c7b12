#include "cmr/instruments.hpp"

#include <string>

#include "cmr/errors.hpp"

namespace cmr {

InstrumentFamily default_family(const DiscreteLaw& law) {
    InstrumentFamily family;
    family.name = "indicator";
    family.members.push_back([](const Vector&) { return 1.0; });
    // Support is stored lexicographically, so indicator order follows it.
    for (int i = 0; i < law.size(); ++i) {
        const Vector point = law.point(i);
        family.members.push_back([point](const Vector& z) {
            return z.size() == point.size() && (z.array() == point.array()).all()
                       ? 1.0
                       : 0.0;
        });
    }
    return family;
}

namespace {

void enumerate_monomials(int z_dim, int degree_left, int coord,
                         std::vector<int>& powers,
                         std::vector<std::vector<int>>& out) {
    if (coord == z_dim) {
        out.push_back(powers);
        return;
    }
    for (int d = 0; d <= degree_left; ++d) {
        powers[static_cast<std::size_t>(coord)] = d;
        enumerate_monomials(z_dim, degree_left - d, coord + 1, powers, out);
    }
    powers[static_cast<std::size_t>(coord)] = 0;
}

}  // namespace

InstrumentFamily polynomial_family(int z_dim, int max_degree) {
    if (z_dim <= 0) throw ContractViolation("polynomial_family: z_dim must be positive");
    if (max_degree < 0) {
        throw ContractViolation("polynomial_family: max_degree must be nonnegative");
    }
    // Graded order: all monomials of total degree 0, then 1, and so on;
    // within a grade the recursion yields lexicographic power tuples.
    std::vector<std::vector<int>> monomials;
    for (int total = 0; total <= max_degree; ++total) {
        std::vector<std::vector<int>> grade;
        std::vector<int> powers(static_cast<std::size_t>(z_dim), 0);
        enumerate_monomials(z_dim, total, 0, powers, grade);
        for (auto& m : grade) {
            int sum = 0;
            for (int p : m) sum += p;
            if (sum == total) monomials.push_back(std::move(m));
        }
    }
    InstrumentFamily family;
    family.name = "polynomial";
    for (const auto& powers : monomials) {
        family.members.push_back([powers](const Vector& z) {
            double value = 1.0;
            for (std::size_t c = 0; c < powers.size(); ++c) {
                for (int rep = 0; rep < powers[c]; ++rep) value *= z(static_cast<int>(c));
            }
            return value;
        });
    }
    return family;
}

CondTable projected_instrument(const DiscreteLaw& law, const MomentModel& model,
                               const InstrumentFamily& family, int s, int block) {
    if (s < 0 || s >= family.size()) {
        throw ContractViolation("projected_instrument: member index out of range");
    }
    if (block < 0 || block >= model.block_count()) {
        throw ContractViolation("projected_instrument: block index out of range");
    }
    const auto& w = family.members[static_cast<std::size_t>(s)];
    return cond_expectation(
        law,
        [&](const Vector& z) -> Matrix {
            Matrix m(1, 1);
            m(0, 0) = w(z);
            return m;
        },
        model.blocks[static_cast<std::size_t>(block)].cond);
}

StackedInstruments build_stacked(const DiscreteLaw& law, const MomentModel& model,
                                 const InstrumentFamily& family, int k) {
    if (k < 1 || k > family.size()) {
        throw ContractViolation("build_stacked: depth k must lie in [1, family size]");
    }
    const int p = model.total_output_dim();
    StackedInstruments stacked;
    stacked.k = k;
    stacked.p = p;
    stacked.w.assign(static_cast<std::size_t>(law.size()), Matrix::Zero(k * p, p));

    for (int s = 0; s < k; ++s) {
        int offset = 0;
        for (int j = 0; j < model.block_count(); ++j) {
            const CondTable proj = projected_instrument(law, model, family, s, j);
            const int pj = model.blocks[static_cast<std::size_t>(j)].output_dim;
            for (int i = 0; i < law.size(); ++i) {
                const double value = proj.at_point(i)(0, 0);
                for (int r = 0; r < pj; ++r) {
                    stacked.w[static_cast<std::size_t>(i)](s * p + offset + r,
                                                           offset + r) = value;
                }
            }
            offset += pj;
        }
    }
    return stacked;
}

}  // namespace cmr
