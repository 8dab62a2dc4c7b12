#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cmr/law.hpp"
#include "cmr/model.hpp"

namespace cmr {

/// An ordered dictionary of scalar functions of Z used to build stacked
/// unconditional instruments.
struct InstrumentFamily {
    std::string name;
    std::vector<std::function<double(const Vector&)>> members;

    int size() const { return static_cast<int>(members.size()); }
};

/// Constant function first, then one indicator per support point in
/// lexicographic order (size = support size + 1). Projected on any
/// conditioning subset these indicators span all functions of it, so the
/// induced information sequence reaches the bound at finite depth.
InstrumentFamily default_family(const DiscreteLaw& law);

/// Monomials of the coordinates up to total degree max_degree, graded
/// lexicographic order, constant first.
InstrumentFamily polynomial_family(int z_dim, int max_degree);

/// E[w_s(Z) | X_block]: the scalar projection of family member s onto block
/// `block`'s conditioning cells (1x1 matrices).
CondTable projected_instrument(const DiscreteLaw& law, const MomentModel& model,
                               const InstrumentFamily& family, int s, int block);

/// Per support point, the (k p) x p stacked instrument matrix: level s holds
/// a p x p diagonal whose block-j diagonal entries repeat the projection of
/// member s onto block j's conditioning cells.
struct StackedInstruments {
    int k = 0;
    int p = 0;
    std::vector<Matrix> w;  // one (k p) x p matrix per support point
};

StackedInstruments build_stacked(const DiscreteLaw& law, const MomentModel& model,
                                 const InstrumentFamily& family, int k);

}  // namespace cmr
