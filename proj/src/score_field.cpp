#include "cmr/score_field.hpp"

#include <cmath>
#include <string>

#include "cmr/errors.hpp"

namespace cmr {

Vector ScoreField::evaluate(const MomentModel& model, const Vector& z,
                            const Vector& theta) const {
    if (blocks.size() != model.blocks.size()) {
        throw ContractViolation("score field: block count differs from model");
    }
    if (blocks.empty() || blocks[0].coef.empty()) {
        throw ContractViolation("score field: no coefficients");
    }
    // Row count comes from the field so that coefficient blocks for a
    // parameter other than the model's own (the selection case) still apply.
    Vector s = Vector::Zero(blocks[0].coef[0].rows());
    for (std::size_t j = 0; j < blocks.size(); ++j) {
        const auto& field = blocks[j];
        const int cell = field.part.find(subvector(z, field.part.cond));
        if (cell < 0) {
            throw ContractViolation("score field: point falls in no known cell of block " +
                                    std::to_string(j));
        }
        const Vector g = model.blocks[j].eval(z, theta);
        s += field.coef[static_cast<std::size_t>(cell)] * g;
    }
    return s;
}

double ScoreField::l2_distance(const ScoreField& a, const ScoreField& b,
                               const MomentModel& model, const DiscreteLaw& law) {
    double acc = 0.0;
    for (int i = 0; i < law.size(); ++i) {
        const Vector diff = a.evaluate(model, law.point(i), model.theta0) -
                            b.evaluate(model, law.point(i), model.theta0);
        acc += law.prob(i) * diff.squaredNorm();
    }
    return std::sqrt(acc);
}

ScoreField zero_field(const MomentModel& model, const DiscreteLaw& law) {
    ScoreField field;
    field.blocks.reserve(model.blocks.size());
    for (const auto& block : model.blocks) {
        BlockField bf;
        bf.part = partition_by(law, block.cond);
        bf.coef.assign(static_cast<std::size_t>(bf.part.cells()),
                       Matrix::Zero(model.param_dim, block.output_dim));
        bf.degenerate.assign(static_cast<std::size_t>(bf.part.cells()), false);
        field.blocks.push_back(std::move(bf));
    }
    return field;
}

Matrix efficient_information(const MomentModel& model, const DiscreteLaw& law,
                             const ScoreField& field) {
    Matrix info = Matrix::Zero(model.param_dim, model.param_dim);
    for (int i = 0; i < law.size(); ++i) {
        const Vector s = field.evaluate(model, law.point(i), model.theta0);
        info += law.prob(i) * (s * s.transpose());
    }
    return symmetrize(info);
}

}  // namespace cmr
