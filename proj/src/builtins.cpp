#include "cmr/builtins.hpp"

#include <cmath>
#include <cstdint>

#include "cmr/errors.hpp"
#include "cmr/missing_data.hpp"

namespace cmr {

namespace {

using nlohmann::json;

std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double unit_uniform(std::uint64_t& state) {
    state = mix64(state, 0);
    return static_cast<double>(state >> 11) * 0x1.0p-53;
}

Vector point4(double a, double b, double c, double d) {
    Vector z(4);
    z << a, b, c, d;
    return z;
}

double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

/// Two independent binary design coordinates, one mean-type response per
/// block, residuals uniform on {-1, +1}. Both blocks carry the same scalar
/// location parameter; block j conditions on design coordinate j.
Builtin two_means() {
    std::vector<Vector> support;
    std::vector<double> prob;
    for (double x1 : {0.0, 1.0})
        for (double x2 : {0.0, 1.0})
            for (double e1 : {-1.0, 1.0})
                for (double e2 : {-1.0, 1.0}) {
                    support.push_back(point4(x1, x2, e1, e2));
                    prob.push_back(1.0 / 16.0);
                }

    Builtin b;
    b.name = "DGP-A";
    b.description =
        "two location restrictions, independent binary conditioning "
        "coordinates, homoskedastic two-point residuals";
    b.law = DiscreteLaw(std::move(support),
                        Eigen::Map<Vector>(prob.data(), 16));
    b.model.param_dim = 1;
    b.model.z_dim = 4;
    b.model.theta0 = Vector::Zero(1);
    b.model.mode = JacobianMode::Analytic;
    for (int j = 0; j < 2; ++j) {
        json cfg = {{"family", "linear_mean"},
                    {"response", 2 + j},
                    {"design", json::array()},
                    {"intercept", true},
                    {"theta_offset", 0},
                    {"cond", {j}}};
        b.model.blocks.push_back(make_block(cfg, 4, 1));
    }
    b.example_config = {{"dgp", "DGP-A"},
                        {"task", "bound"},
                        {"params", {{"k_max", 17}}}};
    return b;
}

/// Nested conditioning: the first block conditions on the first coordinate,
/// the second on both. The second residual has cell-dependent scale and is
/// correlated with the first exactly when the second coordinate is one, so
/// the cross-coupling terms of the score system are active.
Builtin two_means_nested() {
    std::vector<Vector> support;
    std::vector<double> prob;
    for (double x1 : {0.0, 1.0})
        for (double x2 : {0.0, 1.0})
            for (double e1 : {-1.0, 1.0})
                for (double eta : {-1.0, 1.0}) {
                    const double scale = x2 > 0.5 ? 2.0 : 1.0;
                    support.push_back(point4(x1, x2, e1, scale * eta));
                    if (x2 > 0.5) {
                        prob.push_back(e1 == eta ? 3.0 / 32.0 : 1.0 / 32.0);
                    } else {
                        prob.push_back(1.0 / 16.0);
                    }
                }

    Builtin b;
    b.name = "DGP-B";
    b.description =
        "nested conditioning sets with heteroskedastic, cross-correlated "
        "second residual";
    b.law = DiscreteLaw(std::move(support),
                        Eigen::Map<Vector>(prob.data(), 16));
    b.model.param_dim = 1;
    b.model.z_dim = 4;
    b.model.theta0 = Vector::Zero(1);
    b.model.mode = JacobianMode::Analytic;
    const json cfg1 = {{"family", "linear_mean"}, {"response", 2},
                       {"design", json::array()}, {"intercept", true},
                       {"theta_offset", 0},       {"cond", {0}}};
    const json cfg2 = {{"family", "linear_mean"}, {"response", 3},
                       {"design", json::array()}, {"intercept", true},
                       {"theta_offset", 0},       {"cond", {0, 1}}};
    b.model.blocks.push_back(make_block(cfg1, 4, 1));
    b.model.blocks.push_back(make_block(cfg2, 4, 1));
    b.example_config = {{"dgp", "DGP-B"}, {"task", "score"}, {"params", json::object()}};
    return b;
}

/// Missing response: Z = (X, V, Y, delta), Y = 1 + X + noise observed only
/// when delta = 1, selection probability logistic in V. The residual block
/// conditions on X, the selection block on (X, V), so the conditioning is
/// nested and the closed-form route applies.
Builtin missing_response() {
    const double slope = std::log(4.0);  // pi = 0.5 or 0.8
    std::vector<Vector> support;
    std::vector<double> prob;
    for (double x : {0.0, 1.0})
        for (double v : {0.0, 1.0})
            for (double e : {-1.0, 1.0})
                for (double del : {0.0, 1.0}) {
                    support.push_back(point4(x, v, 1.0 + x + e, del));
                    const double pi = sigmoid(slope * v);
                    prob.push_back(0.125 * (del > 0.5 ? pi : 1.0 - pi));
                }

    Builtin b;
    b.name = "DGP-C";
    b.description =
        "missing response with logistic selection in an always-observed "
        "covariate; inverse-probability-weighted residual and selection blocks";
    b.law = DiscreteLaw(std::move(support),
                        Eigen::Map<Vector>(prob.data(), 16));

    MissingDataSpec spec;
    spec.variant = MissingDataSpec::Variant::Response;
    spec.rho_family = "mean";
    spec.alpha0 = Vector(2);
    spec.alpha0 << 1.0, 1.0;
    spec.y_coords = {2};
    spec.xstar_coords = {0};
    spec.w_coords = {0, 1};
    spec.delta_coord = 3;
    spec.parametric = true;
    spec.gamma0 = Vector(3);
    spec.gamma0 << 0.0, 0.0, slope;
    b.spec = spec;
    b.model = build_observational_model(spec, b.law);
    b.example_config = {{"dgp", "DGP-C"}, {"task", "missing"}, {"params", json::object()}};
    return b;
}

/// Missing regressor: Z = (X, V, Y, delta) with X observed only when
/// delta = 1 and Y = 1 + 2X + V + noise. The residual block conditions on
/// the full design (X, V); selection is driven by the always-observed
/// (V, Y), whose cells mix design values, so nothing is nested here and the
/// fixed point is reached by successive approximation.
Builtin missing_regressor() {
    const double slope = std::log(4.0);
    std::vector<Vector> support;
    std::vector<double> prob;
    for (double x : {0.0, 1.0})
        for (double v : {0.0, 1.0})
            for (double e : {-1.0, 1.0})
                for (double del : {0.0, 1.0}) {
                    support.push_back(point4(x, v, 1.0 + 2.0 * x + v + e, del));
                    const double pi = sigmoid(slope * v);
                    prob.push_back(0.125 * (del > 0.5 ? pi : 1.0 - pi));
                }

    Builtin b;
    b.name = "DGP-C-regressor";
    b.description =
        "missing regressor with selection driven by the observed covariate "
        "and response; non-nested conditioning, contraction factor 0.5";
    b.law = DiscreteLaw(std::move(support),
                        Eigen::Map<Vector>(prob.data(), 16));

    MissingDataSpec spec;
    spec.variant = MissingDataSpec::Variant::Regressor;
    spec.rho_family = "mean";
    spec.alpha0 = Vector(3);
    spec.alpha0 << 1.0, 2.0, 1.0;
    spec.y_coords = {2};
    spec.xstar_coords = {0, 1};
    spec.w_coords = {1, 2};
    spec.delta_coord = 3;
    spec.parametric = false;
    for (double v : {0.0, 1.0})
        for (double y : {0.0, 1.0, 2.0, 3.0, 4.0, 5.0}) {
            spec.pi_table[{v, y}] = sigmoid(slope * v);
        }
    b.spec = spec;
    b.model = build_observational_model(spec, b.law);
    b.example_config = {
        {"dgp", "DGP-C-regressor"}, {"task", "missing"}, {"params", json::object()}};
    return b;
}

/// Median restrictions: same design as the two-means law but with
/// three-point residuals carrying an atom at the median, and indicator
/// moment functions differenced on the response lattice.
Builtin two_quantiles() {
    std::vector<Vector> support;
    std::vector<double> prob;
    const double pe[] = {0.25, 0.25, 0.5};  // residual values -1, 0, 1
    for (double x1 : {0.0, 1.0})
        for (double x2 : {0.0, 1.0})
            for (int i1 = 0; i1 < 3; ++i1)
                for (int i2 = 0; i2 < 3; ++i2) {
                    support.push_back(
                        point4(x1, x2, static_cast<double>(i1 - 1),
                               static_cast<double>(i2 - 1)));
                    prob.push_back(0.25 * pe[i1] * pe[i2]);
                }

    Builtin b;
    b.name = "DGP-Q";
    b.description =
        "median restrictions with an atom at the median; indicator residuals "
        "use a lattice-sized difference step for the conditional derivative";
    b.law = DiscreteLaw(std::move(support),
                        Eigen::Map<Vector>(prob.data(), 36));
    b.model.param_dim = 1;
    b.model.z_dim = 4;
    b.model.theta0 = Vector::Zero(1);
    b.model.mode = JacobianMode::FiniteDifference;
    for (int j = 0; j < 2; ++j) {
        json cfg = {{"family", "quantile"},
                    {"response", 2 + j},
                    {"tau", 0.5},
                    {"design", json::array()},
                    {"intercept", true},
                    {"theta_offset", 0},
                    {"cond", {j}},
                    {"lattice_step", 0.5}};
        b.model.blocks.push_back(make_block(cfg, 4, 1));
    }
    b.example_config = {{"dgp", "DGP-Q"},
                        {"task", "bound"},
                        {"params", {{"k_max", 12}}}};
    return b;
}

std::vector<int> coords_from(const json& config, const char* key) {
    std::vector<int> out;
    for (const auto& c : config.at(key)) out.push_back(c.get<int>());
    return out;
}

}  // namespace

std::vector<std::string> builtin_names() {
    return {"DGP-A", "DGP-B", "DGP-C", "DGP-C-regressor", "DGP-Q"};
}

Builtin make_builtin(const std::string& name) {
    if (name == "DGP-A") return two_means();
    if (name == "DGP-B") return two_means_nested();
    if (name == "DGP-C") return missing_response();
    if (name == "DGP-C-regressor") return missing_regressor();
    if (name == "DGP-Q") return two_quantiles();
    throw ContractViolation("unknown builtin '" + name + "'");
}

std::vector<FamilyInfo> block_family_registry() {
    std::vector<FamilyInfo> out;
    out.push_back(
        {"linear_mean",
         "response minus a linear parameter form: z[response] - "
         "theta[theta_offset] (if intercept) - sum_k theta[...] * z[design[k]]",
         json{{"response", "int coordinate"},
              {"design", "array of int coordinates, may be empty"},
              {"intercept", "bool, default true"},
              {"theta_offset", "int, default 0"},
              {"cond", "array of int conditioning coordinates"}}});
    out.push_back(
        {"quantile",
         "tau minus the indicator that z[response] lies at or below the "
         "linear parameter form; not pointwise differentiable",
         json{{"response", "int coordinate"},
              {"tau", "double in (0,1), default 0.5"},
              {"design", "array of int coordinates, may be empty"},
              {"intercept", "bool, default true"},
              {"theta_offset", "int, default 0"},
              {"cond", "array of int conditioning coordinates"},
              {"lattice_step", "double > 0, difference step bracketing the "
                               "response atom, default 0.5"}}});
    out.push_back(
        {"ipw_residual",
         "(delta / pi(W)) * rho(Y, X*, alpha), conditioned on X*; built from "
         "the missing section of a config, not from a block entry",
         json{{"missing", "see selection families"}}});
    out.push_back(
        {"ipw_selection",
         "delta / pi(W) - 1, conditioned on W; built from the missing section "
         "of a config, not from a block entry",
         json{{"missing", "see selection families"}}});
    return out;
}

std::vector<FamilyInfo> selection_family_registry() {
    std::vector<FamilyInfo> out;
    out.push_back({"logistic",
                   "pi(W) = 1 / (1 + exp(-gamma'(1, W))); parametric mode "
                   "with a selection score block",
                   json{{"gamma0", "array of double, length 1 + dim(W)"}}});
    out.push_back({"table",
                   "known selection probability per W cell",
                   json{{"keys", "array of W-cell value arrays"},
                        {"pi", "array of double in (0, 1], same length"}}});
    return out;
}

std::vector<FamilyInfo> instrument_family_registry() {
    std::vector<FamilyInfo> out;
    out.push_back({"indicator",
                   "constant plus one exact-match indicator per support "
                   "point, in lexicographic order; the default family",
                   json::object()});
    out.push_back({"polynomial",
                   "all monomials in the coordinates of Z up to a degree, in "
                   "graded lexicographic order",
                   json{{"max_degree", "int >= 0"}}});
    return out;
}

MomentBlock make_block(const json& config, int z_dim, int param_dim) {
    if (!config.contains("family")) {
        throw ContractViolation("block config: missing 'family'");
    }
    const std::string family = config.at("family").get<std::string>();
    if (family == "ipw_residual" || family == "ipw_selection") {
        throw ContractViolation("block family '" + family +
                                "' is built from the 'missing' config section");
    }
    if (family != "linear_mean" && family != "quantile") {
        throw ContractViolation("unknown block family '" + family + "'");
    }

    const int response = config.at("response").get<int>();
    const std::vector<int> design =
        config.contains("design") ? coords_from(config, "design") : std::vector<int>{};
    const bool intercept = config.value("intercept", true);
    const int offset = config.value("theta_offset", 0);
    if (response < 0 || response >= z_dim) {
        throw ContractViolation("block config: 'response' coordinate out of range");
    }
    for (int c : design) {
        if (c < 0 || c >= z_dim) {
            throw ContractViolation("block config: 'design' coordinate out of range");
        }
    }
    const int used = (intercept ? 1 : 0) + static_cast<int>(design.size());
    if (used == 0) {
        throw ContractViolation("block config: no parameters referenced");
    }
    if (offset < 0 || offset + used > param_dim) {
        throw ContractViolation("block config: theta references out of range");
    }

    MomentBlock block;
    block.family = family;
    block.output_dim = 1;
    block.cond = coords_from(config, "cond");
    for (int c : block.cond) {
        if (c < 0 || c >= z_dim) {
            throw ContractViolation("block config: 'cond' coordinate out of range");
        }
    }

    const auto fitted = [response, design, intercept, offset](
                            const Vector& z, const Vector& theta) {
        int at = offset;
        double f = intercept ? theta(at++) : 0.0;
        for (int c : design) f += theta(at++) * z(c);
        return f;
    };

    if (family == "linear_mean") {
        block.smooth = true;
        block.eval = [response, fitted](const Vector& z, const Vector& theta) {
            Vector g(1);
            g(0) = z(response) - fitted(z, theta);
            return g;
        };
        block.pointwise_jacobian = [design, intercept, offset, param_dim](
                                       const Vector& z, const Vector&) {
            Matrix jac = Matrix::Zero(1, param_dim);
            int at = offset;
            if (intercept) jac(0, at++) = -1.0;
            for (int c : design) jac(0, at++) = -z(c);
            return jac;
        };
    } else {
        const double tau = config.value("tau", 0.5);
        if (!(tau > 0.0 && tau < 1.0)) {
            throw ContractViolation("block config: 'tau' must lie in (0,1)");
        }
        block.smooth = false;
        block.fd_step = config.value("lattice_step", 0.5);
        if (block.fd_step <= 0.0) {
            throw ContractViolation("block config: 'lattice_step' must be positive");
        }
        block.eval = [response, fitted, tau](const Vector& z, const Vector& theta) {
            Vector g(1);
            g(0) = tau - (z(response) <= fitted(z, theta) ? 1.0 : 0.0);
            return g;
        };
    }
    return block;
}

RandomTwoBlockCase random_two_block_case(std::uint64_t seed) {
    std::uint64_t state = mix64(seed, 0x2b10cULL);

    // Cell scales in [0.5, 2] and signed couplings with |c| in [0.1, 0.4]:
    // residuals stay exactly centered per cell for any coupling.
    double s1[4], s2[4], cpl[4];
    for (int cell = 0; cell < 4; ++cell) {
        s1[cell] = 0.5 + 1.5 * unit_uniform(state);
        s2[cell] = 0.5 + 1.5 * unit_uniform(state);
        const double magnitude = 0.1 + 0.3 * unit_uniform(state);
        cpl[cell] = (unit_uniform(state) < 0.5 ? -1.0 : 1.0) * magnitude;
    }

    std::vector<Vector> support;
    std::vector<double> prob;
    for (int cell = 0; cell < 4; ++cell) {
        const double x1 = static_cast<double>(cell / 2);
        const double x2 = static_cast<double>(cell % 2);
        for (double u : {-1.0, 1.0})
            for (double w : {-1.0, 1.0}) {
                support.push_back(point4(x1, x2, s1[cell] * u, s2[cell] * w));
                const double same = u == w ? 1.0 + cpl[cell] : 1.0 - cpl[cell];
                prob.push_back(0.25 * same / 4.0);
            }
    }

    RandomTwoBlockCase out{DiscreteLaw(std::move(support),
                                       Eigen::Map<Vector>(prob.data(), 16)),
                           MomentModel{}};

    const std::vector<std::vector<int>> combos[] = {
        {{0}, {1}}, {{0}, {0, 1}}, {{1}, {0, 1}}, {{0, 1}, {0, 1}}};
    const auto& combo =
        combos[static_cast<int>(unit_uniform(state) * 4.0) & 3];

    out.model.param_dim = 2;
    out.model.z_dim = 4;
    out.model.theta0 = Vector::Zero(2);
    out.model.mode = JacobianMode::Analytic;
    for (int j = 0; j < 2; ++j) {
        json cfg = {{"family", "linear_mean"}, {"response", 2 + j},
                    {"design", json::array()}, {"intercept", true},
                    {"theta_offset", j},       {"cond", combo[j]}};
        out.model.blocks.push_back(make_block(cfg, 4, 2));
    }
    return out;
}

}  // namespace cmr
