#include "cmr/config.hpp"

#include <fstream>
#include <string>
#include <vector>

#include "cmr/efficient_score.hpp"
#include "cmr/errors.hpp"
#include "cmr/estimation.hpp"
#include "cmr/info_bound.hpp"
#include "cmr/instruments.hpp"
#include "cmr/missing_data.hpp"
#include "cmr/report.hpp"

namespace cmr {

namespace {

using nlohmann::json;

Vector vector_from(const json& j, const std::string& what) {
    if (!j.is_array()) {
        throw ContractViolation("config: '" + what + "' must be an array");
    }
    Vector v(static_cast<int>(j.size()));
    for (int i = 0; i < v.size(); ++i) v(i) = j.at(i).get<double>();
    return v;
}

std::vector<int> coords_from(const json& j, const std::string& what) {
    if (!j.is_array()) {
        throw ContractViolation("config: '" + what + "' must be an array");
    }
    std::vector<int> out;
    for (const auto& c : j) out.push_back(c.get<int>());
    return out;
}

DiscreteLaw law_from_config(const json& cfg) {
    if (cfg.contains("file")) {
        return load_law(cfg.at("file").get<std::string>());
    }
    if (!cfg.contains("points") || !cfg.contains("probs")) {
        throw ContractViolation(
            "config: 'law' needs either 'file' or 'points' + 'probs'");
    }
    const auto& pts = cfg.at("points");
    std::vector<Vector> support;
    for (const auto& p : pts) support.push_back(vector_from(p, "law.points"));
    return DiscreteLaw(std::move(support), vector_from(cfg.at("probs"), "law.probs"));
}

MomentModel model_from_config(const json& cfg, int z_dim) {
    MomentModel model;
    model.z_dim = z_dim;
    model.param_dim = cfg.at("param_dim").get<int>();
    model.theta0 = vector_from(cfg.at("theta0"), "model.theta0");
    const std::string mode = cfg.value("mode", "analytic");
    if (mode == "analytic") {
        model.mode = JacobianMode::Analytic;
    } else if (mode == "fd") {
        model.mode = JacobianMode::FiniteDifference;
    } else {
        throw ContractViolation("config: 'model.mode' must be 'analytic' or 'fd'");
    }
    if (!cfg.contains("blocks") || !cfg.at("blocks").is_array() ||
        cfg.at("blocks").empty()) {
        throw ContractViolation("config: 'model.blocks' must be a nonempty array");
    }
    for (const auto& block : cfg.at("blocks")) {
        model.blocks.push_back(make_block(block, z_dim, model.param_dim));
    }
    return model;
}

MissingDataSpec spec_from_config(const json& cfg) {
    MissingDataSpec spec;
    const std::string variant = cfg.value("variant", "response");
    if (variant == "response") {
        spec.variant = MissingDataSpec::Variant::Response;
    } else if (variant == "regressor") {
        spec.variant = MissingDataSpec::Variant::Regressor;
    } else {
        throw ContractViolation(
            "config: 'missing.variant' must be 'response' or 'regressor'");
    }
    spec.rho_family = cfg.value("family", "mean");
    spec.tau = cfg.value("tau", 0.5);
    spec.alpha0 = vector_from(cfg.at("alpha0"), "missing.alpha0");
    spec.y_coords = coords_from(cfg.at("y"), "missing.y");
    spec.xstar_coords = coords_from(cfg.at("x_star"), "missing.x_star");
    spec.w_coords = coords_from(cfg.at("w"), "missing.w");
    spec.delta_coord = cfg.at("delta").get<int>();

    const auto& sel = cfg.at("selection");
    const std::string family = sel.at("family").get<std::string>();
    if (family == "logistic") {
        spec.parametric = true;
        spec.gamma0 = vector_from(sel.at("gamma0"), "missing.selection.gamma0");
    } else if (family == "table") {
        spec.parametric = false;
        const auto& keys = sel.at("keys");
        const auto& pi = sel.at("pi");
        if (keys.size() != pi.size()) {
            throw ContractViolation(
                "config: 'missing.selection' keys and pi differ in length");
        }
        for (std::size_t i = 0; i < keys.size(); ++i) {
            std::vector<double> key;
            for (const auto& v : keys.at(i)) key.push_back(v.get<double>());
            spec.pi_table[key] = pi.at(i).get<double>();
        }
    } else {
        throw ContractViolation("config: unknown selection family '" + family + "'");
    }
    return spec;
}

InstrumentFamily family_from_params(const json& params, const DiscreteLaw& law) {
    if (!params.contains("family")) return default_family(law);
    const auto& cfg = params.at("family");
    const std::string name = cfg.at("name").get<std::string>();
    if (name == "indicator") return default_family(law);
    if (name == "polynomial") {
        return polynomial_family(law.dim(), cfg.at("max_degree").get<int>());
    }
    throw ContractViolation("config: unknown instrument family '" + name + "'");
}

std::uint64_t seed_from(const json& params,
                        std::optional<std::uint64_t> seed_override) {
    if (seed_override) return *seed_override;
    return params.value("seed", std::uint64_t{0});
}

json run_bound(const RunRequest& request) {
    const InstrumentFamily family = family_from_params(request.params, request.law);
    const int k_max = request.params.value(
        "k_max", static_cast<int>(family.members.size()));
    const double stop_tol = request.params.value("stop_tol", 1e-10);
    const InfoBoundSequence seq =
        info_bound_sequence(request.model, request.law, family, k_max, stop_tol);
    json out = to_json(seq);
    out["task"] = "bound";
    out["tolerances"] = {{"stop_tol", stop_tol}};
    return out;
}

json run_score(const RunRequest& request) {
    BackfitOptions opts;
    opts.tol = request.params.value("tol", opts.tol);
    opts.max_iter = request.params.value("max_iter", opts.max_iter);
    const auto [field, trace] = backfit_solve(request.model, request.law, opts);
    json out{{"task", "score"},
             {"field", to_json(field)},
             {"trace", to_json(trace)},
             {"information",
              matrix_to_json(efficient_information(request.model, request.law, field))},
             {"tolerances", {{"tol", opts.tol}, {"max_iter", opts.max_iter}}}};
    return out;
}

json run_oracle(const RunRequest& request) {
    const ScoreField field = oracle_projection(request.model, request.law);
    return json{{"task", "oracle"},
                {"field", to_json(field)},
                {"information",
                 matrix_to_json(efficient_information(request.model, request.law, field))}};
}

json run_missing(const RunRequest& request) {
    if (!request.spec) {
        throw ContractViolation("config: task 'missing' needs a 'missing' section");
    }
    ContractionOptions opts;
    opts.tol = request.params.value("tol", opts.tol);
    opts.max_iter = request.params.value("max_iter", opts.max_iter);
    const ContractionResult fixed_point =
        contraction_solve_a1(*request.spec, request.law, opts);
    ScoreField field;
    field.blocks.push_back(fixed_point.a1);
    field.blocks.push_back(a2_from_a1(*request.spec, request.law, fixed_point.a1));

    json out{{"task", "missing"},
             {"field", to_json(field)},
             {"contraction", to_json(fixed_point.trace)},
             {"beta", fixed_point.trace.beta},
             {"information",
              matrix_to_json(efficient_information(request.model, request.law, field))},
             {"tolerances", {{"tol", opts.tol}, {"max_iter", opts.max_iter}}}};
    if (request.spec->parametric) {
        const ParametricSelectionScore sel =
            parametric_selection_score(*request.spec, request.law);
        out["gamma_field"] = to_json(sel.gamma_score);
        out["cross_moment"] = matrix_to_json(sel.cross_moment);
        out["cross_moment_norm"] = sel.cross_moment.cwiseAbs().maxCoeff();
    }
    return out;
}

json run_estimate(const RunRequest& request,
                  std::optional<std::uint64_t> seed_override) {
    const auto& params = request.params;
    const int n = params.at("n").get<int>();
    const std::uint64_t seed = seed_from(params, seed_override);
    const int m_star = params.value("m_star", 25);
    SearchOptions search;
    search.tol = params.value("tol", search.tol);
    search.restarts = params.value("restarts", search.restarts);

    Vector init = Vector::Zero(request.model.param_dim);
    if (params.contains("init")) init = vector_from(params.at("init"), "params.init");

    const SampleSet sample = sample_from(request.law, n, seed);
    const Vector theta_tilde =
        preliminary_estimator(request.model, sample, init, search);
    const PlugInField field = plug_in_score_field(
        request.model, sample, theta_tilde, m_star,
        request.spec ? &*request.spec : nullptr);
    const EstimationResult result =
        efficient_gmm_solve(request.model, sample, field, theta_tilde, search);

    json out = to_json(result);
    out["task"] = "estimate";
    out["n"] = n;
    out["seed"] = seed;
    out["m_star"] = m_star;
    out["field_converged"] = field.converged;
    return out;
}

json run_mc(const RunRequest& request,
            std::optional<std::uint64_t> seed_override) {
    const auto& params = request.params;
    const int n = params.at("n").get<int>();
    const int replications = params.at("R").get<int>();
    const std::uint64_t seed = seed_from(params, seed_override);
    MonteCarloOptions opts;
    opts.m_star = params.value("m_star", opts.m_star);
    opts.search.tol = params.value("tol", opts.search.tol);
    opts.search.restarts = params.value("restarts", opts.search.restarts);
    opts.spec = request.spec;
    const MonteCarloReport report =
        monte_carlo(request.model, request.law, n, replications, seed, opts);
    json out = to_json(report);
    out["task"] = "mc";
    return out;
}

}  // namespace

RunRequest parse_config(const json& config) {
    if (!config.is_object()) {
        throw ContractViolation("config: expected a JSON object");
    }
    if (!config.contains("task")) {
        throw ContractViolation("config: missing 'task'");
    }
    const std::string task = config.at("task").get<std::string>();
    const bool known = task == "bound" || task == "score" || task == "oracle" ||
                       task == "missing" || task == "estimate" || task == "mc";
    if (!known) throw ContractViolation("config: unknown task '" + task + "'");

    json params = config.value("params", json::object());
    if (!params.is_object()) {
        throw ContractViolation("config: 'params' must be an object");
    }

    if (config.contains("dgp")) {
        if (config.contains("law") || config.contains("model") ||
            config.contains("missing")) {
            throw ContractViolation(
                "config: 'dgp' excludes 'law', 'model' and 'missing'");
        }
        Builtin builtin = make_builtin(config.at("dgp").get<std::string>());
        return RunRequest{std::move(builtin.law), std::move(builtin.model),
                          std::move(builtin.spec), task, std::move(params)};
    }

    if (!config.contains("law")) {
        throw ContractViolation("config: needs either 'dgp' or 'law'");
    }
    DiscreteLaw law = law_from_config(config.at("law"));

    if (config.contains("missing")) {
        if (config.contains("model")) {
            throw ContractViolation(
                "config: 'missing' and 'model' are mutually exclusive");
        }
        MissingDataSpec spec = spec_from_config(config.at("missing"));
        MomentModel model = build_observational_model(spec, law);
        return RunRequest{std::move(law), std::move(model), std::move(spec),
                          task, std::move(params)};
    }

    if (!config.contains("model")) {
        throw ContractViolation("config: needs 'model' (or 'missing')");
    }
    MomentModel model = model_from_config(config.at("model"), law.dim());
    validate_model(model);
    validate_against_law(model, law);
    return RunRequest{std::move(law), std::move(model), std::nullopt, task,
                      std::move(params)};
}

json run_task(const RunRequest& request,
              std::optional<std::uint64_t> seed_override) {
    if (request.task == "bound") return run_bound(request);
    if (request.task == "score") return run_score(request);
    if (request.task == "oracle") return run_oracle(request);
    if (request.task == "missing") return run_missing(request);
    if (request.task == "estimate") return run_estimate(request, seed_override);
    if (request.task == "mc") return run_mc(request, seed_override);
    throw ContractViolation("config: unknown task '" + request.task + "'");
}

json registry_listing() {
    json builtins = json::array();
    for (const auto& name : builtin_names()) {
        const Builtin b = make_builtin(name);
        builtins.push_back(json{{"name", b.name},
                                {"description", b.description},
                                {"example_config", b.example_config}});
    }
    const auto families_json = [](const std::vector<FamilyInfo>& families) {
        json out = json::array();
        for (const auto& f : families) {
            out.push_back(json{{"name", f.name},
                               {"description", f.description},
                               {"schema", f.schema}});
        }
        return out;
    };
    return json{{"builtins", std::move(builtins)},
                {"block_families", families_json(block_family_registry())},
                {"selection_families", families_json(selection_family_registry())},
                {"instrument_families", families_json(instrument_family_registry())}};
}

}  // namespace cmr
