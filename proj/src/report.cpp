#include "cmr/report.hpp"

#include <cmath>
#include <sstream>

#include "cmr/errors.hpp"

namespace cmr {

namespace {

using nlohmann::json;

json vector_to_json(const Vector& v) {
    json out = json::array();
    for (int i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

json partition_keys(const Partition& part) {
    json keys = json::array();
    for (const auto& key : part.keys) keys.push_back(key);
    return keys;
}

}  // namespace

json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (int r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& j) {
    if (!j.is_array() || j.empty()) {
        throw ContractViolation("matrix: expected a nonempty array of rows");
    }
    const int rows = static_cast<int>(j.size());
    const int cols = static_cast<int>(j.at(0).size());
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        const auto& row = j.at(r);
        if (static_cast<int>(row.size()) != cols) {
            throw ContractViolation("matrix: ragged rows");
        }
        for (int c = 0; c < cols; ++c) m(r, c) = row.at(c).get<double>();
    }
    return m;
}

json to_json(const InfoBoundSequence& seq) {
    json steps = json::array();
    for (const auto& step : seq.steps) {
        steps.push_back(json{{"k", step.k},
                             {"information", matrix_to_json(step.info)},
                             {"gap", step.gap},
                             {"degenerate", step.degenerate}});
    }
    json out{{"steps", std::move(steps)},
             {"final_gap", seq.final_gap},
             {"information", matrix_to_json(seq.final_info)}};
    if (seq.converged_at) out["converged_at"] = *seq.converged_at;
    return out;
}

json to_json(const BlockField& field) {
    json coef = json::array();
    for (const auto& m : field.coef) coef.push_back(matrix_to_json(m));
    json degenerate = json::array();
    for (bool d : field.degenerate) degenerate.push_back(d);
    return json{{"cond", field.part.cond},
                {"keys", partition_keys(field.part)},
                {"coef", std::move(coef)},
                {"degenerate", std::move(degenerate)}};
}

json to_json(const ScoreField& field) {
    json blocks = json::array();
    for (const auto& block : field.blocks) blocks.push_back(to_json(block));
    return json{{"blocks", std::move(blocks)}};
}

json to_json(const BackfitTrace& trace) {
    return json{{"score_increments", trace.score_increments},
                {"block_increments", trace.block_increments},
                {"converged", trace.converged},
                {"iterations", trace.iterations},
                {"experimental_cycle", trace.experimental_cycle}};
}

json to_json(const ContractionTrace& trace) {
    return json{{"increments", trace.increments},
                {"ratios", trace.ratios},
                {"beta", trace.beta},
                {"converged", trace.converged},
                {"iterations", trace.iterations}};
}

json to_json(const DiagnosticsReport& report) {
    json blocks = json::array();
    for (const auto& b : report.blocks) {
        blocks.push_back(
            json{{"block", b.block},
                 {"sup_variance_norm", b.sup_variance_norm},
                 {"singular_variance_cells", b.singular_variance_cells},
                 {"worst_condition", b.worst_condition},
                 {"joint_second_moment_ok", b.joint_second_moment_ok},
                 {"single_block_info_nonsingular", b.single_block_info_nonsingular},
                 {"single_block_info", matrix_to_json(b.single_block_info)}});
    }
    json out{{"blocks", std::move(blocks)},
             {"bounded_selection_ok", report.bounded_selection_ok},
             {"restrictions_hold", report.restrictions_hold},
             {"ok", report.ok()}};
    if (report.selection_beta) out["selection_beta"] = *report.selection_beta;
    return out;
}

json to_json(const EstimationResult& result) {
    return json{{"theta_hat", vector_to_json(result.theta_hat)},
                {"preliminary", vector_to_json(result.preliminary)},
                {"objective", result.objective},
                {"field_iterations", result.field_iterations},
                {"variance", matrix_to_json(result.variance)}};
}

json to_json(const MonteCarloReport& report) {
    return json{{"n", report.n},
                {"requested_replications", report.requested_replications},
                {"completed_replications", report.completed_replications},
                {"failures", report.failures},
                {"seed", report.seed},
                {"mean_preliminary", vector_to_json(report.mean_preliminary)},
                {"mean_efficient", vector_to_json(report.mean_efficient)},
                {"cov_preliminary", matrix_to_json(report.cov_preliminary)},
                {"cov_efficient", matrix_to_json(report.cov_efficient)},
                {"mse_preliminary", matrix_to_json(report.mse_preliminary)},
                {"mse_efficient", matrix_to_json(report.mse_efficient)},
                {"reference", matrix_to_json(report.reference)},
                {"invalid", report.invalid},
                {"low_replications", report.low_replications}};
}

namespace {

void flatten_into(const json& j, const std::string& path,
                  std::vector<std::pair<std::string, double>>& out) {
    if (j.is_number()) {
        out.emplace_back(path, j.get<double>());
    } else if (j.is_object()) {
        for (const auto& [key, value] : j.items()) {
            flatten_into(value, path.empty() ? key : path + "." + key, out);
        }
    } else if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i) {
            flatten_into(j[i], path + "[" + std::to_string(i) + "]", out);
        }
    }
    // Strings, booleans and nulls carry flags and labels, not comparable values.
}

}  // namespace

std::vector<std::pair<std::string, double>> flatten_numeric(const json& j) {
    std::vector<std::pair<std::string, double>> out;
    flatten_into(j, "", out);
    return out;
}

std::string to_csv(const json& report) {
    std::ostringstream os;
    os.precision(17);
    os << "path,value\n";
    for (const auto& [path, value] : flatten_numeric(report)) {
        os << path << "," << value << "\n";
    }
    return os.str();
}

namespace {

void collect_paths(const json& j, const std::string& path,
                   std::vector<std::string>& out) {
    if (j.is_number()) {
        out.push_back(path);
    } else if (j.is_object()) {
        for (const auto& [key, value] : j.items()) {
            collect_paths(value, path.empty() ? key : path + "." + key, out);
        }
    } else if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i) {
            collect_paths(j[i], path + "[" + std::to_string(i) + "]", out);
        }
    }
}

bool has_numeric(const json& j) {
    std::vector<std::string> paths;
    collect_paths(j, "", paths);
    return !paths.empty();
}

void walk(const json& left, const json& right, const std::string& path,
          double tol, CompareReport& report) {
    if (left.is_number() && right.is_number()) {
        const double diff = std::abs(left.get<double>() - right.get<double>());
        report.shared.push_back({path, diff, diff > tol});
        return;
    }
    if (left.is_object() && right.is_object()) {
        for (const auto& [key, value] : left.items()) {
            const std::string sub = path.empty() ? key : path + "." + key;
            if (right.contains(key)) {
                walk(value, right.at(key), sub, tol, report);
            } else {
                collect_paths(value, sub, report.only_left);
            }
        }
        for (const auto& [key, value] : right.items()) {
            if (!left.contains(key)) {
                collect_paths(value, path.empty() ? key : path + "." + key,
                              report.only_right);
            }
        }
        return;
    }
    if (left.is_array() && right.is_array()) {
        if (left.size() != right.size()) {
            if (has_numeric(left) || has_numeric(right)) {
                throw ContractViolation("compare: shape mismatch at '" + path +
                                        "' (" + std::to_string(left.size()) +
                                        " vs " + std::to_string(right.size()) + ")");
            }
            return;
        }
        for (std::size_t i = 0; i < left.size(); ++i) {
            walk(left[i], right[i], path + "[" + std::to_string(i) + "]", tol,
                 report);
        }
        return;
    }
    // Type mismatch, or non-numeric leaves: not comparable content.
    collect_paths(left, path, report.only_left);
    collect_paths(right, path, report.only_right);
}

}  // namespace

CompareReport compare_reports(const json& left, const json& right, double tol) {
    if (tol < 0.0) throw ContractViolation("compare: tol must be nonnegative");
    CompareReport report;
    walk(left, right, "", tol, report);
    if (report.shared.empty()) {
        throw ContractViolation("compare: reports share no numeric content");
    }
    for (const auto& entry : report.shared) {
        report.max_abs_diff = std::max(report.max_abs_diff, entry.max_abs_diff);
        if (entry.flagged) ++report.flagged_count;
    }
    return report;
}

}  // namespace cmr
