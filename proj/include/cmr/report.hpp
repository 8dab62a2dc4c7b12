#pragma once

#include <nlohmann/json.hpp>
#include <string>

#include "cmr/efficient_score.hpp"
#include "cmr/estimation.hpp"
#include "cmr/info_bound.hpp"
#include "cmr/missing_data.hpp"
#include "cmr/model.hpp"
#include "cmr/score_field.hpp"

namespace cmr {

/// JSON encodings used by the CLI and by report comparison. Matrices are
/// nested row arrays; every report carries its task type, the tolerances it
/// was produced under, and any degeneracy flags.
nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

nlohmann::json to_json(const InfoBoundSequence& seq);
nlohmann::json to_json(const ScoreField& field);
nlohmann::json to_json(const BlockField& field);
nlohmann::json to_json(const BackfitTrace& trace);
nlohmann::json to_json(const ContractionTrace& trace);
nlohmann::json to_json(const DiagnosticsReport& report);
nlohmann::json to_json(const EstimationResult& result);
nlohmann::json to_json(const MonteCarloReport& report);

/// Flatten every numeric leaf of a report to (path, value) pairs; arrays get
/// bracketed index segments. Used by CSV output and report comparison.
std::vector<std::pair<std::string, double>> flatten_numeric(const nlohmann::json& j);

/// Two-column CSV (path, value) of all numeric leaves, header included.
std::string to_csv(const nlohmann::json& report);

struct ComparePath {
    std::string path;
    double max_abs_diff = 0.0;
    bool flagged = false;
};

struct CompareReport {
    std::vector<ComparePath> shared;  // per shared numeric path
    std::vector<std::string> only_left, only_right;
    double max_abs_diff = 0.0;
    int flagged_count = 0;
};

/// Compare two reports over their shared numeric paths; a pair differing by
/// more than tol is flagged. Rejected as incompatible: reports sharing no
/// numeric path at all, and reports whose shared array paths have different
/// lengths (shape mismatch). Paths present on one side only are listed, not
/// compared, so reports of related tasks (a bound's information against a
/// score's information) can be checked against each other.
CompareReport compare_reports(const nlohmann::json& left,
                              const nlohmann::json& right, double tol);

}  // namespace cmr
